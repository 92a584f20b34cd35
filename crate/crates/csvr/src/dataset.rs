use crate::error::{Error, Result};

/// A fixed-design regression sample: `n` rows of `d` covariates plus a response.
///
/// Rows are stored flat in row-major order. All entries are finite; this is
/// checked on construction so numerical code downstream can assume it.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    d: usize,
}

impl Dataset {
    /// Builds a dataset from a flat row-major covariate buffer.
    pub fn from_flat(x: Vec<f64>, y: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dataset must have at least one covariate"));
        }
        let n = y.len();
        if n == 0 {
            return Err(Error::invalid("dataset must have at least one row"));
        }
        if x.len() != n * d {
            return Err(Error::invalid(format!(
                "covariate buffer has {} entries, expected {} ({} rows x {} columns)",
                x.len(),
                n * d,
                n,
                d
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "covariate at row {}, column {} is not finite",
                pos / d,
                pos % d
            )));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("response at row {pos} is not finite")));
        }
        Ok(Dataset { x, y, n, d })
    }

    /// Builds a dataset from one `Vec` per row.
    pub fn from_rows(rows: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("dataset must have at least one row"));
        }
        let d = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::invalid(format!(
                    "row {} has {} covariates, expected {}",
                    i,
                    r.len(),
                    d
                )));
            }
        }
        if rows.len() != y.len() {
            return Err(Error::invalid(format!(
                "{} covariate rows but {} responses",
                rows.len(),
                y.len()
            )));
        }
        let x: Vec<f64> = rows.into_iter().flatten().collect();
        Dataset::from_flat(x, y, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.d)
    }

    /// Extracts the rows at `indices` (in the given order) into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("subset must select at least one row"));
        }
        let mut x = Vec::with_capacity(indices.len() * self.d);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n {
                return Err(Error::invalid(format!(
                    "subset index {} out of range for {} rows",
                    i, self.n
                )));
            }
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Dataset::from_flat(x, y, self.d)
    }

    /// Column means, one per covariate.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.d];
        for row in self.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= self.n as f64;
        }
        means
    }

    /// Sample standard deviations (n-1 denominator), one per covariate.
    /// Columns with zero variance report 0.
    pub fn column_stds(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.d];
        }
        let means = self.column_means();
        let mut ss = vec![0.0; self.d];
        for row in self.rows() {
            for ((s, v), m) in ss.iter_mut().zip(row).zip(&means) {
                let dev = v - m;
                *s += dev * dev;
            }
        }
        ss.iter().map(|s| (s / (self.n as f64 - 1.0)).sqrt()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_shape_mismatch() {
        assert!(Dataset::from_flat(vec![1.0, 2.0, 3.0], vec![1.0, 2.0], 2).is_err());
        assert!(Dataset::from_rows(vec![vec![1.0], vec![1.0, 2.0]], vec![0.0, 0.0]).is_err());
        assert!(Dataset::from_rows(vec![vec![1.0]], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Dataset::from_flat(vec![f64::NAN], vec![1.0], 1).is_err());
        assert!(Dataset::from_flat(vec![1.0], vec![f64::INFINITY], 1).is_err());
    }

    #[test]
    fn rejects_empty() {
        assert!(Dataset::from_flat(vec![], vec![], 1).is_err());
        assert!(Dataset::from_flat(vec![1.0], vec![1.0], 0).is_err());
    }

    #[test]
    fn subset_reorders_rows() {
        let data =
            Dataset::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]], vec![10.0, 20.0, 30.0])
                .unwrap();
        let sub = data.subset(&[2, 0]).unwrap();
        assert_eq!(sub.n(), 2);
        assert_eq!(sub.row(0), &[5.0, 6.0]);
        assert_eq!(sub.row(1), &[1.0, 2.0]);
        assert_eq!(sub.y(), &[30.0, 10.0]);
        assert!(data.subset(&[3]).is_err());
        assert!(data.subset(&[]).is_err());
    }

    #[test]
    fn column_stats_match_hand_computation() {
        let data = Dataset::from_rows(
            vec![vec![1.0, 10.0], vec![2.0, 10.0], vec![3.0, 10.0]],
            vec![0.0, 0.0, 0.0],
        )
        .unwrap();
        assert_eq!(data.column_means(), vec![2.0, 10.0]);
        let stds = data.column_stds();
        assert!((stds[0] - 1.0).abs() < 1e-12);
        assert_eq!(stds[1], 0.0);
    }
}
