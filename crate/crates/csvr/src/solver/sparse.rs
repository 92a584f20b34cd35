use crate::error::{Error, Result};

/// Compressed sparse row matrix with `u32` column indices.
///
/// Rows keep their entries sorted by column with no duplicates and no
/// explicit zeros; constructors canonicalize input into that form.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), values: Vec::new() }
    }

    /// Builds from (row, col, value) triplets. Duplicate coordinates are
    /// summed; exact zeros are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if ncols > u32::MAX as usize {
            return Err(Error::invalid("matrix has too many columns"));
        }
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::invalid(format!(
                    "triplet ({r}, {c}) out of range for {nrows}x{ncols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::invalid(format!("matrix entry ({r}, {c}) is not finite")));
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_unstable_by_key(|&k| (triplets[k].0, triplets[k].1));

        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c, v) = triplets[k];
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indptr[r + 1] += 1;
                indices.push(c as u32);
                values.push(v);
                last = Some((r, c));
            }
        }
        // Drop entries that summed to exactly zero.
        let mut m = CsrMatrix { nrows, ncols, indptr, indices, values };
        for i in 0..nrows {
            m.indptr[i + 1] += m.indptr[i];
        }
        m.drop_zeros();
        Ok(m)
    }

    /// Builds from dense rows, dropping zeros.
    pub fn from_dense_rows(rows: &[Vec<f64>], ncols: usize) -> Result<Self> {
        let mut trips = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::invalid(format!("dense row {i} has wrong length")));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    trips.push((i, j, v));
                }
            }
        }
        CsrMatrix::from_triplets(rows.len(), ncols, &trips)
    }

    fn drop_zeros(&mut self) {
        if !self.values.iter().any(|&v| v == 0.0) {
            return;
        }
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                if self.values[k] != 0.0 {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr[i + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub(crate) fn row_mut_values(&mut self, i: usize) -> &mut [f64] {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        &mut self.values[lo..hi]
    }

    pub fn iter_triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c as usize, v))
        })
    }

    /// `out = self * x`
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for (i, o) in out.iter_mut().enumerate() {
            let lo = self.indptr[i];
            let hi = self.indptr[i + 1];
            let mut acc = 0.0;
            for (c, v) in self.indices[lo..hi].iter().zip(&self.values[lo..hi]) {
                acc += v * x[*c as usize];
            }
            *o = acc;
        }
    }

    /// `out = self' * y` (out is overwritten)
    pub fn matvec_t(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.nrows {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            let lo = self.indptr[i];
            let hi = self.indptr[i + 1];
            for (c, v) in self.indices[lo..hi].iter().zip(&self.values[lo..hi]) {
                out[*c as usize] += v * yi;
            }
        }
    }

    /// `x' * self * x`; meaningful for symmetric matrices.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, lohi) in self.indptr.windows(2).enumerate() {
            let mut row_acc = 0.0;
            for (c, v) in self.indices[lohi[0]..lohi[1]].iter().zip(&self.values[lohi[0]..lohi[1]]) {
                row_acc += v * x[*c as usize];
            }
            acc += x[i] * row_acc;
        }
        acc
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut indptr = counts.clone();
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let lo = self.indptr[i];
            let hi = self.indptr[i + 1];
            for (c, v) in self.indices[lo..hi].iter().zip(&self.values[lo..hi]) {
                let pos = indptr[*c as usize];
                indices[pos] = i as u32;
                values[pos] = *v;
                indptr[*c as usize] += 1;
            }
        }
        // indptr was advanced while scattering; counts still holds the offsets.
        CsrMatrix { nrows: self.ncols, ncols: self.nrows, indptr: counts, indices, values }
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|` over all coordinates.
    pub fn max_asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = t.row(i);
            let (mut ka, mut kb) = (0, 0);
            while ka < ca.len() || kb < cb.len() {
                let col_a = ca.get(ka).copied().unwrap_or(u32::MAX);
                let col_b = cb.get(kb).copied().unwrap_or(u32::MAX);
                if col_a == col_b {
                    worst = worst.max((va[ka] - vb[kb]).abs());
                    ka += 1;
                    kb += 1;
                } else if col_a < col_b {
                    worst = worst.max(va[ka].abs());
                    ka += 1;
                } else {
                    worst = worst.max(vb[kb].abs());
                    kb += 1;
                }
            }
        }
        worst
    }

    /// Per-column max of |a_ij|, accumulated into `out` (not cleared).
    pub fn col_abs_max_into(&self, out: &mut [f64]) {
        for (&c, &v) in self.indices.iter().zip(&self.values) {
            let j = c as usize;
            out[j] = out[j].max(v.abs());
        }
    }

    /// Per-row max of |a_ij|, written into `out`.
    pub fn row_abs_max_into(&self, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let lo = self.indptr[i];
            let hi = self.indptr[i + 1];
            *o = self.values[lo..hi].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        }
    }

    /// In-place two-sided scaling: `self <- diag(r) * self * diag(c)`.
    pub fn scale_rows_cols(&mut self, r: &[f64], c: &[f64]) {
        debug_assert_eq!(r.len(), self.nrows);
        debug_assert_eq!(c.len(), self.ncols);
        for i in 0..self.nrows {
            let ri = r[i];
            let lo = self.indptr[i];
            let hi = self.indptr[i + 1];
            for k in lo..hi {
                self.values[k] *= ri * c[self.indices[k] as usize];
            }
        }
    }

    /// In-place row scaling: `self <- diag(r) * self`.
    pub fn scale_rows(&mut self, r: &[f64]) {
        debug_assert_eq!(r.len(), self.nrows);
        for i in 0..self.nrows {
            let ri = r[i];
            for v in self.row_mut_values(i) {
                *v *= ri;
            }
        }
    }

    /// In-place column scaling: `self <- self * diag(c)`.
    pub fn scale_cols(&mut self, c: &[f64]) {
        debug_assert_eq!(c.len(), self.ncols);
        for (idx, v) in self.indices.iter().zip(self.values.iter_mut()) {
            *v *= c[*idx as usize];
        }
    }

    /// In-place uniform scaling.
    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// Appends the rows of `other` below `self`. Column counts must match.
    pub fn vstack(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.ncols);
        let mut indptr = Vec::with_capacity(self.nrows + other.nrows + 1);
        indptr.extend_from_slice(&self.indptr);
        let base = *self.indptr.last().unwrap();
        indptr.extend(other.indptr[1..].iter().map(|p| p + base));
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices);
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        CsrMatrix { nrows: self.nrows + other.nrows, ncols: self.ncols, indptr, indices, values }
    }
}

/// Incremental row-by-row CSR builder used by program assembly.
#[derive(Debug)]
pub struct CsrBuilder {
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrBuilder {
    pub fn new(ncols: usize) -> Self {
        CsrBuilder { ncols, indptr: vec![0], indices: Vec::new(), values: Vec::new() }
    }

    /// Appends one row. Entries may arrive unsorted but must not repeat a
    /// column; zeros are kept out.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) {
        let start = self.indices.len();
        for &(c, v) in entries {
            debug_assert!(c < self.ncols);
            if v != 0.0 {
                self.indices.push(c as u32);
                self.values.push(v);
            }
        }
        // Small rows: insertion-sort the freshly appended segment by column.
        let seg = start..self.indices.len();
        for k in seg.clone().skip(1) {
            let mut j = k;
            while j > start && self.indices[j - 1] > self.indices[j] {
                self.indices.swap(j - 1, j);
                self.values.swap(j - 1, j);
                j -= 1;
            }
        }
        debug_assert!(self.indices[seg].windows(2).all(|w| w[0] < w[1]));
        self.indptr.push(self.indices.len());
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn finish(self) -> CsrMatrix {
        CsrMatrix {
            nrows: self.indptr.len() - 1,
            ncols: self.ncols,
            indptr: self.indptr,
            indices: self.indices,
            values: self.values,
        }
    }
}
