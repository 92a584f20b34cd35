use super::sparse::CsrMatrix;
use std::ops::Range;

/// Diagonal equilibration computed by `equilibrate`: the scaled data are
/// `P_s = cost * D P D`, `q_s = cost * D q`, `A_s = E A D`.
#[derive(Clone, Debug)]
pub(crate) struct Scaling {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub cost: f64,
}

impl Scaling {
    pub fn identity(nvar: usize, nrow: usize) -> Self {
        Scaling { d: vec![1.0; nvar], e: vec![1.0; nrow], cost: 1.0 }
    }
}

// Norms are clamped into this window before inversion so that empty or
// wildly scaled rows cannot produce degenerate factors.
const MIN_NORM: f64 = 1e-8;
const MAX_NORM: f64 = 1e8;

fn inv_sqrt_factor(norm: f64) -> f64 {
    if norm <= 0.0 {
        1.0
    } else {
        1.0 / norm.clamp(MIN_NORM, MAX_NORM).sqrt()
    }
}

/// Modified Ruiz equilibration on the stacked problem data, in place.
///
/// `shared_rows` lists row ranges that must end up with a single common row
/// scale (pairwise-comparison rows for the structured factorization, and each
/// ball block's selector rows so the scaled ball stays Euclidean). Within a
/// group the geometric mean of the row norms drives the shared factor.
pub(crate) fn equilibrate(
    p: &mut CsrMatrix,
    q: &mut [f64],
    a: &mut CsrMatrix,
    shared_rows: &[Range<usize>],
    iters: usize,
) -> Scaling {
    let nvar = q.len();
    let m = a.nrows();
    let mut sc = Scaling::identity(nvar, m);
    if iters == 0 {
        return sc;
    }

    let mut in_group = vec![false; m];
    for g in shared_rows {
        for i in g.clone() {
            in_group[i] = true;
        }
    }

    let mut col_norm = vec![0.0f64; nvar];
    let mut row_norm = vec![0.0f64; m];
    let mut delta = vec![1.0f64; nvar];
    let mut eps = vec![1.0f64; m];

    for _ in 0..iters {
        // Column pass over [P; A].
        col_norm.iter_mut().for_each(|v| *v = 0.0);
        p.col_abs_max_into(&mut col_norm);
        a.col_abs_max_into(&mut col_norm);
        for (dj, nj) in delta.iter_mut().zip(&col_norm) {
            *dj = inv_sqrt_factor(*nj);
        }
        p.scale_rows_cols(&delta, &delta);
        a.scale_cols(&delta);
        for (qj, dj) in q.iter_mut().zip(&delta) {
            *qj *= dj;
        }
        for (dj, f) in sc.d.iter_mut().zip(&delta) {
            *dj *= f;
        }

        // Row pass over A, honoring shared groups.
        a.row_abs_max_into(&mut row_norm);
        for i in 0..m {
            eps[i] = if in_group[i] { 1.0 } else { inv_sqrt_factor(row_norm[i]) };
        }
        for g in shared_rows {
            let mut log_sum = 0.0;
            let mut count = 0usize;
            for i in g.clone() {
                if row_norm[i] > 0.0 {
                    log_sum += row_norm[i].clamp(MIN_NORM, MAX_NORM).ln();
                    count += 1;
                }
            }
            let factor = if count == 0 { 1.0 } else { (-0.5 * log_sum / count as f64).exp() };
            for i in g.clone() {
                eps[i] = factor;
            }
        }
        a.scale_rows(&eps);
        for (ei, f) in sc.e.iter_mut().zip(&eps) {
            *ei *= f;
        }

        // Cost normalization.
        col_norm.iter_mut().for_each(|v| *v = 0.0);
        p.col_abs_max_into(&mut col_norm);
        let mean_p = if nvar == 0 { 0.0 } else { col_norm.iter().sum::<f64>() / nvar as f64 };
        let q_norm = q.iter().fold(0.0f64, |w, v| w.max(v.abs()));
        let denom = mean_p.max(q_norm);
        let gamma = if denom <= 0.0 { 1.0 } else { 1.0 / denom.clamp(MIN_NORM, MAX_NORM) };
        p.scale(gamma);
        for qj in q.iter_mut() {
            *qj *= gamma;
        }
        sc.cost *= gamma;
    }
    sc
}
