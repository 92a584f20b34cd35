//! Shared test support: an independent dense interior-point reference solver
//! and seeded instance generators.
//!
//! The reference solver shares no code with the crate's ADMM solver: it is a
//! Mehrotra predictor-corrector method on dense matrices, with ball blocks
//! handled by outer cutting planes. It is deliberately simple and slow; its
//! only job is to provide trustworthy optima for small programs.

#![allow(dead_code)]

use csvr::solver::ConicProgram;
use csvr::Dataset;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub struct RefSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

const BALL_TOL: f64 = 1e-9;
const MAX_CUT_ROUNDS: usize = 500;

/// Solves `prog` to high accuracy or panics. Only meaningful for feasible,
/// bounded programs (which is what the comparisons use it for).
pub fn solve_reference(prog: &ConicProgram) -> RefSolution {
    let n = prog.nvar();

    // Split box rows into dense one-sided inequalities G x <= h and
    // equalities E x = b.
    let mut g_rows: Vec<Vec<f64>> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    let mut e_rows: Vec<Vec<f64>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    for i in 0..prog.nrows() {
        let (cols, vals) = prog.a().row(i);
        let mut dense = vec![0.0; n];
        for (&c, &v) in cols.iter().zip(vals) {
            dense[c as usize] = v;
        }
        let (l, u) = (prog.l()[i], prog.u()[i]);
        if l == u && l.is_finite() {
            e_rows.push(dense);
            b.push(l);
        } else {
            if u.is_finite() {
                g_rows.push(dense.clone());
                h.push(u);
            }
            if l.is_finite() {
                g_rows.push(dense.iter().map(|v| -v).collect());
                h.push(-l);
            }
        }
    }

    let p = dense_p(prog);
    let q = DVector::from_column_slice(prog.q());
    let e_mat = rows_to_matrix(&e_rows, n);
    let b_vec = DVector::from_column_slice(&b);

    // Cutting-plane loop for ball blocks.
    for _round in 0..MAX_CUT_ROUNDS {
        let g_mat = rows_to_matrix(&g_rows, n);
        let h_vec = DVector::from_column_slice(&h);
        let x = ipm_solve(&p, &q, &g_mat, &h_vec, &e_mat, &b_vec);

        let mut violated = false;
        for ball in prog.balls() {
            let norm: f64 =
                ball.indices().iter().map(|&j| x[j] * x[j]).sum::<f64>().sqrt();
            if norm > ball.radius() * (1.0 + BALL_TOL) + BALL_TOL {
                violated = true;
                let mut cut = vec![0.0; n];
                for &j in ball.indices() {
                    cut[j] = x[j] / norm;
                }
                g_rows.push(cut);
                h.push(ball.radius());
            }
        }
        if !violated {
            let xv: Vec<f64> = x.iter().copied().collect();
            let objective = prog.objective(&xv);
            return RefSolution { x: xv, objective };
        }
    }
    panic!("reference solver: cutting planes did not settle");
}

fn dense_p(prog: &ConicProgram) -> DMatrix<f64> {
    let n = prog.nvar();
    let mut p = DMatrix::zeros(n, n);
    for (i, j, v) in prog.p().iter_triplets() {
        p[(i, j)] += v;
    }
    p
}

fn rows_to_matrix(rows: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), n);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

const IPM_TOL: f64 = 1e-10;
const IPM_REG: f64 = 1e-9;
const IPM_MAX_ITER: usize = 200;

/// Dense Mehrotra predictor-corrector for
/// `min 0.5 x'Px + q'x  s.t.  Gx <= h, Ex = b`.
fn ipm_solve(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    e: &DMatrix<f64>,
    b: &DVector<f64>,
) -> DVector<f64> {
    let n = q.len();
    let mi = g.nrows();
    let me = e.nrows();

    if mi == 0 {
        // Pure equality-constrained QP: one regularized KKT solve with
        // refinement.
        let dim = n + me;
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, 0), (n, n)).copy_from(p);
        for j in 0..n {
            k[(j, j)] += IPM_REG;
        }
        k.view_mut((n, 0), (me, n)).copy_from(e);
        k.view_mut((0, n), (n, me)).copy_from(&e.transpose());
        for j in 0..me {
            k[(n + j, n + j)] = -IPM_REG;
        }
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-q));
        rhs.rows_mut(n, me).copy_from(b);
        let lu = k.clone().lu();
        let mut sol = lu.solve(&rhs).expect("singular equality KKT");
        // Refinement against the unregularized system.
        let mut k0 = k;
        for j in 0..n {
            k0[(j, j)] -= IPM_REG;
        }
        for j in 0..me {
            k0[(n + j, n + j)] += IPM_REG;
        }
        for _ in 0..3 {
            let r = &rhs - &k0 * &sol;
            if let Some(d) = lu.solve(&r) {
                sol += d;
            }
        }
        return sol.rows(0, n).into_owned();
    }

    let mut x = DVector::<f64>::zeros(n);
    let mut s = DVector::<f64>::from_iterator(mi, h.iter().map(|v| v.max(1.0)));
    let mut z = DVector::<f64>::from_element(mi, 1.0);
    let mut y = DVector::<f64>::zeros(me.max(0));

    let q_scale = 1.0 + q.amax();
    let h_scale = 1.0 + if mi > 0 { h.amax() } else { 0.0 };
    let b_scale = 1.0 + if me > 0 { b.amax() } else { 0.0 };

    for _iter in 0..IPM_MAX_ITER {
        let rd = p * &x + q + g.transpose() * &z + e.transpose() * &y;
        let rp = g * &x + &s - h;
        let re = e * &x - b;
        let mu = s.dot(&z) / mi as f64;

        let rd_ok = rd.amax() <= IPM_TOL * q_scale;
        let rp_ok = rp.amax() <= IPM_TOL * h_scale;
        let re_ok = me == 0 || re.amax() <= IPM_TOL * b_scale;
        if rd_ok && rp_ok && re_ok && mu <= IPM_TOL {
            return x;
        }

        // KKT with slack elimination: H = P + G' diag(z/s) G.
        let w: DVector<f64> = z.component_div(&s);
        let mut gw = g.clone();
        for i in 0..mi {
            for j in 0..n {
                gw[(i, j)] *= w[i];
            }
        }
        let mut hmat = p + g.transpose() * &gw;
        for j in 0..n {
            hmat[(j, j)] += IPM_REG;
        }
        let dim = n + me;
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, 0), (n, n)).copy_from(&hmat);
        if me > 0 {
            k.view_mut((n, 0), (me, n)).copy_from(e);
            k.view_mut((0, n), (n, me)).copy_from(&e.transpose());
            for j in 0..me {
                k[(n + j, n + j)] = -IPM_REG;
            }
        }
        let lu = k.lu();

        let solve_dir = |r_sz: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // dz = (z .* rp - r_sz) / s + W (G dx); fold the constant part
            // into the reduced right-hand side.
            let wvec: DVector<f64> =
                DVector::from_iterator(mi, (0..mi).map(|i| (z[i] * rp[i] - r_sz[i]) / s[i]));
            let mut rhs = DVector::zeros(dim);
            let top = -&rd - g.transpose() * &wvec;
            rhs.rows_mut(0, n).copy_from(&top);
            if me > 0 {
                rhs.rows_mut(n, me).copy_from(&(-&re));
            }
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = if me > 0 { sol.rows(n, me).into_owned() } else { DVector::zeros(0) };
            let gdx = g * &dx;
            let dz: DVector<f64> =
                DVector::from_iterator(mi, (0..mi).map(|i| wvec[i] + w[i] * gdx[i]));
            let ds: DVector<f64> =
                DVector::from_iterator(mi, (0..mi).map(|i| -rp[i] - gdx[i]));
            Some((dx, dy, dz, ds))
        };

        // Affine (predictor) direction.
        let r_aff: DVector<f64> = s.component_mul(&z);
        let (dx_a, _dy_a, dz_a, ds_a) = solve_dir(&r_aff).expect("singular IPM KKT");
        let ap_aff = max_step(&s, &ds_a);
        let ad_aff = max_step(&z, &dz_a);
        let mu_aff = (0..mi)
            .map(|i| (s[i] + ap_aff * ds_a[i]) * (z[i] + ad_aff * dz_a[i]))
            .sum::<f64>()
            / mi as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let r_cor: DVector<f64> = DVector::from_iterator(
            mi,
            (0..mi).map(|i| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu),
        );
        let (dx, dy, dz, ds) = solve_dir(&r_cor).expect("singular IPM KKT");
        let _ = dx_a;

        let ap = 0.99 * max_step(&s, &ds);
        let ad = 0.99 * max_step(&z, &dz);
        x += ap * &dx;
        s += ap * &ds;
        z += ad * &dz;
        if me > 0 {
            y += ad * &dy;
        }
    }
    panic!("reference solver: interior-point iteration did not converge");
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a = 1.0f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            a = a.min(-v[i] / dv[i]);
        }
    }
    a
}

/// Seeded dataset with covariates on [1, 10] and a noisy concave response;
/// the generic raw material for solver comparisons.
pub fn random_dataset(seed: u64, n: usize, d: usize) -> Dataset {
    let mut rng = csvr::rng::stream_rng(seed, csvr::rng::Stream::Covariates, 0);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(1.0..10.0)).collect();
        let f: f64 = 3.0 + row.iter().map(|v| v.sqrt()).sum::<f64>();
        let noise: f64 = rng.random_range(-0.5..0.5);
        rows.push(row);
        y.push(f + noise);
    }
    Dataset::from_rows(rows, y).unwrap()
}
