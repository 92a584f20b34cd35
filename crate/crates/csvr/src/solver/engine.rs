use super::polish;
use super::scaling::{equilibrate, Scaling};
use super::sparse::{CsrBuilder, CsrMatrix};
use super::{ConicProgram, SolverConfig, SolverSolution, SolverStatus};
use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const ADAPTIVE_RHO_INTERVAL: usize = 50;
const ADAPTIVE_RHO_RATIO: f64 = 5.0;
const DIV_GUARD: f64 = 1e-30;
const DELTA_GUARD: f64 = 1e-12;
// Early polish: once residuals are within this factor of tolerance, try to
// finish with one active-set solve instead of grinding the splitting down.
const POLISH_ATTEMPT_FACTOR: f64 = 1e2;
// After a failed attempt, residuals must shrink by this much before retrying.
const POLISH_RETRY_SHRINK: f64 = 0.25;

/// Scaled ball block: contiguous selector rows `[start, start+len)` of the
/// stacked constraint matrix, radius already multiplied by the shared row
/// scale.
#[derive(Clone, Copy, Debug)]
struct ScaledBall {
    start: usize,
    len: usize,
    radius: f64,
}

pub(super) fn solve(prog: &ConicProgram, cfg: &SolverConfig) -> Result<SolverSolution> {
    let nvar = prog.nvar();
    let m0 = prog.nrows();

    // Stack ball selector rows below the box rows.
    let mut ball_ranges: Vec<(usize, usize)> = Vec::with_capacity(prog.balls().len());
    let a_full = if prog.balls().is_empty() {
        prog.a().clone()
    } else {
        let mut b = CsrBuilder::new(nvar);
        let mut next = m0;
        for ball in prog.balls() {
            ball_ranges.push((next, ball.indices().len()));
            for &j in ball.indices() {
                b.push_row(&[(j, 1.0)]);
            }
            next += ball.indices().len();
        }
        prog.a().vstack(&b.finish())
    };
    let m = a_full.nrows();

    // Validate the structured hint on the unscaled data before anything else.
    let layout = if cfg.prefer_dense {
        None
    } else {
        validate_hint(prog, &a_full, m0)
    };

    // Equilibrate scaled copies. Pairwise rows and each ball's rows share one
    // row scale: the former keeps the low-rank factorization exact, the
    // latter keeps the scaled ball Euclidean.
    let mut p_s = prog.p().clone();
    let mut q_s = prog.q().to_vec();
    let mut a_s = a_full;
    let mut groups: Vec<std::ops::Range<usize>> = Vec::new();
    if let Some(h) = prog.hint.as_ref() {
        if !h.pair_rows.is_empty() {
            groups.push(h.pair_rows.clone());
        }
    }
    for &(start, len) in &ball_ranges {
        groups.push(start..start + len);
    }
    let sc = if cfg.scaling_iters > 0 {
        equilibrate(&mut p_s, &mut q_s, &mut a_s, &groups, cfg.scaling_iters)
    } else {
        Scaling::identity(nvar, m)
    };

    // Scaled bounds; ball rows are unbounded boxes (the ball set constrains
    // them instead).
    let mut l_s = vec![f64::NEG_INFINITY; m];
    let mut u_s = vec![f64::INFINITY; m];
    for i in 0..m0 {
        l_s[i] = prog.l()[i] * sc.e[i];
        u_s[i] = prog.u()[i] * sc.e[i];
    }
    let balls_scaled: Vec<ScaledBall> = prog
        .balls()
        .iter()
        .zip(&ball_ranges)
        .map(|(b, &(start, len))| ScaledBall {
            start,
            len,
            radius: b.radius() * sc.e[start],
        })
        .collect();

    // Per-row penalty pattern: equality rows get a stiffer weight.
    let rho_pattern: Vec<f64> = (0..m)
        .map(|i| {
            if i < m0 && prog.l()[i] == prog.u()[i] && prog.l()[i].is_finite() {
                RHO_EQ_FACTOR
            } else {
                1.0
            }
        })
        .collect();
    let mut rho_scalar = cfg.step_rho;
    let mut rho: Vec<f64> = rho_pattern.iter().map(|p| p * rho_scalar).collect();

    let mut kkt = KktSolver::build(&p_s, &a_s, &rho, cfg.sigma, layout.as_ref(), &sc)?;
    let mut ops = MatOps::new(&a_s, layout.as_ref(), &sc, &l_s, &u_s, &rho_pattern);

    // Unscaled q norm for the dual tolerance.
    let q_norm_un = prog.q().iter().fold(0.0f64, |w, v| w.max(v.abs()));

    // Iterates (scaled space).
    let mut x = vec![0.0f64; nvar];
    let mut z = vec![0.0f64; m];
    let mut y = vec![0.0f64; m];
    let mut x_prev = x.clone();
    let mut y_prev = y.clone();

    let mut rhs_n = vec![0.0f64; nvar];
    let mut az = vec![0.0f64; m];
    let mut wbuf = vec![0.0f64; m];
    let mut tmp_m = vec![0.0f64; m];
    let mut tmp_n = vec![0.0f64; nvar];
    let mut tmp_n2 = vec![0.0f64; nvar];

    let alpha = cfg.over_relaxation;
    let mut status = SolverStatus::MaxIterations;
    let mut iterations = 0usize;
    let mut last_rp = f64::INFINITY;
    let mut last_rd = f64::INFINITY;
    let mut polish_gate = f64::INFINITY;
    let mut polished: Option<polish::PolishOutcome> = None;

    for k in 1..=cfg.max_iter {
        iterations = k;

        // x-update: (P + sigma I + A'RA) x~ = sigma x - q + A'(Rz - y).
        // rhs_n enters holding A'(Rz - y), carried over from the previous
        // iteration's fused update (zero on entry, matching z = y = 0).
        for j in 0..nvar {
            rhs_n[j] += cfg.sigma * x[j] - q_s[j];
        }
        kkt.solve_in_place(&mut rhs_n)?;
        ops.matvec(&rhs_n, &mut az);

        // Over-relaxed primal step, then the fused z/y update, which also
        // accumulates the next iteration's A'(Rz - y) into rhs_n.
        for j in 0..nvar {
            x[j] = alpha * rhs_n[j] + (1.0 - alpha) * x[j];
        }
        ops.update_and_combo(
            alpha,
            &rho,
            rho_scalar,
            &l_s,
            &u_s,
            &az,
            &mut z,
            &mut y,
            m0,
            &balls_scaled,
            &mut wbuf,
            &mut rhs_n,
        );

        if k % cfg.check_interval != 0 && k != cfg.max_iter {
            continue;
        }

        // Unscaled residuals and norms.
        ops.matvec(&x, &mut az);
        p_s.matvec(&x, &mut tmp_n);
        ops.matvec_t(&y, &mut tmp_n2);
        let mut r_prim = 0.0f64;
        let mut norm_ax = 0.0f64;
        let mut norm_z = 0.0f64;
        for i in 0..m {
            let ax = az[i] / sc.e[i];
            let zu = z[i] / sc.e[i];
            norm_ax = norm_ax.max(ax.abs());
            norm_z = norm_z.max(zu.abs());
            r_prim = r_prim.max((ax - zu).abs());
        }
        let mut r_dual = 0.0f64;
        let mut norm_px = 0.0f64;
        let mut norm_aty = 0.0f64;
        for j in 0..nvar {
            let scale = 1.0 / (sc.cost * sc.d[j]);
            let px = tmp_n[j] * scale;
            let aty = tmp_n2[j] * scale;
            norm_px = norm_px.max(px.abs());
            norm_aty = norm_aty.max(aty.abs());
            r_dual = r_dual.max((px + prog.q()[j] + aty).abs());
        }
        last_rp = r_prim;
        last_rd = r_dual;

        let eps_prim = cfg.eps_abs + cfg.eps_rel * norm_ax.max(norm_z);
        let eps_dual = cfg.eps_abs + cfg.eps_rel * norm_px.max(norm_aty).max(q_norm_un);
        if r_prim <= eps_prim && r_dual <= eps_dual {
            status = SolverStatus::Optimal;
            break;
        }

        // Early polish: from a merely decent iterate, one exact active-set
        // solve often lands far below tolerance. Accept only when the
        // polished point satisfies the absolute residual contract AND its
        // objective is consistent with the current iterate's: a wrong but
        // self-consistent active set produces machine-tight residuals at a
        // suboptimal vertex, and the objective test is what rules it out.
        // The slack term r_prim * |nu|_1 bounds how far a primally
        // infeasible iterate can undercut the true optimum.
        if cfg.polish
            && k != cfg.max_iter
            && r_prim <= POLISH_ATTEMPT_FACTOR * eps_prim
            && r_dual <= POLISH_ATTEMPT_FACTOR * eps_dual
            && r_prim.max(r_dual) < polish_gate
        {
            let y_un_now: Vec<f64> = y.iter().zip(&sc.e).map(|(v, e)| v * e / sc.cost).collect();
            let z_un_now: Vec<f64> = z.iter().zip(&sc.e).map(|(v, e)| v / e).collect();
            if let Some(p) = polish::polish(prog, &a_s, &sc, m0, &ball_ranges, &y_un_now, &z_un_now)
            {
                if p.max_residual() <= cfg.eps_abs {
                    let x_un_now: Vec<f64> = x.iter().zip(&sc.d).map(|(v, d)| v * d).collect();
                    let iter_obj = prog.objective(&x_un_now);
                    let slack = r_prim * p.dual_l1 + cfg.eps_abs * (1.0 + iter_obj.abs());
                    if prog.objective(&p.x) <= iter_obj + slack {
                        status = SolverStatus::Optimal;
                        polished = Some(p);
                        break;
                    }
                }
            }
            polish_gate = r_prim.max(r_dual) * POLISH_RETRY_SHRINK;
        }

        // Infeasibility certificates from iterate differences since the last
        // check.
        if check_primal_infeasible(
            prog,
            &mut ops,
            &sc,
            m0,
            &balls_scaled,
            &y,
            &y_prev,
            cfg.eps_infeasible,
            &mut tmp_n,
        ) {
            status = SolverStatus::PrimalInfeasible;
            break;
        }
        if check_dual_infeasible(
            prog,
            &p_s,
            &mut ops,
            &sc,
            m0,
            &balls_scaled,
            &x,
            &x_prev,
            cfg.eps_infeasible,
            &mut tmp_n,
            &mut tmp_m,
        ) {
            status = SolverStatus::DualInfeasible;
            break;
        }
        x_prev.copy_from_slice(&x);
        y_prev.copy_from_slice(&y);

        // Penalty adaptation on the normalized residual ratio.
        if cfg.adaptive_rho && k % ADAPTIVE_RHO_INTERVAL == 0 {
            let num = r_prim / norm_ax.max(norm_z).max(DIV_GUARD);
            let den = r_dual / norm_px.max(norm_aty).max(q_norm_un).max(DIV_GUARD);
            let cand = (rho_scalar * (num / den.max(DIV_GUARD)).sqrt()).clamp(RHO_MIN, RHO_MAX);
            if cand > rho_scalar * ADAPTIVE_RHO_RATIO || cand < rho_scalar / ADAPTIVE_RHO_RATIO {
                rho_scalar = cand;
                for (r, p) in rho.iter_mut().zip(&rho_pattern) {
                    *r = rho_scalar * p;
                }
                kkt.refactor(&rho)?;
                // The carried rhs was accumulated under the old penalty.
                ops.matvec_t_combo(&rho, &z, &y, &mut rhs_n);
            }
        }
    }

    if let Some(p) = polished {
        return Ok(SolverSolution {
            objective: prog.objective(&p.x),
            z: p.x,
            status: SolverStatus::Optimal,
            iterations,
            primal_residual: p.primal_residual,
            dual_residual: p.dual_residual,
        });
    }

    // Unscale the final iterate.
    let x_un: Vec<f64> = x.iter().zip(&sc.d).map(|(v, d)| v * d).collect();
    let y_un: Vec<f64> = y.iter().zip(&sc.e).map(|(v, e)| v * e / sc.cost).collect();
    let z_un: Vec<f64> = z.iter().zip(&sc.e).map(|(v, e)| v / e).collect();

    let mut solution = SolverSolution {
        objective: prog.objective(&x_un),
        z: x_un,
        status,
        iterations,
        primal_residual: last_rp,
        dual_residual: last_rd,
    };

    if cfg.polish && matches!(status, SolverStatus::Optimal | SolverStatus::MaxIterations) {
        if let Some(p) = polish::polish(prog, &a_s, &sc, m0, &ball_ranges, &y_un, &z_un) {
            // On a converged run any residual improvement is kept; a run that
            // hit the iteration cap is rescued only if the polished point
            // meets the absolute tolerance outright. Either way the polished
            // objective must be consistent with the iterate's, within the
            // undercut a primally infeasible iterate can manage; this is
            // what rejects a self-consistent but wrong active set.
            let pol_obj = prog.objective(&p.x);
            let slack = solution.primal_residual * p.dual_l1
                + cfg.eps_abs * (1.0 + solution.objective.abs());
            let keep = pol_obj <= solution.objective + slack
                && match status {
                    SolverStatus::Optimal => {
                        p.max_residual() < solution.primal_residual.max(solution.dual_residual)
                    }
                    _ => p.max_residual() <= cfg.eps_abs,
                };
            if keep {
                solution.objective = prog.objective(&p.x);
                solution.z = p.x;
                solution.primal_residual = p.primal_residual;
                solution.dual_residual = p.dual_residual;
                solution.status = SolverStatus::Optimal;
            }
        }
    }
    Ok(solution)
}

/// Tests whether the (unscaled) change in the dual iterate certifies primal
/// infeasibility: A'dy ~ 0 while the support function of the constraint set
/// in direction dy is negative.
#[allow(clippy::too_many_arguments)]
fn check_primal_infeasible(
    prog: &ConicProgram,
    ops: &mut MatOps,
    sc: &Scaling,
    m0: usize,
    balls: &[ScaledBall],
    y: &[f64],
    y_prev: &[f64],
    eps: f64,
    tmp_n: &mut [f64],
) -> bool {
    let m = y.len();
    if m == 0 {
        return false;
    }
    // Unscaled delta and its norm.
    let mut norm = 0.0f64;
    let mut dy_s = vec![0.0f64; m];
    for i in 0..m {
        dy_s[i] = y[i] - y_prev[i];
        norm = norm.max(((dy_s[i]) * sc.e[i] / sc.cost).abs());
    }
    if norm < DELTA_GUARD {
        return false;
    }
    // ||A' dy||_inf on the normalized direction.
    ops.matvec_t(&dy_s, tmp_n);
    let mut lhs = 0.0f64;
    for (j, t) in tmp_n.iter().enumerate() {
        lhs = lhs.max((t / (sc.cost * sc.d[j])).abs());
    }
    if lhs / norm > eps {
        return false;
    }
    // Support function of C in the direction of dy (normalized).
    let mut support = 0.0f64;
    for i in 0..m0 {
        let e = (dy_s[i] * sc.e[i] / sc.cost) / norm;
        if e > 0.0 {
            if prog.u()[i].is_finite() {
                support += prog.u()[i] * e;
            } else if e > eps {
                return false;
            }
        } else if e < 0.0 {
            if prog.l()[i].is_finite() {
                support += prog.l()[i] * e;
            } else if e < -eps {
                return false;
            }
        }
    }
    for (b, ball) in balls.iter().zip(prog.balls()) {
        let mut nrm2 = 0.0;
        for i in b.start..b.start + b.len {
            let e = (dy_s[i] * sc.e[i] / sc.cost) / norm;
            nrm2 += e * e;
        }
        support += ball.radius() * nrm2.sqrt();
    }
    support < -eps
}

/// Tests whether the (unscaled) change in the primal iterate certifies dual
/// infeasibility: a direction of unbounded descent compatible with the
/// constraint recession cone.
#[allow(clippy::too_many_arguments)]
fn check_dual_infeasible(
    prog: &ConicProgram,
    p_s: &CsrMatrix,
    ops: &mut MatOps,
    sc: &Scaling,
    m0: usize,
    balls: &[ScaledBall],
    x: &[f64],
    x_prev: &[f64],
    eps: f64,
    tmp_n: &mut [f64],
    tmp_m: &mut [f64],
) -> bool {
    let n = x.len();
    let mut dx_s = vec![0.0f64; n];
    let mut norm = 0.0f64;
    for j in 0..n {
        dx_s[j] = x[j] - x_prev[j];
        norm = norm.max((dx_s[j] * sc.d[j]).abs());
    }
    if norm < DELTA_GUARD {
        return false;
    }
    // q' dx must be negative (descent).
    let mut qdx = 0.0;
    for j in 0..n {
        qdx += prog.q()[j] * dx_s[j] * sc.d[j];
    }
    if qdx / norm > -eps {
        return false;
    }
    // ||P dx||_inf ~ 0.
    p_s.matvec(&dx_s, tmp_n);
    for (j, t) in tmp_n.iter().enumerate() {
        if (t / (sc.cost * sc.d[j])).abs() / norm > eps {
            return false;
        }
    }
    // A dx must lie in the recession cone of C.
    ops.matvec(&dx_s, tmp_m);
    for i in 0..m0 {
        let v = (tmp_m[i] / sc.e[i]) / norm;
        let l_fin = prog.l()[i].is_finite();
        let u_fin = prog.u()[i].is_finite();
        if u_fin && v > eps {
            return false;
        }
        if l_fin && v < -eps {
            return false;
        }
    }
    for b in balls {
        for i in b.start..b.start + b.len {
            if ((tmp_m[i] / sc.e[i]) / norm).abs() > eps {
                return false;
            }
        }
    }
    true
}

/// Validated block layout extracted from the assembly hint; see
/// [`super::PairwiseHint`].
struct Layout {
    n_obs: usize,
    bw: usize,
    w: usize,
    pair_rows: std::ops::Range<usize>,
    u_eval: Vec<f64>,
    /// For each non-pair row of the stacked matrix, the block its support
    /// lies in (`None` for empty rows).
    row_block: Vec<Option<usize>>,
}

fn validate_hint(prog: &ConicProgram, a_full: &CsrMatrix, m0: usize) -> Option<Layout> {
    let h = prog.hint.as_ref()?;
    let nvar = prog.nvar();
    let (n_obs, bw, w) = (h.n_obs, h.block_width, h.eval_width);
    if n_obs == 0 || w == 0 || bw < w || nvar != n_obs * bw {
        return None;
    }
    if h.u_eval.len() != n_obs * w || h.u_eval.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let expected_pairs = n_obs * (n_obs - 1);
    if h.pair_rows.len() != expected_pairs || h.pair_rows.end > m0 {
        return None;
    }
    // P must be block-local.
    for (i, j, _) in prog.p().iter_triplets() {
        if i / bw != j / bw {
            return None;
        }
    }
    // Non-pair rows must be block-local; remember their blocks.
    let m = a_full.nrows();
    let mut row_block = vec![None; m];
    for r in 0..m {
        if h.pair_rows.contains(&r) {
            continue;
        }
        let (cols, _) = a_full.row(r);
        if cols.is_empty() {
            continue;
        }
        let b = cols[0] as usize / bw;
        if cols.iter().any(|&c| c as usize / bw != b) {
            return None;
        }
        row_block[r] = Some(b);
    }
    // Pair rows must match +u_i on block i, -u_i on block h, zeros omitted.
    let mut expected: Vec<(u32, f64)> = Vec::with_capacity(2 * w);
    for t in 0..expected_pairs {
        let i = t / (n_obs - 1);
        let rem = t % (n_obs - 1);
        let hh = if rem >= i { rem + 1 } else { rem };
        expected.clear();
        let ui = &h.u_eval[i * w..(i + 1) * w];
        for (s, &v) in ui.iter().enumerate() {
            if v != 0.0 {
                expected.push(((i * bw + s) as u32, v));
            }
        }
        for (s, &v) in ui.iter().enumerate() {
            if v != 0.0 {
                expected.push(((hh * bw + s) as u32, -v));
            }
        }
        expected.sort_unstable_by_key(|&(c, _)| c);
        let (cols, vals) = a_full.row(h.pair_rows.start + t);
        if cols.len() != expected.len() {
            return None;
        }
        for ((&c, &v), &(ec, ev)) in cols.iter().zip(vals).zip(expected.iter()) {
            if c != ec || v != ev {
                return None;
            }
        }
    }
    Some(Layout {
        n_obs,
        bw,
        w,
        pair_rows: h.pair_rows.clone(),
        u_eval: h.u_eval.clone(),
        row_block,
    })
}

/// Applies the scaled constraint matrix. Pairwise comparison rows go through
/// their closed form (hyperplane `i` minus hyperplane `j`, both evaluated at
/// point `i`); every other row uses the stored CSR data. One application then
/// touches O(n w) state for the pairwise part instead of its O(n^2 w) stored
/// entries, which is what makes large fits affordable: at n = 200 the pairwise
/// rows are ~98% of the matrix.
struct MatOps<'a> {
    a: &'a CsrMatrix,
    pair: Option<PairApply>,
}

struct PairApply {
    start: usize,
    n: usize,
    bw: usize,
    w: usize,
    /// Shared row scale of the pairwise group.
    e: f64,
    /// Shared scaled bounds of the pairwise rows.
    l: f64,
    u_bound: f64,
    /// Raw evaluation vectors, row-major n x w.
    u: Vec<f64>,
    /// Column scales of the evaluation slots, row-major n x w.
    d: Vec<f64>,
    /// Scratch in column-major layout (slot s holds a contiguous n-vector)
    /// so the per-block inner loops run contiguously and vectorize.
    cols: Vec<f64>,
    acc: Vec<f64>,
    rowsum: Vec<f64>,
    rowbuf: Vec<f64>,
    fbuf: Vec<f64>,
}

impl<'a> MatOps<'a> {
    /// The fused update path additionally requires uniform bounds and a unit
    /// penalty pattern across the pairwise rows; a hint that fails those
    /// checks falls back to plain CSR application.
    fn new(
        a: &'a CsrMatrix,
        layout: Option<&Layout>,
        sc: &Scaling,
        l_s: &[f64],
        u_s: &[f64],
        rho_pattern: &[f64],
    ) -> MatOps<'a> {
        let pair = layout
            .filter(|lay| !lay.pair_rows.is_empty())
            .filter(|lay| {
                let r0 = lay.pair_rows.start;
                lay.pair_rows
                    .clone()
                    .all(|r| l_s[r] == l_s[r0] && u_s[r] == u_s[r0] && rho_pattern[r] == 1.0)
            })
            .map(|lay| {
                let (n, bw, w) = (lay.n_obs, lay.bw, lay.w);
                let mut d = vec![0.0f64; n * w];
                for g in 0..n {
                    for s in 0..w {
                        d[g * w + s] = sc.d[g * bw + s];
                    }
                }
                PairApply {
                    start: lay.pair_rows.start,
                    n,
                    bw,
                    w,
                    e: sc.e[lay.pair_rows.start],
                    l: l_s[lay.pair_rows.start],
                    u_bound: u_s[lay.pair_rows.start],
                    u: lay.u_eval.clone(),
                    d,
                    cols: vec![0.0; n * w],
                    acc: vec![0.0; n * w],
                    rowsum: vec![0.0; n],
                    rowbuf: vec![0.0; n],
                    fbuf: vec![0.0; n],
                }
            });
        MatOps { a, pair }
    }

    fn pair_span(&self) -> Option<(usize, usize)> {
        self.pair
            .as_ref()
            .map(|p| (p.start, p.start + p.n * (p.n - 1)))
    }

    fn matvec(&mut self, x: &[f64], out: &mut [f64]) {
        let Some((start, end)) = self.pair_span() else {
            self.a.matvec(x, out);
            return;
        };
        self.csr_range(x, out, 0, start);
        self.csr_range(x, out, end, self.a.nrows());
        self.pair
            .as_mut()
            .expect("pair structure present")
            .apply(x, out);
    }

    fn matvec_t(&mut self, y: &[f64], out: &mut [f64]) {
        let Some((start, end)) = self.pair_span() else {
            self.a.matvec_t(y, out);
            return;
        };
        out.fill(0.0);
        self.csr_range_t(|r| y[r], out, 0, start);
        self.csr_range_t(|r| y[r], out, end, self.a.nrows());
        self.pair
            .as_mut()
            .expect("pair structure present")
            .apply_t(|r| y[r], out);
    }

    /// `out = A' (rho . z - y)` without materializing the combined vector.
    fn matvec_t_combo(&mut self, rho: &[f64], z: &[f64], y: &[f64], out: &mut [f64]) {
        let take = |r: usize| rho[r] * z[r] - y[r];
        out.fill(0.0);
        let Some((start, end)) = self.pair_span() else {
            self.csr_range_t(take, out, 0, self.a.nrows());
            return;
        };
        self.csr_range_t(take, out, 0, start);
        self.csr_range_t(take, out, end, self.a.nrows());
        self.pair
            .as_mut()
            .expect("pair structure present")
            .apply_t(take, out);
    }

    /// One pass over the rows: over-relaxed projection step for `z`, dual
    /// step for `y`, and accumulation of `A'(rho . z_new - y_new)` into `out`
    /// while both updates are still in registers. `rho_pair` is the shared
    /// penalty on the pairwise rows.
    #[allow(clippy::too_many_arguments)]
    fn update_and_combo(
        &mut self,
        alpha: f64,
        rho: &[f64],
        rho_pair: f64,
        l_s: &[f64],
        u_s: &[f64],
        az: &[f64],
        z: &mut [f64],
        y: &mut [f64],
        m0: usize,
        balls: &[ScaledBall],
        wbuf: &mut [f64],
        out: &mut [f64],
    ) {
        out.fill(0.0);
        let span = self.pair_span();
        let (pair_start, pair_end) = span.unwrap_or((m0, m0));
        self.box_rows(alpha, rho, l_s, u_s, az, z, y, out, 0, pair_start);
        self.box_rows(alpha, rho, l_s, u_s, az, z, y, out, pair_end, m0);
        if span.is_some() {
            let p = self.pair.as_mut().expect("pair structure present");
            let n = p.n;
            let inv_rho = 1.0 / rho_pair;
            p.acc.fill(0.0);
            let mut r = pair_start;
            for i in 0..n {
                p.fbuf[i] = 0.0;
                for &(js, je) in &[(0, i), (i + 1, n)] {
                    for j in js..je {
                        let wv = alpha * az[r] + (1.0 - alpha) * z[r] + y[r] * inv_rho;
                        let zn = wv.clamp(p.l, p.u_bound);
                        let yn = rho_pair * (wv - zn);
                        z[r] = zn;
                        y[r] = yn;
                        p.fbuf[j] = rho_pair * zn - yn;
                        r += 1;
                    }
                }
                p.fold_row(i);
            }
            p.scatter(out);
        }
        // Ball segments: the projection needs the whole segment's norm first.
        for b in balls {
            let seg = b.start..b.start + b.len;
            for i in seg.clone() {
                wbuf[i] = alpha * az[i] + (1.0 - alpha) * z[i] + y[i] / rho[i];
            }
            let norm = wbuf[seg.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if norm > b.radius {
                b.radius / norm
            } else {
                1.0
            };
            for i in seg {
                let zn = wbuf[i] * scale;
                let yn = rho[i] * (wbuf[i] - zn);
                z[i] = zn;
                y[i] = yn;
                let f = rho[i] * zn - yn;
                if f == 0.0 {
                    continue;
                }
                let (cols, vals) = self.a.row(i);
                for (&c, &v) in cols.iter().zip(vals) {
                    out[c as usize] += v * f;
                }
            }
        }
    }

    /// Box-row segment of the fused update.
    #[allow(clippy::too_many_arguments)]
    fn box_rows(
        &self,
        alpha: f64,
        rho: &[f64],
        l_s: &[f64],
        u_s: &[f64],
        az: &[f64],
        z: &mut [f64],
        y: &mut [f64],
        out: &mut [f64],
        from: usize,
        to: usize,
    ) {
        for i in from..to {
            let wv = alpha * az[i] + (1.0 - alpha) * z[i] + y[i] / rho[i];
            let zn = wv.clamp(l_s[i], u_s[i]);
            let yn = rho[i] * (wv - zn);
            z[i] = zn;
            y[i] = yn;
            let f = rho[i] * zn - yn;
            if f == 0.0 {
                continue;
            }
            let (cols, vals) = self.a.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c as usize] += v * f;
            }
        }
    }

    fn csr_range(&self, x: &[f64], out: &mut [f64], from: usize, to: usize) {
        for r in from..to {
            let (cols, vals) = self.a.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c as usize];
            }
            out[r] = acc;
        }
    }

    fn csr_range_t(
        &self,
        mut take: impl FnMut(usize) -> f64,
        out: &mut [f64],
        from: usize,
        to: usize,
    ) {
        for r in from..to {
            let f = take(r);
            if f == 0.0 {
                continue;
            }
            let (cols, vals) = self.a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c as usize] += v * f;
            }
        }
    }
}

impl PairApply {
    /// Loads the scaled evaluation coordinates of `x` into the column
    /// scratch: cols[s][g] = d_{g,s} x_{g,s}.
    fn load_cols(&mut self, x: &[f64]) {
        let (n, w, bw) = (self.n, self.w, self.bw);
        for s in 0..w {
            let col = &mut self.cols[s * n..(s + 1) * n];
            for (g, c) in col.iter_mut().enumerate() {
                *c = self.d[g * w + s] * x[g * bw + s];
            }
        }
    }

    /// rowbuf[j] = hyperplane j evaluated at point i (in scaled coordinates).
    fn eval_row(&mut self, i: usize) {
        let (n, w) = (self.n, self.w);
        let ui = &self.u[i * w..(i + 1) * w];
        self.rowbuf[..n].fill(0.0);
        for (s, &uv) in ui.iter().enumerate() {
            let col = &self.cols[s * n..(s + 1) * n];
            for (b, &c) in self.rowbuf.iter_mut().zip(col) {
                *b += uv * c;
            }
        }
    }

    /// Writes the pairwise rows of `A x` into `out`. Row order matches the
    /// assembly: for each block `i` ascending, all `j != i` ascending.
    fn apply(&mut self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        self.load_cols(x);
        let mut r = self.start;
        for i in 0..n {
            self.eval_row(i);
            let pi = self.rowbuf[i];
            for &bj in &self.rowbuf[..i] {
                out[r] = self.e * (pi - bj);
                r += 1;
            }
            for &bj in &self.rowbuf[i + 1..n] {
                out[r] = self.e * (pi - bj);
                r += 1;
            }
        }
    }

    /// Accumulates the pairwise part of `A' f` into `out`, reading `f` via
    /// the row index so callers can fuse elementwise work into the pass.
    fn apply_t(&mut self, mut take: impl FnMut(usize) -> f64, out: &mut [f64]) {
        let n = self.n;
        self.acc.fill(0.0);
        let mut r = self.start;
        for i in 0..n {
            for j in 0..n {
                self.fbuf[j] = if j == i {
                    0.0
                } else {
                    let f = take(r);
                    r += 1;
                    f
                };
            }
            self.fold_row(i);
        }
        self.scatter(out);
    }

    /// Accumulates fbuf (the combined row values for block `i`) into the
    /// row sums and slot columns.
    fn fold_row(&mut self, i: usize) {
        let (n, w) = (self.n, self.w);
        self.rowsum[i] = self.fbuf.iter().sum();
        let ui = &self.u[i * w..(i + 1) * w];
        for (s, &uv) in ui.iter().enumerate() {
            let col = &mut self.acc[s * n..(s + 1) * n];
            for (a, &f) in col.iter_mut().zip(&self.fbuf) {
                *a += uv * f;
            }
        }
    }

    /// Adds the folded pairwise contribution of `A' f` into `out`.
    fn scatter(&self, out: &mut [f64]) {
        let (n, w, bw) = (self.n, self.w, self.bw);
        for g in 0..n {
            for s in 0..w {
                out[g * bw + s] += self.e
                    * self.d[g * w + s]
                    * (self.u[g * w + s] * self.rowsum[g] - self.acc[s * n + g]);
            }
        }
    }
}

enum KktSolver {
    Dense(DenseKkt),
    Structured(StructuredKkt),
}

impl KktSolver {
    fn build(
        p_s: &CsrMatrix,
        a_s: &CsrMatrix,
        rho: &[f64],
        sigma: f64,
        layout: Option<&Layout>,
        sc: &Scaling,
    ) -> Result<KktSolver> {
        match layout {
            Some(lay) => Ok(KktSolver::Structured(StructuredKkt::build(
                p_s, a_s, rho, sigma, lay, sc,
            )?)),
            None => Ok(KktSolver::Dense(DenseKkt::build(p_s, a_s, rho, sigma)?)),
        }
    }

    fn solve_in_place(&mut self, v: &mut [f64]) -> Result<()> {
        match self {
            KktSolver::Dense(k) => k.solve_in_place(v),
            KktSolver::Structured(k) => k.solve_in_place(v),
        }
    }

    fn refactor(&mut self, rho: &[f64]) -> Result<()> {
        match self {
            KktSolver::Dense(k) => k.refactor(rho),
            KktSolver::Structured(k) => k.refactor(rho),
        }
    }
}

fn factor_error() -> Error {
    Error::Solver {
        status: SolverStatus::MaxIterations,
        detail: "reduced system factorization failed".into(),
    }
}

/// Dense Cholesky of `P + sigma I + A' R A`; rebuilt from the sparse data on
/// every penalty change.
struct DenseKkt {
    p_s: CsrMatrix,
    a_s: CsrMatrix,
    sigma: f64,
    chol: Cholesky<f64, Dyn>,
    buf: DVector<f64>,
}

impl DenseKkt {
    fn assemble(p_s: &CsrMatrix, a_s: &CsrMatrix, rho: &[f64], sigma: f64) -> DMatrix<f64> {
        let n = p_s.nrows();
        let mut f = DMatrix::<f64>::zeros(n, n);
        for (i, j, v) in p_s.iter_triplets() {
            f[(i, j)] += v;
        }
        for j in 0..n {
            f[(j, j)] += sigma;
        }
        for r in 0..a_s.nrows() {
            let (cols, vals) = a_s.row(r);
            let w = rho[r];
            for (k1, (&c1, &v1)) in cols.iter().zip(vals).enumerate() {
                let base = w * v1;
                for (&c2, &v2) in cols.iter().zip(vals).skip(k1) {
                    let add = base * v2;
                    f[(c1 as usize, c2 as usize)] += add;
                    if c1 != c2 {
                        f[(c2 as usize, c1 as usize)] += add;
                    }
                }
            }
        }
        f
    }

    fn build(p_s: &CsrMatrix, a_s: &CsrMatrix, rho: &[f64], sigma: f64) -> Result<DenseKkt> {
        let f = Self::assemble(p_s, a_s, rho, sigma);
        let n = f.nrows();
        let chol = Cholesky::new(f).ok_or_else(factor_error)?;
        Ok(DenseKkt {
            p_s: p_s.clone(),
            a_s: a_s.clone(),
            sigma,
            chol,
            buf: DVector::zeros(n),
        })
    }

    fn refactor(&mut self, rho: &[f64]) -> Result<()> {
        let f = Self::assemble(&self.p_s, &self.a_s, rho, self.sigma);
        self.chol = Cholesky::new(f).ok_or_else(factor_error)?;
        Ok(())
    }

    fn solve_in_place(&mut self, v: &mut [f64]) -> Result<()> {
        self.buf.as_mut_slice().copy_from_slice(v);
        self.chol.solve_mut(&mut self.buf);
        v.copy_from_slice(self.buf.as_slice());
        Ok(())
    }
}

/// Block + low-rank factorization of `P + sigma I + A' R A` for programs made
/// of `n` consecutive variable blocks coupled only through the pairwise
/// comparison rows.
///
/// With `u_i = (1, x_i)` the evaluation vector of block `i` (column-scaled to
/// `k_i`), the pairwise rows contribute
///
/// ```text
/// coef * [ blkdiag_g( D_g (T + n u_g u_g') D_g ) - (K S' + S K') ]
/// ```
///
/// where `T = sum_i u_i u_i'`, `K` stacks `k_g u_g'` per block, `S` stacks
/// `diag(d_g)` per block, and `coef` folds the shared row scale and penalty.
/// The first (block-diagonal) part joins the per-block Cholesky factors; the
/// rank-`2w` correction is applied through the Woodbury identity with a
/// `2w x 2w` capacitance matrix.
struct StructuredKkt {
    n_obs: usize,
    bw: usize,
    w: usize,
    /// Per-block fixed part: sigma I + scaled P block (dense bw x bw).
    const_blocks: Vec<DMatrix<f64>>,
    /// Per-block penalty-proportional part (local rows + pairwise diagonal),
    /// at rho pattern weight 1; actual rho multiplies in on refactor.
    rho_blocks: Vec<DMatrix<f64>>,
    chols: Vec<Cholesky<f64, Dyn>>,
    /// Correction data: per block the scaled evaluation vectors.
    k_vecs: Vec<f64>, // n_obs x w: D_g u_g
    d_eval: Vec<f64>, // n_obs x w: column scales of eval slots
    u_eval: Vec<f64>, // n_obs x w: raw evaluation vectors
    coef_unit: f64,   // e_pair^2 (coef = rho_base * coef_unit)
    has_pairs: bool,
    /// Woodbury workspace, rebuilt on refactor.
    y_blocks: Vec<DMatrix<f64>>, // per block: bw x 2w
    cap_lu: Option<nalgebra::FullPivLU<f64, Dyn, Dyn>>,
    coef: f64,
    buf: DVector<f64>,
    gvec: DVector<f64>,
}

impl StructuredKkt {
    fn build(
        p_s: &CsrMatrix,
        a_s: &CsrMatrix,
        rho: &[f64],
        sigma: f64,
        lay: &Layout,
        sc: &Scaling,
    ) -> Result<StructuredKkt> {
        let (nb, bw, w) = (lay.n_obs, lay.bw, lay.w);
        let has_pairs = !lay.pair_rows.is_empty();

        // Fixed per-block part.
        let mut const_blocks = vec![DMatrix::<f64>::zeros(bw, bw); nb];
        for b in const_blocks.iter_mut() {
            for s in 0..bw {
                b[(s, s)] = sigma;
            }
        }
        for (i, j, v) in p_s.iter_triplets() {
            let g = i / bw;
            const_blocks[g][(i - g * bw, j - g * bw)] += v;
        }

        // Penalty-proportional per-block part, stored at the base penalty so a
        // refactor only rescales. Every entry of rho is base * pattern with
        // pattern >= 1 and pattern = 1 on the pairwise (inequality) rows, so
        // the base is the minimum entry.
        let base = rho.iter().copied().fold(f64::INFINITY, f64::min);
        let base = if base.is_finite() && base > 0.0 {
            base
        } else {
            1.0
        };
        let mut rho_blocks = vec![DMatrix::<f64>::zeros(bw, bw); nb];
        for (r, blk) in lay.row_block.iter().enumerate() {
            let Some(g) = *blk else { continue };
            let (cols, vals) = a_s.row(r);
            let off = g * bw;
            let pattern = rho[r] / base;
            for (k1, (&c1, &v1)) in cols.iter().zip(vals).enumerate() {
                for (&c2, &v2) in cols.iter().zip(vals).skip(k1) {
                    let add = pattern * v1 * v2;
                    let (s, t) = (c1 as usize - off, c2 as usize - off);
                    rho_blocks[g][(s, t)] += add;
                    if s != t {
                        rho_blocks[g][(t, s)] += add;
                    }
                }
            }
        }

        // Pairwise diagonal contribution at unit penalty: e^2 D (T + n R) D.
        let mut k_vecs = vec![0.0f64; nb * w];
        let mut d_eval = vec![0.0f64; nb * w];
        for g in 0..nb {
            for s in 0..w {
                let d = sc.d[g * bw + s];
                d_eval[g * w + s] = d;
                k_vecs[g * w + s] = d * lay.u_eval[g * w + s];
            }
        }
        let mut coef_unit = 0.0;
        if has_pairs {
            let e_pair = sc.e[lay.pair_rows.start];
            coef_unit = e_pair * e_pair;
            // T = sum_i u_i u_i' over raw evaluation vectors.
            let mut t_mat = vec![0.0f64; w * w];
            for g in 0..nb {
                let u = &lay.u_eval[g * w..(g + 1) * w];
                for s in 0..w {
                    for t in 0..w {
                        t_mat[s * w + t] += u[s] * u[t];
                    }
                }
            }
            let nf = nb as f64;
            for g in 0..nb {
                let u = &lay.u_eval[g * w..(g + 1) * w];
                for s in 0..w {
                    for t in 0..w {
                        let ds = d_eval[g * w + s];
                        let dt = d_eval[g * w + t];
                        rho_blocks[g][(s, t)] +=
                            coef_unit * ds * dt * (t_mat[s * w + t] + nf * u[s] * u[t]);
                    }
                }
            }
        }

        let mut kkt = StructuredKkt {
            n_obs: nb,
            bw,
            w,
            const_blocks,
            rho_blocks,
            chols: Vec::new(),
            k_vecs,
            d_eval,
            u_eval: lay.u_eval.clone(),
            coef_unit,
            has_pairs,
            y_blocks: Vec::new(),
            cap_lu: None,
            coef: 0.0,
            buf: DVector::zeros(bw),
            gvec: DVector::zeros(2 * w),
        };
        kkt.refactor(rho)?;
        Ok(kkt)
    }

    fn refactor(&mut self, rho: &[f64]) -> Result<()> {
        // Recover the base penalty the same way build() normalized it: the
        // minimum entry, since patterns are >= 1 with equality exactly on
        // inequality rows.
        let base = rho.iter().copied().fold(f64::INFINITY, f64::min);
        let base = if base.is_finite() && base > 0.0 {
            base
        } else {
            1.0
        };
        self.coef = base * self.coef_unit;

        let (nb, bw, w) = (self.n_obs, self.bw, self.w);
        self.chols.clear();
        self.chols.reserve(nb);
        for g in 0..nb {
            let mut f = self.const_blocks[g].clone();
            for (a, b) in f.iter_mut().zip(self.rho_blocks[g].iter()) {
                *a += base * b;
            }
            self.chols.push(Cholesky::new(f).ok_or_else(factor_error)?);
        }

        if !self.has_pairs {
            self.y_blocks.clear();
            self.cap_lu = None;
            return Ok(());
        }

        // Y = F_blk^{-1} U, with U = [K | S] materialized per block.
        let two_w = 2 * w;
        let mut cap = DMatrix::<f64>::zeros(two_w, two_w);
        // C^{-1} = (1/coef) * [[0, I], [I, 0]]
        for s in 0..w {
            cap[(s, w + s)] = 1.0 / self.coef;
            cap[(w + s, s)] = 1.0 / self.coef;
        }
        self.y_blocks.clear();
        self.y_blocks.reserve(nb);
        for g in 0..nb {
            let mut u_g = DMatrix::<f64>::zeros(bw, two_w);
            let k = &self.k_vecs[g * w..(g + 1) * w];
            let u = &self.u_eval[g * w..(g + 1) * w];
            let d = &self.d_eval[g * w..(g + 1) * w];
            for s in 0..w {
                for t in 0..w {
                    u_g[(t, s)] = k[t] * u[s]; // K column s
                }
                u_g[(s, w + s)] = d[s]; // S column s
            }
            let mut y_g = u_g.clone();
            self.chols[g].solve_mut(&mut y_g);
            // cap -= U_g' Y_g
            cap.gemm(-1.0, &u_g.transpose(), &y_g, 1.0);
            self.y_blocks.push(y_g);
        }
        let lu = cap.full_piv_lu();
        if !lu.is_invertible() {
            return Err(factor_error());
        }
        self.cap_lu = Some(lu);
        Ok(())
    }

    fn solve_in_place(&mut self, v: &mut [f64]) -> Result<()> {
        let (nb, bw, w) = (self.n_obs, self.bw, self.w);
        // t = F_blk^{-1} v, block by block (in place).
        for g in 0..nb {
            let seg = &mut v[g * bw..(g + 1) * bw];
            self.buf.as_mut_slice().copy_from_slice(seg);
            self.chols[g].solve_mut(&mut self.buf);
            seg.copy_from_slice(self.buf.as_slice());
        }
        if !self.has_pairs {
            return Ok(());
        }
        // g = U' t
        self.gvec.fill(0.0);
        for g in 0..nb {
            let seg = &v[g * bw..g * bw + w];
            let k = &self.k_vecs[g * w..(g + 1) * w];
            let u = &self.u_eval[g * w..(g + 1) * w];
            let d = &self.d_eval[g * w..(g + 1) * w];
            let kappa: f64 = k.iter().zip(seg).map(|(a, b)| a * b).sum();
            for s in 0..w {
                self.gvec[s] += u[s] * kappa;
                self.gvec[w + s] += d[s] * seg[s];
            }
        }
        // h = M^{-1} g
        let h = self
            .cap_lu
            .as_ref()
            .expect("capacitance factor present when pairs exist")
            .solve(&self.gvec)
            .ok_or_else(factor_error)?;
        // x = t + Y h
        for g in 0..nb {
            let y_g = &self.y_blocks[g];
            let seg = &mut v[g * bw..(g + 1) * bw];
            for r in 0..bw {
                let mut acc = 0.0;
                for c in 0..2 * w {
                    acc += y_g[(r, c)] * h[c];
                }
                seg[r] += acc;
            }
        }
        Ok(())
    }
}
