use super::scaling::Scaling;
use super::sparse::CsrMatrix;
use super::ConicProgram;
use nalgebra::{DMatrix, DVector};

// Regularization of the polish KKT system; removed again by iterative
// refinement against the unregularized system. Refinement runs until the
// unregularized residual stagnates, since redundant active rows make the
// plain system singular and a fixed step count can stall short.
const POLISH_DELTA: f64 = 1e-7;
const REFINE_STEPS: usize = 20;
// The polish system is dense and factored once per round; beyond this
// dimension the cubic factor cost dwarfs the splitting iterations the rescue
// could save. Seeds that large also mark far more rows than any vertex can
// bind, so they would be rejected anyway.
const POLISH_DIM_LIMIT: usize = 1500;
// Active-set refinement rounds: drop unenforceable rows, add violated rows,
// re-solve. The splitting iterate seeds the first guess.
const POLISH_ROUNDS: usize = 10;
// At most this many violated rows join the active set per round; a guess that
// needs more than rounds x cap corrections is not worth rescuing.
const ADD_CAP: usize = 48;
// Violation threshold for adding a row to the active set.
const ADD_TOL: f64 = 1e-9;
// An active row is dropped when the solve could not place it on its bound:
// the seeded set then contained mutually inconsistent rows.
const DROP_TOL: f64 = 1e-8;
pub(super) struct PolishOutcome {
    pub x: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// One-norm of the recovered multipliers; the caller's optimality guard
    /// scales its objective slack with it.
    pub dual_l1: f64,
}

impl PolishOutcome {
    pub fn max_residual(&self) -> f64 {
        self.primal_residual.max(self.dual_residual)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum BoxState {
    Inactive,
    Lower,
    Upper,
    Equality,
}

/// One equality-KKT solve on the rows currently marked active.
struct ActiveSolve {
    x: Vec<f64>,
    nu: Vec<f64>,
    /// Row provenance per active row: >= 0 is a box row, -1-b is ball b.
    owners: Vec<isize>,
    /// Materialized rows: sparse coefficients and the enforced bound.
    g_rows: Vec<(Vec<(usize, f64)>, f64)>,
}

/// Factors and solves the regularized KKT system for the given active set,
/// then refines against the unregularized system. Returns `None` when the
/// system is oversized, the factorization fails, or the result is not
/// finite.
fn solve_active(
    prog: &ConicProgram,
    a_rows: &[Vec<(usize, f64)>],
    box_state: &[BoxState],
    ball_dir: &[Option<Vec<f64>>],
) -> Option<ActiveSolve> {
    let nvar = prog.nvar();
    let mut g_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut owners: Vec<isize> = Vec::new();
    for (i, row) in a_rows.iter().enumerate() {
        match box_state[i] {
            BoxState::Inactive => {}
            BoxState::Lower | BoxState::Equality => {
                g_rows.push((row.clone(), prog.l()[i]));
                owners.push(i as isize);
            }
            BoxState::Upper => {
                g_rows.push((row.clone(), prog.u()[i]));
                owners.push(i as isize);
            }
        }
    }
    for (b, dir) in ball_dir.iter().enumerate() {
        if let Some(dir) = dir {
            let row: Vec<(usize, f64)> = prog.balls()[b]
                .indices()
                .iter()
                .zip(dir)
                .map(|(&c, &v)| (c, v))
                .collect();
            g_rows.push((row, prog.balls()[b].radius()));
            owners.push(-1 - b as isize);
        }
    }

    let n_act = g_rows.len();
    let dim = nvar + n_act;
    if dim > POLISH_DIM_LIMIT {
        return None;
    }

    // Regularized KKT: [[P + dI, G'], [G, -dI]].
    let mut k_reg = DMatrix::<f64>::zeros(dim, dim);
    for (i, j, v) in prog.p().iter_triplets() {
        k_reg[(i, j)] += v;
    }
    for j in 0..nvar {
        k_reg[(j, j)] += POLISH_DELTA;
    }
    for (k, (row, _)) in g_rows.iter().enumerate() {
        for &(c, v) in row {
            k_reg[(nvar + k, c)] = v;
            k_reg[(c, nvar + k)] = v;
        }
        k_reg[(nvar + k, nvar + k)] = -POLISH_DELTA;
    }
    let lu = k_reg.lu();

    let mut rhs = DVector::<f64>::zeros(dim);
    for j in 0..nvar {
        rhs[j] = -prog.q()[j];
    }
    for (k, (_, r)) in g_rows.iter().enumerate() {
        rhs[nvar + k] = *r;
    }

    let mut sol = lu.solve(&rhs)?;

    // Refine against the unregularized KKT system.
    let apply_k0 = |s: &DVector<f64>, out: &mut DVector<f64>| {
        let (xs, nu) = (s.as_slice().split_at(nvar).0, &s.as_slice()[nvar..]);
        let mut px = vec![0.0; nvar];
        prog.p().matvec(xs, &mut px);
        for j in 0..nvar {
            out[j] = px[j];
        }
        for (k, (row, _)) in g_rows.iter().enumerate() {
            let mut gx = 0.0;
            for &(c, v) in row {
                out[c] += v * nu[k];
                gx += v * xs[c];
            }
            out[nvar + k] = gx;
        }
    };
    let mut k0s = DVector::<f64>::zeros(dim);
    for _ in 0..REFINE_STEPS {
        apply_k0(&sol, &mut k0s);
        let resid = &rhs - &k0s;
        match lu.solve(&resid) {
            Some(d) => sol += d,
            None => break,
        }
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }

    Some(ActiveSolve {
        x: sol.as_slice()[..nvar].to_vec(),
        nu: sol.as_slice()[nvar..].to_vec(),
        owners,
        g_rows,
    })
}

/// Attempts to recover a high-accuracy solution by solving the equality KKT
/// system on an active set seeded from the ADMM duals and refined over a few
/// rounds. Returns `None` when the system is oversized, a factorization
/// fails, or the active set will not settle; otherwise the caller judges
/// the returned residuals and the objective of the polished point.
pub(super) fn polish(
    prog: &ConicProgram,
    a_s: &CsrMatrix,
    sc: &Scaling,
    m0: usize,
    ball_ranges: &[(usize, usize)],
    y_un: &[f64],
    z_un: &[f64],
) -> Option<PolishOutcome> {
    let nvar = prog.nvar();

    // Unscaled sparse rows of the box constraint matrix, reused every round.
    let a_rows: Vec<Vec<(usize, f64)>> = (0..m0)
        .map(|i| {
            let (cols, vals) = a_s.row(i);
            cols.iter()
                .zip(vals)
                .map(|(&c, &v)| (c as usize, v / (sc.e[i] * sc.d[c as usize])))
                .collect()
        })
        .collect();

    // Seed the active set from the splitting duals: inactive rows carry an
    // exactly-zero multiplier after projection, so the sign test is sharp.
    let y_max = y_un[..m0].iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let seed_tol = 1e-8 * (1.0 + y_max);
    let mut box_state: Vec<BoxState> = (0..m0)
        .map(|i| {
            let (l, u) = (prog.l()[i], prog.u()[i]);
            if l == u && l.is_finite() {
                BoxState::Equality
            } else if y_un[i] < -seed_tol && l.is_finite() {
                BoxState::Lower
            } else if y_un[i] > seed_tol && u.is_finite() {
                BoxState::Upper
            } else {
                BoxState::Inactive
            }
        })
        .collect();
    let mut ball_dir: Vec<Option<Vec<f64>>> = ball_ranges
        .iter()
        .map(|&(start, len)| {
            let lambda: f64 = y_un[start..start + len]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if lambda <= 0.0 {
                return None;
            }
            let dir = &z_un[start..start + len];
            let nrm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            (nrm > 0.0).then(|| dir.iter().map(|v| v / nrm).collect())
        })
        .collect();

    // Phase one: settle the active set in primal terms. Drop rows the solve
    // cannot place on their bound, add violated rows, refresh ball tangents.
    let mut current: Option<ActiveSolve> = None;
    let mut prev_violation = f64::INFINITY;
    for _round in 0..POLISH_ROUNDS {
        let solve = solve_active(prog, &a_rows, &box_state, &ball_dir)?;
        let mut changed = false;

        for (k, &owner) in solve.owners.iter().enumerate() {
            let (row, rhs_k) = &solve.g_rows[k];
            let gx: f64 = row.iter().map(|&(c, v)| v * solve.x[c]).sum();
            if (gx - rhs_k).abs() <= DROP_TOL * (1.0 + rhs_k.abs()) {
                continue;
            }
            if owner >= 0 {
                let i = owner as usize;
                if box_state[i] != BoxState::Equality {
                    box_state[i] = BoxState::Inactive;
                    changed = true;
                }
            } else {
                ball_dir[(-1 - owner) as usize] = None;
                changed = true;
            }
        }

        let mut candidates: Vec<(f64, usize, BoxState)> = Vec::new();
        let mut worst_violation = 0.0f64;
        for (i, row) in a_rows.iter().enumerate() {
            if box_state[i] != BoxState::Inactive {
                continue;
            }
            let ax: f64 = row.iter().map(|&(c, v)| v * solve.x[c]).sum();
            let scale = 1.0 + prog.l()[i].abs().min(prog.u()[i].abs());
            if ax < prog.l()[i] - ADD_TOL * scale {
                candidates.push((prog.l()[i] - ax, i, BoxState::Lower));
            } else if ax > prog.u()[i] + ADD_TOL * scale {
                candidates.push((ax - prog.u()[i], i, BoxState::Upper));
            }
        }
        for &(v, _, _) in &candidates {
            worst_violation = worst_violation.max(v);
        }
        // Only the worst offenders join; a mostly-wrong guess gets abandoned
        // rather than rebuilt row by row.
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        for &(_, i, state) in candidates.iter().take(ADD_CAP) {
            box_state[i] = state;
            changed = true;
        }

        for (b, ball) in prog.balls().iter().enumerate() {
            let nrm: f64 = ball
                .indices()
                .iter()
                .map(|&c| solve.x[c] * solve.x[c])
                .sum::<f64>()
                .sqrt();
            if ball_dir[b].is_none() && nrm > ball.radius() + ADD_TOL * (1.0 + ball.radius()) {
                ball_dir[b] = Some(ball.indices().iter().map(|&c| solve.x[c] / nrm).collect());
                changed = true;
            } else if ball_dir[b].is_some() && nrm > 0.0 {
                // Keep the tangent anchored at the current point; counts as a
                // change only if the direction moved noticeably.
                let new_dir: Vec<f64> = ball.indices().iter().map(|&c| solve.x[c] / nrm).collect();
                let moved = ball_dir[b]
                    .as_ref()
                    .map(|d| {
                        d.iter()
                            .zip(&new_dir)
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0f64, f64::max)
                    })
                    .unwrap_or(0.0);
                ball_dir[b] = Some(new_dir);
                if moved > 1e-12 {
                    changed = true;
                }
            }
        }

        if !changed {
            current = Some(solve);
            break;
        }
        // Bail when a round fails to reduce the worst violation: the active
        // set is churning, not converging. Rounds without violations never
        // trip this; they only drop rows.
        if worst_violation > 0.0 {
            if worst_violation >= prev_violation {
                return None;
            }
            prev_violation = worst_violation;
        }
    }
    // A set still churning when the rounds run out proves nothing about the
    // point it produced.
    let current = current?;

    let x_pol = current.x;
    let mut y_pol: Vec<f64> = vec![0.0; a_s.nrows()];
    for (k, &owner) in current.owners.iter().enumerate() {
        if owner >= 0 {
            y_pol[owner as usize] = current.nu[k];
        } else {
            let b = (-1 - owner) as usize;
            let (start, _) = ball_ranges[b];
            if let Some(dir) = &ball_dir[b] {
                for (j, v) in dir.iter().enumerate() {
                    y_pol[start + j] = current.nu[k] * v;
                }
            }
        }
    }

    // Residuals at the polished point, in unscaled terms.
    let m = a_s.nrows();
    let x_sc: Vec<f64> = x_pol.iter().zip(&sc.d).map(|(v, d)| v / d).collect();
    let mut ax_sc = vec![0.0; m];
    a_s.matvec(&x_sc, &mut ax_sc);
    let mut r_prim = 0.0f64;
    for i in 0..m0 {
        let ax = ax_sc[i] / sc.e[i];
        r_prim = r_prim.max(prog.l()[i] - ax).max(ax - prog.u()[i]);
    }
    for (b, &(start, len)) in ball_ranges.iter().enumerate() {
        let nrm: f64 = (start..start + len)
            .map(|i| {
                let v = ax_sc[i] / sc.e[i];
                v * v
            })
            .sum::<f64>()
            .sqrt();
        r_prim = r_prim.max(nrm - prog.balls()[b].radius());
    }
    let r_prim = r_prim.max(0.0);

    let y_sc: Vec<f64> = y_pol
        .iter()
        .enumerate()
        .map(|(i, v)| v * sc.cost / sc.e[i])
        .collect();
    let mut aty = vec![0.0; nvar];
    a_s.matvec_t(&y_sc, &mut aty);
    let mut px = vec![0.0; nvar];
    prog.p().matvec(&x_pol, &mut px);
    let mut r_dual = 0.0f64;
    for j in 0..nvar {
        let v = px[j] + prog.q()[j] + aty[j] / (sc.cost * sc.d[j]);
        r_dual = r_dual.max(v.abs());
    }

    if !(r_prim.is_finite() && r_dual.is_finite()) || x_pol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let dual_l1: f64 = y_pol.iter().map(|v| v.abs()).sum();
    Some(PolishOutcome {
        x: x_pol,
        primal_residual: r_prim,
        dual_residual: r_dual,
        dual_l1,
    })
}
