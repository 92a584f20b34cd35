//! Embedded convex-QP solver.
//!
//! Problems are quadratic programs in the form
//!
//! ```text
//! minimize    0.5 z' P z + q' z
//! subject to  l <= A z <= u          (row bounds; l_i = u_i for equalities)
//!             ||z[S_b]||_2 <= r_b    (optional Euclidean-ball blocks)
//! ```
//!
//! and are solved by over-relaxed ADMM on the splitting `Az = s, s in C`,
//! with Ruiz equilibration, per-row penalty weights, adaptive penalty
//! updates, infeasibility certificates from the iterate differences, and an
//! optional active-set polish step. The reduced linear system is factored
//! either densely or, when the program carries the per-observation block
//! structure produced by the estimators, through a block + low-rank
//! decomposition that keeps the cost linear in the number of observations.

mod dump;
mod engine;
mod polish;
mod scaling;
pub mod sparse;

pub use sparse::{CsrBuilder, CsrMatrix};

use crate::error::{Error, Result};

/// Terminal state of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    /// Converged within tolerances.
    Optimal,
    /// Iteration limit reached before convergence.
    MaxIterations,
    /// A certificate of primal infeasibility was found.
    PrimalInfeasible,
    /// A certificate of dual infeasibility (unboundedness) was found.
    DualInfeasible,
}

/// Result of a solve: primal iterate plus convergence diagnostics.
#[derive(Clone, Debug)]
pub struct SolverSolution {
    /// Primal variables (meaningful only when `status` is `Optimal` or as a
    /// best-effort iterate for `MaxIterations`).
    pub z: Vec<f64>,
    /// Objective value `0.5 z'Pz + q'z` at `z`.
    pub objective: f64,
    pub status: SolverStatus,
    pub iterations: usize,
    /// Unscaled infinity-norm primal residual.
    pub primal_residual: f64,
    /// Unscaled infinity-norm dual residual.
    pub dual_residual: f64,
}

impl SolverSolution {
    pub fn report(&self) -> SolverReport {
        SolverReport {
            status: self.status,
            iterations: self.iterations,
            primal_residual: self.primal_residual,
            dual_residual: self.dual_residual,
            objective: self.objective,
        }
    }
}

/// Convergence diagnostics carried by fitted models.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct SolverReport {
    pub status: SolverStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

/// Solver tuning knobs. `Default` gives full-accuracy settings; model
/// selection swaps in a looser profile for throwaway fold fits.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Absolute residual tolerance (> 0).
    pub eps_abs: f64,
    /// Relative residual tolerance (> 0).
    pub eps_rel: f64,
    /// Infeasibility certificate tolerance (> 0).
    pub eps_infeasible: f64,
    pub max_iter: usize,
    /// Initial ADMM penalty; adapted during the run when `adaptive_rho`.
    pub step_rho: f64,
    /// Over-relaxation factor in (1, 2).
    pub over_relaxation: f64,
    /// Lower regularization added to the quadratic term (> 0).
    pub sigma: f64,
    /// Ruiz equilibration sweeps (0 disables scaling).
    pub scaling_iters: usize,
    /// Residuals are checked every this many iterations.
    pub check_interval: usize,
    pub adaptive_rho: bool,
    /// Run the active-set polish after convergence.
    pub polish: bool,
    /// Force the dense reduced-system factorization even when the program
    /// carries exploitable block structure. Diagnostic; results must agree
    /// with the structured path to solver precision.
    pub prefer_dense: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_infeasible: 1e-5,
            max_iter: 200_000,
            step_rho: 0.1,
            over_relaxation: 1.6,
            sigma: 1e-6,
            scaling_iters: 10,
            check_interval: 25,
            adaptive_rho: true,
            polish: true,
            prefer_dense: false,
        }
    }
}

impl SolverConfig {
    /// Looser profile for repeated throwaway fits (cross-validation folds).
    pub fn fast_profile() -> Self {
        SolverConfig {
            eps_abs: 1e-4,
            eps_rel: 1e-4,
            max_iter: 50_000,
            polish: false,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn pos(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("solver config: {name} must be positive and finite")))
            }
        }
        pos("eps_abs", self.eps_abs)?;
        pos("eps_rel", self.eps_rel)?;
        pos("eps_infeasible", self.eps_infeasible)?;
        pos("step_rho", self.step_rho)?;
        pos("sigma", self.sigma)?;
        if !(self.over_relaxation > 1.0 && self.over_relaxation < 2.0) {
            return Err(Error::invalid("solver config: over_relaxation must lie in (1, 2)"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("solver config: max_iter must be at least 1"));
        }
        if self.check_interval == 0 {
            return Err(Error::invalid("solver config: check_interval must be at least 1"));
        }
        Ok(())
    }
}

/// A Euclidean-ball constraint `||z[indices]||_2 <= radius` on a subset of
/// variables.
#[derive(Clone, Debug)]
pub struct BallBlock {
    indices: Vec<usize>,
    radius: f64,
}

impl BallBlock {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Named group of variable indices, used for program dumps and for mapping
/// solutions back to model coefficients.
#[derive(Clone, Debug)]
pub struct VarBlock {
    pub label: String,
    pub indices: Vec<usize>,
}

/// Structure note attached by program assembly: variables come in `n_obs`
/// consecutive blocks of `block_width`, whose first `eval_width` slots are the
/// evaluation coefficients `(alpha_i, beta_i)`, and the rows in `pair_rows`
/// are exactly the ordered pairwise comparison rows
/// `(alpha_i + beta_i' x_i) - (alpha_h + beta_h' x_i)` in lexicographic
/// `(i, h)` order. The engine verifies this before trusting it and falls back
/// to the dense factorization if anything fails to match.
#[derive(Clone, Debug)]
pub(crate) struct PairwiseHint {
    pub n_obs: usize,
    pub block_width: usize,
    pub eval_width: usize,
    pub pair_rows: std::ops::Range<usize>,
    /// Row-major `n_obs x eval_width` matrix of evaluation vectors `(1, x_i)`.
    pub u_eval: Vec<f64>,
}

/// A convex QP over box rows and optional ball blocks. Immutable once built;
/// all consistency checks happen in the constructor.
#[derive(Clone, Debug)]
pub struct ConicProgram {
    p: CsrMatrix,
    q: Vec<f64>,
    a: CsrMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    balls: Vec<BallBlock>,
    blocks: Vec<VarBlock>,
    pub(crate) hint: Option<PairwiseHint>,
}

/// Largest asymmetry tolerated in `P`.
pub const SYMMETRY_TOL: f64 = 1e-9;

impl ConicProgram {
    /// Validates and assembles a program. `p` must be square and symmetric
    /// (within [`SYMMETRY_TOL`]) with `q.len()` columns; `a` must have the
    /// same number of columns and one `(l, u)` pair per row with `l <= u`
    /// elementwise (infinities allowed, NaNs not).
    pub fn new(p: CsrMatrix, q: Vec<f64>, a: CsrMatrix, l: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        let n = q.len();
        if n == 0 {
            return Err(Error::invalid("program must have at least one variable"));
        }
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::invalid(format!(
                "P is {}x{}, expected {}x{}",
                p.nrows(),
                p.ncols(),
                n,
                n
            )));
        }
        if a.ncols() != n {
            return Err(Error::invalid(format!("A has {} columns, expected {}", a.ncols(), n)));
        }
        let m = a.nrows();
        if l.len() != m || u.len() != m {
            return Err(Error::invalid(format!(
                "bounds have lengths {} and {}, expected {}",
                l.len(),
                u.len(),
                m
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("q must be finite"));
        }
        let asym = p.max_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::invalid(format!(
                "P is asymmetric by {asym:.3e}, tolerance {SYMMETRY_TOL:.1e}"
            )));
        }
        for i in 0..m {
            let (li, ui) = (l[i], u[i]);
            if li.is_nan() || ui.is_nan() {
                return Err(Error::invalid(format!("bounds for row {i} contain NaN")));
            }
            if li > ui {
                return Err(Error::invalid(format!(
                    "row {i} has l = {li} > u = {ui}; an empty interval must be expressed as \
                     separate one-sided rows"
                )));
            }
        }
        Ok(ConicProgram { p, q, a, l, u, balls: Vec::new(), blocks: Vec::new(), hint: None })
    }

    /// Adds a ball block. Indices must be in range, unique, and disjoint from
    /// previously added balls; the radius must be positive and finite.
    pub fn with_ball(mut self, indices: Vec<usize>, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("ball radius must be positive and finite"));
        }
        if indices.is_empty() {
            return Err(Error::invalid("ball block must cover at least one variable"));
        }
        let n = self.nvar();
        let mut sorted = indices;
        sorted.sort_unstable();
        if sorted.iter().any(|&i| i >= n) {
            return Err(Error::invalid("ball index out of range"));
        }
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("ball indices must be unique"));
        }
        for b in &self.balls {
            if b.indices.iter().any(|i| sorted.binary_search(i).is_ok()) {
                return Err(Error::invalid("ball blocks must not overlap"));
            }
        }
        self.balls.push(BallBlock { indices: sorted, radius });
        Ok(self)
    }

    /// Attaches human-readable variable groups (for dumps and diagnostics).
    pub fn with_blocks(mut self, blocks: Vec<VarBlock>) -> Result<Self> {
        let n = self.nvar();
        for b in &blocks {
            if b.indices.iter().any(|&i| i >= n) {
                return Err(Error::invalid(format!("block '{}' has an index out of range", b.label)));
            }
        }
        self.blocks = blocks;
        Ok(self)
    }

    pub(crate) fn with_hint(mut self, hint: PairwiseHint) -> Self {
        self.hint = Some(hint);
        self
    }

    pub fn nvar(&self) -> usize {
        self.q.len()
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> &CsrMatrix {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn a(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn l(&self) -> &[f64] {
        &self.l
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn balls(&self) -> &[BallBlock] {
        &self.balls
    }

    pub fn blocks(&self) -> &[VarBlock] {
        &self.blocks
    }

    /// Objective `0.5 z'Pz + q'z` at an arbitrary point.
    pub fn objective(&self, z: &[f64]) -> f64 {
        0.5 * self.p.quad_form(z) + self.q.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Writes the full program in a line-oriented text format; see the
    /// module-level docs of [`dump`] in the source for the grammar.
    pub fn write_dump<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        dump::write_dump(self, w)
    }
}

/// Euclidean projection of `v` onto the ball of the given radius: `v` itself
/// inside the ball, otherwise `v` scaled radially onto the boundary.
pub fn project_ball(v: &[f64], radius: f64) -> Result<Vec<f64>> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid("project_ball: radius must be positive and finite"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("project_ball: input must be finite"));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= radius {
        Ok(v.to_vec())
    } else {
        let s = radius / norm;
        Ok(v.iter().map(|x| x * s).collect())
    }
}

/// Solves the program; see [`SolverConfig`] for tuning and [`SolverStatus`]
/// for the possible outcomes. Infeasible or iteration-capped runs still
/// return the last iterate together with the corresponding status.
pub fn solve(prog: &ConicProgram, config: &SolverConfig) -> Result<SolverSolution> {
    config.validate()?;
    engine::solve(prog, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve_default(prog: &ConicProgram) -> SolverSolution {
        solve(prog, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn unconstrained_quadratic() {
        // min 0.5 x^2 - x  =>  x = 1
        let p = CsrMatrix::from_triplets(1, 1, &[(0, 0, 1.0)]).unwrap();
        let a = CsrMatrix::zeros(0, 1);
        let prog = ConicProgram::new(p, vec![-1.0], a, vec![], vec![]).unwrap();
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-6, "z = {:?}", sol.z);
        assert!((sol.objective + 0.5).abs() < 1e-6);
    }

    #[test]
    fn active_box_bound() {
        // min 0.5 x^2 s.t. x >= 1  =>  x = 1
        let p = CsrMatrix::from_triplets(1, 1, &[(0, 0, 1.0)]).unwrap();
        let a = CsrMatrix::from_triplets(1, 1, &[(0, 0, 1.0)]).unwrap();
        let prog = ConicProgram::new(p, vec![0.0], a, vec![1.0], vec![f64::INFINITY]).unwrap();
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-6, "z = {:?}", sol.z);
    }

    #[test]
    fn equality_row() {
        // min 0.5 (x^2 + y^2) s.t. x + y = 2  =>  x = y = 1
        let p = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let a = CsrMatrix::from_triplets(1, 2, &[(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        let prog = ConicProgram::new(p, vec![0.0; 2], a, vec![2.0], vec![2.0]).unwrap();
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-6 && (sol.z[1] - 1.0).abs() < 1e-6, "z = {:?}", sol.z);
    }

    #[test]
    fn active_ball_block() {
        // min -x s.t. ||(x, y)|| <= 2  =>  x = 2, y = 0
        let p = CsrMatrix::zeros(2, 2);
        let a = CsrMatrix::zeros(0, 2);
        let prog = ConicProgram::new(p, vec![-1.0, 0.0], a, vec![], vec![])
            .unwrap()
            .with_ball(vec![0, 1], 2.0)
            .unwrap();
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.z[0] - 2.0).abs() < 1e-5 && sol.z[1].abs() < 1e-5, "z = {:?}", sol.z);
    }

    #[test]
    fn ball_and_quadratic() {
        // min 0.5 ||x - (3, 0)||^2 s.t. ||x|| <= 1  =>  x = (1, 0)
        let p = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let a = CsrMatrix::zeros(0, 2);
        let prog = ConicProgram::new(p, vec![-3.0, 0.0], a, vec![], vec![])
            .unwrap()
            .with_ball(vec![0, 1], 1.0)
            .unwrap();
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-5 && sol.z[1].abs() < 1e-5, "z = {:?}", sol.z);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // z >= 1 and z <= 0 simultaneously.
        let p = CsrMatrix::zeros(1, 1);
        let a = CsrMatrix::from_triplets(2, 1, &[(0, 0, 1.0), (1, 0, 1.0)]).unwrap();
        let prog = ConicProgram::new(
            p,
            vec![0.0],
            a,
            vec![1.0, f64::NEG_INFINITY],
            vec![f64::INFINITY, 0.0],
        )
        .unwrap();
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolverStatus::PrimalInfeasible);
    }

    #[test]
    fn detects_dual_infeasibility() {
        // min -z s.t. z >= 0: unbounded below.
        let p = CsrMatrix::zeros(1, 1);
        let a = CsrMatrix::from_triplets(1, 1, &[(0, 0, 1.0)]).unwrap();
        let prog =
            ConicProgram::new(p, vec![-1.0], a, vec![0.0], vec![f64::INFINITY]).unwrap();
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolverStatus::DualInfeasible);
    }

    #[test]
    fn lp_with_box_rows() {
        // min -x - 2y s.t. 0 <= x <= 1, 0 <= y <= 1, x + y <= 1.5
        let p = CsrMatrix::zeros(2, 2);
        let a = CsrMatrix::from_triplets(
            3,
            2,
            &[(0, 0, 1.0), (1, 1, 1.0), (2, 0, 1.0), (2, 1, 1.0)],
        )
        .unwrap();
        let prog = ConicProgram::new(
            p,
            vec![-1.0, -2.0],
            a,
            vec![0.0, 0.0, f64::NEG_INFINITY],
            vec![1.0, 1.0, 1.5],
        )
        .unwrap();
        let sol = solve_default(&prog);
        assert_eq!(sol.status, SolverStatus::Optimal);
        assert!((sol.z[0] - 0.5).abs() < 1e-5 && (sol.z[1] - 1.0).abs() < 1e-5, "z = {:?}", sol.z);
        assert!((sol.objective + 2.5).abs() < 1e-5);
    }

    #[test]
    fn reports_iteration_cap() {
        let p = CsrMatrix::from_triplets(1, 1, &[(0, 0, 1.0)]).unwrap();
        let a = CsrMatrix::from_triplets(1, 1, &[(0, 0, 1.0)]).unwrap();
        let prog = ConicProgram::new(p, vec![-5.0], a, vec![0.0], vec![1.0]).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.max_iter = 2;
        cfg.check_interval = 1;
        // A rescue polish could still deliver an optimal point; disable it to
        // observe the raw iteration cap.
        cfg.polish = false;
        let sol = solve(&prog, &cfg).unwrap();
        assert_eq!(sol.status, SolverStatus::MaxIterations);
        assert_eq!(sol.iterations, 2);
    }

    #[test]
    fn project_ball_inside_and_outside() {
        assert_eq!(project_ball(&[0.3, 0.4], 1.0).unwrap(), vec![0.3, 0.4]);
        let p = project_ball(&[3.0, 4.0], 1.0).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        let norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn project_ball_validates() {
        assert!(project_ball(&[1.0], 0.0).is_err());
        assert!(project_ball(&[1.0], -1.0).is_err());
        assert!(project_ball(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn program_validation() {
        let p = CsrMatrix::zeros(2, 2);
        let a = CsrMatrix::from_triplets(1, 2, &[(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        assert!(ConicProgram::new(p.clone(), vec![0.0; 2], a.clone(), vec![0.0], vec![1.0]).is_ok());
        // l > u rejected
        assert!(ConicProgram::new(p.clone(), vec![0.0; 2], a.clone(), vec![2.0], vec![1.0]).is_err());
        // asymmetric P rejected
        let bad_p = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0)]).unwrap();
        assert!(ConicProgram::new(bad_p, vec![0.0; 2], a.clone(), vec![0.0], vec![1.0]).is_err());
        // dimension mismatches rejected
        assert!(ConicProgram::new(p.clone(), vec![0.0; 3], a.clone(), vec![0.0], vec![1.0]).is_err());
        assert!(ConicProgram::new(p, vec![0.0; 2], a, vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn ball_validation() {
        let p = CsrMatrix::zeros(3, 3);
        let a = CsrMatrix::from_triplets(1, 3, &[(0, 0, 1.0)]).unwrap();
        let prog = ConicProgram::new(p, vec![0.0; 3], a, vec![0.0], vec![1.0]).unwrap();
        let prog = prog.with_ball(vec![1, 2], 5.0).unwrap();
        assert!(prog.clone().with_ball(vec![2], 1.0).is_err()); // overlap
        assert!(prog.clone().with_ball(vec![0], 0.0).is_err()); // bad radius
        assert!(prog.clone().with_ball(vec![7], 1.0).is_err()); // out of range
        assert!(prog.with_ball(vec![], 1.0).is_err()); // empty
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig::fast_profile().validate().is_ok());
        let mut c = SolverConfig::default();
        c.over_relaxation = 2.5;
        assert!(c.validate().is_err());
        c = SolverConfig::default();
        c.eps_abs = 0.0;
        assert!(c.validate().is_err());
        c = SolverConfig::default();
        c.max_iter = 0;
        assert!(c.validate().is_err());
    }
}
