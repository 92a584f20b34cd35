//! Shape-constrained estimators and their quadratic-program assemblies.
//!
//! Every estimator here fits affine pieces `(alpha_i, beta_i)` and differs in
//! the loss, the regularizer, and whether pieces are tied to observations:
//!
//! * [`fit_cr`]: least-squares convex/concave regression; one piece per
//!   observation, pairwise comparison constraints, no regularization.
//! * [`fit_lcr`]: CR plus `||beta_i||_2 <= L` on every subgradient.
//! * [`fit_svr_linear`]: a single affine function with epsilon-insensitive
//!   loss and a squared-norm penalty (classical linear SVR).
//! * [`fit_csvr`]: one piece per observation, epsilon-insensitive loss,
//!   squared L2 penalty on every subgradient, pairwise constraints.
//! * [`fit_csvr_l1`] / [`fit_csvr_linf`]: CSVR with L1 or L-infinity
//!   subgradient penalties (linear programs; useful for component selection).

mod assemble;

pub use assemble::ProgramBundle;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::FittedModel;
use crate::shape::Shape;
use crate::solver::{solve, SolverConfig, SolverStatus};
use serde::{Deserialize, Serialize};

/// Subgradient penalty used by the CSVR family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    /// Squared Euclidean norm (quadratic program).
    SquaredL2,
    /// Sum of absolute values (linear program; drives single slopes to zero).
    L1,
    /// Componentwise maximum (linear program; drives whole slope vectors to
    /// a shared magnitude budget).
    LInf,
}

/// Which estimator to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Method {
    /// Least-squares shape-constrained regression.
    Cr,
    /// CR with a Lipschitz bound on subgradient norms.
    Lcr,
    /// Ordinary linear support vector regression (no shape constraints).
    SvrLinear,
    /// Convex support vector regression.
    Csvr { penalty: PenaltyKind },
}

impl Method {
    /// Stable lowercase name, matching the CLI's `--method` values.
    pub fn name(&self) -> &'static str {
        match self {
            Method::Cr => "cr",
            Method::Lcr => "lcr",
            Method::SvrLinear => "svr",
            Method::Csvr { penalty: PenaltyKind::SquaredL2 } => "csvr",
            Method::Csvr { penalty: PenaltyKind::L1 } => "csvr-l1",
            Method::Csvr { penalty: PenaltyKind::LInf } => "csvr-linf",
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        Ok(match name {
            "cr" => Method::Cr,
            "lcr" => Method::Lcr,
            "svr" => Method::SvrLinear,
            "csvr" => Method::Csvr { penalty: PenaltyKind::SquaredL2 },
            "csvr-l1" => Method::Csvr { penalty: PenaltyKind::L1 },
            "csvr-linf" => Method::Csvr { penalty: PenaltyKind::LInf },
            other => {
                return Err(Error::invalid(format!(
                    "unknown method '{other}' (expected cr, lcr, svr, csvr, csvr-l1 or csvr-linf)"
                )))
            }
        })
    }
}

/// Estimator hyperparameters. Methods only read the fields they use: `c` and
/// `epsilon` drive the SVR family, `lipschitz` is required by LCR, and CR
/// ignores all three.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Loss weight C > 0. Larger C tracks the data more closely; the
    /// subgradient penalty weight is 1/C.
    pub c: f64,
    /// Insensitivity tube half-width, >= 0.
    pub epsilon: f64,
    /// Subgradient norm bound for LCR, > 0 when present.
    pub lipschitz: Option<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { c: 1.0, epsilon: 0.1, lipschitz: None }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::invalid("hyperparameters: c must be positive and finite"));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::invalid("hyperparameters: epsilon must be nonnegative and finite"));
        }
        if let Some(l) = self.lipschitz {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::invalid("hyperparameters: lipschitz must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// A complete estimation request: method, shape restriction and
/// hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub method: Method,
    pub shape: Shape,
    pub params: Hyperparams,
}

impl EstimatorSpec {
    pub fn new(method: Method, shape: Shape, params: Hyperparams) -> Self {
        EstimatorSpec { method, shape, params }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if matches!(self.method, Method::Lcr) && self.params.lipschitz.is_none() {
            return Err(Error::invalid("lcr requires the lipschitz hyperparameter"));
        }
        Ok(())
    }
}

/// Builds the solver program for a spec without solving it. Exposed so tests
/// and diagnostic tools can inspect or export the exact program a fit would
/// solve.
pub fn assemble_program(data: &Dataset, spec: &EstimatorSpec) -> Result<ProgramBundle> {
    spec.validate()?;
    assemble::assemble(data, spec, assemble::CsvrScaling::Penalized)
}

/// CSVR program in the classical constrained scaling: squared-norm penalty at
/// weight 1/2 and loss weight C, i.e. the penalized program's objective
/// multiplied by C. Same constraints, same minimizer; used to verify the
/// scale equivalence of the two formulations.
pub fn assemble_csvr_constrained(
    data: &Dataset,
    shape: Shape,
    c: f64,
    epsilon: f64,
) -> Result<ProgramBundle> {
    let spec = EstimatorSpec::new(
        Method::Csvr { penalty: PenaltyKind::SquaredL2 },
        shape,
        Hyperparams { c, epsilon, lipschitz: None },
    );
    spec.validate()?;
    assemble::assemble(data, &spec, assemble::CsvrScaling::Constrained)
}

/// Fits `spec` to `data` with default solver settings.
pub fn fit(data: &Dataset, spec: &EstimatorSpec) -> Result<FittedModel> {
    fit_with_config(data, spec, &SolverConfig::default())
}

/// Fits `spec` to `data` with explicit solver settings. Errors unless the
/// solver converges to an optimal point.
pub fn fit_with_config(
    data: &Dataset,
    spec: &EstimatorSpec,
    config: &SolverConfig,
) -> Result<FittedModel> {
    let bundle = assemble_program(data, spec)?;
    let solution = solve(bundle.program(), config)?;
    if solution.status != SolverStatus::Optimal {
        return Err(Error::Solver {
            status: solution.status,
            detail: format!(
                "{} fit stopped after {} iterations (primal residual {:.3e}, dual residual {:.3e})",
                spec.method.name(),
                solution.iterations,
                solution.primal_residual,
                solution.dual_residual
            ),
        });
    }
    Ok(bundle.extract_model(&solution))
}

/// Least-squares shape-constrained regression.
pub fn fit_cr(data: &Dataset, shape: Shape) -> Result<FittedModel> {
    fit(data, &EstimatorSpec::new(Method::Cr, shape, Hyperparams::default()))
}

/// Shape-constrained regression with `||beta_i||_2 <= lipschitz`.
pub fn fit_lcr(data: &Dataset, shape: Shape, lipschitz: f64) -> Result<FittedModel> {
    let params = Hyperparams { lipschitz: Some(lipschitz), ..Hyperparams::default() };
    fit(data, &EstimatorSpec::new(Method::Lcr, shape, params))
}

/// Classical linear support vector regression (single affine piece, no shape
/// restrictions).
pub fn fit_svr_linear(data: &Dataset, c: f64, epsilon: f64) -> Result<FittedModel> {
    let params = Hyperparams { c, epsilon, lipschitz: None };
    fit(data, &EstimatorSpec::new(Method::SvrLinear, Shape::default(), params))
}

/// Convex support vector regression with squared L2 subgradient penalty.
pub fn fit_csvr(data: &Dataset, shape: Shape, c: f64, epsilon: f64) -> Result<FittedModel> {
    let params = Hyperparams { c, epsilon, lipschitz: None };
    fit(data, &EstimatorSpec::new(Method::Csvr { penalty: PenaltyKind::SquaredL2 }, shape, params))
}

/// CSVR with an L1 subgradient penalty (linear program).
pub fn fit_csvr_l1(data: &Dataset, shape: Shape, c: f64, epsilon: f64) -> Result<FittedModel> {
    let params = Hyperparams { c, epsilon, lipschitz: None };
    fit(data, &EstimatorSpec::new(Method::Csvr { penalty: PenaltyKind::L1 }, shape, params))
}

/// CSVR with an L-infinity subgradient penalty (linear program).
pub fn fit_csvr_linf(data: &Dataset, shape: Shape, c: f64, epsilon: f64) -> Result<FittedModel> {
    let params = Hyperparams { c, epsilon, lipschitz: None };
    fit(data, &EstimatorSpec::new(Method::Csvr { penalty: PenaltyKind::LInf }, shape, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Cr,
            Method::Lcr,
            Method::SvrLinear,
            Method::Csvr { penalty: PenaltyKind::SquaredL2 },
            Method::Csvr { penalty: PenaltyKind::L1 },
            Method::Csvr { penalty: PenaltyKind::LInf },
        ] {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("ridge").is_err());
    }

    #[test]
    fn spec_validation() {
        let good = EstimatorSpec::new(Method::Cr, Shape::default(), Hyperparams::default());
        assert!(good.validate().is_ok());

        let mut bad = good;
        bad.params.c = 0.0;
        assert!(bad.validate().is_err());
        bad = good;
        bad.params.epsilon = -0.1;
        assert!(bad.validate().is_err());
        bad = good;
        bad.method = Method::Lcr;
        assert!(bad.validate().is_err(), "lcr without lipschitz must fail");
        bad.params.lipschitz = Some(2.0);
        assert!(bad.validate().is_ok());
        bad.params.lipschitz = Some(-2.0);
        assert!(bad.validate().is_err());
    }
}
