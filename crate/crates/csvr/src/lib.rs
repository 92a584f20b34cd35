//! Shape-constrained regression with an embedded convex-QP solver.
//!
//! The estimators in this crate fit piecewise-linear functions that are
//! globally convex or concave, optionally monotone and/or homogeneous:
//!
//! * [`estimators::fit_cr`]: least-squares convex regression (CR),
//! * [`estimators::fit_lcr`]: CR with a Lipschitz bound on every subgradient (LCR),
//! * [`estimators::fit_svr_linear`]: ordinary linear support vector regression,
//! * [`estimators::fit_csvr`]: convex support vector regression (CSVR), an
//!   epsilon-insensitive, per-observation regularized variant of CR that is robust
//!   to noise and outliers,
//! * Lasso variants of CSVR with L1 or L-infinity subgradient penalties.
//!
//! All estimators reduce to a quadratic (or linear) program over coefficient
//! pairs `(alpha_i, beta_i)` tied together by pairwise inequality constraints,
//! solved by the operator-splitting method in [`solver`]. Model selection
//! ([`model_selection`]) provides k-fold cross-validation over hyperparameter
//! grids, and [`simulation`] contains a Monte Carlo harness with three
//! built-in data generating processes.
//!
//! See the `examples/` directory for end-to-end walkthroughs; the `csvr`
//! binary exposes the same functionality over CSV files.

pub mod dataset;
pub mod error;
pub mod estimators;
pub mod io;
pub mod metrics;
pub mod model;
pub mod model_selection;
pub mod rng;
pub mod shape;
pub mod simulation;
pub mod solver;

pub mod cli;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use estimators::{EstimatorSpec, Hyperparams, Method, PenaltyKind};
pub use model::{FittedModel, SHAPE_TOL};
pub use shape::{Curvature, Monotonicity, Shape};
