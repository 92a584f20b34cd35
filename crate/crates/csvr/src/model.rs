use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::shape::{Curvature, Monotonicity, Shape};
use crate::solver::SolverReport;

/// Tolerance for declaring a fitted model shape-feasible. Pairwise, sign and
/// homogeneity violations are measured in absolute terms against this bound.
pub const SHAPE_TOL: f64 = 1e-6;

/// A fitted piecewise-linear model: one affine piece `alpha_i + beta_i' x`
/// per training observation (a single shared piece for linear SVR).
///
/// Prediction takes the lower envelope of the pieces for concave fits and the
/// upper envelope for convex fits, which preserves the shape restriction
/// everywhere, not just at the training points.
#[derive(Clone, Debug)]
pub struct FittedModel {
    alpha: Vec<f64>,
    beta: Vec<f64>, // n_pieces x d, row-major
    d: usize,
    shape: Shape,
    method: Method,
    report: SolverReport,
}

impl FittedModel {
    pub(crate) fn new(
        alpha: Vec<f64>,
        beta: Vec<f64>,
        d: usize,
        shape: Shape,
        method: Method,
        report: SolverReport,
    ) -> Self {
        assert!(d > 0 && !alpha.is_empty() && beta.len() == alpha.len() * d);
        FittedModel { alpha, beta, d, shape, method, report }
    }

    pub fn n_pieces(&self) -> usize {
        self.alpha.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Subgradient (slope vector) of piece `i`.
    pub fn beta_row(&self, i: usize) -> &[f64] {
        &self.beta[i * self.d..(i + 1) * self.d]
    }

    pub fn beta_flat(&self) -> &[f64] {
        &self.beta
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn method(&self) -> &Method {
        &self.method
    }

    pub fn report(&self) -> &SolverReport {
        &self.report
    }

    /// Value of the single affine piece `i` at `x` (no envelope).
    pub fn piece_value(&self, i: usize, x: &[f64]) -> f64 {
        let mut v = self.alpha[i];
        for (b, xi) in self.beta_row(i).iter().zip(x) {
            v += b * xi;
        }
        v
    }

    /// Predicts at a single point via the min (concave) or max (convex)
    /// envelope of all pieces.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::invalid(format!(
                "predict: point has {} coordinates, model expects {}",
                x.len(),
                self.d
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("predict: point must be finite"));
        }
        let mut best = self.piece_value(0, x);
        for i in 1..self.n_pieces() {
            let v = self.piece_value(i, x);
            best = match self.shape.curvature {
                Curvature::Concave => best.min(v),
                Curvature::Convex => best.max(v),
            };
        }
        Ok(best)
    }

    /// Predicts at every row of `data`.
    pub fn predict_rows(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.dim() != self.d {
            return Err(Error::invalid(format!(
                "predict: dataset has {} covariates, model expects {}",
                data.dim(),
                self.d
            )));
        }
        data.rows().map(|r| self.predict(r)).collect()
    }

    /// Training fitted values: observation `i` evaluated on its own piece.
    /// Requires `data` to have exactly one row per piece (the training set).
    pub fn fitted_values(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.n() != self.n_pieces() || data.dim() != self.d {
            return Err(Error::invalid(format!(
                "fitted_values: dataset is {}x{}, model has {} pieces of dimension {}",
                data.n(),
                data.dim(),
                self.n_pieces(),
                self.d
            )));
        }
        Ok((0..data.n()).map(|i| self.piece_value(i, data.row(i))).collect())
    }

    /// Largest violation of the pairwise curvature inequalities at the
    /// training points. For a concave fit piece `i` must lie below every other
    /// piece at `x_i`; positive return values measure how far that fails.
    pub fn max_pairwise_violation(&self, data: &Dataset) -> Result<f64> {
        if data.n() != self.n_pieces() || data.dim() != self.d {
            return Err(Error::invalid(
                "max_pairwise_violation: dataset must be the training set (one row per piece)",
            ));
        }
        let n = self.n_pieces();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let own = self.piece_value(i, data.row(i));
            for h in 0..n {
                if h == i {
                    continue;
                }
                let other = self.piece_value(h, data.row(i));
                let gap = match self.shape.curvature {
                    Curvature::Concave => own - other,
                    Curvature::Convex => other - own,
                };
                worst = worst.max(gap);
            }
        }
        Ok(worst)
    }

    /// Largest violation of the monotonicity sign restrictions on the slopes.
    pub fn max_monotonicity_violation(&self) -> f64 {
        match self.shape.monotonicity {
            Monotonicity::None => 0.0,
            Monotonicity::Increasing => self.beta.iter().fold(0.0f64, |w, b| w.max(-b)),
            Monotonicity::Decreasing => self.beta.iter().fold(0.0f64, |w, b| w.max(*b)),
        }
    }

    /// Largest `|alpha_i|` when the fit is restricted to be homogeneous.
    pub fn max_homogeneity_violation(&self) -> f64 {
        if self.shape.homogeneous {
            self.alpha.iter().fold(0.0f64, |w, a| w.max(a.abs()))
        } else {
            0.0
        }
    }

    /// True when every imposed restriction holds within `tol` at the training
    /// points.
    pub fn satisfies_shape(&self, data: &Dataset, tol: f64) -> Result<bool> {
        Ok(self.max_pairwise_violation(data)? <= tol
            && self.max_monotonicity_violation() <= tol
            && self.max_homogeneity_violation() <= tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{SolverReport, SolverStatus};

    fn report() -> SolverReport {
        SolverReport {
            status: SolverStatus::Optimal,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            objective: 0.0,
        }
    }

    fn two_piece_concave() -> FittedModel {
        // Pieces: 1 + x and 3 - x; lower envelope kinks at x = 1.
        FittedModel::new(
            vec![1.0, 3.0],
            vec![1.0, -1.0],
            1,
            Shape::concave(),
            Method::Cr,
            report(),
        )
    }

    #[test]
    fn concave_prediction_takes_min() {
        let m = two_piece_concave();
        assert_eq!(m.predict(&[0.0]).unwrap(), 1.0);
        assert_eq!(m.predict(&[1.0]).unwrap(), 2.0);
        assert_eq!(m.predict(&[4.0]).unwrap(), -1.0);
    }

    #[test]
    fn convex_prediction_takes_max() {
        let m = FittedModel::new(
            vec![1.0, 3.0],
            vec![1.0, -1.0],
            1,
            Shape::convex(),
            Method::Cr,
            report(),
        );
        assert_eq!(m.predict(&[0.0]).unwrap(), 3.0);
        assert_eq!(m.predict(&[4.0]).unwrap(), 5.0);
    }

    #[test]
    fn predict_validates_input() {
        let m = two_piece_concave();
        assert!(m.predict(&[1.0, 2.0]).is_err());
        assert!(m.predict(&[f64::NAN]).is_err());
    }

    #[test]
    fn pairwise_violation_detects_crossing() {
        // Piece 0 at x=0 evaluates to 1; piece 1 evaluates to 3. Concavity
        // demands own piece <= other piece at own point, so this pair is fine
        // at row 0 but piece 1 at x=2 gives 1 vs piece 0 giving 3: fine too.
        let m = two_piece_concave();
        let data = Dataset::from_rows(vec![vec![0.0], vec![2.0]], vec![0.0, 0.0]).unwrap();
        assert_eq!(m.max_pairwise_violation(&data).unwrap(), 0.0);
        // At x = 1.5 both pieces cross; putting observation 0 there makes its
        // own piece (2.5) exceed piece 1 (1.5) by 1.
        let bad = Dataset::from_rows(vec![vec![1.5], vec![2.0]], vec![0.0, 0.0]).unwrap();
        assert!((m.max_pairwise_violation(&bad).unwrap() - 1.0).abs() < 1e-12);
        assert!(m.satisfies_shape(&data, SHAPE_TOL).unwrap());
        assert!(!m.satisfies_shape(&bad, SHAPE_TOL).unwrap());
    }

    #[test]
    fn sign_and_homogeneity_violations() {
        let shape = Shape::concave().with_monotonicity(Monotonicity::Increasing).homogeneous();
        let m = FittedModel::new(vec![0.5, 0.0], vec![1.0, -0.25], 1, shape, Method::Cr, report());
        assert!((m.max_monotonicity_violation() - 0.25).abs() < 1e-15);
        assert!((m.max_homogeneity_violation() - 0.5).abs() < 1e-15);
    }
}
