use crate::error::{Error, Result};

/// Epsilon-insensitive absolute loss: `max(|residual| - epsilon, 0)`.
///
/// Residuals inside the tube of half-width `epsilon` cost nothing.
pub fn eps_loss(residual: f64, epsilon: f64) -> Result<f64> {
    if !residual.is_finite() {
        return Err(Error::invalid("eps_loss: residual must be finite"));
    }
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::invalid("eps_loss: epsilon must be finite and nonnegative"));
    }
    Ok((residual.abs() - epsilon).max(0.0))
}

/// Mean squared error between two equal-length slices.
pub fn mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid("mse: empty input"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::invalid(format!(
            "mse: {} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut acc = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        if !p.is_finite() || !t.is_finite() {
            return Err(Error::invalid("mse: inputs must be finite"));
        }
        let r = p - t;
        acc += r * r;
    }
    Ok(acc / predictions.len() as f64)
}

/// MSE against noiseless function values. This is the Monte Carlo accuracy
/// metric: it measures recovery of the underlying function, not of the
/// observed responses.
pub fn mse_vs_truth(predictions: &[f64], true_values: &[f64]) -> Result<f64> {
    mse(predictions, true_values)
}

/// MSE against observed (noisy) responses. This is the metric cross-validation
/// scores on held-out folds, where the true function is unknown.
pub fn mse_vs_observed(predictions: &[f64], observed: &[f64]) -> Result<f64> {
    mse(predictions, observed)
}
