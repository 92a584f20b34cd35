//! k-fold cross-validation with grid search over (C, epsilon) or the
//! Lipschitz bound L, including a one-standard-error rule for LCR.
//!
//! Folds are formed once per call from a seeded permutation, so the same
//! data, seed and fold count always produce the same partition, the same
//! per-candidate scores and the same selection.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{fit_with_config, EstimatorSpec, Hyperparams, Method};
use crate::metrics::mse_vs_observed;
use crate::rng::{stream_rng, Stream};
use crate::solver::SolverConfig;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Candidate values and fold settings for [`cross_validate`].
///
/// Which grid matters depends on the method being tuned: the SVR family
/// (linear SVR and all CSVR penalties) takes the cross product of
/// `c_multipliers` and `epsilon_values`, LCR sweeps `l_values`, and CR has
/// nothing to tune (a single candidate carrying the caller's
/// hyperparameters).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CvGrid {
    /// Candidate loss weights C, used literally (no data-dependent base).
    pub c_multipliers: Vec<f64>,
    /// Candidate tube half-widths.
    pub epsilon_values: Vec<f64>,
    /// Candidate Lipschitz bounds for LCR.
    pub l_values: Vec<f64>,
    /// Number of folds k; each fit uses k-1 folds and scores on the rest.
    pub folds: usize,
    /// Seed for the fold-assignment shuffle.
    pub rng_seed: u64,
    /// Flips the one-standard-error rule for LCR: select the largest bound
    /// whose mean MSE is within one standard error of the best, instead of
    /// the smallest (default). The default favors the flatter, more
    /// constrained fit.
    pub prefer_larger_l: bool,
}

impl Default for CvGrid {
    fn default() -> Self {
        CvGrid {
            c_multipliers: vec![0.1, 0.5, 1.0, 2.0, 5.0],
            epsilon_values: vec![0.0, 0.001, 0.01, 0.1, 0.2],
            l_values: vec![0.1, 0.5, 1.0, 2.0, 5.0],
            folds: 5,
            rng_seed: 0,
            prefer_larger_l: false,
        }
    }
}

impl CvGrid {
    /// Checks fold bounds against the sample size and validates every
    /// candidate value the given method will actually read.
    pub fn validate(&self, n: usize, method: Method) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::invalid("cross-validation: need at least 2 folds"));
        }
        if self.folds > n {
            return Err(Error::invalid(format!(
                "cross-validation: {} folds but only {} observations",
                self.folds, n
            )));
        }
        match method {
            Method::Cr => {}
            Method::Lcr => {
                if self.l_values.is_empty() {
                    return Err(Error::invalid("cross-validation: l_values is empty"));
                }
                for &l in &self.l_values {
                    if !(l.is_finite() && l > 0.0) {
                        return Err(Error::invalid(format!(
                            "cross-validation: Lipschitz candidate {l} must be positive and finite"
                        )));
                    }
                }
            }
            Method::SvrLinear | Method::Csvr { .. } => {
                if self.c_multipliers.is_empty() {
                    return Err(Error::invalid("cross-validation: c_multipliers is empty"));
                }
                if self.epsilon_values.is_empty() {
                    return Err(Error::invalid("cross-validation: epsilon_values is empty"));
                }
                for &c in &self.c_multipliers {
                    if !(c.is_finite() && c > 0.0) {
                        return Err(Error::invalid(format!(
                            "cross-validation: C candidate {c} must be positive and finite"
                        )));
                    }
                }
                for &e in &self.epsilon_values {
                    if !(e.is_finite() && e >= 0.0) {
                        return Err(Error::invalid(format!(
                            "cross-validation: epsilon candidate {e} must be nonnegative and finite"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Expands the grid into concrete hyperparameter candidates for `spec`.
    /// Fields the method ignores are carried over from `spec` unchanged.
    pub fn candidates(&self, spec: &EstimatorSpec) -> Vec<Hyperparams> {
        match spec.method {
            Method::Cr => vec![spec.params],
            Method::Lcr => self
                .l_values
                .iter()
                .map(|&l| Hyperparams { lipschitz: Some(l), ..spec.params })
                .collect(),
            Method::SvrLinear | Method::Csvr { .. } => {
                let mut out = Vec::with_capacity(self.c_multipliers.len() * self.epsilon_values.len());
                for &c in &self.c_multipliers {
                    for &epsilon in &self.epsilon_values {
                        out.push(Hyperparams { c, epsilon, ..spec.params });
                    }
                }
                out
            }
        }
    }
}

/// Validation scores for one candidate across all folds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateScore {
    /// Held-out MSE per fold, in fold order.
    pub fold_mse: Vec<f64>,
    /// Mean of `fold_mse`.
    pub mean_mse: f64,
    /// Sample standard deviation of `fold_mse` divided by sqrt(k).
    pub std_error: f64,
}

/// One grid point and its scores. `score` is `None` when any fold fit
/// failed to solve; such candidates are excluded from selection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvCandidate {
    pub params: Hyperparams,
    pub score: Option<CandidateScore>,
}

/// Everything [`cross_validate`] decided and measured.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvResult {
    /// All grid points in enumeration order.
    pub candidates: Vec<CvCandidate>,
    /// Hyperparameters of the winning candidate.
    pub selected: Hyperparams,
    /// Index of the winning candidate in `candidates`.
    pub selected_index: usize,
    /// Validation fold of each observation, by row index.
    pub fold_assignment: Vec<usize>,
}

impl CvResult {
    /// Score of the selected candidate. Always present: selection only
    /// considers candidates that scored on every fold.
    pub fn selected_score(&self) -> &CandidateScore {
        self.candidates[self.selected_index]
            .score
            .as_ref()
            .expect("selected candidate has a score")
    }
}

/// Assigns each of `n` observations to one of `folds` validation folds:
/// a seeded shuffle of the row indices is cut into contiguous blocks whose
/// sizes differ by at most one.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, Stream::Folds, 0);
    perm.shuffle(&mut rng);

    let base = n / folds;
    let extra = n % folds;
    let mut fold_of = vec![0usize; n];
    let mut pos = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        for &row in &perm[pos..pos + size] {
            fold_of[row] = f;
        }
        pos += size;
    }
    fold_of
}

/// Grid-search cross-validation with the default tuning profile: fold fits
/// run under [`SolverConfig::fast_profile`], which is accurate well past
/// the resolution at which validation MSE can distinguish candidates.
/// Use [`cross_validate_with_config`] to override.
pub fn cross_validate(data: &Dataset, spec: &EstimatorSpec, grid: &CvGrid) -> Result<CvResult> {
    cross_validate_with_config(data, spec, grid, &SolverConfig::fast_profile())
}

/// Grid-search cross-validation with explicit solver settings for the fold
/// fits.
///
/// For each candidate and each fold, fits `spec`'s method on the other
/// k-1 folds and scores MSE against the held-out observed responses. A
/// candidate that fails to solve on any fold is recorded without a score
/// and skipped by selection; if every candidate fails, an error is
/// returned.
///
/// Selection is value-based, so reordering the grid never changes the
/// winner. Non-LCR methods take the smallest mean MSE, breaking ties by
/// smaller C then smaller epsilon. LCR applies the one-standard-error
/// rule: among candidates whose mean MSE is within one standard error of
/// the best candidate's mean, it picks the smallest L (or the largest,
/// with [`CvGrid::prefer_larger_l`]).
pub fn cross_validate_with_config(
    data: &Dataset,
    spec: &EstimatorSpec,
    grid: &CvGrid,
    config: &SolverConfig,
) -> Result<CvResult> {
    grid.validate(data.n(), spec.method)?;
    spec.params.validate()?;

    let n = data.n();
    let k = grid.folds;
    let fold_of = assign_folds(n, k, grid.rng_seed);

    // Row index lists per fold, ascending within each list.
    let mut val_rows: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (row, &f) in fold_of.iter().enumerate() {
        val_rows[f].push(row);
    }
    let train_rows: Vec<Vec<usize>> = (0..k)
        .map(|f| (0..n).filter(|row| fold_of[*row] != f).collect())
        .collect();

    let params_list = grid.candidates(spec);
    let jobs: Vec<(usize, usize)> = (0..params_list.len())
        .flat_map(|ci| (0..k).map(move |f| (ci, f)))
        .collect();

    // Candidate x fold fits are independent. Results come back in job
    // order, so aggregation below is deterministic.
    let fold_scores: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(ci, f)| {
            let candidate_spec =
                EstimatorSpec::new(spec.method, spec.shape, params_list[ci]);
            let train = data.subset(&train_rows[f]).ok()?;
            let val = data.subset(&val_rows[f]).ok()?;
            let model = fit_with_config(&train, &candidate_spec, config).ok()?;
            let predictions = model.predict_rows(&val).ok()?;
            mse_vs_observed(&predictions, val.y()).ok()
        })
        .collect();

    let mut candidates = Vec::with_capacity(params_list.len());
    for (ci, &params) in params_list.iter().enumerate() {
        let per_fold = &fold_scores[ci * k..(ci + 1) * k];
        let score = if per_fold.iter().all(Option::is_some) {
            let fold_mse: Vec<f64> = per_fold.iter().map(|s| s.unwrap()).collect();
            let mean_mse = fold_mse.iter().sum::<f64>() / k as f64;
            let var = fold_mse.iter().map(|m| (m - mean_mse).powi(2)).sum::<f64>()
                / (k - 1) as f64;
            let std_error = (var / k as f64).sqrt();
            Some(CandidateScore { fold_mse, mean_mse, std_error })
        } else {
            None
        };
        candidates.push(CvCandidate { params, score });
    }

    let selected_index = select(&candidates, spec.method, grid.prefer_larger_l)?;
    Ok(CvResult {
        selected: candidates[selected_index].params,
        selected_index,
        candidates,
        fold_assignment: fold_of,
    })
}

/// Applies the selection rule over scored candidates.
fn select(candidates: &[CvCandidate], method: Method, prefer_larger_l: bool) -> Result<usize> {
    let scored: Vec<(usize, &Hyperparams, &CandidateScore)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.score.as_ref().map(|s| (i, &c.params, s)))
        .collect();
    if scored.is_empty() {
        return Err(Error::invalid(
            "cross-validation: every candidate failed to solve on some fold",
        ));
    }

    if method == Method::Lcr {
        // Argmin of the mean, ties toward the smaller bound.
        let &(_, _, best_score) = scored
            .iter()
            .min_by(|a, b| {
                (a.2.mean_mse, lip(a.1)).partial_cmp(&(b.2.mean_mse, lip(b.1))).unwrap()
            })
            .expect("nonempty");
        let threshold = best_score.mean_mse + best_score.std_error;
        // One-standard-error rule over the eligible set.
        let within = scored.iter().filter(|(_, _, s)| s.mean_mse <= threshold);
        let pick = if prefer_larger_l {
            within.max_by(|a, b| {
                (lip(a.1), -a.2.mean_mse).partial_cmp(&(lip(b.1), -b.2.mean_mse)).unwrap()
            })
        } else {
            within.min_by(|a, b| {
                (lip(a.1), a.2.mean_mse).partial_cmp(&(lip(b.1), b.2.mean_mse)).unwrap()
            })
        };
        Ok(pick.expect("eligible set contains the argmin").0)
    } else {
        let &(i, _, _) = scored
            .iter()
            .min_by(|a, b| {
                (a.2.mean_mse, a.1.c, a.1.epsilon)
                    .partial_cmp(&(b.2.mean_mse, b.1.c, b.1.epsilon))
                    .unwrap()
            })
            .expect("nonempty");
        Ok(i)
    }
}

fn lip(p: &Hyperparams) -> f64 {
    p.lipschitz.unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::Shape;

    #[test]
    fn fold_assignment_partitions_exactly() {
        for (n, k) in [(10, 5), (11, 3), (7, 7), (100, 5)] {
            let fold_of = assign_folds(n, k, 42);
            assert_eq!(fold_of.len(), n);
            let mut counts = vec![0usize; k];
            for &f in &fold_of {
                assert!(f < k);
                counts[f] += 1;
            }
            let min = *counts.iter().min().unwrap();
            let max = *counts.iter().max().unwrap();
            assert!(max - min <= 1, "fold sizes {counts:?} differ by more than one");
            assert_eq!(counts.iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn fold_assignment_is_seeded() {
        assert_eq!(assign_folds(50, 5, 7), assign_folds(50, 5, 7));
        assert_ne!(assign_folds(50, 5, 7), assign_folds(50, 5, 8));
    }

    #[test]
    fn candidate_enumeration_matches_method() {
        let grid = CvGrid::default();
        let base = Hyperparams::default();
        let cr = EstimatorSpec::new(Method::Cr, Shape::convex(), base);
        assert_eq!(grid.candidates(&cr).len(), 1);

        let lcr = EstimatorSpec::new(Method::Lcr, Shape::convex(), base);
        let lcr_cands = grid.candidates(&lcr);
        assert_eq!(lcr_cands.len(), grid.l_values.len());
        assert!(lcr_cands.iter().zip(&grid.l_values).all(|(p, &l)| p.lipschitz == Some(l)));

        let svr = EstimatorSpec::new(Method::SvrLinear, Shape::convex(), base);
        assert_eq!(grid.candidates(&svr).len(), 25);
    }

    #[test]
    fn grid_validation_rejects_bad_values() {
        let mut grid = CvGrid::default();
        grid.folds = 1;
        assert!(grid.validate(50, Method::Cr).is_err());
        grid.folds = 5;
        assert!(grid.validate(4, Method::Cr).is_err());
        grid.c_multipliers = vec![0.0];
        assert!(grid.validate(50, Method::SvrLinear).is_err());
        assert!(grid.validate(50, Method::Cr).is_ok());

        let mut lgrid = CvGrid::default();
        lgrid.l_values.clear();
        assert!(lgrid.validate(50, Method::Lcr).is_err());
    }
}
