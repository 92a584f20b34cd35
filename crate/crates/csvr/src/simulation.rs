//! Monte Carlo harness: synthetic concave truths plus Gaussian noise,
//! replicate loops with per-replicate cross-validation, and MSE scored
//! against the true function rather than the noisy responses.
//!
//! Everything here is driven by named PRNG streams derived from a master
//! seed, so a given experiment specification always produces the same
//! numbers, replicate by replicate, regardless of thread count.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{fit_with_config, EstimatorSpec, Hyperparams, Method};
use crate::metrics::mse_vs_truth;
use crate::model_selection::{cross_validate_with_config, CvGrid};
use crate::rng::{stream_rng, Stream};
use crate::shape::Shape;
use crate::solver::SolverConfig;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Benchmark truth functions. Each is concave and monotone on the sampling
/// support [1, 10]^d, with curvature concentrated near the lower boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DgpId {
    /// d=1: f(x) = 3 + x^0.5
    I,
    /// d=2: f(x) = 3 + x1^0.2 + x2^0.3
    II,
    /// d=3: f(x) = 3 + x1^0.05 + x2^0.15 + x3^0.3
    III,
}

impl DgpId {
    /// Covariate dimension implied by the truth function.
    pub fn dim(&self) -> usize {
        match self {
            DgpId::I => 1,
            DgpId::II => 2,
            DgpId::III => 3,
        }
    }

    /// Noiseless function value at `x`; `x` must have length `dim()`.
    pub fn truth(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            DgpId::I => 3.0 + x[0].sqrt(),
            DgpId::II => 3.0 + x[0].powf(0.2) + x[1].powf(0.3),
            DgpId::III => 3.0 + x[0].powf(0.05) + x[1].powf(0.15) + x[2].powf(0.3),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DgpId::I => "I",
            DgpId::II => "II",
            DgpId::III => "III",
        }
    }

    pub fn parse(name: &str) -> Result<DgpId> {
        Ok(match name.trim() {
            "I" | "i" | "1" => DgpId::I,
            "II" | "ii" | "2" => DgpId::II,
            "III" | "iii" | "3" => DgpId::III,
            other => {
                return Err(Error::invalid(format!("unknown DGP '{other}' (expected I, II or III)")))
            }
        })
    }
}

/// One data generating process: covariates uniform on [1, 10]^d, responses
/// `truth(x) + N(0, sigma^2)` noise, plus optional outlying rows whose
/// covariates come from [90, 100]^d (responses still follow the formula).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dgp: DgpId,
    /// Rows drawn from the regular support.
    pub n: usize,
    /// Noise standard deviation, > 0.
    pub sigma: f64,
    /// Outlying rows appended after the regular ones.
    pub outliers: usize,
    /// Master seed; all streams derive from it.
    pub seed: u64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("dgp: n must be at least 1"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid("dgp: sigma must be positive and finite"));
        }
        Ok(())
    }
}

/// Set on the stream index for hold-out draws so they can never collide
/// with a training replicate's draws.
const HOLDOUT_INDEX_BIT: u64 = 1 << 63;

/// Draws one sample from `spec`, replicate 0. Returns the dataset together
/// with the noiseless truth at every row (outlying rows included).
pub fn generate(spec: &DgpSpec) -> Result<(Dataset, Vec<f64>)> {
    generate_replicate(spec, 0)
}

/// Draws the sample for a given replicate index. Covariates, noise and
/// outliers use separate streams, so the first `n` rows are identical
/// whether or not outliers are requested.
pub fn generate_replicate(spec: &DgpSpec, replicate: u64) -> Result<(Dataset, Vec<f64>)> {
    spec.validate()?;
    let d = spec.dgp.dim();
    let total = spec.n + spec.outliers;

    let mut x = Vec::with_capacity(total * d);
    let mut rng_x = stream_rng(spec.seed, Stream::Covariates, replicate);
    for _ in 0..spec.n * d {
        x.push(rng_x.random_range(1.0..=10.0));
    }
    let mut rng_out = stream_rng(spec.seed, Stream::Outliers, replicate);
    for _ in 0..spec.outliers * d {
        x.push(rng_out.random_range(90.0..=100.0));
    }

    let mut rng_e = stream_rng(spec.seed, Stream::Noise, replicate);
    let mut truth = Vec::with_capacity(total);
    let mut y = Vec::with_capacity(total);
    for i in 0..total {
        let f = spec.dgp.truth(&x[i * d..(i + 1) * d]);
        let z: f64 = rng_e.sample(StandardNormal);
        truth.push(f);
        y.push(f + spec.sigma * z);
    }

    Ok((Dataset::from_flat(x, y, d)?, truth))
}

/// Draws fresh evaluation points from the regular support [1, 10]^d for a
/// replicate. The returned dataset's responses are the noiseless truth:
/// hold-out scoring measures recovery of the function, so no noise is added.
pub fn holdout(spec: &DgpSpec, test_size: usize, replicate: u64) -> Result<(Dataset, Vec<f64>)> {
    spec.validate()?;
    if test_size == 0 {
        return Err(Error::invalid("holdout: test_size must be at least 1"));
    }
    let d = spec.dgp.dim();
    let mut rng_x = stream_rng(spec.seed, Stream::Covariates, replicate | HOLDOUT_INDEX_BIT);
    let mut x = Vec::with_capacity(test_size * d);
    for _ in 0..test_size * d {
        x.push(rng_x.random_range(1.0..=10.0));
    }
    let truth: Vec<f64> =
        (0..test_size).map(|i| spec.dgp.truth(&x[i * d..(i + 1) * d])).collect();
    Ok((Dataset::from_flat(x, truth.clone(), d)?, truth))
}

/// A full experiment: one scenario, several estimators, a tuning grid and a
/// replicate count.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dgp: DgpSpec,
    pub estimators: Vec<EstimatorSpec>,
    pub grid: CvGrid,
    /// Independent repetitions of draw -> tune -> fit -> score.
    pub replicates: usize,
    /// Fresh hold-out points per replicate; 0 disables out-of-sample scoring.
    pub test_size: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.replicates == 0 {
            return Err(Error::invalid("experiment: replicates must be at least 1"));
        }
        if self.estimators.is_empty() {
            return Err(Error::invalid("experiment: no estimators listed"));
        }
        for est in &self.estimators {
            est.params.validate()?;
            self.grid.validate(self.dgp.n + self.dgp.outliers, est.method)?;
        }
        Ok(())
    }
}

/// Scores from one successful replicate of one estimator.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ReplicateScore {
    /// Hyperparameters chosen by cross-validation for this replicate.
    pub selected: Hyperparams,
    /// MSE of predictions against the truth at the training rows.
    pub in_sample_mse: f64,
    /// MSE against the truth at fresh hold-out rows, when test_size > 0.
    pub out_of_sample_mse: Option<f64>,
}

/// Mean and sample standard deviation over successful replicates.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SummaryStat {
    pub mean: f64,
    pub std_dev: f64,
    pub count: usize,
}

impl SummaryStat {
    fn over(values: &[f64]) -> SummaryStat {
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count.max(1) as f64;
        let std_dev = if count > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        SummaryStat { mean, std_dev, count }
    }
}

/// Per-estimator experiment outcome: one slot per replicate (None when
/// that replicate's tuning or fit failed to solve) and summaries over the
/// successes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub spec: EstimatorSpec,
    pub scores: Vec<Option<ReplicateScore>>,
    pub failures: usize,
    pub in_sample: SummaryStat,
    pub out_of_sample: Option<SummaryStat>,
}

/// Everything an experiment produced. Replicate scores and summaries are
/// deterministic in the spec; `elapsed_seconds` is wall-clock metadata and
/// of course is not.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub estimators: Vec<EstimatorOutcome>,
    pub elapsed_seconds: f64,
}

/// Runs the replicate loop for every estimator in the spec.
///
/// Per replicate and estimator: draw training data from replicate-derived
/// streams, tune by cross-validation (skipped when the grid yields a single
/// candidate), refit on the full draw with the winner, then score MSE
/// against the truth in-sample and, if requested, at fresh hold-out points.
/// Solver failures mark that replicate failed for that estimator; failed
/// replicates are excluded from the summaries and counted.
///
/// (estimator, replicate) cells run in parallel; scores are gathered and
/// summed in index order, so results do not depend on scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    run_experiment_with_config(spec, &SolverConfig::fast_profile())
}

/// [`run_experiment`] with explicit solver settings for every fit (fold
/// fits and final refits alike).
pub fn run_experiment_with_config(
    spec: &ExperimentSpec,
    config: &SolverConfig,
) -> Result<ExperimentResult> {
    spec.validate()?;
    let started = Instant::now();

    let jobs: Vec<(usize, usize)> = (0..spec.estimators.len())
        .flat_map(|e| (0..spec.replicates).map(move |r| (e, r)))
        .collect();
    let cells: Vec<Option<ReplicateScore>> =
        jobs.par_iter().map(|&(e, r)| run_cell(spec, e, r, config).ok()).collect();

    let mut estimators = Vec::with_capacity(spec.estimators.len());
    for (e, est) in spec.estimators.iter().enumerate() {
        let scores: Vec<Option<ReplicateScore>> =
            cells[e * spec.replicates..(e + 1) * spec.replicates].to_vec();
        let ok_in: Vec<f64> = scores.iter().flatten().map(|s| s.in_sample_mse).collect();
        let ok_out: Vec<f64> =
            scores.iter().flatten().filter_map(|s| s.out_of_sample_mse).collect();
        let failures = spec.replicates - ok_in.len();
        if failures > 0 {
            eprintln!(
                "warning: {} of {} replicates failed to solve for {}",
                failures,
                spec.replicates,
                est.method.name()
            );
        }
        estimators.push(EstimatorOutcome {
            spec: *est,
            in_sample: SummaryStat::over(&ok_in),
            out_of_sample: (spec.test_size > 0).then(|| SummaryStat::over(&ok_out)),
            scores,
            failures,
        });
    }

    Ok(ExperimentResult {
        spec: spec.clone(),
        estimators,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

/// One (estimator, replicate) cell. Any solver failure surfaces as Err.
fn run_cell(
    spec: &ExperimentSpec,
    est_idx: usize,
    replicate: usize,
    config: &SolverConfig,
) -> Result<ReplicateScore> {
    let est = &spec.estimators[est_idx];
    let (train, truth) = generate_replicate(&spec.dgp, replicate as u64)?;

    // Fresh folds per replicate; the shuffle seed is replicate-derived so
    // reruns are reproducible.
    let mut grid = spec.grid.clone();
    grid.rng_seed = spec.grid.rng_seed.wrapping_add(replicate as u64);

    let selected = if grid.candidates(est).len() == 1 {
        grid.candidates(est)[0]
    } else {
        cross_validate_with_config(&train, est, &grid, config)?.selected
    };

    let tuned = EstimatorSpec::new(est.method, est.shape, selected);
    let model = fit_with_config(&train, &tuned, config)?;
    let in_sample_mse = mse_vs_truth(&model.predict_rows(&train)?, &truth)?;

    let out_of_sample_mse = if spec.test_size > 0 {
        let (test, test_truth) = holdout(&spec.dgp, spec.test_size, replicate as u64)?;
        Some(mse_vs_truth(&model.predict_rows(&test)?, &test_truth)?)
    } else {
        None
    };

    Ok(ReplicateScore { selected, in_sample_mse, out_of_sample_mse })
}

// ---------------------------------------------------------------------------
// Config files: several scenarios sharing estimators, grid and budgets.

/// TOML-friendly experiment description. Scenario rows share the estimator
/// list, tuning grid, replicate count and hold-out size.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub test_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: CvGrid,
    pub scenarios: Vec<ScenarioConfig>,
    pub estimators: Vec<EstimatorConfig>,
}

fn default_replicates() -> usize {
    50
}

/// One scenario row: which truth, how many rows, how much noise.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dgp: String,
    pub n: usize,
    pub sigma: f64,
    #[serde(default)]
    pub outliers: usize,
}

/// One estimator row, using the CLI's string names.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// cr, lcr, svr, csvr, csvr-l1 or csvr-linf.
    pub method: String,
    /// "concave" (default) or "convex".
    #[serde(default)]
    pub shape: Option<String>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub lipschitz: Option<f64>,
}

impl EstimatorConfig {
    pub fn to_spec(&self) -> Result<EstimatorSpec> {
        let method = Method::parse(&self.method)?;
        let shape = match self.shape.as_deref() {
            None => Shape::concave(),
            Some("concave") => Shape::concave(),
            Some("convex") => Shape::convex(),
            Some(other) => {
                return Err(Error::invalid(format!(
                    "unknown shape '{other}' (expected concave or convex)"
                )))
            }
        };
        let defaults = Hyperparams::default();
        let params = Hyperparams {
            c: self.c.unwrap_or(defaults.c),
            epsilon: self.epsilon.unwrap_or(defaults.epsilon),
            lipschitz: self.lipschitz.or(defaults.lipschitz),
        };
        Ok(EstimatorSpec::new(method, shape, params))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::parse(format!("experiment config: {e}")))?;
        if config.scenarios.is_empty() {
            return Err(Error::invalid("experiment config: no scenarios listed"));
        }
        if config.estimators.is_empty() {
            return Err(Error::invalid("experiment config: no estimators listed"));
        }
        Ok(config)
    }

    /// Expands to one ExperimentSpec per scenario. Scenario index feeds the
    /// seed so different rows never share draws.
    pub fn experiments(&self) -> Result<Vec<ExperimentSpec>> {
        let estimators: Vec<EstimatorSpec> =
            self.estimators.iter().map(|e| e.to_spec()).collect::<Result<_>>()?;
        let mut grid = self.grid.clone();
        grid.rng_seed = self.seed;
        self.scenarios
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let spec = ExperimentSpec {
                    dgp: DgpSpec {
                        dgp: DgpId::parse(&s.dgp)?,
                        n: s.n,
                        sigma: s.sigma,
                        outliers: s.outliers,
                        seed: self.seed.wrapping_add(1 + i as u64),
                    },
                    estimators: estimators.clone(),
                    grid: grid.clone(),
                    replicates: self.replicates,
                    test_size: self.test_size,
                };
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }
}

/// Results of every scenario in a config, in scenario order.
#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub experiments: Vec<ExperimentResult>,
}

impl SweepResult {
    /// Scenario-by-method summary table: mean MSE with its standard
    /// deviation in parentheses, four decimals, in-sample unless noted.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let methods: Vec<String> = self
            .experiments
            .first()
            .map(|e| e.spec.estimators.iter().map(|s| s.method.name().to_string()).collect())
            .unwrap_or_default();

        out.push_str(&format!("{:<5} {:>5} {:>6} {:>9}", "dgp", "n", "sigma", "outliers"));
        for m in &methods {
            out.push_str(&format!(" {m:>18}"));
        }
        out.push('\n');

        for exp in &self.experiments {
            let d = &exp.spec.dgp;
            out.push_str(&format!(
                "{:<5} {:>5} {:>6} {:>9}",
                d.dgp.name(),
                d.n,
                d.sigma,
                d.outliers
            ));
            for est in &exp.estimators {
                let s = est.in_sample;
                out.push_str(&format!(" {:>18}", format!("{:.4} ({:.4})", s.mean, s.std_dev)));
            }
            out.push('\n');
            if exp.spec.test_size > 0 {
                out.push_str(&format!("{:<27}", "  (out-of-sample)"));
                for est in &exp.estimators {
                    match est.out_of_sample {
                        Some(s) => out.push_str(&format!(
                            " {:>18}",
                            format!("{:.4} ({:.4})", s.mean, s.std_dev)
                        )),
                        None => out.push_str(&format!(" {:>18}", "-")),
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// Machine-readable per-replicate log.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs every scenario in a config file, in order.
pub fn run_config(config: &ExperimentConfig) -> Result<SweepResult> {
    let specs = config.experiments()?;
    let mut experiments = Vec::with_capacity(specs.len());
    for spec in &specs {
        experiments.push(run_experiment(spec)?);
    }
    Ok(SweepResult { experiments })
}
