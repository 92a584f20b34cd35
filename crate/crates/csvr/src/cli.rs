//! Command-line interface: fit, predict, cross-validate, simulate, describe
//! and solver-program export, all over CSV files.
//!
//! Reports go to standard output, diagnostics to standard error. Failures
//! print a single line `error[<category>]: <message>` and exit nonzero with
//! a stable code per category (invalid-input 2, parse 3, io 4, solver 5).

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{assemble_program, fit_with_config, EstimatorSpec, Hyperparams, Method};
use crate::io::{
    self, ColumnRef, CsvLayout, CsvSchema, ModelArchive, Standardization,
};
use crate::metrics::mse_vs_observed;
use crate::model::FittedModel;
use crate::model_selection::{cross_validate, CvGrid};
use crate::shape::{Curvature, Monotonicity, Shape};
use crate::simulation::ExperimentConfig;
use crate::solver::SolverConfig;
use clap::{Args, Parser, Subcommand};
use std::io::Write as _;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "csvr",
    version,
    about = "Shape-constrained regression: convex/concave piecewise-linear fits with an embedded QP solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an estimator to a CSV dataset and write a model archive.
    Fit(FitArgs),
    /// Predict with a saved model archive on new rows.
    Predict(PredictArgs),
    /// Cross-validate a hyperparameter grid and report per-candidate scores.
    Cv(CvArgs),
    /// Run a Monte Carlo experiment sweep from a TOML config file.
    Simulate(SimulateArgs),
    /// Summarize the numeric columns of a CSV file.
    Describe(DescribeArgs),
    /// Print the exact optimization program a fit would hand the solver.
    OracleCheck(OracleCheckArgs),
}

#[derive(Args)]
struct CsvArgs {
    /// Input CSV file.
    data: PathBuf,
    /// Response column, by header name or zero-based index [default: last column].
    #[arg(long)]
    response: Option<String>,
    /// Feature columns, comma separated [default: all other numeric columns].
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    /// The file has no header row; columns are addressed by index.
    #[arg(long)]
    no_header: bool,
    /// Field delimiter (single character).
    #[arg(long, default_value = ",")]
    delimiter: char,
}

impl CsvArgs {
    fn schema(&self) -> Result<CsvSchema> {
        if !self.delimiter.is_ascii() {
            return Err(Error::invalid("delimiter must be a single ASCII character"));
        }
        Ok(CsvSchema {
            response: self.response.as_deref().map(ColumnRef::parse),
            features: self.features.iter().map(|s| ColumnRef::parse(s)).collect(),
            has_header: !self.no_header,
            delimiter: self.delimiter as u8,
        })
    }

    fn load(&self) -> Result<(Dataset, CsvLayout)> {
        io::load_csv_named(&self.data, &self.schema()?)
    }
}

#[derive(Args)]
struct EstimatorArgs {
    /// Estimator: cr, lcr, svr, csvr, csvr-l1 or csvr-linf.
    #[arg(long, default_value = "csvr")]
    method: String,
    /// Curvature restriction: concave or convex.
    #[arg(long, default_value = "concave")]
    shape: String,
    /// Componentwise monotonicity: none, increasing or decreasing.
    #[arg(long, default_value = "none")]
    monotonicity: String,
    /// Pin all intercepts to zero (linearly homogeneous fit).
    #[arg(long)]
    homogeneous: bool,
    /// Loss weight C for the SVR family.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Insensitivity tube half-width for the SVR family.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Subgradient norm bound (required for lcr).
    #[arg(long)]
    lipschitz: Option<f64>,
}

fn parse_shape(shape: &str, monotonicity: &str, homogeneous: bool) -> Result<Shape> {
    let curvature = match shape {
        "concave" => Curvature::Concave,
        "convex" => Curvature::Convex,
        other => {
            return Err(Error::invalid(format!(
                "unknown shape '{other}' (expected concave or convex)"
            )))
        }
    };
    let monotonicity = match monotonicity {
        "none" => Monotonicity::None,
        "increasing" => Monotonicity::Increasing,
        "decreasing" => Monotonicity::Decreasing,
        other => {
            return Err(Error::invalid(format!(
                "unknown monotonicity '{other}' (expected none, increasing or decreasing)"
            )))
        }
    };
    let mut out = Shape { curvature, monotonicity, homogeneous: false };
    if homogeneous {
        out = out.homogeneous();
    }
    Ok(out)
}

impl EstimatorArgs {
    fn spec(&self) -> Result<EstimatorSpec> {
        let method = Method::parse(&self.method)?;
        let shape = parse_shape(&self.shape, &self.monotonicity, self.homogeneous)?;
        let params = Hyperparams { c: self.c, epsilon: self.epsilon, lipschitz: self.lipschitz };
        let spec = EstimatorSpec::new(method, shape, params);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    csv: CsvArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Where to write the model archive.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Standardize features before fitting; coefficients are transformed
    /// back to raw units in the archive.
    #[arg(long)]
    standardize: bool,
    /// Looser, faster solver profile.
    #[arg(long)]
    fast: bool,
    /// Emit the report as JSON (full precision) instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Input CSV file with the rows to predict.
    data: PathBuf,
    /// Model archive written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Treat every column as a feature; the file carries no response.
    #[arg(long)]
    no_response: bool,
    /// Response column, by header name or zero-based index [default: last column].
    #[arg(long)]
    response: Option<String>,
    /// Feature columns, comma separated [default: all other numeric columns].
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    /// The file has no header row; columns are addressed by index.
    #[arg(long)]
    no_header: bool,
    /// Field delimiter (single character).
    #[arg(long, default_value = ",")]
    delimiter: char,
    /// Write predictions here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    csv: CsvArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Candidate C values, comma separated.
    #[arg(long, value_delimiter = ',')]
    c_grid: Vec<f64>,
    /// Candidate epsilon values, comma separated.
    #[arg(long, value_delimiter = ',')]
    epsilon_grid: Vec<f64>,
    /// Candidate Lipschitz bounds, comma separated (lcr).
    #[arg(long, value_delimiter = ',')]
    l_grid: Vec<f64>,
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Seed for the fold shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One-standard-error rule picks the largest eligible Lipschitz bound
    /// instead of the smallest.
    #[arg(long)]
    prefer_larger_l: bool,
    /// Emit the full result as JSON (full precision) instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML experiment config: scenarios, estimators, replicates, grid.
    config: PathBuf,
    /// Emit results as JSON (full precision) instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DescribeArgs {
    /// Input CSV file.
    data: PathBuf,
    /// The file has no header row.
    #[arg(long)]
    no_header: bool,
    /// Field delimiter (single character).
    #[arg(long, default_value = ",")]
    delimiter: char,
    /// Emit summaries as JSON (full precision) instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OracleCheckArgs {
    #[command(flatten)]
    csv: CsvArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Write the program dump here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses the process arguments, runs the chosen subcommand and returns the
/// process exit code.
pub fn run_from_env() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not failures.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        // A consumer that stops reading (head, less) is not an error.
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Predict(args) => run_predict(args),
        Command::Cv(args) => run_cv(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Describe(args) => run_describe(args),
        Command::OracleCheck(args) => run_oracle_check(args),
    }
}

fn solver_config(fast: bool) -> SolverConfig {
    if fast {
        SolverConfig::fast_profile()
    } else {
        SolverConfig::default()
    }
}

fn fit_model(
    data: &Dataset,
    spec: &EstimatorSpec,
    standardize: bool,
    config: &SolverConfig,
) -> Result<(FittedModel, Option<Standardization>)> {
    if standardize {
        let (standardized, st) = io::standardize(data)?;
        let model = fit_with_config(&standardized, spec, config)?;
        Ok((st.destandardize_model(&model)?, Some(st)))
    } else {
        Ok((fit_with_config(data, spec, config)?, None))
    }
}

#[derive(serde::Serialize)]
struct FitJson<'a> {
    spec: &'a EstimatorSpec,
    n: usize,
    d: usize,
    in_sample_mse: f64,
    report: &'a crate::solver::SolverReport,
    archive: String,
}

fn run_fit(args: FitArgs) -> Result<()> {
    let spec = args.estimator.spec()?;
    let (data, layout) = args.csv.load()?;
    let (model, st) = fit_model(&data, &spec, args.standardize, &solver_config(args.fast))?;

    let predictions = model.predict_rows(&data)?;
    let in_mse = mse_vs_observed(&predictions, data.y())?;

    let mut archive =
        ModelArchive::from_model(&model, &spec, data.n()).with_schema(layout.fingerprint());
    if let Some(st) = st {
        archive = archive.with_standardization(st);
    }
    archive.save(&args.out)?;
    eprintln!("model archive written to {}", args.out.display());

    if args.json {
        let doc = FitJson {
            spec: &spec,
            n: data.n(),
            d: data.dim(),
            in_sample_mse: in_mse,
            report: model.report(),
            archive: args.out.display().to_string(),
        };
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        print!("{}", io::fit_report(&spec, &model, data.n(), in_mse));
    }
    Ok(())
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let archive = ModelArchive::load(&args.model)?;
    let model = archive.to_model()?;

    let schema = CsvSchema {
        response: args.response.as_deref().map(ColumnRef::parse),
        features: args.features.iter().map(|s| ColumnRef::parse(s)).collect(),
        has_header: !args.no_header,
        delimiter: {
            if !args.delimiter.is_ascii() {
                return Err(Error::invalid("delimiter must be a single ASCII character"));
            }
            args.delimiter as u8
        },
    };
    let (data, _) = if args.no_response {
        io::load_feature_csv(&args.data, &schema)?
    } else {
        io::load_csv_named(&args.data, &schema)?
    };

    let predictions = model.predict_rows(&data)?;

    let mut out = String::with_capacity(predictions.len() * 20 + 16);
    out.push_str("prediction\n");
    for p in &predictions {
        out.push_str(&format!("{p}\n"));
    }
    match &args.out {
        Some(path) => std::fs::write(path, out)?,
        None => {
            std::io::stdout().write_all(out.as_bytes())?;
        }
    }

    if !args.no_response {
        let mse = mse_vs_observed(&predictions, data.y())?;
        eprintln!("out-of-sample mse {mse:.4}");
    }
    Ok(())
}

fn run_cv(args: CvArgs) -> Result<()> {
    let spec = args.estimator.spec()?;
    let (data, _) = args.csv.load()?;

    let mut grid = CvGrid {
        folds: args.folds,
        rng_seed: args.seed,
        prefer_larger_l: args.prefer_larger_l,
        ..CvGrid::default()
    };
    if !args.c_grid.is_empty() {
        grid.c_multipliers = args.c_grid.clone();
    }
    if !args.epsilon_grid.is_empty() {
        grid.epsilon_values = args.epsilon_grid.clone();
    }
    if !args.l_grid.is_empty() {
        grid.l_values = args.l_grid.clone();
    }

    let result = cross_validate(&data, &spec, &grid)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        print!("{}", io::cv_report(&result));
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", args.config.display())))
    })?;
    let config = ExperimentConfig::from_toml_str(&text)?;
    let sweep = crate::simulation::run_config(&config)?;
    if args.json {
        println!("{}", sweep.to_json()?);
    } else {
        print!("{}", sweep.table());
    }
    Ok(())
}

fn run_describe(args: DescribeArgs) -> Result<()> {
    if !args.delimiter.is_ascii() {
        return Err(Error::invalid("delimiter must be a single ASCII character"));
    }
    let summaries = io::describe_csv(&args.data, !args.no_header, args.delimiter as u8)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summaries)?);
    } else {
        print!("{}", io::format_describe(&summaries));
    }
    Ok(())
}

fn run_oracle_check(args: OracleCheckArgs) -> Result<()> {
    let spec = args.estimator.spec()?;
    let (data, _) = args.csv.load()?;
    let bundle = assemble_program(&data, &spec)?;
    match &args.out {
        Some(path) => {
            let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
            bundle.program().write_dump(&mut file)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            bundle.program().write_dump(&mut lock)?;
        }
    }
    Ok(())
}
