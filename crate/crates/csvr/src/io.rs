//! CSV ingestion, train/test splitting, model archives and report formatting.
//!
//! Datasets come in as delimited text with a configurable layout
//! ([`CsvSchema`]); fitted models go out as JSON archives ([`ModelArchive`])
//! that reproduce predictions bitwise when reloaded. Human-readable reports
//! round to four decimal places; the JSON forms keep full precision.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorSpec, Hyperparams, Method};
use crate::model::FittedModel;
use crate::model_selection::CvResult;
use crate::rng::{stream_rng, Stream};
use crate::shape::Shape;
use crate::solver::SolverReport;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

/// A column in a delimited file, by header name or zero-based position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl ColumnRef {
    /// All-digit strings become positions, anything else a header name.
    pub fn parse(s: &str) -> ColumnRef {
        match s.trim().parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.trim().to_string()),
        }
    }
}

impl From<usize> for ColumnRef {
    fn from(i: usize) -> Self {
        ColumnRef::Index(i)
    }
}

impl From<&str> for ColumnRef {
    fn from(s: &str) -> Self {
        ColumnRef::Name(s.to_string())
    }
}

/// Layout of a delimited dataset file.
///
/// With no explicit response the last column is used; with no explicit
/// feature list every other column whose first data cell parses as a number
/// is taken, in file order.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub response: Option<ColumnRef>,
    pub features: Vec<ColumnRef>,
    pub has_header: bool,
    /// Single-byte field delimiter.
    pub delimiter: u8,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema { response: None, features: Vec::new(), has_header: true, delimiter: b',' }
    }
}

impl CsvSchema {
    pub fn with_response(mut self, response: impl Into<ColumnRef>) -> Self {
        self.response = Some(response.into());
        self
    }

    pub fn with_features(mut self, features: Vec<ColumnRef>) -> Self {
        self.features = features;
        self
    }

    pub fn headerless(mut self) -> Self {
        self.has_header = false;
        self
    }

    pub fn with_delimiter(mut self, delimiter: u8) -> Self {
        self.delimiter = delimiter;
        self
    }
}

/// The concrete columns a load resolved to, for reports and archives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvLayout {
    pub response: String,
    pub features: Vec<String>,
}

impl CsvLayout {
    /// One-line summary recorded in model archives, so a reloaded model can
    /// be checked against the file it is asked to predict on.
    pub fn fingerprint(&self) -> String {
        format!("{} -> {}", self.features.join(","), self.response)
    }
}

struct RawTable {
    /// Column names: header cells, or `#i` when the file has none.
    names: Vec<String>,
    /// Data records with their 1-based line numbers in the file.
    records: Vec<(u64, csv::StringRecord)>,
}

fn read_raw<R: Read>(reader: R, has_header: bool, delimiter: u8) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .from_reader(reader);

    let mut records: Vec<(u64, csv::StringRecord)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        records.push((line, rec));
    }
    if records.is_empty() {
        return Err(Error::parse("empty file: no rows at all"));
    }

    let ncols = records[0].1.len();
    let names: Vec<String> = if has_header {
        let (_, header) = records.remove(0);
        header.iter().map(|c| c.trim().to_string()).collect()
    } else {
        (0..ncols).map(|i| format!("#{i}")).collect()
    };
    if records.is_empty() {
        return Err(Error::parse("no data rows"));
    }
    for (line, rec) in &records {
        if rec.len() != names.len() {
            return Err(Error::parse(format!(
                "row {line}: expected {} fields, found {}",
                names.len(),
                rec.len()
            )));
        }
    }
    Ok(RawTable { names, records })
}

fn resolve_column(names: &[String], r: &ColumnRef, has_header: bool) -> Result<usize> {
    match r {
        ColumnRef::Index(i) => {
            if *i >= names.len() {
                return Err(Error::invalid(format!(
                    "column index {i} out of range (file has {} columns)",
                    names.len()
                )));
            }
            Ok(*i)
        }
        ColumnRef::Name(name) => {
            if !has_header {
                return Err(Error::invalid(format!(
                    "column '{name}' referenced by name, but the file has no header row"
                )));
            }
            names.iter().position(|n| n == name).ok_or_else(|| {
                Error::invalid(format!(
                    "column '{name}' not found (available: {})",
                    names.join(", ")
                ))
            })
        }
    }
}

fn parse_cell(cell: &str, line: u64, name: &str) -> Result<f64> {
    let trimmed = cell.trim();
    let parsed = trimmed.parse::<f64>().map_err(|_| {
        Error::parse(format!(
            "row {line}, column '{name}': cannot parse '{trimmed}' as a number"
        ))
    })?;
    if !parsed.is_finite() {
        return Err(Error::parse(format!(
            "row {line}, column '{name}': value '{trimmed}' is not finite"
        )));
    }
    Ok(parsed)
}

/// Reads a dataset from any reader, returning the resolved column layout
/// alongside it. See [`load_csv`] for the file-path form.
pub fn load_csv_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<(Dataset, CsvLayout)> {
    let table = read_raw(reader, schema.has_header, schema.delimiter)?;
    let ncols = table.names.len();

    let response_ix = match &schema.response {
        Some(r) => resolve_column(&table.names, r, schema.has_header)?,
        None => ncols - 1,
    };

    let feature_ix: Vec<usize> = if schema.features.is_empty() {
        // Default layout: every other column that starts out numeric. A
        // column that goes bad later still errors with its location.
        let (_, first) = &table.records[0];
        (0..ncols)
            .filter(|&j| j != response_ix && first[j].trim().parse::<f64>().is_ok())
            .collect()
    } else {
        let ix = schema
            .features
            .iter()
            .map(|r| resolve_column(&table.names, r, schema.has_header))
            .collect::<Result<Vec<usize>>>()?;
        if ix.contains(&response_ix) {
            return Err(Error::invalid(format!(
                "response column '{}' also appears among the features",
                table.names[response_ix]
            )));
        }
        let mut seen = vec![false; ncols];
        for &j in &ix {
            if seen[j] {
                return Err(Error::invalid(format!(
                    "feature column '{}' listed twice",
                    table.names[j]
                )));
            }
            seen[j] = true;
        }
        ix
    };
    if feature_ix.is_empty() {
        return Err(Error::invalid("no usable feature columns"));
    }

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(table.records.len());
    let mut y: Vec<f64> = Vec::with_capacity(table.records.len());
    for (line, rec) in &table.records {
        y.push(parse_cell(&rec[response_ix], *line, &table.names[response_ix])?);
        rows.push(
            feature_ix
                .iter()
                .map(|&j| parse_cell(&rec[j], *line, &table.names[j]))
                .collect::<Result<Vec<f64>>>()?,
        );
    }

    let layout = CsvLayout {
        response: table.names[response_ix].clone(),
        features: feature_ix.iter().map(|&j| table.names[j].clone()).collect(),
    };
    Ok((Dataset::from_rows(rows, y)?, layout))
}

/// Reads a features-only file: no response column is resolved, the schema's
/// features (by default every column numeric in the first row) all become
/// covariates, and the response vector is zero-filled. For prediction inputs.
pub fn load_feature_reader<R: Read>(
    reader: R,
    schema: &CsvSchema,
) -> Result<(Dataset, CsvLayout)> {
    let table = read_raw(reader, schema.has_header, schema.delimiter)?;
    let ncols = table.names.len();

    let feature_ix: Vec<usize> = if schema.features.is_empty() {
        let (_, first) = &table.records[0];
        (0..ncols).filter(|&j| first[j].trim().parse::<f64>().is_ok()).collect()
    } else {
        schema
            .features
            .iter()
            .map(|r| resolve_column(&table.names, r, schema.has_header))
            .collect::<Result<Vec<usize>>>()?
    };
    if feature_ix.is_empty() {
        return Err(Error::invalid("no usable feature columns"));
    }

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(table.records.len());
    for (line, rec) in &table.records {
        rows.push(
            feature_ix
                .iter()
                .map(|&j| parse_cell(&rec[j], *line, &table.names[j]))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    let n = rows.len();
    let layout = CsvLayout {
        response: "(none)".to_string(),
        features: feature_ix.iter().map(|&j| table.names[j].clone()).collect(),
    };
    Ok((Dataset::from_rows(rows, vec![0.0; n])?, layout))
}

/// [`load_feature_reader`] over a file path.
pub fn load_feature_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
) -> Result<(Dataset, CsvLayout)> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.as_ref().display()),
        ))
    })?;
    load_feature_reader(file, schema)
}

/// Reads a dataset from a delimited file. Rows keep file order; a cell that
/// is missing or not numeric fails with its row and column named.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    load_csv_named(path, schema).map(|(data, _)| data)
}

/// [`load_csv`] plus the resolved column layout.
pub fn load_csv_named(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
) -> Result<(Dataset, CsvLayout)> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.as_ref().display()),
        ))
    })?;
    load_csv_reader(file, schema)
}

/// Splits a dataset into train and test parts by a seeded permutation. The
/// test part takes `round(n * test_fraction)` rows; both parts keep the
/// original relative row order.
pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction.is_finite() && test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction must lie strictly between 0 and 1, got {test_fraction}"
        )));
    }
    let n = data.n();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} leaves an empty side of the split (n = {n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Split, 0));
    let mut test_ix = order[..n_test].to_vec();
    let mut train_ix = order[n_test..].to_vec();
    train_ix.sort_unstable();
    test_ix.sort_unstable();
    Ok((data.subset(&train_ix)?, data.subset(&test_ix)?))
}

/// Per-feature affine transform `(x - mean) / std`, recorded in archives so
/// a model fitted on standardized features stays usable on raw inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Standardizes every feature column to mean zero and unit sample standard
/// deviation. Fails on constant columns.
pub fn standardize(data: &Dataset) -> Result<(Dataset, Standardization)> {
    let means = data.column_means();
    let stds = data.column_stds();
    for (j, s) in stds.iter().enumerate() {
        if !(s.is_finite() && *s > 0.0) {
            return Err(Error::invalid(format!(
                "cannot standardize: feature column {j} is constant"
            )));
        }
    }
    let rows: Vec<Vec<f64>> = (0..data.n())
        .map(|i| {
            data.row(i)
                .iter()
                .enumerate()
                .map(|(j, v)| (v - means[j]) / stds[j])
                .collect()
        })
        .collect();
    let standardized = Dataset::from_rows(rows, data.y().to_vec())?;
    Ok((standardized, Standardization { means, stds }))
}

impl Standardization {
    /// Applies the recorded transform to a raw dataset.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.means.len() {
            return Err(Error::invalid(format!(
                "standardization is for {} features, dataset has {}",
                self.means.len(),
                data.dim()
            )));
        }
        let rows: Vec<Vec<f64>> = (0..data.n())
            .map(|i| {
                data.row(i)
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (v - self.means[j]) / self.stds[j])
                    .collect()
            })
            .collect();
        Dataset::from_rows(rows, data.y().to_vec())
    }

    /// Rewrites a model fitted on standardized features so it predicts from
    /// raw inputs: each piece `a + b'z` with `z = (x - m) / s` becomes
    /// `(a - sum_j b_j m_j / s_j) + sum_j (b_j / s_j) x_j`. Positive scales
    /// preserve curvature and monotonicity; homogeneity does not survive the
    /// shift, so homogeneous fits are rejected.
    pub fn destandardize_model(&self, model: &FittedModel) -> Result<FittedModel> {
        if model.dim() != self.means.len() {
            return Err(Error::invalid(format!(
                "standardization is for {} features, model has {}",
                self.means.len(),
                model.dim()
            )));
        }
        if model.shape().homogeneous {
            return Err(Error::invalid(
                "cannot back-transform a homogeneous fit from standardized features",
            ));
        }
        let d = model.dim();
        let mut alpha = Vec::with_capacity(model.n_pieces());
        let mut beta = Vec::with_capacity(model.n_pieces() * d);
        for i in 0..model.n_pieces() {
            let b = model.beta_row(i);
            let mut a = model.alpha()[i];
            for j in 0..d {
                a -= b[j] * self.means[j] / self.stds[j];
                beta.push(b[j] / self.stds[j]);
            }
            alpha.push(a);
        }
        Ok(FittedModel::new(alpha, beta, d, model.shape(), *model.method(), *model.report()))
    }
}

/// Serialized form of a fitted model. The JSON encoding keeps every float
/// exactly (shortest round-tripping decimal), so a reloaded archive predicts
/// bitwise identically.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelArchive {
    pub toolkit_version: String,
    pub method: Method,
    pub shape: Shape,
    pub params: Hyperparams,
    /// Training set size (pieces may be fewer: linear SVR keeps one).
    pub n: usize,
    pub d: usize,
    pub alpha: Vec<f64>,
    /// Row-major `n_pieces x d` slope matrix.
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
    pub report: SolverReport,
}

impl ModelArchive {
    pub fn from_model(model: &FittedModel, spec: &EstimatorSpec, n: usize) -> ModelArchive {
        ModelArchive {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            method: *model.method(),
            shape: model.shape(),
            params: spec.params,
            n,
            d: model.dim(),
            alpha: model.alpha().to_vec(),
            beta: model.beta_flat().to_vec(),
            schema: None,
            standardization: None,
            report: *model.report(),
        }
    }

    pub fn with_schema(mut self, fingerprint: String) -> Self {
        self.schema = Some(fingerprint);
        self
    }

    pub fn with_standardization(mut self, st: Standardization) -> Self {
        self.standardization = Some(st);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.alpha.is_empty() {
            return Err(Error::parse("model archive: empty coefficient vectors"));
        }
        if self.beta.len() != self.alpha.len() * self.d {
            return Err(Error::parse(format!(
                "model archive: {} slopes do not match {} pieces of dimension {}",
                self.beta.len(),
                self.alpha.len(),
                self.d
            )));
        }
        if self.alpha.iter().chain(&self.beta).any(|v| !v.is_finite()) {
            return Err(Error::parse("model archive: non-finite coefficient"));
        }
        Ok(())
    }

    /// Reconstructs the fitted model. Coefficients are used exactly as
    /// stored; the archive's standardization block, if any, was already
    /// folded into them at save time and is kept for provenance only.
    pub fn to_model(&self) -> Result<FittedModel> {
        self.validate()?;
        Ok(FittedModel::new(
            self.alpha.clone(),
            self.beta.clone(),
            self.d,
            self.shape,
            self.method,
            self.report,
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<ModelArchive> {
        let archive: ModelArchive = serde_json::from_str(text)?;
        archive.validate()?;
        Ok(archive)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ModelArchive> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.as_ref().display()),
            ))
        })?;
        ModelArchive::from_json(&text)
    }
}

/// Location and spread of one numeric column.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); zero for a single row.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

fn summarize(name: &str, values: &[f64]) -> ColumnSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ColumnSummary { name: name.to_string(), count: n, mean, std, min, max }
}

/// Per-column mean, standard deviation, minimum and maximum over every
/// column that parses as numeric in all rows; other columns are skipped.
pub fn describe_reader<R: Read>(
    reader: R,
    has_header: bool,
    delimiter: u8,
) -> Result<Vec<ColumnSummary>> {
    let table = read_raw(reader, has_header, delimiter)?;
    let mut out = Vec::new();
    for (j, name) in table.names.iter().enumerate() {
        let mut values = Vec::with_capacity(table.records.len());
        let mut numeric = true;
        for (_, rec) in &table.records {
            match rec[j].trim().parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    numeric = false;
                    break;
                }
            }
        }
        if numeric {
            out.push(summarize(name, &values));
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no numeric columns to describe"));
    }
    Ok(out)
}

/// [`describe_reader`] over a file path.
pub fn describe_csv(
    path: impl AsRef<Path>,
    has_header: bool,
    delimiter: u8,
) -> Result<Vec<ColumnSummary>> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.as_ref().display()),
        ))
    })?;
    describe_reader(file, has_header, delimiter)
}

/// Fixed-width table of column summaries, two decimal places.
pub fn format_describe(summaries: &[ColumnSummary]) -> String {
    let name_w = summaries.iter().map(|s| s.name.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$} {:>8} {:>10} {:>10} {:>10} {:>10}",
        "column", "count", "mean", "std", "min", "max"
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{:<name_w$} {:>8} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
            s.name, s.count, s.mean, s.std, s.min, s.max
        );
    }
    out
}

fn status_name(report: &SolverReport) -> &'static str {
    match report.status {
        crate::solver::SolverStatus::Optimal => "optimal",
        crate::solver::SolverStatus::MaxIterations => "max-iterations",
        crate::solver::SolverStatus::PrimalInfeasible => "primal-infeasible",
        crate::solver::SolverStatus::DualInfeasible => "dual-infeasible",
    }
}

fn push_params(out: &mut String, method: &Method, params: &Hyperparams) {
    match method {
        Method::Cr => {}
        Method::Lcr => {
            let _ = writeln!(out, "{:<16} {:.4}", "lipschitz", params.lipschitz.unwrap_or(f64::NAN));
        }
        Method::SvrLinear | Method::Csvr { .. } => {
            let _ = writeln!(out, "{:<16} {:.4}", "c", params.c);
            let _ = writeln!(out, "{:<16} {:.4}", "epsilon", params.epsilon);
        }
    }
}

/// Key-value fit summary: estimator, data size, solver diagnostics and the
/// in-sample error, floats at four decimal places.
pub fn fit_report(spec: &EstimatorSpec, model: &FittedModel, n: usize, in_mse: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {}", "method", model.method().name());
    let _ = writeln!(out, "{:<16} {}", "shape", model.shape());
    push_params(&mut out, model.method(), &spec.params);
    let _ = writeln!(out, "{:<16} {}", "observations", n);
    let _ = writeln!(out, "{:<16} {}", "covariates", model.dim());
    let report = model.report();
    let _ = writeln!(out, "{:<16} {}", "solver status", status_name(report));
    let _ = writeln!(out, "{:<16} {}", "iterations", report.iterations);
    let _ = writeln!(out, "{:<16} {:.4}", "objective", report.objective);
    let _ = writeln!(out, "{:<16} {:.4}", "in-sample mse", in_mse);
    out
}

fn opt_cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:>10.4}"),
        None => format!("{:>10}", "-"),
    }
}

/// Candidate-by-candidate cross-validation table with the winner starred,
/// floats at four decimal places.
pub fn cv_report(result: &CvResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "  {:>10} {:>10} {:>10} {:>10} {:>10}",
        "c", "epsilon", "lipschitz", "mean mse", "std err"
    );
    for (i, cand) in result.candidates.iter().enumerate() {
        let marker = if i == result.selected_index { '*' } else { ' ' };
        let (mean, se) = match &cand.score {
            Some(s) => (format!("{:>10.4}", s.mean_mse), format!("{:>10.4}", s.std_error)),
            None => (format!("{:>10}", "failed"), format!("{:>10}", "-")),
        };
        let _ = writeln!(
            out,
            "{marker} {:>10.4} {:>10.4} {} {mean} {se}",
            cand.params.c,
            cand.params.epsilon,
            opt_cell(cand.params.lipschitz),
        );
    }
    let sel = &result.selected;
    let _ = write!(out, "selected: c={:.4} epsilon={:.4}", sel.c, sel.epsilon);
    if let Some(l) = sel.lipschitz {
        let _ = write!(out, " lipschitz={l:.4}");
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{SolverStatus, SolverReport};

    fn report() -> SolverReport {
        SolverReport {
            status: SolverStatus::Optimal,
            iterations: 12,
            primal_residual: 0.0,
            dual_residual: 0.0,
            objective: -1.25,
        }
    }

    #[test]
    fn default_schema_reads_last_column_as_response() {
        let csv = "x1,x2,y\n1,2,3\n4,5,6\n";
        let (data, layout) = load_csv_reader(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!((data.n(), data.dim()), (2, 2));
        assert_eq!(data.y(), &[3.0, 6.0]);
        assert_eq!(layout.response, "y");
        assert_eq!(layout.features, vec!["x1", "x2"]);
        assert_eq!(layout.fingerprint(), "x1,x2 -> y");
    }

    #[test]
    fn named_response_and_features_resolve() {
        let csv = "a,b,c\n1,2,3\n4,5,6\n";
        let schema = CsvSchema::default()
            .with_response("b")
            .with_features(vec!["c".into(), "a".into()]);
        let (data, layout) = load_csv_reader(csv.as_bytes(), &schema).unwrap();
        assert_eq!(data.y(), &[2.0, 5.0]);
        // Feature order follows the schema list, not the file.
        assert_eq!(data.row(0), &[3.0, 1.0]);
        assert_eq!(layout.features, vec!["c", "a"]);
    }

    #[test]
    fn headerless_files_use_positional_names() {
        let csv = "1;2\n3;4\n";
        let schema = CsvSchema::default().headerless().with_delimiter(b';');
        let (data, layout) = load_csv_reader(csv.as_bytes(), &schema).unwrap();
        assert_eq!((data.n(), data.dim()), (2, 1));
        assert_eq!(layout.response, "#1");
        assert_eq!(layout.features, vec!["#0"]);
    }

    #[test]
    fn bad_cells_name_their_row_and_column() {
        let csv = "x,y\n1,2\n,3\n";
        let err = load_csv_reader(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3") && msg.contains("'x'"), "{msg}");

        let csv = "x,y\n1,2\n3,oops\n";
        let err = load_csv_reader(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");

        let csv = "x,y\n1,2,9\n";
        let err = load_csv_reader(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn header_only_file_is_an_error() {
        let err = load_csv_reader("x,y\n".as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(err.to_string().contains("no data rows"), "{err}");
    }

    #[test]
    fn overlapping_response_and_feature_rejected() {
        let csv = "x,y\n1,2\n";
        let schema = CsvSchema::default().with_response("y").with_features(vec!["y".into()]);
        assert!(load_csv_reader(csv.as_bytes(), &schema).is_err());
    }

    #[test]
    fn non_numeric_columns_drop_out_of_the_default_layout() {
        let csv = "id,x,y\nalpha,1,2\nbeta,3,4\n";
        let (data, layout) = load_csv_reader(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(data.dim(), 1);
        assert_eq!(layout.features, vec!["x"]);
    }

    fn grid_dataset(n: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Dataset::from_rows(rows, y).unwrap()
    }

    #[test]
    fn split_sizes_round_to_nearest() {
        let data = grid_dataset(506);
        let (train, test) = split(&data, 0.2, 7).unwrap();
        assert_eq!((train.n(), test.n()), (405, 101));

        // Every row lands on exactly one side.
        let mut seen: Vec<f64> = train.y().iter().chain(test.y()).cloned().collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..506).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let data = grid_dataset(10);
        let (a1, b1) = split(&data, 0.5, 3).unwrap();
        let (a2, b2) = split(&data, 0.5, 3).unwrap();
        assert_eq!(a1.y(), a2.y());
        assert_eq!(b1.y(), b2.y());
        let (a3, _) = split(&data, 0.5, 4).unwrap();
        assert_ne!(a1.y(), a3.y());
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let data = grid_dataset(10);
        assert!(split(&data, 0.0, 1).is_err());
        assert!(split(&data, 1.0, 1).is_err());
        assert!(split(&data, 0.01, 1).is_err()); // rounds to an empty test set
    }

    #[test]
    fn archive_round_trip_is_bitwise() {
        let model = FittedModel::new(
            vec![1.0 / 3.0, -2.0 / 7.0],
            vec![0.1 + 0.2, -1.0 / 9.0],
            1,
            Shape::concave(),
            Method::Cr,
            report(),
        );
        let spec = EstimatorSpec::new(Method::Cr, Shape::concave(), Hyperparams::default());
        let archive = ModelArchive::from_model(&model, &spec, 2).with_schema("x -> y".into());
        let json = archive.to_json().unwrap();
        let reloaded = ModelArchive::from_json(&json).unwrap().to_model().unwrap();
        for x in [-3.0, 0.0, 0.5, 11.0] {
            let a = model.predict(&[x]).unwrap();
            let b = reloaded.predict(&[x]).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn archive_rejects_inconsistent_coefficients() {
        let spec = EstimatorSpec::new(Method::Cr, Shape::concave(), Hyperparams::default());
        let model =
            FittedModel::new(vec![0.0], vec![1.0, 2.0], 2, Shape::concave(), Method::Cr, report());
        let mut archive = ModelArchive::from_model(&model, &spec, 1);
        archive.beta.pop();
        let json = serde_json::to_string(&archive).unwrap();
        assert!(ModelArchive::from_json(&json).is_err());
    }

    #[test]
    fn standardize_and_back_transform_agree() {
        let rows = vec![vec![1.0, 10.0], vec![2.0, 30.0], vec![4.0, 20.0], vec![6.0, 50.0]];
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let data = Dataset::from_rows(rows, y).unwrap();
        let (standardized, st) = standardize(&data).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = standardized.rows().map(|r| r[j]).collect();
            let mean: f64 = col.iter().sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-12);
        }

        // A hand-built model over standardized features must predict the
        // same values after the back-transform, evaluated on raw inputs.
        let model = FittedModel::new(
            vec![0.5, 1.5],
            vec![1.0, -0.5, 0.25, 2.0],
            2,
            Shape::concave(),
            Method::Cr,
            report(),
        );
        let raw_model = st.destandardize_model(&model).unwrap();
        for i in 0..data.n() {
            let z = st.apply(&data).unwrap();
            let a = model.predict(z.row(i)).unwrap();
            let b = raw_model.predict(data.row(i)).unwrap();
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn describe_summarizes_numeric_columns_only() {
        let csv = "name,v\nfoo,1\nbar,2\nbaz,3\n";
        let summaries = describe_reader(csv.as_bytes(), true, b',').unwrap();
        assert_eq!(summaries.len(), 1);
        let s = &summaries[0];
        assert_eq!(s.name, "v");
        assert_eq!(s.count, 3);
        assert!((s.mean - 2.0).abs() < 1e-12);
        assert!((s.std - 1.0).abs() < 1e-12);
        assert_eq!((s.min, s.max), (1.0, 3.0));

        let table = format_describe(&summaries);
        assert!(table.contains("2.00") && table.contains("1.00"), "{table}");
    }
}
