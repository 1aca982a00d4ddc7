//! Tabular input parsing and deterministic artifact writers.
//!
//! Input CSV layout (header required, line 1): an optional `sample`
//! column of row labels, exactly one `response` column, any number of
//! `covariate:<name>` columns, and every remaining column a taxon of the
//! composition. All parse errors carry 1-based line numbers counting the
//! header.
//!
//! Writers format floats with the shortest round-tripping representation,
//! so equally-seeded runs produce byte-identical artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::InferenceResult;
use crate::model::{replace_zeros, CompositionMatrix};
use crate::sim::{ConstraintMode, SimReport, SummaryStats};

/// Parsed regression input: raw taxa values (possibly containing zeros),
/// the response, and optional extra covariates.
#[derive(Debug, Clone)]
pub struct RegressionTable {
    pub taxa: DMatrix<f64>,
    pub taxa_names: Vec<String>,
    pub sample_ids: Vec<String>,
    pub response: DVector<f64>,
    pub covariates: Option<(DMatrix<f64>, Vec<String>)>,
}

fn parse_error(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn csv_line(err: &csv::Error, fallback: usize) -> usize {
    err.position().map(|p| p.line() as usize).unwrap_or(fallback)
}

/// Reads the regression CSV from a file.
pub fn read_regression_csv(path: impl AsRef<Path>) -> Result<RegressionTable> {
    let file = fs::File::open(path.as_ref())?;
    parse_regression_csv(file)
}

/// Parses the regression CSV from any reader. See the module docs for
/// the column conventions.
pub fn parse_regression_csv(reader: impl std::io::Read) -> Result<RegressionTable> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = csv_reader.records();

    let header = match records.next() {
        Some(Ok(record)) => record,
        Some(Err(err)) => return Err(parse_error(csv_line(&err, 1), err.to_string())),
        None => return Err(parse_error(1, "input is empty; expected a header row")),
    };

    #[derive(Clone, Copy, PartialEq)]
    enum Kind {
        Sample,
        Response,
        Covariate,
        Taxon,
    }
    let mut kinds = Vec::with_capacity(header.len());
    let mut taxa_names = Vec::new();
    let mut covariate_names = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw_name) in header.iter().enumerate() {
        let name = raw_name.trim();
        if name.is_empty() {
            return Err(parse_error(1, format!("column {} has an empty name", idx + 1)));
        }
        if !seen.insert(name.to_string()) {
            return Err(parse_error(1, format!("duplicate column name {name:?}")));
        }
        let kind = if name.eq_ignore_ascii_case("sample") {
            Kind::Sample
        } else if name.eq_ignore_ascii_case("response") {
            Kind::Response
        } else if let Some(rest) = name.strip_prefix("covariate:") {
            let rest = rest.trim();
            if rest.is_empty() {
                return Err(parse_error(1, format!("column {} has an empty covariate name", idx + 1)));
            }
            covariate_names.push(rest.to_string());
            Kind::Covariate
        } else {
            taxa_names.push(name.to_string());
            Kind::Taxon
        };
        kinds.push(kind);
    }
    let n_response = kinds.iter().filter(|k| **k == Kind::Response).count();
    if n_response != 1 {
        return Err(parse_error(
            1,
            format!("expected exactly one 'response' column, found {n_response}"),
        ));
    }
    if kinds.iter().filter(|k| **k == Kind::Sample).count() > 1 {
        return Err(parse_error(1, "more than one 'sample' column".to_string()));
    }
    if taxa_names.len() < 2 {
        return Err(parse_error(
            1,
            format!("need at least 2 taxa columns, found {}", taxa_names.len()),
        ));
    }

    let mut taxa_rows: Vec<Vec<f64>> = Vec::new();
    let mut covariate_rows: Vec<Vec<f64>> = Vec::new();
    let mut response = Vec::new();
    let mut sample_ids = Vec::new();
    let mut line = 1;
    for record in records {
        let record = match record {
            Ok(r) => r,
            Err(err) => return Err(parse_error(csv_line(&err, line + 1), err.to_string())),
        };
        line += 1;
        if record.len() != kinds.len() {
            return Err(parse_error(
                line,
                format!("row has {} fields, header has {}", record.len(), kinds.len()),
            ));
        }
        let mut taxa_row = Vec::with_capacity(taxa_names.len());
        let mut covariate_row = Vec::with_capacity(covariate_names.len());
        let mut sample_id = None;
        for (idx, field) in record.iter().enumerate() {
            match kinds[idx] {
                Kind::Sample => sample_id = Some(field.trim().to_string()),
                kind => {
                    let value: f64 = field.trim().parse().map_err(|_| {
                        parse_error(
                            line,
                            format!(
                                "column {:?}: cannot parse {field:?} as a number",
                                header.get(idx).unwrap_or("")
                            ),
                        )
                    })?;
                    if !value.is_finite() {
                        return Err(parse_error(
                            line,
                            format!("column {:?}: non-finite value", header.get(idx).unwrap_or("")),
                        ));
                    }
                    match kind {
                        Kind::Response => response.push(value),
                        Kind::Covariate => covariate_row.push(value),
                        Kind::Taxon => taxa_row.push(value),
                        Kind::Sample => unreachable!(),
                    }
                }
            }
        }
        sample_ids.push(sample_id.unwrap_or_else(|| format!("sample_{}", line - 2)));
        taxa_rows.push(taxa_row);
        covariate_rows.push(covariate_row);
    }
    if taxa_rows.is_empty() {
        return Err(parse_error(line + 1, "no data rows after the header"));
    }

    let n = taxa_rows.len();
    let taxa = DMatrix::from_fn(n, taxa_names.len(), |i, j| taxa_rows[i][j]);
    let covariates = if covariate_names.is_empty() {
        None
    } else {
        Some((
            DMatrix::from_fn(n, covariate_names.len(), |i, j| covariate_rows[i][j]),
            covariate_names,
        ))
    };
    Ok(RegressionTable {
        taxa,
        taxa_names,
        sample_ids,
        response: DVector::from_vec(response),
        covariates,
    })
}

/// Closes raw taxa values to compositions. Zeros require a pseudo-count;
/// without one the offending cell is reported so the caller can point at
/// the input line.
pub fn build_composition(
    table: &RegressionTable,
    pseudo: Option<f64>,
) -> Result<CompositionMatrix> {
    let closed = match pseudo {
        Some(pseudo) => replace_zeros(&table.taxa, pseudo)?,
        None => {
            for i in 0..table.taxa.nrows() {
                for j in 0..table.taxa.ncols() {
                    if table.taxa[(i, j)] == 0.0 {
                        return Err(Error::NonpositiveEntry { row: i, col: j });
                    }
                }
            }
            // No zeros: any pseudo-count is inert, so reuse the same
            // validation and closure path.
            replace_zeros(&table.taxa, 1.0)?
        }
    };
    CompositionMatrix::with_ids(
        closed.values().clone(),
        table.sample_ids.clone(),
        table.taxa_names.clone(),
    )
}

/// Constraint groups supplied as explicit sizes or as per-column labels
/// (labels must form contiguous runs).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstraintSpec {
    GroupSizes { group_sizes: Vec<usize> },
    Labels { labels: Vec<String> },
}

impl ConstraintSpec {
    /// Converts to group sizes for `p` columns, validating coverage.
    pub fn to_group_sizes(&self, p: usize) -> Result<Vec<usize>> {
        match self {
            ConstraintSpec::GroupSizes { group_sizes } => {
                let total: usize = group_sizes.iter().sum();
                if total != p {
                    return Err(Error::InvalidInput(format!(
                        "group sizes sum to {total}, but the data has {p} taxa"
                    )));
                }
                Ok(group_sizes.clone())
            }
            ConstraintSpec::Labels { labels } => {
                if labels.len() != p {
                    return Err(Error::InvalidInput(format!(
                        "{} labels for {p} taxa",
                        labels.len()
                    )));
                }
                let mut sizes = Vec::new();
                let mut finished: Vec<&String> = Vec::new();
                let mut current: Option<(&String, usize)> = None;
                for label in labels {
                    match current {
                        Some((name, count)) if name == label => current = Some((name, count + 1)),
                        Some((name, count)) => {
                            if finished.contains(&label) {
                                return Err(Error::InvalidInput(format!(
                                    "label {label:?} appears in non-contiguous runs; \
                                     group members must be adjacent columns"
                                )));
                            }
                            finished.push(name);
                            sizes.push(count);
                            current = Some((label, 1));
                        }
                        None => current = Some((label, 1)),
                    }
                }
                if let Some((_, count)) = current {
                    sizes.push(count);
                }
                Ok(sizes)
            }
        }
    }
}

/// Reads a [`ConstraintSpec`] from a JSON file.
pub fn read_constraint_spec(path: impl AsRef<Path>) -> Result<ConstraintSpec> {
    let text = fs::read_to_string(path.as_ref())?;
    serde_json::from_str(&text).map_err(|e| {
        parse_error(e.line(), format!("constraint spec: {e}"))
    })
}

/// Parses inline comma-separated group sizes like `"10,6,4"`.
pub fn parse_group_sizes(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|piece| {
            piece.trim().parse::<usize>().map_err(|_| {
                Error::InvalidInput(format!("cannot parse group size {:?}", piece.trim()))
            })
        })
        .collect()
}

/// Fitted-model artifact (`estimates.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub schema_version: u32,
    pub n: usize,
    pub p: usize,
    pub taxa_names: Vec<String>,
    pub beta: Vec<f64>,
    pub covariate_names: Vec<String>,
    pub covariate_coefficients: Vec<f64>,
    pub sigma: f64,
    pub lambda: f64,
    pub lambda0: f64,
    pub gamma: f64,
    pub mu: f64,
    pub alpha: f64,
    pub converged: bool,
    pub constraint_violation: f64,
    pub notes: Vec<String>,
}

/// Serialises any artifact as pretty-printed JSON with a trailing
/// newline.
pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("serialisation failed: {e}")))?;
    text.push('\n');
    fs::write(path.as_ref(), text)?;
    Ok(())
}

/// Names are embedded verbatim in line-oriented artifacts, so separator
/// characters inside them would corrupt the files.
fn check_artifact_name(name: &str) -> Result<()> {
    if name.contains([',', '\n', '\r', '"']) {
        return Err(Error::InvalidInput(format!(
            "name {name:?} contains a separator character and cannot be written verbatim"
        )));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| parse_error(line, format!("cannot parse {what} from {field:?}")))
}

/// Splits a data line into exactly `count` comma-separated fields.
fn split_fields(text: &str, count: usize, line: usize) -> Result<Vec<&str>> {
    let fields: Vec<&str> = text.split(',').collect();
    if fields.len() != count {
        return Err(parse_error(
            line,
            format!("expected {count} fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

fn check_header(text: Option<&str>, expected: &str) -> Result<()> {
    match text {
        Some(found) if found == expected => Ok(()),
        Some(found) => Err(parse_error(1, format!("header {found:?}, expected {expected:?}"))),
        None => Err(parse_error(1, "empty file".to_string())),
    }
}

/// Writes `inference.csv`: one row per coordinate with the interval and
/// p-value (empty field when degenerate).
pub fn write_inference_csv(
    path: impl AsRef<Path>,
    inference: &InferenceResult,
    names: &[String],
) -> Result<()> {
    if names.len() != inference.coordinates.len() {
        return Err(Error::InvalidInput(format!(
            "{} names for {} coordinates",
            names.len(),
            inference.coordinates.len()
        )));
    }
    let mut text = String::from("name,estimate,std_err,ci_lower,ci_upper,p_value\n");
    for (name, c) in names.iter().zip(&inference.coordinates) {
        check_artifact_name(name)?;
        let p_value = c.p_value.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            text,
            "{name},{},{},{},{},{p_value}",
            c.estimate, c.std_err, c.ci_lower, c.ci_upper
        );
    }
    fs::write(path.as_ref(), text)?;
    Ok(())
}

/// One parsed row of `inference.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceRow {
    pub name: String,
    pub estimate: f64,
    pub std_err: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: Option<f64>,
}

/// Reads `inference.csv` back.
pub fn read_inference_csv(path: impl AsRef<Path>) -> Result<Vec<InferenceRow>> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    check_header(lines.next(), "name,estimate,std_err,ci_lower,ci_upper,p_value")?;
    let mut rows = Vec::new();
    for (offset, row) in lines.enumerate() {
        let line = offset + 2;
        let fields = split_fields(row, 6, line)?;
        rows.push(InferenceRow {
            name: fields[0].to_string(),
            estimate: parse_field(fields[1], line, "estimate")?,
            std_err: parse_field(fields[2], line, "std_err")?,
            ci_lower: parse_field(fields[3], line, "ci_lower")?,
            ci_upper: parse_field(fields[4], line, "ci_upper")?,
            p_value: if fields[5].is_empty() {
                None
            } else {
                Some(parse_field(fields[5], line, "p_value")?)
            },
        });
    }
    Ok(rows)
}

/// Writes `selection.txt`: one selected name per line.
pub fn write_selection(
    path: impl AsRef<Path>,
    names: &[String],
    selected: &[usize],
) -> Result<()> {
    let mut text = String::new();
    for &j in selected {
        let name = names.get(j).ok_or_else(|| {
            Error::InvalidInput(format!("selected index {j} out of range for {} names", names.len()))
        })?;
        check_artifact_name(name)?;
        text.push_str(name);
        text.push('\n');
    }
    fs::write(path.as_ref(), text)?;
    Ok(())
}

/// Reads `selection.txt` back.
pub fn read_selection(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = fs::read_to_string(path.as_ref())?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

/// Identifies one experimental cell in aggregate tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellId {
    pub zeta: f64,
    pub p: usize,
    pub n: usize,
    pub mode: ConstraintMode,
}

/// Across-replication summary of the 0/1 coverage indicator, recovered
/// from the stored empirical probability and replication count.
fn indicator_stats(probability: f64, reps: usize) -> SummaryStats {
    let hits = (probability * reps as f64).round() as usize;
    let median = match (2 * hits).cmp(&reps) {
        std::cmp::Ordering::Greater => 1.0,
        std::cmp::Ordering::Less => 0.0,
        std::cmp::Ordering::Equal => 0.5,
    };
    SummaryStats {
        min: if hits == reps { 1.0 } else { 0.0 },
        median,
        mean: probability,
        max: if hits == 0 { 0.0 } else { 1.0 },
    }
}

fn stats_csv(header: &str, rows: &[(CellId, Vec<SummaryStats>)]) -> String {
    let mut text = String::from(header);
    text.push('\n');
    for (cell, stats) in rows {
        for (j, s) in stats.iter().enumerate() {
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{},{},{}",
                cell.zeta, cell.p, cell.n, cell.mode, j, s.min, s.median, s.mean, s.max
            );
        }
    }
    text
}

/// Writes `coverage.csv`: per-cell, per-coordinate summary of the
/// coverage indicator across replications.
pub fn write_coverage_csv(
    path: impl AsRef<Path>,
    cells: &[(CellId, &SimReport)],
) -> Result<()> {
    let rows: Vec<(CellId, Vec<SummaryStats>)> = cells
        .iter()
        .map(|(cell, report)| {
            let stats = report
                .coverage_per_coordinate
                .iter()
                .map(|&prob| indicator_stats(prob, report.n_reps_completed))
                .collect();
            (*cell, stats)
        })
        .collect();
    fs::write(
        path.as_ref(),
        stats_csv("zeta,p,n,mode,coordinate,min,median,mean,max", &rows),
    )?;
    Ok(())
}

/// Writes `lengths.csv`: per-cell, per-coordinate interval-length spread
/// across replications.
pub fn write_lengths_csv(path: impl AsRef<Path>, cells: &[(CellId, &SimReport)]) -> Result<()> {
    let rows: Vec<(CellId, Vec<SummaryStats>)> = cells
        .iter()
        .map(|(cell, report)| (*cell, report.length_per_coordinate.clone()))
        .collect();
    fs::write(
        path.as_ref(),
        stats_csv("zeta,p,n,mode,coordinate,min,median,mean,max", &rows),
    )?;
    Ok(())
}

/// One parsed row of `coverage.csv` or `lengths.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: CellId,
    pub coordinate: usize,
    pub stats: SummaryStats,
}

/// Reads `coverage.csv` / `lengths.csv` back (both share one layout).
pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    check_header(lines.next(), "zeta,p,n,mode,coordinate,min,median,mean,max")?;
    let mut rows = Vec::new();
    for (offset, row) in lines.enumerate() {
        let line = offset + 2;
        let fields = split_fields(row, 9, line)?;
        rows.push(SummaryRow {
            cell: CellId {
                zeta: parse_field(fields[0], line, "zeta")?,
                p: parse_field(fields[1], line, "p")?,
                n: parse_field(fields[2], line, "n")?,
                mode: parse_field(fields[3], line, "mode")?,
            },
            coordinate: parse_field(fields[4], line, "coordinate")?,
            stats: SummaryStats {
                min: parse_field(fields[5], line, "min")?,
                median: parse_field(fields[6], line, "median")?,
                mean: parse_field(fields[7], line, "mean")?,
                max: parse_field(fields[8], line, "max")?,
            },
        });
    }
    Ok(rows)
}

/// One row of the selection table: TPR/FPR for the three constraint
/// settings of a `(ζ, p, n)` cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionRow {
    pub zeta: f64,
    pub p: usize,
    pub n: usize,
    pub tpr_multiple: f64,
    pub tpr_one: f64,
    pub tpr_none: f64,
    pub fpr_multiple: f64,
    pub fpr_one: f64,
    pub fpr_none: f64,
}

/// Writes `table1.csv` (selection rates per cell and constraint setting).
pub fn write_selection_table(path: impl AsRef<Path>, rows: &[SelectionRow]) -> Result<()> {
    let mut text = String::from(
        "zeta,p,n,tpr_multiple,tpr_one,tpr_none,fpr_multiple,fpr_one,fpr_none\n",
    );
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{}",
            r.zeta,
            r.p,
            r.n,
            r.tpr_multiple,
            r.tpr_one,
            r.tpr_none,
            r.fpr_multiple,
            r.fpr_one,
            r.fpr_none
        );
    }
    fs::write(path.as_ref(), text)?;
    Ok(())
}

/// One row of the prediction table: mean test error of the three
/// estimators under the three constraint settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRow {
    pub zeta: f64,
    pub p: usize,
    pub n: usize,
    /// `[multiple, one, none]` per estimator.
    pub lasso: [f64; 3],
    pub refit_lasso: [f64; 3],
    pub refit_ci: [f64; 3],
}

/// Writes `table2.csv` (prediction errors per cell, estimator and
/// constraint setting).
pub fn write_prediction_table(path: impl AsRef<Path>, rows: &[PredictionRow]) -> Result<()> {
    let mut text = String::from(
        "zeta,p,n,lasso_multiple,lasso_one,lasso_none,\
         refit_lasso_multiple,refit_lasso_one,refit_lasso_none,\
         refit_ci_multiple,refit_ci_one,refit_ci_none\n",
    );
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.zeta,
            r.p,
            r.n,
            r.lasso[0],
            r.lasso[1],
            r.lasso[2],
            r.refit_lasso[0],
            r.refit_lasso[1],
            r.refit_lasso[2],
            r.refit_ci[0],
            r.refit_ci[1],
            r.refit_ci[2]
        );
    }
    fs::write(path.as_ref(), text)?;
    Ok(())
}

/// Reads `table1.csv` back.
pub fn read_selection_table(path: impl AsRef<Path>) -> Result<Vec<SelectionRow>> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    check_header(
        lines.next(),
        "zeta,p,n,tpr_multiple,tpr_one,tpr_none,fpr_multiple,fpr_one,fpr_none",
    )?;
    let mut rows = Vec::new();
    for (offset, row) in lines.enumerate() {
        let line = offset + 2;
        let fields = split_fields(row, 9, line)?;
        rows.push(SelectionRow {
            zeta: parse_field(fields[0], line, "zeta")?,
            p: parse_field(fields[1], line, "p")?,
            n: parse_field(fields[2], line, "n")?,
            tpr_multiple: parse_field(fields[3], line, "tpr_multiple")?,
            tpr_one: parse_field(fields[4], line, "tpr_one")?,
            tpr_none: parse_field(fields[5], line, "tpr_none")?,
            fpr_multiple: parse_field(fields[6], line, "fpr_multiple")?,
            fpr_one: parse_field(fields[7], line, "fpr_one")?,
            fpr_none: parse_field(fields[8], line, "fpr_none")?,
        });
    }
    Ok(rows)
}

/// Reads `table2.csv` back.
pub fn read_prediction_table(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    check_header(
        lines.next(),
        "zeta,p,n,lasso_multiple,lasso_one,lasso_none,refit_lasso_multiple,refit_lasso_one,\
         refit_lasso_none,refit_ci_multiple,refit_ci_one,refit_ci_none",
    )?;
    let mut rows = Vec::new();
    for (offset, row) in lines.enumerate() {
        let line = offset + 2;
        let fields = split_fields(row, 12, line)?;
        let triple = |at: usize, what: [&str; 3]| -> Result<[f64; 3]> {
            Ok([
                parse_field(fields[at], line, what[0])?,
                parse_field(fields[at + 1], line, what[1])?,
                parse_field(fields[at + 2], line, what[2])?,
            ])
        };
        rows.push(PredictionRow {
            zeta: parse_field(fields[0], line, "zeta")?,
            p: parse_field(fields[1], line, "p")?,
            n: parse_field(fields[2], line, "n")?,
            lasso: triple(3, ["lasso_multiple", "lasso_one", "lasso_none"])?,
            refit_lasso: triple(
                6,
                ["refit_lasso_multiple", "refit_lasso_one", "refit_lasso_none"],
            )?,
            refit_ci: triple(9, ["refit_ci_multiple", "refit_ci_one", "refit_ci_none"])?,
        });
    }
    Ok(rows)
}
