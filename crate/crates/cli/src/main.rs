//! Batch front end: fit a constrained sparse log-contrast model to CSV
//! data, run simulation cells into table/plot artifacts, or run design
//! diagnostics. Every output is a pure function of (inputs, flags, seed);
//! repeated runs produce byte-identical files.
//!
//! Exit codes: 0 success; 2 malformed input or refused enumeration
//! budget; 3 solver non-convergence or an aborted simulation cell.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use complasso::cdmm::{self, CdmmSettings};
use complasso::debias::{debias, QpSettings};
use complasso::diagnostics::{
    check_condition1, check_condition2, condition_report, ConditionReport, DiagnosticsOptions,
};
use complasso::inference::{confidence_intervals, select_by_ci};
use complasso::io::{
    self, CellId, FitSummary, PredictionRow, RegressionTable, SelectionRow,
};
use complasso::model::{
    build_constraints, clr_design, clr_design_with_covariates, ConstraintSet, RegressionProblem,
};
use complasso::sim::{run_experiment, ConstraintMode, SimConfig, SimReport};
use complasso::tuning::{lambda0, scaled_lasso, ScaledLassoSettings};
use complasso::{Error, Result};

#[derive(Parser)]
#[command(
    name = "complasso",
    version,
    about = "Sparse log-contrast regression with linear equality constraints",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for parallel sections (the RAYON_NUM_THREADS
    /// environment variable is honoured when this flag is absent).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a CSV of taxa, response and optional covariates,
    /// with interval-based inference and selection.
    Fit(FitArgs),
    /// Run synthetic experiment cells and write table/plot artifacts.
    Simulate(SimulateArgs),
    /// Check constraint and design conditions; write a JSON report.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV: header row, one `response` column, optional `sample`
    /// and `covariate:<name>` columns, remaining columns are taxa.
    #[arg(long)]
    input: PathBuf,

    /// Constraint groups: inline sizes like `10,6,4` or a path to a JSON
    /// spec (`{"group_sizes": [...]}` or `{"labels": [...]}`). Default is
    /// one zero-sum constraint over all taxa.
    #[arg(long)]
    groups: Option<String>,

    /// Pseudo-count replacing zero taxa values before the log transform
    /// (the bare flag uses 0.5).
    #[arg(long, num_args = 0..=1, default_missing_value = "0.5")]
    pseudo: Option<f64>,

    /// Nominal level for two-sided confidence intervals.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    /// Fixed penalty level; skips the scale-adaptive tuning loop.
    #[arg(long)]
    lambda: Option<f64>,

    /// Feasibility radius of the bias-correction programs
    /// (default: a third of the universal penalty λ₀).
    #[arg(long)]
    gamma: Option<f64>,

    /// Augmented-Lagrangian weight of the constraint solver.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,

    /// Random seed (reserved for future resampling extensions; the fit
    /// itself is deterministic).
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory for estimates.json, inference.csv, selection.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Predefined grid name; `paper` runs ζ ∈ {0.2, 0.5} × p ∈ {50, 100}
    /// × n ∈ {50, 100, 200, 500}.
    #[arg(long, conflicts_with = "cell")]
    grid: Option<String>,

    /// Single cell, e.g. `zeta=0.2,p=50,n=500`.
    #[arg(long)]
    cell: Option<String>,

    /// Replications per cell and constraint setting.
    #[arg(long, default_value_t = 100)]
    reps: usize,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Nominal level for the intervals scored inside each replication.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    /// Output directory for table1.csv, table2.csv, coverage.csv,
    /// lengths.csv and reports.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Optional CSV (same layout as `fit`); required for the restricted
    /// isometry/orthogonality constants.
    #[arg(long)]
    input: Option<PathBuf>,

    /// Constraint groups (inline sizes or JSON spec path). Default with
    /// --input is one zero-sum constraint over all taxa.
    #[arg(long)]
    groups: Option<String>,

    /// Pseudo-count for zero replacement when reading --input.
    #[arg(long, num_args = 0..=1, default_missing_value = "0.5")]
    pseudo: Option<f64>,

    /// Order for exact restricted-isometry constants (enumerative; large
    /// requests are refused, not approximated).
    #[arg(long)]
    rip_k: Option<usize>,

    /// Orders for the restricted orthogonality constant, e.g. `2,2`.
    #[arg(long)]
    roc: Option<String>,

    /// Output directory for conditions.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: could not configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Diagnose(args) => cmd_diagnose(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Exit 3 for solver-side failures, 2 for anything wrong with the input
/// or a refused request.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NonConvergence(_) | Error::Infeasible { .. } | Error::Singular(_) => 3,
        _ => 2,
    }
}

fn ensure_out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

/// Resolves --groups: inline comma-separated sizes, a JSON spec path, or
/// the single-constraint default.
fn resolve_constraints(groups: Option<&str>, p: usize) -> Result<ConstraintSet> {
    let sizes = match groups {
        None => vec![p],
        Some(text) if text.bytes().all(|b| b.is_ascii_digit() || b == b',' || b == b' ') => {
            io::parse_group_sizes(text)?
        }
        Some(path) => io::read_constraint_spec(path)?.to_group_sizes(p)?,
    };
    build_constraints(&sizes)
}

/// Builds the regression problem from parsed input, turning a zero-taxon
/// refusal into a line-numbered message with the remediation flag.
fn problem_from_table(
    table: &RegressionTable,
    groups: Option<&str>,
    pseudo: Option<f64>,
) -> Result<RegressionProblem> {
    let comp = match io::build_composition(table, pseudo) {
        Ok(comp) => comp,
        Err(Error::NonpositiveEntry { row, col }) if pseudo.is_none() => {
            return Err(Error::Parse {
                line: row + 2,
                msg: format!(
                    "taxon column {:?} has a zero value; pass --pseudo <count> \
                     (e.g. --pseudo 0.5) to impute zeros before the log transform",
                    table.taxa_names[col]
                ),
            });
        }
        Err(e) => return Err(e),
    };
    let constraints = resolve_constraints(groups, table.taxa_names.len())?;
    match &table.covariates {
        Some((values, names)) => clr_design_with_covariates(
            &comp,
            constraints,
            table.response.clone(),
            values.clone(),
            names.clone(),
        ),
        None => clr_design(&comp, constraints, table.response.clone()),
    }
}

fn cmd_fit(args: &FitArgs) -> Result<u8> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::InvalidInput(format!("--alpha must be in (0,1), got {}", args.alpha)));
    }
    ensure_out_dir(&args.out)?;
    let table = io::read_regression_csv(&args.input)?;
    let problem = problem_from_table(&table, args.groups.as_deref(), args.pseudo)?;
    let (n, p) = (problem.n(), problem.p());

    // Fit: scale-adaptive tuning by default, fixed penalty on request.
    let solver = CdmmSettings { mu: args.mu, ..CdmmSettings::default() };
    let universal = lambda0(n, p)?;
    let (fit, sigma, lambda, default_gamma, tuning_converged) = match args.lambda {
        Some(lambda) => {
            let fit = cdmm::fit(&problem, &CdmmSettings { lambda, ..solver })?;
            let fitted =
                problem.centered_fitted(&fit.coefficients.beta, &fit.coefficients.extra)?;
            let sigma = ((problem.response() - fitted).norm_squared() / n as f64).sqrt();
            (fit, sigma, lambda, universal / 3.0, true)
        }
        None => {
            let settings = ScaledLassoSettings { solver, ..ScaledLassoSettings::default() };
            let tuned = scaled_lasso(&problem, &settings)?;
            (tuned.fit, tuned.sigma, tuned.lambda, tuned.gamma, tuned.converged)
        }
    };
    let gamma = args.gamma.unwrap_or(default_gamma);
    let converged = fit.converged && tuning_converged;

    let mut notes = Vec::new();
    if !fit.converged {
        notes.push(
            "solver exhausted its iteration budget; estimates are partial and \
             downstream inference may be unreliable"
                .to_string(),
        );
    }
    if !tuning_converged {
        notes.push("the noise-scale iteration did not reach a fixed point".to_string());
    }
    let names = problem.component_ids().to_vec();
    let covariate_names: Vec<String> = table
        .covariates
        .as_ref()
        .map(|(_, names)| names.clone())
        .unwrap_or_default();
    let mut summary = FitSummary {
        schema_version: 1,
        n,
        p,
        taxa_names: names.clone(),
        beta: fit.coefficients.beta.iter().copied().collect(),
        covariate_names,
        covariate_coefficients: fit.coefficients.extra.iter().copied().collect(),
        sigma,
        lambda,
        lambda0: universal,
        gamma,
        mu: args.mu,
        alpha: args.alpha,
        converged,
        constraint_violation: fit.constraint_violation,
        notes,
    };

    let corrected = match debias(&problem, &fit, gamma, &QpSettings::with_gamma(gamma)) {
        Ok(result) => result,
        Err(err) => {
            summary.notes.push(format!("bias correction failed: {err}"));
            io::write_json(args.out.join("estimates.json"), &summary)?;
            eprintln!("wrote partial estimates.json (no inference outputs)");
            return Err(err);
        }
    };
    let inference = confidence_intervals(&corrected, sigma, args.alpha, n)?;
    let selected = select_by_ci(&inference);

    io::write_json(args.out.join("estimates.json"), &summary)?;
    io::write_inference_csv(args.out.join("inference.csv"), &inference, &names)?;
    io::write_selection(args.out.join("selection.txt"), &names, &selected)?;

    println!(
        "fit complete: n = {n}, p = {p}, noise scale {sigma:.4}, penalty {lambda:.4}, \
         {} of {p} coordinates selected",
        selected.len()
    );
    println!("wrote estimates.json, inference.csv, selection.txt to {}", args.out.display());
    if !converged {
        eprintln!("warning: solver did not converge; outputs are flagged as partial");
        return Ok(3);
    }
    Ok(0)
}

fn parse_cell(text: &str) -> Result<(f64, usize, usize)> {
    let (mut zeta, mut p, mut n) = (None, None, None);
    for piece in text.split(',') {
        let (key, value) = piece.split_once('=').ok_or_else(|| {
            Error::InvalidInput(format!("cell piece {piece:?} is not of the form key=value"))
        })?;
        let value = value.trim();
        match key.trim() {
            "zeta" => {
                zeta = Some(value.parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("cannot parse zeta value {value:?}"))
                })?)
            }
            "p" => {
                p = Some(value.parse::<usize>().map_err(|_| {
                    Error::InvalidInput(format!("cannot parse p value {value:?}"))
                })?)
            }
            "n" => {
                n = Some(value.parse::<usize>().map_err(|_| {
                    Error::InvalidInput(format!("cannot parse n value {value:?}"))
                })?)
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown cell key {other:?}; expected zeta, p, n"
                )))
            }
        }
    }
    match (zeta, p, n) {
        (Some(zeta), Some(p), Some(n)) => Ok((zeta, p, n)),
        _ => Err(Error::InvalidInput(
            "cell must specify all of zeta, p and n, e.g. zeta=0.2,p=50,n=500".into(),
        )),
    }
}

fn grid_cells(name: &str) -> Result<Vec<(f64, usize, usize)>> {
    match name {
        "paper" => {
            let mut cells = Vec::new();
            for &zeta in &[0.2, 0.5] {
                for &p in &[50, 100] {
                    for &n in &[50, 100, 200, 500] {
                        cells.push((zeta, p, n));
                    }
                }
            }
            Ok(cells)
        }
        other => Err(Error::InvalidInput(format!(
            "unknown grid {other:?}; the only predefined grid is \"paper\""
        ))),
    }
}

const TABLE_MODES: [ConstraintMode; 3] =
    [ConstraintMode::Multiple, ConstraintMode::One, ConstraintMode::None];

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let cells = match (&args.grid, &args.cell) {
        (Some(name), None) => grid_cells(name)?,
        (None, Some(cell)) => vec![parse_cell(cell)?],
        _ => {
            return Err(Error::InvalidInput(
                "specify exactly one of --grid or --cell".into(),
            ))
        }
    };
    ensure_out_dir(&args.out)?;

    let mut selection_rows = Vec::new();
    let mut prediction_rows = Vec::new();
    let mut coverage_cells: Vec<(CellId, SimReport)> = Vec::new();
    let mut reports = Vec::new();
    for &(zeta, p, n) in &cells {
        let mut tpr = [0.0; 3];
        let mut fpr = [0.0; 3];
        let mut pe_lasso = [0.0; 3];
        let mut pe_refit_lasso = [0.0; 3];
        let mut pe_refit_ci = [0.0; 3];
        for (m, &mode) in TABLE_MODES.iter().enumerate() {
            let mut config = SimConfig::new(p, n, zeta, args.seed, mode)?;
            config.n_reps = args.reps;
            config.alpha = args.alpha;
            eprintln!("running cell zeta={zeta}, p={p}, n={n}, constraints={mode} ...");
            let report = run_experiment(&config)?;
            if report.n_reps_failed > 0 {
                eprintln!(
                    "  {} of {} replications failed and were excluded",
                    report.n_reps_failed, args.reps
                );
            }
            tpr[m] = report.tpr;
            fpr[m] = report.fpr;
            pe_lasso[m] = report.pred_error.lasso;
            pe_refit_lasso[m] = report.pred_error.refit_lasso;
            pe_refit_ci[m] = report.pred_error.refit_ci;
            coverage_cells.push((CellId { zeta, p, n, mode }, report.clone()));
            reports.push(report);
        }
        selection_rows.push(SelectionRow {
            zeta,
            p,
            n,
            tpr_multiple: tpr[0],
            tpr_one: tpr[1],
            tpr_none: tpr[2],
            fpr_multiple: fpr[0],
            fpr_one: fpr[1],
            fpr_none: fpr[2],
        });
        prediction_rows.push(PredictionRow {
            zeta,
            p,
            n,
            lasso: pe_lasso,
            refit_lasso: pe_refit_lasso,
            refit_ci: pe_refit_ci,
        });
    }

    io::write_selection_table(args.out.join("table1.csv"), &selection_rows)?;
    io::write_prediction_table(args.out.join("table2.csv"), &prediction_rows)?;
    let borrowed: Vec<(CellId, &SimReport)> =
        coverage_cells.iter().map(|(cell, report)| (*cell, report)).collect();
    io::write_coverage_csv(args.out.join("coverage.csv"), &borrowed)?;
    io::write_lengths_csv(args.out.join("lengths.csv"), &borrowed)?;
    io::write_json(args.out.join("reports.json"), &reports)?;

    println!(
        "wrote table1.csv, table2.csv, coverage.csv, lengths.csv, reports.json to {}",
        args.out.display()
    );
    Ok(0)
}

fn parse_roc_orders(text: &str) -> Result<(usize, usize)> {
    let sizes = io::parse_group_sizes(text)?;
    match sizes.as_slice() {
        [k1, k2] => Ok((*k1, *k2)),
        _ => Err(Error::InvalidInput(format!(
            "--roc expects two comma-separated orders, got {text:?}"
        ))),
    }
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<u8> {
    ensure_out_dir(&args.out)?;
    let roc_orders = args.roc.as_deref().map(parse_roc_orders).transpose()?;

    let report = match &args.input {
        Some(path) => {
            let table = io::read_regression_csv(path)?;
            let problem = problem_from_table(&table, args.groups.as_deref(), args.pseudo)?;
            let options = DiagnosticsOptions {
                rip_k: args.rip_k,
                roc_orders,
                ..DiagnosticsOptions::default()
            };
            condition_report(&problem, &options)?
        }
        None => {
            let groups = args.groups.as_deref().ok_or_else(|| {
                Error::InvalidInput("diagnose needs --groups, --input, or both".into())
            })?;
            if args.rip_k.is_some() || roc_orders.is_some() {
                return Err(Error::InvalidInput(
                    "restricted constants need design data; pass --input".into(),
                ));
            }
            let sizes = match io::parse_group_sizes(groups) {
                Ok(sizes) => sizes,
                Err(_) => match io::read_constraint_spec(groups)? {
                    io::ConstraintSpec::GroupSizes { group_sizes } => group_sizes,
                    io::ConstraintSpec::Labels { .. } => {
                        return Err(Error::InvalidInput(
                            "label specs need --input to determine the number of taxa; \
                             use explicit group sizes"
                                .into(),
                        ))
                    }
                },
            };
            let constraints = build_constraints(&sizes)?;
            ConditionReport {
                schema_version: 1,
                k0_observed: check_condition1(&constraints),
                cond2_min_diag: check_condition2(&constraints)?,
                rip_k: None,
                rip_lower: None,
                rip_upper: None,
                roc_orders: None,
                roc_theta: None,
                eigen_bounds: None,
                kappa_proxy: None,
                notes: vec![
                    "no design supplied; restricted constants and the sub-Gaussian proxy \
                     are unavailable"
                        .into(),
                ],
            }
        }
    };

    io::write_json(args.out.join("conditions.json"), &report)?;
    println!(
        "complement projector norm {:.6}, smallest free diagonal {:.6}",
        report.k0_observed, report.cond2_min_diag
    );
    println!("wrote conditions.json to {}", args.out.display());
    Ok(0)
}
