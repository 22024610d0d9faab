//! `hdht`: two-sample homogeneity tests for high-dimensional linear
//! regression and Gaussian graphical models.
//!
//! Exit codes: 0 accept (or success), 10 reject, 2 usage or input error,
//! 1 internal failure or failed self-check.

mod csvio;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdht_core::calibrate::StatisticKind;
use hdht_core::collections::{CollectionKind, LassoOptions};
use hdht_core::engine::{run_test, Calibration, TestConfig};
use hdht_core::ggm::{ggm_test, GgmSamples};
use hdht_core::simulate::{
    format_level_table, run_experiment, CovarianceSpec, ExperimentGrid, ExperimentOptions, Method, ResultRow,
    ScenarioId,
};
use hdht_core::validate::{run_validation, Fault, ValidateOptions};
use hdht_core::{Error, TwoSampleData};
use serde_json::Value;

const EXIT_ACCEPT: u8 = 0;
const EXIT_FAILURE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_REJECT: u8 = 10;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Io(_) => EXIT_FAILURE,
            CliError::Core(e) => match e {
                Error::DimensionMismatch(_)
                | Error::TooFewObservations { .. }
                | Error::InvalidParameter(_)
                | Error::NonFinite(_)
                | Error::SubsetTooLarge { .. }
                | Error::EmptySubset
                | Error::BudgetExceeded { .. }
                | Error::MissingThreshold(_) => EXIT_INPUT,
                _ => EXIT_FAILURE,
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "hdht", version, about = "Two-sample tests for high-dimensional regression")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "HDHT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test whether two regression samples share the same law.
    Test(TestArgs),
    /// Compare two Gaussian graphical models node by node.
    Ggm(GgmArgs),
    /// Run a Monte-Carlo experiment and write a results table.
    Simulate(SimulateArgs),
    /// Run the fast invariant self-check.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CalibrationArg {
    Permutation,
    Bonferroni,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StatisticArg {
    Suggested,
    Fisher,
}

#[derive(Args, Debug)]
struct TestFlags {
    /// Overall level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = CalibrationArg::Permutation)]
    calibration: CalibrationArg,
    /// Number of permutations.
    #[arg(long, default_value_t = 100)]
    b: usize,
    /// Model collection: `lasso`, `s1` or `s<k>`.
    #[arg(long, default_value = "lasso", value_parser = parse_collection)]
    collection: CollectionKind,
    #[arg(long, value_enum, default_value_t = StatisticArg::Suggested)]
    statistic: StatisticArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest subset size of the Lasso collection (default ⌊min(n1, n2)/2⌋).
    #[arg(long)]
    d_max: Option<usize>,
    /// Rescale the joint design to unit column norms before the Lasso path.
    #[arg(long)]
    standardize: bool,
}

impl TestFlags {
    fn config(&self) -> TestConfig {
        TestConfig {
            collection_kind: self.collection,
            calibration: match self.calibration {
                CalibrationArg::Permutation => Calibration::Permutation { b: self.b },
                CalibrationArg::Bonferroni => Calibration::Bonferroni,
            },
            alpha: self.alpha,
            seed: self.seed,
            d_max: self.d_max,
            statistic: match self.statistic {
                StatisticArg::Suggested => StatisticKind::Suggested,
                StatisticArg::Fisher => StatisticKind::Fisher,
            },
            lasso: LassoOptions { standardize: self.standardize },
            ..TestConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct TestArgs {
    #[arg(long)]
    x1: PathBuf,
    #[arg(long)]
    y1: PathBuf,
    #[arg(long)]
    x2: PathBuf,
    #[arg(long)]
    y2: PathBuf,
    /// Output directory; the report is written to `report.json`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TestFlags,
}

#[derive(Args, Debug)]
struct GgmArgs {
    #[arg(long)]
    z1: PathBuf,
    #[arg(long)]
    z2: PathBuf,
    /// Output directory; the report is written to `ggm_report.json`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TestFlags,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Output directory; results go to `results.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Scenarios: H00, H0, 1, 2, 3, 4.
    #[arg(long, value_delimiter = ',', default_value = "H00")]
    scenario: Vec<ScenarioId>,
    /// Covariances: identity, power_decay[:rho[:fixed]], clustered_ggm[:intra[:extra[:clusters]]].
    #[arg(long, value_delimiter = ',', default_value = "identity")]
    covariance: Vec<CovarianceSpec>,
    #[arg(long, value_delimiter = ',', default_value = "25")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    p: usize,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    r: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 100)]
    b: usize,
    /// Methods such as perm-lasso, bonf-s1, fisher-perm-lasso, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "perm-lasso")]
    method: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Level study at full scale: H00, identity, n ∈ {25, 50, 100}, p = 200,
    /// 1000 replications, all methods; prints the level table.
    #[arg(long)]
    full_scale: bool,
    /// Also write the first replication of every cell as CSV files.
    #[arg(long)]
    emit_dataset: bool,
    /// Fill the mean_runtime_ms column (makes the output machine dependent).
    #[arg(long)]
    record_timing: bool,
    /// Omit the CSV header line.
    #[arg(long)]
    no_header: bool,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, default_value_t = ValidateOptions::default().seed)]
    seed: u64,
    /// Optional directory for `validation.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Corrupt a checked quantity: `statistic:<offset>` or `bound:<scale>`.
    #[arg(long, hide = true, value_parser = parse_fault)]
    inject_fault: Option<Fault>,
}

fn parse_collection(s: &str) -> Result<CollectionKind, String> {
    match s {
        "lasso" => Ok(CollectionKind::Lasso),
        "s1" => Ok(CollectionKind::S1),
        other => other
            .strip_prefix('s')
            .and_then(|k| k.parse().ok())
            .filter(|&k| k > 0)
            .map(CollectionKind::SleqK)
            .ok_or_else(|| format!("unknown collection '{other}'")),
    }
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    let (kind, value) = s.split_once(':').ok_or("expected kind:value")?;
    let v: f64 = value.parse().map_err(|_| format!("bad number '{value}'"))?;
    match kind {
        "statistic" => Ok(Fault::StatisticOffset(v)),
        "bound" => Ok(Fault::BoundScale(v)),
        _ => Err(format!("unknown fault '{kind}'")),
    }
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn path_names(paths: &[&Path]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn cmd_test(args: &TestArgs) -> Result<u8, CliError> {
    let x1 = csvio::read_matrix(&args.x1)?;
    let y1 = csvio::read_vector(&args.y1)?;
    let x2 = csvio::read_matrix(&args.x2)?;
    let y2 = csvio::read_vector(&args.y2)?;
    let check_rows = |x: &csvio::Table, y: &hdht_core::numkit::Vector, xp: &Path, yp: &Path| {
        if x.values.nrows() != y.len() {
            return Err(CliError::Input(format!(
                "{} has {} rows but {} has {}",
                yp.display(),
                y.len(),
                xp.display(),
                x.values.nrows()
            )));
        }
        Ok(())
    };
    check_rows(&x1, &y1, &args.x1, &args.y1)?;
    check_rows(&x2, &y2, &args.x2, &args.y2)?;
    if x1.values.ncols() != x2.values.ncols() {
        return Err(CliError::Input(format!(
            "{} has {} columns but {} has {}",
            args.x2.display(),
            x2.values.ncols(),
            args.x1.display(),
            x1.values.ncols()
        )));
    }
    let labels = x1.header.clone();
    let data = TwoSampleData::new(x1.values, y1, x2.values, y2)?;
    let result = run_test(&data, &args.flags.config())?;
    prepare_out(&args.out)?;
    let inputs = path_names(&[&args.x1, &args.y1, &args.x2, &args.y2]);
    write_json(&args.out.join("report.json"), &report::test_report(&result, &inputs, labels.as_deref()))?;
    println!(
        "{} (empirical p-value {})",
        if result.reject { "reject" } else { "accept" },
        result.empirical_p.map_or("n/a".into(), |p| p.to_string())
    );
    Ok(if result.reject { EXIT_REJECT } else { EXIT_ACCEPT })
}

fn cmd_ggm(args: &GgmArgs) -> Result<u8, CliError> {
    let z1 = csvio::read_matrix(&args.z1)?;
    let z2 = csvio::read_matrix(&args.z2)?;
    if z1.values.ncols() != z2.values.ncols() {
        return Err(CliError::Input(format!(
            "{} has {} columns but {} has {}",
            args.z2.display(),
            z2.values.ncols(),
            args.z1.display(),
            z1.values.ncols()
        )));
    }
    if z1.values.ncols() < 2 {
        return Err(CliError::Input("at least two nodes are required".into()));
    }
    let labels: Vec<String> =
        z1.header.clone().unwrap_or_else(|| (1..=z1.values.ncols()).map(|i| format!("v{i}")).collect());
    let samples = GgmSamples::new(z1.values, z2.values)?;
    let result = ggm_test(&samples, &args.flags.config())?;
    prepare_out(&args.out)?;
    let inputs = path_names(&[&args.z1, &args.z2]);
    write_json(&args.out.join("ggm_report.json"), &report::ggm_report(&result, &inputs, &labels))?;
    println!(
        "{}; flagged nodes: {:?}",
        if result.global_reject { "reject" } else { "accept" },
        result.flagged_nodes.iter().map(|&i| labels[i].as_str()).collect::<Vec<_>>()
    );
    Ok(if result.global_reject { EXIT_REJECT } else { EXIT_ACCEPT })
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, CliError> {
    if names.iter().any(|m| m == "all") {
        return Ok(Method::all());
    }
    names.iter().map(|m| m.parse().map_err(CliError::Core)).collect()
}

fn results_csv(rows: &[ResultRow], header: bool) -> Result<String, CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    if rows.is_empty() && header {
        w.write_record([
            "scenario",
            "covariance",
            "n",
            "p",
            "r",
            "method",
            "reps",
            "reject_rate",
            "ci_half_width",
            "mean_runtime_ms",
        ])
        .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8, CliError> {
    let (grid, methods) = if args.full_scale {
        let grid = ExperimentGrid::product(
            &[ScenarioId::H00],
            &[CovarianceSpec::Identity],
            &[25, 50, 100],
            200,
            &[0.0],
            1000,
            args.b,
        );
        (grid, Method::all())
    } else {
        let grid = ExperimentGrid::product(&args.scenario, &args.covariance, &args.n, args.p, &args.r, args.reps, args.b);
        (grid, parse_methods(&args.method)?)
    };
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Input(format!("alpha must lie in (0, 1), got {}", args.alpha)));
    }
    // fail on bad cells before any replication runs
    for cell in &grid.cells {
        hdht_core::simulate::make_scenario(cell.scenario, cell.n, cell.p, cell.r)?;
    }
    prepare_out(&args.out)?;
    if args.emit_dataset {
        emit_datasets(&grid, args.seed, &args.out.join("datasets"))?;
    }
    let rows = run_experiment(&grid, &methods, args.alpha, args.seed, ExperimentOptions {
        record_timing: args.record_timing,
    })?;
    let csv = results_csv(&rows, !args.no_header)?;
    fs::write(args.out.join("results.csv"), &csv).map_err(|e| CliError::Io(e.to_string()))?;
    if args.full_scale {
        let table = format_level_table(&rows);
        fs::write(args.out.join("level_table.txt"), &table).map_err(|e| CliError::Io(e.to_string()))?;
        print!("{table}");
    } else {
        print!("{csv}");
    }
    Ok(EXIT_ACCEPT)
}

fn column(v: &hdht_core::numkit::Vector) -> hdht_core::numkit::Matrix {
    hdht_core::numkit::Matrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn emit_datasets(grid: &ExperimentGrid, seed: u64, dir: &Path) -> Result<(), CliError> {
    for (ci, cell) in grid.cells.iter().enumerate() {
        let data = cell.dataset(seed, ci, 0)?;
        let cell_dir = dir.join(format!("cell{ci}"));
        prepare_out(&cell_dir)?;
        let header: Vec<String> = (1..=data.p()).map(|j| format!("x{j}")).collect();
        csvio::write_matrix(&cell_dir.join("x1.csv"), Some(&header), &data.x1)?;
        csvio::write_matrix(&cell_dir.join("y1.csv"), Some(&["y".to_string()]), &column(&data.y1))?;
        csvio::write_matrix(&cell_dir.join("x2.csv"), Some(&header), &data.x2)?;
        csvio::write_matrix(&cell_dir.join("y2.csv"), Some(&["y".to_string()]), &column(&data.y2))?;
    }
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<u8, CliError> {
    let result = run_validation(&ValidateOptions { seed: args.seed, fault: args.inject_fault });
    for c in &result.checks {
        println!(
            "{:<28} {} (cases {}, worst {:.3e}, tolerance {:.1e})",
            c.name,
            if c.passed { "pass" } else { "FAIL" },
            c.cases,
            c.worst,
            c.tolerance
        );
    }
    if let Some(dir) = &args.out {
        prepare_out(dir)?;
        write_json(&dir.join("validation.json"), &report::validation_report(&result))?;
    }
    Ok(if result.passed { EXIT_ACCEPT } else { EXIT_FAILURE })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_ACCEPT };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Ggm(a) => cmd_ggm(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("hdht: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
