//! Command-line front end: `fit`, `select`, `simulate`, `analyze`, `decompose`.
//!
//! Every subcommand writes CSV tables plus a JSON run manifest. Failures
//! print a one-line JSON error record on stderr and exit with status 1.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use penadd::analyze::{analyze, write_anova_csv, AnalyzeOptions};
use penadd::anova::anova_decompose;
use penadd::calibrate::calibrate_bandwidth_by_df;
use penadd::estimator::fit;
use penadd::io::{ingest_csv, read_surface_csv, write_surface_csv, IngestOptions, Ingested};
use penadd::selection::{select, CriterionKind, SearchLattice};
use penadd::simulation::{run_scenario, summarize, write_quantiles_csv, write_records_csv, ScenarioSpec};
use penadd::{BandwidthSpec, BoundaryPolicy, Error, FitConfig, Grid, Penalty, Result, SolverKind};

#[derive(Parser, Debug)]
#[command(name = "penadd", version, about = "Local linear smoothing shrunk toward an additive fit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one `(R, h)` and write the grid surface.
    Fit(FitArgs),
    /// Search an `(R, h)` lattice by a selection criterion.
    Select(SelectArgs),
    /// Run a Monte Carlo scenario.
    Simulate(SimulateArgs),
    /// df-calibrated bandwidths, `(R, c)` search, adjusted R² and ANOVA.
    Analyze(AnalyzeArgs),
    /// ANOVA table of a surface CSV.
    Decompose(DecomposeArgs),
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    /// CSV file with a header row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    response: String,
    /// Comma-separated predictor columns.
    #[arg(long, value_delimiter = ',', required = true)]
    predictors: Vec<String>,
    #[arg(long)]
    log_response: bool,
    /// Comma-separated 1-based data rows to drop.
    #[arg(long, value_delimiter = ',')]
    exclude_rows: Vec<usize>,
}

#[derive(Args, Debug, Clone)]
struct SmoothArgs {
    /// Nodes per axis: one value or one per axis.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    grid: Vec<usize>,
    #[arg(long, value_enum)]
    boundary: Option<BoundaryArg>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    /// TOML file with solver settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    smooth: SmoothArgs,
    /// Penalty `R` (a number or `inf`).
    #[arg(long = "R", default_value = "0")]
    penalty: String,
    /// Bandwidth: one value or one per axis.
    #[arg(long, value_delimiter = ',', conflicts_with = "df")]
    h: Vec<f64>,
    /// Calibrate each bandwidth to this many univariate degrees of freedom.
    #[arg(long)]
    df: Option<f64>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    smooth: SmoothArgs,
    /// Step of the penalty lattice on the `R/(1+R)` scale.
    #[arg(long = "search-R", default_value_t = 0.02)]
    search_r: f64,
    /// `h_min:h_max:log10_step`.
    #[arg(long = "search-h", default_value = "0.05:0.5:0.01")]
    search_h: String,
    #[arg(long, value_enum, default_value = "aicc")]
    criterion: CriterionArg,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario TOML; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_enum)]
    criterion: Option<CriterionArg>,
    #[arg(long, value_enum)]
    boundary: Option<BoundaryArg>,
    #[arg(long, value_delimiter = ',')]
    grid: Vec<usize>,
    #[arg(long = "search-R")]
    search_r: Option<f64>,
    #[arg(long = "search-h")]
    search_h: Option<String>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 4.0)]
    df: f64,
    #[arg(long, default_value_t = 20)]
    grid: usize,
    #[arg(long = "search-R", default_value_t = 0.01)]
    search_r: f64,
    /// `c_min:c_max:log10_step` for the common bandwidth scale.
    #[arg(long = "search-c", default_value = "0.5:2:0.005")]
    search_c: String,
    #[arg(long, value_enum, default_value = "aicc")]
    criterion: CriterionArg,
    #[arg(long, value_enum)]
    boundary: Option<BoundaryArg>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    /// Surface CSV as written by `fit`.
    #[arg(long)]
    surface: PathBuf,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum BoundaryArg {
    Renorm,
    Inflate,
}

impl From<BoundaryArg> for BoundaryPolicy {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Renorm => BoundaryPolicy::Renorm,
            BoundaryArg::Inflate => BoundaryPolicy::inflate(),
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SolverArg {
    Direct,
    Iter,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Direct => SolverKind::Direct,
            SolverArg::Iter => SolverKind::Iterative,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum CriterionArg {
    Aic,
    Gcv,
    Aicc,
}

impl From<CriterionArg> for CriterionKind {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Aic => CriterionKind::Aic,
            CriterionArg::Gcv => CriterionKind::Gcv,
            CriterionArg::Aicc => CriterionKind::Aicc,
        }
    }
}

/// Solver settings read from `--config`; absent keys keep their defaults.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SolverFile {
    solver: Option<SolverKind>,
    boundary: Option<BoundaryPolicy>,
    tolerance: Option<f64>,
    max_iterations: Option<usize>,
    large_r_threshold: Option<f64>,
    pinv_cutoff: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => run_fit(a),
        Command::Select(a) => run_select(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Decompose(a) => run_decompose(a),
    }
}

fn ingest(input: &InputArgs) -> Result<Ingested> {
    let opts = IngestOptions {
        log_response: input.log_response,
        exclude_rows: input.exclude_rows.clone(),
        max_dim: None,
    };
    ingest_csv(&input.input, &input.response, &input.predictors, &opts)
}

fn per_axis<T: Copy>(values: &[T], d: usize, what: &str) -> Result<Vec<T>> {
    match values.len() {
        1 => Ok(vec![values[0]; d]),
        n if n == d => Ok(values.to_vec()),
        n => Err(Error::InvalidInput(format!("{what}: expected 1 or {d} values, got {n}"))),
    }
}

fn parse_range(text: &str, what: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("{what} {text:?}: {e}")))?;
    match parts[..] {
        [lo, hi, step] => Ok((lo, hi, step)),
        _ => Err(Error::Parse(format!("{what} {text:?}: expected lo:hi:step"))),
    }
}

fn base_config(smooth: &SmoothArgs, penalty: Penalty, bandwidth: BandwidthSpec) -> Result<FitConfig> {
    let mut cfg = FitConfig::new(penalty, bandwidth);
    if let Some(path) = &smooth.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let file: SolverFile = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        if let Some(v) = file.solver {
            cfg.solver = v;
        }
        if let Some(v) = file.boundary {
            cfg.boundary = v;
        }
        if let Some(v) = file.tolerance {
            cfg.tolerance = v;
        }
        if let Some(v) = file.max_iterations {
            cfg.max_iterations = v;
        }
        if let Some(v) = file.large_r_threshold {
            cfg.large_r_threshold = v;
        }
        if let Some(v) = file.pinv_cutoff {
            cfg.pinv_cutoff = v;
        }
    }
    if let Some(b) = smooth.boundary {
        cfg.boundary = b.into();
    }
    if let Some(s) = smooth.solver {
        cfg.solver = s.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn manifest(command: &str, started: Instant, details: serde_json::Value, outputs: &[&str]) -> serde_json::Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
        "elapsed_seconds": started.elapsed().as_secs_f64(),
        "details": details,
        "outputs": outputs,
    })
}

fn run_fit(a: FitArgs) -> Result<()> {
    let started = Instant::now();
    let data = ingest(&a.input)?;
    let d = data.dataset.dim();
    let grid = Grid::new(&per_axis(&a.smooth.grid, d, "--grid")?)?;
    let penalty: Penalty = a.penalty.parse()?;
    let calibrations = match a.df {
        Some(df) => Some(
            (0..d)
                .map(|k| calibrate_bandwidth_by_df(&data.dataset.column(k), df, BoundaryPolicy::Renorm))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let bandwidth = match &calibrations {
        Some(c) => BandwidthSpec::new(c.iter().map(|c| c.h).collect())?,
        None if a.h.is_empty() => return Err(Error::InvalidInput("fit needs --h or --df".into())),
        None => BandwidthSpec::new(per_axis(&a.h, d, "--h")?)?,
    };
    let cfg = base_config(&a.smooth, penalty, bandwidth)?;
    let result = fit(&data.dataset, &grid, &cfg)?;
    let mut w = create(&a.smooth.out_dir, "surface.csv")?;
    write_surface_csv(&result, &mut w)?;
    w.flush()?;
    let details = json!({
        "input": a.input.input,
        "n": data.dataset.n(),
        "dropped_missing": data.dropped_missing,
        "excluded": data.excluded,
        "scaling": data.scaling,
        "config": cfg,
        "calibrations": calibrations,
        "diagnostics": {
            "regime": format!("{:?}", result.diagnostics.regime),
            "iterations": result.diagnostics.iterations,
            "residual": result.diagnostics.residual,
        },
    });
    write_json(&a.smooth.out_dir, "manifest.json", &manifest("fit", started, details, &["surface.csv"]))
}

fn run_select(a: SelectArgs) -> Result<()> {
    let started = Instant::now();
    let data = ingest(&a.input)?;
    let d = data.dataset.dim();
    let grid = Grid::new(&per_axis(&a.smooth.grid, d, "--grid")?)?;
    let (h_min, h_max, step) = parse_range(&a.search_h, "--search-h")?;
    let lattice = SearchLattice::regular(d, a.search_r, step, h_min, h_max)?;
    let cfg = base_config(&a.smooth, Penalty::ZERO, lattice.bandwidths[0].clone())?;
    let kind: CriterionKind = a.criterion.into();
    let selection = select(&data.dataset, &grid, &lattice, kind, &cfg)?;
    let mut w = create(&a.smooth.out_dir, "selection.csv")?;
    selection.surface.write_csv(&mut w, kind)?;
    w.flush()?;
    let best = &selection.best;
    let details = json!({
        "input": a.input.input,
        "n": data.dataset.n(),
        "scaling": data.scaling,
        "criterion": kind.name(),
        "cells": lattice.len(),
        "selected": {
            "R": best.penalty,
            "shrink": best.shrink_fraction(),
            "h": best.bandwidth.per_axis(),
            "criterion": best.criterion(kind),
            "sigma2": best.sigma2,
            "trace": best.trace,
        },
    });
    write_json(&a.smooth.out_dir, "manifest.json", &manifest("select", started, details, &["selection.csv"]))
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let mut spec = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            ScenarioSpec::from_toml(&text)?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.reps {
        spec.replications = v;
    }
    if let Some(v) = a.criterion {
        spec.criterion = v.into();
    }
    if let Some(v) = a.boundary {
        spec.boundary = v.into();
    }
    if !a.grid.is_empty() {
        spec.grid = per_axis(&a.grid, spec.dim(), "--grid")?;
    }
    if let Some(v) = a.search_r {
        spec.lattice.shrink_step = v;
    }
    if let Some(text) = &a.search_h {
        let (lo, hi, step) = parse_range(text, "--search-h")?;
        spec.lattice.h_min = lo;
        spec.lattice.h_max = hi;
        spec.lattice.log_h_step = step;
    }
    spec.validate()?;
    let records = run_scenario(&spec)?;
    let mut w = create(&a.out_dir, "records.csv")?;
    write_records_csv(&records, &mut w)?;
    w.flush()?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    let rows = summarize(&records);
    let mut outputs = vec!["records.csv"];
    if let Ok(rows) = &rows {
        let mut w = create(&a.out_dir, "quantiles.csv")?;
        write_quantiles_csv(rows, &mut w)?;
        w.flush()?;
        outputs.push("quantiles.csv");
    }
    let details = json!({
        "scenario": spec,
        "seeds": { "seed": spec.seed, "streams": spec.replications },
        "failed_replications": failed,
        "summary_error": rows.as_ref().err().map(|e| e.to_string()),
    });
    write_json(&a.out_dir, "manifest.json", &manifest("simulate", started, details, &outputs))?;
    rows.map(|_| ())
}

fn run_analyze(a: AnalyzeArgs) -> Result<()> {
    let started = Instant::now();
    let data = ingest(&a.input)?;
    let (c_min, c_max, log_c_step) = parse_range(&a.search_c, "--search-c")?;
    let mut opts = AnalyzeOptions {
        df: a.df,
        grid_size: a.grid,
        shrink_step: a.search_r,
        c_min,
        c_max,
        log_c_step,
        criterion: a.criterion.into(),
        ..AnalyzeOptions::default()
    };
    if let Some(b) = a.boundary {
        opts.boundary = b.into();
    }
    let report = analyze(&data.dataset, &opts)?;
    write_json(&a.out_dir, "report.json", &report)?;
    let mut w = create(&a.out_dir, "anova.csv")?;
    write_anova_csv(&report.anova, &mut w)?;
    w.flush()?;
    let mut w = create(&a.out_dir, "selection.csv")?;
    report.surface.write_csv(&mut w, opts.criterion)?;
    w.flush()?;
    let details = json!({
        "input": a.input.input,
        "n": data.dataset.n(),
        "dropped_missing": data.dropped_missing,
        "excluded": data.excluded,
        "scaling": data.scaling,
        "options": opts,
    });
    write_json(
        &a.out_dir,
        "manifest.json",
        &manifest("analyze", started, details, &["report.json", "anova.csv", "selection.csv"]),
    )
}

fn run_decompose(a: DecomposeArgs) -> Result<()> {
    let file = File::open(&a.surface).map_err(|e| Error::Io(format!("{}: {e}", a.surface.display())))?;
    let (grid, values) = read_surface_csv(file)?;
    let table = anova_decompose(&values, &grid)?;
    let rows = [("surface".to_string(), table)];
    match &a.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            write_anova_csv(&rows, &mut w)?;
            w.flush()?;
        }
        None => write_anova_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}
