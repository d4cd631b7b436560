//! `scbf` — synthesize, simulate, and re-check piecewise-constant stochastic
//! barrier certificates with their per-region controllers.
//!
//! Four commands cover the pipeline: `synth` produces the certificate,
//! controller, and run summary for one system and grid; `simulate` replays a
//! stored controller through seeded Monte Carlo; `check` re-validates a
//! stored certificate/controller pair against the exact kernel; `table`
//! sweeps the bundled benchmarks over their configured grids and tabulates
//! certified and empirical safety side by side.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data mismatch
//! (inputs that disagree with each other or a failed re-check), 4 solver
//! failure. The environment variable `THREADS` caps the worker pool.

use clap::{Args, Parser, Subcommand, ValueEnum};
use scbf_core::config;
use scbf_core::controller::Controller;
use scbf_core::geometry::{build_partition, Partition};
use scbf_core::relax::{bound_all, BoundMode};
use scbf_core::synthesis::{
    assemble_lp, build_barrier, solution_summary, synthesize, Barrier, Engine, SynthOptions,
    Synthesis, SynthesisError,
};
use scbf_core::system::{Horizon, SystemSpec};
use scbf_core::validation::{
    binomial_bound, check_certificate, simulate_paths, write_trajectories, McReport, Trajectory,
};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const EXIT_USAGE: u8 = 2;
const EXIT_MISMATCH: u8 = 3;
const EXIT_SOLVER: u8 = 4;

/// Confidence level for the reported Monte Carlo lower bound.
const MC_CONFIDENCE: f64 = 0.95;

#[derive(Parser)]
#[command(
    name = "scbf",
    about = "Joint synthesis of piecewise-constant barrier certificates and safe controllers",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a certificate and controller for one system and grid
    Synth(SynthArgs),
    /// Simulate closed-loop trajectories under a stored controller
    Simulate(SimulateArgs),
    /// Re-check a stored certificate/controller pair by exact-kernel sampling
    Check(CheckArgs),
    /// Synthesize and simulate the bundled benchmarks, collecting a results table
    Table(TableArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EngineArg {
    /// Witness-pool cuts against the exact Gaussian kernel
    Exact,
    /// Sound affine/constant kernel sandwiches and the stacked program
    Bounds,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Affine lower/upper kernel bounds
    Affine,
    /// Constant (interval) kernel bounds
    Constant,
}

#[derive(Args)]
struct SynthArgs {
    /// Bundled benchmark name or path to a JSON problem description
    #[arg(long)]
    config: String,
    /// Cells per dimension, comma separated (default: the config's first grid)
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Override the config's horizon: a positive step count or "infinite"
    #[arg(long)]
    horizon: Option<String>,
    /// Which machinery computes the certificate
    #[arg(long, value_enum, default_value_t = EngineArg::Exact)]
    engine: EngineArg,
    /// Relaxation flavor for the bounds engine
    #[arg(long, value_enum, default_value_t = ModeArg::Affine)]
    mode: ModeArg,
    /// Directory for partition.csv, certificate.csv, controller.csv, summary.json
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also dump the stacked program as model.mps (plus lp_solution.json
    /// when it is small enough for the dense solver)
    #[arg(long)]
    dump_lp: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Bundled benchmark name or path to a JSON problem description
    #[arg(long)]
    config: String,
    /// Controller CSV produced by `synth`
    #[arg(long)]
    controller: PathBuf,
    /// Cells per dimension the controller was synthesized on
    /// (default: the config's first grid)
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Number of Monte Carlo trajectories
    #[arg(long, default_value_t = 500)]
    trials: usize,
    /// Steps per trajectory
    #[arg(long, default_value_t = 50)]
    steps: u64,
    /// Base seed; trajectory t draws from stream t
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the full paths as trajectories.csv
    #[arg(long)]
    trajectories: bool,
    /// Directory for mc_summary.json (and trajectories.csv)
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Bundled benchmark name or path to a JSON problem description
    #[arg(long)]
    config: String,
    /// Certificate CSV produced by `synth`
    #[arg(long)]
    certificate: PathBuf,
    /// Controller CSV produced by `synth`
    #[arg(long)]
    controller: PathBuf,
    /// Cells per dimension the certificate was synthesized on
    /// (default: the config's first grid)
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Exact-kernel sample points per region
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Directory for check_report.json
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct TableArgs {
    /// Benchmark to run, or "all"
    #[arg(long, default_value = "all")]
    bench: String,
    /// Directory for results.csv and the per-run artifact subdirectories
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

/// A command failure carrying its process exit code.
struct Failure {
    code: u8,
    message: String,
}

type CmdResult = Result<(), Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn mismatch(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_MISMATCH,
        message: message.into(),
    }
}

fn solver(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_SOLVER,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(f) = init_threads().and_then(|()| match &cli.command {
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Check(args) => cmd_check(args),
        Cmd::Table(args) => cmd_table(args),
    }) {
        eprintln!("error: {}", f.message);
        return ExitCode::from(f.code);
    }
    ExitCode::SUCCESS
}

/// Honor the `THREADS` environment variable before any parallel work runs.
fn init_threads() -> CmdResult {
    let Ok(raw) = std::env::var("THREADS") else {
        return Ok(());
    };
    let workers: usize = raw
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| usage(format!("THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| usage(format!("could not size the worker pool: {e}")))
}

/// Load a problem description from a file path or a bundled benchmark name.
fn resolve_spec(config: &str) -> Result<SystemSpec, Failure> {
    let text = if Path::new(config).is_file() {
        fs::read_to_string(config).map_err(|e| usage(format!("could not read {config}: {e}")))?
    } else if let Some(bundled) = config::benchmark_text(config) {
        bundled.to_string()
    } else {
        return Err(usage(format!("config not found: {config}")));
    };
    config::load_spec(&text).map_err(|e| usage(e.to_string()))
}

fn parse_horizon(raw: &str) -> Result<Horizon, Failure> {
    if raw == "infinite" {
        return Ok(Horizon::Infinite);
    }
    raw.parse::<u64>()
        .ok()
        .filter(|&n| n >= 1)
        .map(Horizon::Finite)
        .ok_or_else(|| usage(format!("horizon must be a positive integer or \"infinite\", got `{raw}`")))
}

/// The grid to run on: the explicit flag, else the config's first grid.
fn effective_grid(spec: &SystemSpec, flag: Option<&[usize]>) -> Result<Vec<usize>, Failure> {
    if let Some(g) = flag {
        return Ok(g.to_vec());
    }
    spec.grids
        .first()
        .cloned()
        .ok_or_else(|| usage("config lists no grids; pass --grid"))
}

fn partition_for(spec: &SystemSpec, grid: &[usize]) -> Result<Partition, Failure> {
    build_partition(spec, grid).map_err(|e| usage(e.to_string()))
}

fn synth_failure(err: SynthesisError) -> Failure {
    match err {
        // The grid does not cover the initial set: a configuration problem.
        SynthesisError::InitialNotCovered => usage(err.to_string()),
        SynthesisError::Io(e) => usage(format!("i/o failure during synthesis: {e}")),
        SynthesisError::Format(m) => mismatch(m),
        SynthesisError::Lp(_) | SynthesisError::Solver(_) | SynthesisError::Inconsistent(_) => {
            solver(err.to_string())
        }
    }
}

fn create_out_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| usage(format!("could not create {}: {e}", dir.display())))
}

fn write_artifact(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CmdResult {
    let fail = |e| usage(format!("could not write {}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(fail)?);
    write(&mut w).and_then(|()| w.flush()).map_err(fail)
}

/// The run summary document: certificate scalars, problem shape, solver
/// metadata, and (when a simulation accompanied the run) the Monte Carlo
/// columns. Field set is stable; timings are the only nondeterministic
/// entries.
#[allow(clippy::too_many_arguments)]
fn run_summary(
    benchmark: &str,
    grid: &[usize],
    partition: &Partition,
    barrier: &Barrier,
    synthesis: &Synthesis,
    synth_seconds: f64,
    mc: Option<(&McReport, f64)>,
) -> String {
    let (mc_empirical, mc_lower_bound) = match mc {
        Some((report, lower)) => (
            serde_json::json!(report.empirical_safety),
            serde_json::json!(lower),
        ),
        None => (serde_json::Value::Null, serde_json::Value::Null),
    };
    let value = serde_json::json!({
        "benchmark": benchmark,
        "K": partition.k(),
        "grid_counts": grid,
        "eta": barrier.eta,
        "beta": barrier.beta,
        "p_safe": barrier.p_safe,
        "synth_seconds": synth_seconds,
        "bound_seconds": synthesis.bound_seconds,
        "lp_variables": synthesis.lp_variables,
        "lp_constraints": synthesis.lp_constraints,
        "mc_empirical": mc_empirical,
        "mc_lower_bound": mc_lower_bound,
    });
    let mut text = serde_json::to_string_pretty(&value).expect("summary serializes");
    text.push('\n');
    text
}

/// One synthesis run end to end: build the partition, synthesize, and write
/// the four artifacts (plus optional LP dumps). Returns everything the
/// caller needs for reporting.
fn run_synth(
    benchmark: &str,
    spec: &SystemSpec,
    grid: &[usize],
    opts: &SynthOptions,
    out: &Path,
    dump_lp: bool,
) -> Result<(Partition, Synthesis, f64), Failure> {
    let t0 = Instant::now();
    let partition = partition_for(spec, grid)?;
    let synthesis = synthesize(spec, &partition, opts).map_err(synth_failure)?;
    let synth_seconds = t0.elapsed().as_secs_f64();

    create_out_dir(out)?;
    write_artifact(&out.join("partition.csv"), |w| partition.write_csv(w))?;
    write_artifact(&out.join("certificate.csv"), |w| {
        synthesis.barrier.write_csv(w)
    })?;
    let controller = Controller::new(synthesis.controls.clone(), &spec.control);
    write_artifact(&out.join("controller.csv"), |w| controller.write_csv(w))?;
    if dump_lp {
        dump_stacked_lp(spec, &partition, opts, out)?;
    }
    let summary = run_summary(
        benchmark,
        grid,
        &partition,
        &synthesis.barrier,
        &synthesis,
        synth_seconds,
        None,
    );
    write_artifact(&out.join("summary.json"), |w| w.write_all(summary.as_bytes()))?;
    Ok((partition, synthesis, synth_seconds))
}

/// Write the stacked program as MPS, and solve it for a solution dump when
/// it fits the dense simplex. The reduced path used for large instances has
/// no explicit matrix worth dumping, so past the cap only the model file is
/// produced.
fn dump_stacked_lp(
    spec: &SystemSpec,
    partition: &Partition,
    opts: &SynthOptions,
    out: &Path,
) -> CmdResult {
    let bounds = bound_all(spec, partition, opts.mode);
    let model = assemble_lp(&bounds, partition, spec.horizon).map_err(synth_failure)?;
    write_artifact(&out.join("model.mps"), |w| {
        w.write_all(model.write_mps().as_bytes())
    })?;
    if model.num_rows() > opts.dense_row_cap {
        return Ok(());
    }
    let sol = model.solve().map_err(|e| solver(e.to_string()))?;
    let barrier = build_barrier(&model, &sol, partition, spec.horizon).map_err(synth_failure)?;
    let mut text = solution_summary(
        &barrier,
        sol.objective,
        sol.status,
        sol.solve_seconds,
        model.num_vars(),
        model.num_rows(),
    );
    text.push('\n');
    write_artifact(&out.join("lp_solution.json"), |w| w.write_all(text.as_bytes()))
}

fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let mut spec = resolve_spec(&args.config)?;
    if let Some(raw) = &args.horizon {
        spec.horizon = parse_horizon(raw)?;
    }
    let grid = effective_grid(&spec, args.grid.as_deref())?;
    let opts = SynthOptions {
        engine: match args.engine {
            EngineArg::Exact => Engine::Exact,
            EngineArg::Bounds => Engine::Bounds,
        },
        mode: match args.mode {
            ModeArg::Affine => BoundMode::Affine,
            ModeArg::Constant => BoundMode::Constant,
        },
        ..SynthOptions::default()
    };
    let (partition, synthesis, synth_seconds) = run_synth(
        &spec.name.clone(),
        &spec,
        &grid,
        &opts,
        &args.out,
        args.dump_lp,
    )?;
    let b = &synthesis.barrier;
    println!(
        "{}: K={} eta={:.6e} beta={:.6e} p_safe={:.6} in {:.1}s",
        spec.name,
        partition.k(),
        b.eta,
        b.beta,
        b.p_safe,
        synth_seconds
    );
    Ok(())
}

/// Load a controller CSV against the config's control box.
fn read_controller(path: &Path, spec: &SystemSpec) -> Result<Controller, Failure> {
    let file = File::open(path)
        .map_err(|e| usage(format!("could not read {}: {e}", path.display())))?;
    Controller::read_csv(BufReader::new(file), &spec.control)
        .map_err(|e| mismatch(format!("{}: {e}", path.display())))
}

fn mc_report(paths: &[Trajectory], trials: usize, steps: u64, seed: u64) -> McReport {
    let first_exit: Vec<Option<u64>> = paths.iter().map(|t| t.first_exit).collect();
    let violations = first_exit.iter().filter(|e| e.is_some()).count();
    McReport {
        trials,
        steps,
        violations,
        empirical_safety: 1.0 - violations as f64 / trials as f64,
        seed,
        first_exit,
    }
}

fn mc_summary_text(report: &McReport, lower: f64) -> String {
    let value = serde_json::json!({
        "trials": report.trials,
        "steps": report.steps,
        "seed": report.seed,
        "violations": report.violations,
        "empirical_safety": report.empirical_safety,
        "mc_lower_bound": lower,
        "confidence": MC_CONFIDENCE,
    });
    let mut text = serde_json::to_string_pretty(&value).expect("report serializes");
    text.push('\n');
    text
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    if args.trials == 0 {
        return Err(usage("trials must be at least 1"));
    }
    let spec = resolve_spec(&args.config)?;
    let grid = effective_grid(&spec, args.grid.as_deref())?;
    let partition = partition_for(&spec, &grid)?;
    let controller = read_controller(&args.controller, &spec)?;
    if controller.controls.len() != partition.k() {
        return Err(mismatch(format!(
            "controller lists {} regions, the {} grid has {}",
            controller.controls.len(),
            fmt_grid(&grid),
            partition.k()
        )));
    }

    let paths = simulate_paths(&spec, &partition, &controller, args.trials, args.steps, args.seed);
    let report = mc_report(&paths, args.trials, args.steps, args.seed);
    let lower = binomial_bound(&report, MC_CONFIDENCE);

    create_out_dir(&args.out)?;
    let summary = mc_summary_text(&report, lower);
    write_artifact(&args.out.join("mc_summary.json"), |w| {
        w.write_all(summary.as_bytes())
    })?;
    if args.trajectories {
        write_artifact(&args.out.join("trajectories.csv"), |w| {
            write_trajectories(w, &partition, &paths)
        })?;
    }
    println!(
        "{}: {}/{} trajectories safe, empirical {:.4}, {:.0}% lower bound {:.4}",
        spec.name,
        report.trials - report.violations,
        report.trials,
        report.empirical_safety,
        MC_CONFIDENCE * 100.0,
        lower
    );
    Ok(())
}

/// Rebuild a [`Barrier`] from a certificate CSV. The scalars `η` and `β`
/// are the smallest values consistent with the stored columns, which is
/// exactly how the synthesizer derived them.
fn read_certificate(
    path: &Path,
    partition: &Partition,
    horizon: Horizon,
) -> Result<Barrier, Failure> {
    let file = File::open(path)
        .map_err(|e| usage(format!("could not read {}: {e}", path.display())))?;
    let (b, beta_i) = Barrier::read_csv(BufReader::new(file))
        .map_err(|e| mismatch(format!("{}: {e}", path.display())))?;
    if b.len() != partition.k() {
        return Err(mismatch(format!(
            "{}: certificate lists {} regions, the partition has {}",
            path.display(),
            b.len(),
            partition.k()
        )));
    }
    let eta = partition
        .initial_regions()
        .iter()
        .map(|&i| b[i - 1])
        .fold(0.0, f64::max);
    let beta = beta_i.iter().copied().fold(0.0, f64::max);
    Barrier::from_parts(b, beta_i, eta, beta, horizon, partition)
        .map_err(|e| mismatch(format!("{}: {e}", path.display())))
}

fn cmd_check(args: &CheckArgs) -> CmdResult {
    if args.samples == 0 {
        return Err(usage("samples must be at least 1"));
    }
    let spec = resolve_spec(&args.config)?;
    let grid = effective_grid(&spec, args.grid.as_deref())?;
    let partition = partition_for(&spec, &grid)?;
    let barrier = read_certificate(&args.certificate, &partition, spec.horizon)?;
    let controller = read_controller(&args.controller, &spec)?;

    let report = check_certificate(&spec, &partition, &barrier, &controller, args.samples)
        .map_err(|e| mismatch(e.to_string()))?;

    let value = serde_json::json!({
        "pass": report.pass,
        "samples_per_region": report.samples_per_region,
        "max_slack": report.max_slack,
        "slack_tolerance": scbf_core::validation::SLACK_TOL,
        "nonnegative": report.nonnegative,
        "initial_capped": report.initial_capped,
        "complaints": report.complaints,
        "eta": barrier.eta,
        "beta": barrier.beta,
        "p_safe": barrier.p_safe,
    });
    let mut text = serde_json::to_string_pretty(&value).expect("report serializes");
    text.push('\n');
    create_out_dir(&args.out)?;
    write_artifact(&args.out.join("check_report.json"), |w| {
        w.write_all(text.as_bytes())
    })?;

    if report.pass {
        println!(
            "{}: certificate holds (max sampled slack {:.3e} at {} samples/region)",
            spec.name, report.max_slack, report.samples_per_region
        );
        Ok(())
    } else {
        let first = report
            .complaints
            .first()
            .cloned()
            .unwrap_or_else(|| format!("max sampled slack {:.3e}", report.max_slack));
        Err(mismatch(format!("certificate failed re-check: {first}")))
    }
}

fn fmt_grid(grid: &[usize]) -> String {
    grid.iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

/// Escape a CSV field: wrap in quotes when it contains a delimiter, double
/// any embedded quotes.
fn csv_field(text: &str) -> String {
    if text.contains(',') || text.contains('"') || text.contains('\n') {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

fn cmd_table(args: &TableArgs) -> CmdResult {
    let benches: Vec<&str> = if args.bench == "all" {
        config::BENCHMARK_NAMES.to_vec()
    } else if config::benchmark_text(&args.bench).is_some() {
        vec![config::BENCHMARK_NAMES
            .iter()
            .find(|n| **n == args.bench)
            .copied()
            .expect("name resolved above")]
    } else {
        return Err(usage(format!(
            "unknown benchmark `{}` (available: {}, all)",
            args.bench,
            config::BENCHMARK_NAMES.join(", ")
        )));
    };

    create_out_dir(&args.out)?;
    let mut rows = Vec::new();
    for name in benches {
        let spec = resolve_spec(name)?;
        for grid in &spec.grids {
            let label = format!("{name}@{}", fmt_grid(grid));
            let dir = args.out.join(&label);
            match table_run(name, &spec, grid, &dir) {
                Ok(row) => {
                    println!("{label}: p_safe={:.4} mc={:.4}", row.p_safe, row.mc_empirical);
                    rows.push(row.into_csv(name, grid));
                }
                Err(f) => {
                    // Record the failure in the table and keep sweeping.
                    eprintln!("{label}: {}", f.message);
                    rows.push(TableRow::failure_csv(name, grid, &f.message));
                }
            }
        }
    }

    let mut table = String::from(
        "benchmark,grid,K,eta,beta,p_safe,mc_empirical,mc_lower_bound,synth_seconds,bound_seconds,lp_variables,lp_constraints,status\n",
    );
    for row in rows {
        table.push_str(&row);
        table.push('\n');
    }
    let path = args.out.join("results.csv");
    write_artifact(&path, |w| w.write_all(table.as_bytes()))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// One completed table entry, pre-formatting.
struct TableRow {
    k: usize,
    eta: f64,
    beta: f64,
    p_safe: f64,
    mc_empirical: f64,
    mc_lower_bound: f64,
    synth_seconds: f64,
    bound_seconds: f64,
    lp_variables: usize,
    lp_constraints: usize,
}

impl TableRow {
    fn into_csv(self, name: &str, grid: &[usize]) -> String {
        format!(
            "{},{},{},{:.6e},{:.6e},{:.6},{:.6},{:.6},{:.3},{:.3},{},{},ok",
            csv_field(name),
            fmt_grid(grid),
            self.k,
            self.eta,
            self.beta,
            self.p_safe,
            self.mc_empirical,
            self.mc_lower_bound,
            self.synth_seconds,
            self.bound_seconds,
            self.lp_variables,
            self.lp_constraints
        )
    }

    fn failure_csv(name: &str, grid: &[usize], message: &str) -> String {
        format!(
            "{},{},,,,,,,,,,,{}",
            csv_field(name),
            fmt_grid(grid),
            csv_field(message)
        )
    }
}

/// Synthesize and simulate one benchmark at one grid, writing the usual
/// artifacts plus the Monte Carlo summary into `dir`.
fn table_run(name: &str, spec: &SystemSpec, grid: &[usize], dir: &Path) -> Result<TableRow, Failure> {
    let opts = SynthOptions::default();
    let (partition, synthesis, synth_seconds) = run_synth(name, spec, grid, &opts, dir, false)?;
    let controller = Controller::new(synthesis.controls.clone(), &spec.control);

    let (trials, steps, seed) = (500, 50, 0);
    let paths = simulate_paths(spec, &partition, &controller, trials, steps, seed);
    let report = mc_report(&paths, trials, steps, seed);
    let lower = binomial_bound(&report, MC_CONFIDENCE);
    write_artifact(&dir.join("mc_summary.json"), |w| {
        w.write_all(mc_summary_text(&report, lower).as_bytes())
    })?;

    // Refresh the summary with the Monte Carlo columns filled in.
    let summary = run_summary(
        name,
        grid,
        &partition,
        &synthesis.barrier,
        &synthesis,
        synth_seconds,
        Some((&report, lower)),
    );
    write_artifact(&dir.join("summary.json"), |w| w.write_all(summary.as_bytes()))?;

    Ok(TableRow {
        k: partition.k(),
        eta: synthesis.barrier.eta,
        beta: synthesis.barrier.beta,
        p_safe: synthesis.barrier.p_safe,
        mc_empirical: report.empirical_safety,
        mc_lower_bound: lower,
        synth_seconds,
        bound_seconds: synthesis.bound_seconds,
        lp_variables: synthesis.lp_variables,
        lp_constraints: synthesis.lp_constraints,
    })
}
