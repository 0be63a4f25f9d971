//! `reachkit` — certify and simulate reach-avoid behavior of sampled-data
//! control systems with bounded measurement error.
//!
//! Subcommands: `bounds` (estimate the system constants), `check` (margin,
//! shrunk goal sets, condition scan), `sim` (one zero-order-hold run),
//! `batch` (seeded Monte Carlo over initial states), `perturb` (explicitly
//! perturbed closed loop). Reports go to stdout as JSON; trajectories to
//! `--out` as CSV.
//!
//! Exit codes: 0 — PASS / all runs confirmed; 1 — definite negative
//! finding (condition violated, safety violated); 2 — usage or config
//! error; 3 — inconclusive (horizon elapsed without a verdict).
//! `REACHKIT_THREADS` caps worker threads.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reachkit::bounds::{resolve_bounds, BoundsSet, Grid, PointSet};
use reachkit::bounds::{estimate_alpha, estimate_beta, estimate_gamma, estimate_xi};
use reachkit::certify::{goal_thresholds, scan_condition_over, CertReport, Verdict};
use reachkit::model::{validate_geometry, SystemSpec};
use reachkit::simulate::{
    batch, sample_initial_state, simulate_perturbed, simulate_sampled, write_trajectory_csv,
    NoiseModel, OutcomeKind, PerturbSignal, PerturbationSpec, SampledTrajectory,
};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "reachkit",
    version,
    about = "Reach-avoid certification and simulation for sampled-data control systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the constants alpha, beta, gamma, xi on a grid
    Bounds(BoundsCmd),
    /// Compute the margin and scan the strengthened condition
    Check(CheckCmd),
    /// Simulate one sampled-data run with measurement noise
    Sim(SimCmd),
    /// Monte Carlo over initial states sampled uniformly in C
    Batch(BatchCmd),
    /// Simulate the explicitly perturbed closed loop
    Perturb(PerturbCmd),
}

#[derive(Args)]
struct SpecArg {
    /// Path to the JSON system config
    spec: PathBuf,
    /// Override the sampling period for this run
    #[arg(long)]
    delta: Option<f64>,
    /// Override the measurement error bound for this run
    #[arg(long)]
    epsilon: Option<f64>,
    /// Override the exponential rate for this run
    #[arg(long)]
    lambda_override: Option<f64>,
}

impl SpecArg {
    fn load(&self) -> Result<SystemSpec> {
        let spec = SystemSpec::from_path(&self.spec)
            .with_context(|| format!("loading spec `{}`", self.spec.display()))?;
        Ok(spec.with_parameters(self.delta, self.epsilon, self.lambda_override)?)
    }
}

#[derive(Args)]
struct GridArg {
    /// Grid cells per axis: one value for all axes or a comma list
    #[arg(long, default_value = "100")]
    grid: CountList,
    /// Inflation factor applied to raw estimates
    #[arg(long, default_value_t = 1.02)]
    guard: f64,
}

impl GridArg {
    fn build(&self, spec: &SystemSpec) -> Result<Grid> {
        let n = spec.state_dim();
        let counts = match self.grid.0.len() {
            1 => vec![self.grid.0[0]; n],
            len if len == n => self.grid.0.clone(),
            len => bail!("--grid takes 1 or {n} comma-separated counts, got {len}"),
        };
        Ok(Grid::centered(&spec.domain_box, &counts))
    }
}

#[derive(Args)]
struct BoundsCmd {
    #[command(flatten)]
    spec: SpecArg,
    #[command(flatten)]
    grid: GridArg,
    /// Also write the JSON report to this path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckCmd {
    #[command(flatten)]
    spec: SpecArg,
    #[command(flatten)]
    grid: GridArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimCmd {
    #[command(flatten)]
    spec: SpecArg,
    #[command(flatten)]
    grid: GridArg,
    /// Initial state (comma-separated); sampled uniformly from C if absent
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<NumList>,
    /// Simulation horizon (default: 50 * diam(domain_box) / alpha)
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// RK4 substeps per sampling period
    #[arg(long, default_value_t = 10)]
    substeps: usize,
    /// Measurement noise model
    #[arg(long, default_value = "ball")]
    noise: NoiseArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the trajectory here (CSV, or JSON with --format json)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trajectory file format
    #[arg(long, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args)]
struct BatchCmd {
    #[command(flatten)]
    spec: SpecArg,
    #[command(flatten)]
    grid: GridArg,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long, default_value_t = 10)]
    substeps: usize,
    #[arg(long, default_value = "ball")]
    noise: NoiseArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PerturbCmd {
    #[command(flatten)]
    spec: SpecArg,
    #[command(flatten)]
    grid: GridArg,
    /// Perturbation bound; defaults to the certified d-bar
    #[arg(long)]
    dbar: Option<f64>,
    /// Signal kind: random | constant | sinusoid
    #[arg(long, default_value = "random")]
    signal: SignalArg,
    /// Dwell time of the random piecewise-constant signal
    #[arg(long, default_value_t = 0.05)]
    dwell: f64,
    /// Channel values for the constant signal
    #[arg(long, allow_hyphen_values = true)]
    values: Option<NumList>,
    /// Per-channel amplitudes for the sinusoid signal
    #[arg(long, allow_hyphen_values = true)]
    amplitude: Option<NumList>,
    /// Per-channel frequencies for the sinusoid signal
    #[arg(long, allow_hyphen_values = true)]
    frequency: Option<NumList>,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<NumList>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Integration step
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: FormatArg,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum NoiseArg {
    Ball,
    Surface,
    None,
}

impl From<NoiseArg> for NoiseModel {
    fn from(a: NoiseArg) -> NoiseModel {
        match a {
            NoiseArg::Ball => NoiseModel::Ball,
            NoiseArg::Surface => NoiseModel::Surface,
            NoiseArg::None => NoiseModel::None,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SignalArg {
    Random,
    Constant,
    Sinusoid,
}

/// Comma-separated cell counts.
#[derive(Clone, Debug)]
struct CountList(Vec<usize>);

impl std::str::FromStr for CountList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<_, _>>()
            .map(CountList)
    }
}

/// Comma-separated reals.
#[derive(Clone, Debug)]
struct NumList(Vec<f64>);

impl std::str::FromStr for NumList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<_, _>>()
            .map(NumList)
    }
}

/// Constants echoed back from the loaded config so reports are
/// self-describing.
#[derive(Serialize)]
struct SpecEcho {
    name: String,
    state: Vec<String>,
    control: reachkit::model::ControlSet,
    lambda: f64,
    delta: f64,
    epsilon: f64,
    domain_box: reachkit::model::DomainBox,
    bounds_override: Option<reachkit::model::BoundsOverride>,
}

impl SpecEcho {
    fn from(spec: &SystemSpec) -> Self {
        SpecEcho {
            name: spec.name.clone(),
            state: spec.vars().names().to_vec(),
            control: spec.control_set.clone(),
            lambda: spec.lambda,
            delta: spec.delta,
            epsilon: spec.epsilon,
            domain_box: spec.domain_box.clone(),
            bounds_override: spec.bounds_override.clone(),
        }
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(path, text + "\n")
            .with_context(|| format!("writing `{}`", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("REACHKIT_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Bounds(cmd) => cmd_bounds(cmd),
        Command::Check(cmd) => cmd_check(cmd),
        Command::Sim(cmd) => cmd_sim(cmd),
        Command::Batch(cmd) => cmd_batch(cmd),
        Command::Perturb(cmd) => cmd_perturb(cmd),
    }
}

#[derive(Serialize)]
struct ConstantReport {
    value: f64,
    raw_estimate: Option<f64>,
    provenance: reachkit::bounds::Provenance,
    /// raw estimate / override, when both are known
    override_ratio: Option<f64>,
}

#[derive(Serialize)]
struct BoundsReport {
    spec_echo: SpecEcho,
    grid: Vec<usize>,
    guard_factor: f64,
    alpha: ConstantReport,
    beta: ConstantReport,
    gamma: ConstantReport,
    xi: ConstantReport,
}

fn cmd_bounds(cmd: BoundsCmd) -> Result<ExitCode> {
    let spec = cmd.spec.load()?;
    let grid = cmd.grid.build(&spec)?;
    // estimate all four regardless of overrides so the report can compare
    let pts = PointSet::build(&spec, &grid)?;
    let raw = [
        estimate_alpha(&spec, &pts)?,
        estimate_beta(&spec, &pts)?,
        estimate_gamma(&spec, &pts)?,
        estimate_xi(&spec, &pts)?,
    ];
    let resolved = resolve_bounds(&spec, &grid, cmd.grid.guard)?;
    let field = |est: &reachkit::bounds::BoundEstimate, raw: f64, ov: Option<f64>| ConstantReport {
        value: est.value,
        raw_estimate: Some(raw),
        provenance: est.provenance,
        override_ratio: ov.map(|o| raw / o),
    };
    let ov = spec.bounds_override.clone().unwrap_or_default();
    let report = BoundsReport {
        spec_echo: SpecEcho::from(&spec),
        grid: grid.counts().to_vec(),
        guard_factor: cmd.grid.guard,
        alpha: field(&resolved.alpha, raw[0], ov.alpha),
        beta: field(&resolved.beta, raw[1], ov.beta),
        gamma: field(&resolved.gamma, raw[2], ov.gamma),
        xi: field(&resolved.xi, raw[3], ov.xi),
    };
    emit(&report, cmd.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CheckReport {
    spec_echo: SpecEcho,
    bounds: BoundsSet,
    #[serde(flatten)]
    report: CertReport,
}

fn cmd_check(cmd: CheckCmd) -> Result<ExitCode> {
    let spec = cmd.spec.load()?;
    validate_geometry(&spec, 50).context("config geometry validation failed")?;
    let grid = cmd.grid.build(&spec)?;
    let pts = PointSet::build(&spec, &grid)?;
    let bounds = resolve_bounds(&spec, &grid, cmd.grid.guard)?;
    let report = scan_condition_over(&spec, &bounds, &grid, &pts)?;
    let verdict = report.verdict;
    emit(
        &CheckReport {
            spec_echo: SpecEcho::from(&spec),
            bounds,
            report,
        },
        cmd.out.as_deref(),
    )?;
    Ok(match verdict {
        Verdict::Pass => ExitCode::SUCCESS,
        Verdict::Fail => ExitCode::from(1),
        Verdict::Inconclusive => ExitCode::from(3),
    })
}

fn resolve_for_run(spec: &SystemSpec, grid_arg: &GridArg) -> Result<BoundsSet> {
    let grid = grid_arg.build(spec)?;
    Ok(resolve_bounds(spec, &grid, grid_arg.guard)?)
}

fn pick_x0(spec: &SystemSpec, x0: &Option<NumList>, seed: u64) -> Result<Vec<f64>> {
    match x0 {
        Some(v) => {
            if v.0.len() != spec.state_dim() {
                bail!("--x0 needs {} components, got {}", spec.state_dim(), v.0.len());
            }
            Ok(v.0.clone())
        }
        None => {
            // dedicated stream so explicit and sampled starts coexist
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            Ok(sample_initial_state(spec, &mut rng)?)
        }
    }
}

#[derive(Serialize)]
struct RunReport<'a> {
    spec_echo: SpecEcho,
    x0: Vec<f64>,
    horizon: f64,
    substeps: usize,
    noise: NoiseModel,
    seed: u64,
    clamp_fired: bool,
    rows: usize,
    samples: usize,
    outcome: &'a reachkit::simulate::ReachAvoidOutcome,
    trajectory: Option<String>,
}

fn write_trajectory(
    spec: &SystemSpec,
    traj: &SampledTrajectory,
    out: &Path,
    format: FormatArg,
) -> Result<()> {
    let file = File::create(out).with_context(|| format!("writing `{}`", out.display()))?;
    let mut w = BufWriter::new(file);
    match format {
        FormatArg::Csv => write_trajectory_csv(spec, traj, &mut w)?,
        FormatArg::Json => {
            serde_json::to_writer_pretty(&mut w, traj)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

fn outcome_exit(kind: OutcomeKind) -> ExitCode {
    match kind {
        OutcomeKind::GoalConfirmed => ExitCode::SUCCESS,
        OutcomeKind::SafetyViolated => ExitCode::from(1),
        OutcomeKind::Inconclusive => ExitCode::from(3),
    }
}

fn cmd_sim(cmd: SimCmd) -> Result<ExitCode> {
    let spec = cmd.spec.load()?;
    let bounds = resolve_for_run(&spec, &cmd.grid)?;
    let thresholds = goal_thresholds(&bounds, &spec);
    let x0 = pick_x0(&spec, &cmd.x0, cmd.seed)?;
    let horizon = cmd.horizon.unwrap_or_else(|| spec.default_horizon(bounds.alpha.value));
    let traj = simulate_sampled(
        &spec,
        &x0,
        horizon,
        cmd.substeps,
        cmd.noise.into(),
        cmd.seed,
        &thresholds,
    )?;
    if let Some(out) = &cmd.out {
        write_trajectory(&spec, &traj, out, cmd.format)?;
    }
    emit(
        &RunReport {
            spec_echo: SpecEcho::from(&spec),
            x0,
            horizon,
            substeps: cmd.substeps,
            noise: cmd.noise.into(),
            seed: cmd.seed,
            clamp_fired: traj.clamp_fired,
            rows: traj.times.len(),
            samples: traj.samples.len(),
            outcome: &traj.outcome,
            trajectory: cmd.out.as_ref().map(|p| p.display().to_string()),
        },
        None,
    )?;
    Ok(outcome_exit(traj.outcome.kind))
}

fn cmd_batch(cmd: BatchCmd) -> Result<ExitCode> {
    let spec = cmd.spec.load()?;
    let bounds = resolve_for_run(&spec, &cmd.grid)?;
    let thresholds = goal_thresholds(&bounds, &spec);
    let horizon = cmd.horizon.unwrap_or_else(|| spec.default_horizon(bounds.alpha.value));
    let stats = batch(
        &spec,
        cmd.runs,
        cmd.seed,
        horizon,
        cmd.substeps,
        cmd.noise.into(),
        &thresholds,
    )?;
    emit(&stats, cmd.out.as_deref())?;
    Ok(if stats.confirmed == stats.runs {
        ExitCode::SUCCESS
    } else if stats.violated > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::from(3)
    })
}

fn cmd_perturb(cmd: PerturbCmd) -> Result<ExitCode> {
    let spec = cmd.spec.load()?;
    let bounds = resolve_for_run(&spec, &cmd.grid)?;
    let (dbar_cert, _) = reachkit::certify::margin(&bounds, &spec);
    let dbar = cmd.dbar.unwrap_or(dbar_cert);
    let m = spec.control_dim();
    let signal = match cmd.signal {
        SignalArg::Random => PerturbSignal::PiecewiseConstant {
            dwell: cmd.dwell,
            seed: cmd.seed,
        },
        SignalArg::Constant => PerturbSignal::Constant(
            cmd.values
                .clone()
                .map(|v| v.0)
                .unwrap_or_else(|| vec![dbar / (m as f64).sqrt(); m]),
        ),
        SignalArg::Sinusoid => {
            let amplitude = cmd.amplitude.clone().map(|v| v.0).unwrap_or_else(|| vec![dbar; m]);
            let frequency = cmd.frequency.clone().map(|v| v.0).unwrap_or_else(|| vec![1.0; m]);
            PerturbSignal::Sinusoid { amplitude, frequency }
        }
    };
    let pert = PerturbationSpec { dbar, signal };
    let x0 = pick_x0(&spec, &cmd.x0, cmd.seed)?;
    let horizon = cmd.horizon.unwrap_or_else(|| spec.default_horizon(bounds.alpha.value));
    let traj = simulate_perturbed(&spec, &x0, &pert, horizon, cmd.dt)?;
    if let Some(out) = &cmd.out {
        write_trajectory(&spec, &traj, out, cmd.format)?;
    }
    #[derive(Serialize)]
    struct PerturbReport<'a> {
        spec_echo: SpecEcho,
        x0: Vec<f64>,
        horizon: f64,
        dt: f64,
        perturbation: &'a PerturbationSpec,
        outcome: &'a reachkit::simulate::ReachAvoidOutcome,
        trajectory: Option<String>,
    }
    emit(
        &PerturbReport {
            spec_echo: SpecEcho::from(&spec),
            x0,
            horizon,
            dt: cmd.dt,
            perturbation: &pert,
            outcome: &traj.outcome,
            trajectory: cmd.out.as_ref().map(|p| p.display().to_string()),
        },
        None,
    )?;
    Ok(outcome_exit(traj.outcome.kind))
}
