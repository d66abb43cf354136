//! Command-line front end.
//!
//! ```text
//! ensemble-pulse synth <cfg>
//! ensemble-pulse verify <cfg> --control <csv> [--grid NxM]
//! ensemble-pulse simulate <cfg> --control <csv> --alpha A --beta B
//! ```
//!
//! Exit codes: 0 on success (for `synth`, on convergence), 2 when `synth`
//! stops without converging, 1 on any error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{defaulted_keys, RunConfig, StateLayout};
use crate::dynamics::ControlTrajectory;
use crate::error::{Error, Result};
use crate::io::{contours_csv, control_csv, read_control, trajectory_csv};
use crate::synth::{synthesize, IterationRecord, StageSummary, StopReason};
use crate::systems::EnsembleSystem;
use crate::verify::{grid_verify, simulate_member, GridSpec};

/// Overrides the output directory of every command unless `--out` is given.
pub const OUT_ENV: &str = "ENSEMBLE_PULSE_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ensemble-pulse", version, about = "Robust minimum-energy pulse synthesis for bilinear ensembles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output directory (default: $ENSEMBLE_PULSE_OUT, then the config's output_dir, then ./out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for grid verification.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run both synthesis stages and write control, trajectory, contours and report.
    Synth { config: PathBuf },
    /// Terminal error of a control over a parameter grid.
    Verify {
        config: PathBuf,
        #[arg(long)]
        control: PathBuf,
        /// Grid size as NxM, overriding the config.
        #[arg(long)]
        grid: Option<GridSpec>,
    },
    /// Trajectory of one ensemble member.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        control: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let outcome = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::config("threads", e.to_string()))
            .and_then(|pool| pool.install(|| dispatch(&cli))),
        None => dispatch(&cli),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Synth { config } => cmd_synth(config, cli),
        Command::Verify { config, control, grid } => cmd_verify(config, control, *grid, cli),
        Command::Simulate {
            config,
            control,
            alpha,
            beta,
        } => cmd_simulate(config, control, *alpha, *beta, cli),
    }
}

struct Loaded {
    text: String,
    config: RunConfig,
    system: EnsembleSystem,
}

fn load(path: &Path, cli: &Cli) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
    let mut config = RunConfig::from_json(&text)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let system = config.build_system()?;
    Ok(Loaded { text, config, system })
}

/// `--out`, then the environment variable, then the config, then `./out`.
pub fn output_dir(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn center(sys: &EnsembleSystem) -> (f64, f64) {
    (sys.alpha.center(), sys.beta.center())
}

#[derive(Serialize)]
struct ProblemSize {
    n: usize,
    m: usize,
    moment_dim: usize,
    steps: usize,
    stacked_rows: usize,
    h_rows: usize,
    h_cols: usize,
}

#[derive(Serialize)]
struct Status {
    converged: bool,
    exit_code: i32,
    stop_reason: StopReason,
    stage1: StageSummary,
    stage2: Option<StageSummary>,
    initial_error: f64,
    anchor_error: f64,
    final_error: f64,
    drift_guard_events: usize,
}

#[derive(Serialize)]
struct ControlSummary {
    energy: f64,
    riemann_energy: f64,
    max_abs: f64,
    bound_violation: f64,
}

#[derive(Serialize)]
struct GridSummary {
    grid: GridSpec,
    points: usize,
    max_error: f64,
    mean_error: f64,
    center_error: f64,
}

#[derive(Serialize)]
struct SynthReportFile<'a> {
    version: &'static str,
    config_path: String,
    config: RunConfig,
    defaults_applied: Vec<String>,
    problem: ProblemSize,
    state_layout: StateLayout,
    status: Status,
    control: ControlSummary,
    verification: GridSummary,
    wall_time_s: f64,
    stage1_history: &'a [IterationRecord],
    stage2_history: &'a [IterationRecord],
    refinement_history: &'a [IterationRecord],
}

fn member_error(sys: &EnsembleSystem, alpha: f64, beta: f64, ctrl: &ControlTrajectory) -> Result<f64> {
    let traj = simulate_member(sys, alpha, beta, ctrl)?;
    Ok((traj.terminal() - &sys.xt).norm())
}

pub fn cmd_synth(path: &Path, cli: &Cli) -> Result<i32> {
    let start = Instant::now();
    let Loaded { text, config, system } = load(path, cli)?;
    let ms = config.lift(&system)?;
    let grid = config.time_grid()?;
    let out = output_dir(cli.out.as_deref(), &config);

    let report = synthesize(&ms, &grid, &config.solver)?;
    let converged = report.converged(&ms, &config.solver);
    let code = if converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    let ctrl = &report.final_control;

    let layout = config.system.layout(system.n());
    let (ac, bc) = center(&system);
    let member = simulate_member(&system, ac, bc, ctrl)?;
    let check = grid_verify(&system, ctrl, &config.grid)?;
    let center_error = (member.terminal() - &system.xt).norm();

    write(&out, "control.csv", &control_csv(ctrl))?;
    write(&out, "trajectory.csv", &trajectory_csv(&grid, &member, &layout.columns))?;
    write(&out, "contours.csv", &contours_csv(&check))?;

    let h_cols = ms.m * if config.solver.freeze_final_interval { grid.steps() - 1 } else { grid.steps() };
    let file = SynthReportFile {
        version: env!("CARGO_PKG_VERSION"),
        config_path: path.display().to_string(),
        config: config.resolved(),
        defaults_applied: defaulted_keys(&text)?,
        problem: ProblemSize {
            n: system.n(),
            m: system.m(),
            moment_dim: ms.dim(),
            steps: grid.steps(),
            stacked_rows: ms.stacked_dynamics_rows(grid.steps()),
            h_rows: ms.dim(),
            h_cols,
        },
        state_layout: layout,
        status: Status {
            converged,
            exit_code: code,
            stop_reason: report.stop_reason,
            stage1: report.stage1.clone(),
            stage2: report.stage2.clone(),
            initial_error: report.initial_error,
            anchor_error: report.anchor_error,
            final_error: report.terminal_error(&ms),
            drift_guard_events: report.drift_guard_events,
        },
        control: ControlSummary {
            energy: ctrl.energy(),
            riemann_energy: ctrl.riemann_energy(),
            max_abs: ctrl.u.amax(),
            bound_violation: ctrl.bound_violation(&system.bounds),
        },
        verification: GridSummary {
            grid: config.grid,
            points: check.points.len(),
            max_error: check.max_error,
            mean_error: check.mean_error,
            center_error,
        },
        wall_time_s: start.elapsed().as_secs_f64(),
        stage1_history: &report.stage1_history,
        stage2_history: &report.stage2_history,
        refinement_history: &report.refinement_history,
    };
    write(&out, "report.json", &serde_json::to_string_pretty(&file)?)?;

    println!("moment dimension   {}", ms.dim());
    println!(
        "stage 1            {} iterations, {:?}, error {:.3e}",
        report.stage1.iterations, report.stage1.stop_reason, report.stage1.terminal_error
    );
    if let Some(s2) = &report.stage2 {
        println!(
            "stage 2            {} iterations, {:?}, error {:.3e}",
            s2.iterations, s2.stop_reason, s2.terminal_error
        );
    }
    println!("energy             {:.6e}", ctrl.energy());
    println!(
        "grid {}x{}          max {:.3e}  mean {:.3e}",
        config.grid.n_alpha_pts, config.grid.n_beta_pts, check.max_error, check.mean_error
    );
    println!("converged          {converged}");
    println!("output             {}", out.display());
    Ok(code)
}

#[derive(Serialize)]
struct VerifySummaryFile {
    config_path: String,
    control_path: String,
    summary: GridSummary,
}

pub fn cmd_verify(path: &Path, control: &Path, grid_override: Option<GridSpec>, cli: &Cli) -> Result<i32> {
    let Loaded { config, system, .. } = load(path, cli)?;
    let grid = config.time_grid()?;
    let ctrl = read_control(control, &grid, system.m())?;
    let spec = grid_override.unwrap_or(config.grid);
    spec.validate()?;
    let out = output_dir(cli.out.as_deref(), &config);

    let check = grid_verify(&system, &ctrl, &spec)?;
    let (ac, bc) = center(&system);
    let summary = GridSummary {
        grid: spec,
        points: check.points.len(),
        max_error: check.max_error,
        mean_error: check.mean_error,
        center_error: member_error(&system, ac, bc, &ctrl)?,
    };
    write(&out, "contours.csv", &contours_csv(&check))?;
    let file = VerifySummaryFile {
        config_path: path.display().to_string(),
        control_path: control.display().to_string(),
        summary,
    };
    write(&out, "verify_summary.json", &serde_json::to_string_pretty(&file)?)?;
    println!("points        {}", file.summary.points);
    println!("max_error     {:.16e}", file.summary.max_error);
    println!("mean_error    {:.16e}", file.summary.mean_error);
    println!("center_error  {:.16e}", file.summary.center_error);
    Ok(EXIT_OK)
}

pub fn cmd_simulate(path: &Path, control: &Path, alpha: f64, beta: f64, cli: &Cli) -> Result<i32> {
    let Loaded { config, system, .. } = load(path, cli)?;
    if !(alpha.is_finite() && beta.is_finite()) {
        return Err(Error::NonFinite("member parameters"));
    }
    if !system.alpha.contains(alpha) || !system.beta.contains(beta) {
        eprintln!("warning: ({alpha}, {beta}) lies outside the design rectangle");
    }
    let grid = config.time_grid()?;
    let ctrl = read_control(control, &grid, system.m())?;
    let out = output_dir(cli.out.as_deref(), &config);
    let traj = simulate_member(&system, alpha, beta, &ctrl)?;
    let layout = config.system.layout(system.n());
    write(&out, "member_trajectory.csv", &trajectory_csv(&grid, &traj, &layout.columns))?;
    println!("terminal_error  {:.16e}", (traj.terminal() - &system.xt).norm());
    Ok(EXIT_OK)
}
