//! Command-line entry point: single runs, the full benchmark sweep and
//! configuration validation.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use clbfet_sim::log::RunStatus;
use clbfet_sim::run::{summary_header, summary_line};
use clbfet_sim::{
    configure_cell, export, run_experiment, sweep_grid, Config, Variant,
};

#[derive(Parser)]
#[command(
    name = "clbfet",
    about = "Quadrotor trajectory tracking under wind: learning-based \
             feedback linearization with a CLF-CBF safety QP, linear MPC \
             and event-triggered model updates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop experiment and export its logs.
    Run(RunArgs),
    /// Run the full trajectory × variant × seed grid.
    Sweep(SweepArgs),
    /// Check a configuration file against the schema.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Controller variant override (CLBFET, FL-QP-MPC, LB-FL-MPC, LB-FL-QP, ROBUST).
    #[arg(long)]
    variant: Option<String>,
    /// Trajectory override (line, circle, lemniscate, conical_spiral, cylindrical_helix).
    #[arg(long)]
    trajectory: Option<String>,
    /// Wind/measurement seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Duration override [s].
    #[arg(long)]
    duration: Option<f64>,
    /// Also write an SVG path plot.
    #[arg(long)]
    plot: bool,
    /// Output directory (default: ./out).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML configuration file (per-cell fields are overridden).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for per-run folders and summary.csv.
    #[arg(long)]
    out: PathBuf,
    /// Seeds per cell.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Comma-separated variant subset (default: all five).
    #[arg(long)]
    variants: Option<String>,
    /// Also write SVG plots for every run.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Validate(args) => cmd_validate(args),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let mut cfg = Config::load(&args.config)?;
    if let Some(variant) = args.variant {
        cfg.run.variant = Variant::parse(&variant)?.name().to_string();
    }
    if let Some(trajectory) = args.trajectory {
        cfg.run.trajectory = trajectory;
    }
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(duration) = args.duration {
        cfg.run.duration = duration;
    }

    let artifacts = run_experiment(&cfg)?;
    let written = export(
        &artifacts.log,
        &artifacts.metrics,
        &artifacts.obstacles,
        &args.out,
        args.plot,
    )
    .context("writing outputs")?;

    let m = &artifacts.metrics;
    println!(
        "{} on {} (seed {}): avg tracking error {:.4} m, min obstacle distance {}, \
         collided {}, {} updates, avg control {:.3} ms",
        m.variant,
        m.trajectory,
        m.seed,
        m.avg_tracking_error,
        m.min_obstacle_distance
            .map_or_else(|| "n/a".to_string(), |d| format!("{d:.3} m")),
        m.collided,
        m.update_count,
        m.avg_control_time_ms,
    );
    for path in &written {
        println!("wrote {}", path.display());
    }
    match artifacts.log.status {
        RunStatus::Completed => Ok(ExitCode::SUCCESS),
        RunStatus::Diverged { at_t } => {
            eprintln!("run diverged at t = {at_t:.3} s; partial log exported");
            Ok(ExitCode::FAILURE)
        }
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let base = Config::load(&args.config)?;
    let variants: Vec<Variant> = match &args.variants {
        Some(list) => list
            .split(',')
            .map(|s| Variant::parse(s.trim()))
            .collect::<Result<_>>()?,
        None => Variant::all().to_vec(),
    };
    let trajectories: Vec<String> =
        ["line", "circle", "lemniscate", "conical_spiral", "cylindrical_helix"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    let cells = sweep_grid(&trajectories, &variants, args.seeds);
    println!("sweep: {} runs", cells.len());

    let results: Vec<Result<(String, bool)>> = cells
        .par_iter()
        .map(|cell| {
            let cfg = configure_cell(&base, cell);
            let artifacts = run_experiment(&cfg)?;
            let dir = args
                .out
                .join(&cell.trajectory)
                .join(cell.variant.name())
                .join(format!("seed{}", cell.seed));
            export(&artifacts.log, &artifacts.metrics, &artifacts.obstacles, &dir, args.plot)?;
            Ok((summary_line(&artifacts.metrics), artifacts.log.completed()))
        })
        .collect();

    let mut summary = summary_header();
    summary.push('\n');
    let mut all_completed = true;
    for result in results {
        let (line, completed) = result?;
        summary.push_str(&line);
        summary.push('\n');
        all_completed &= completed;
    }
    std::fs::create_dir_all(&args.out)?;
    let summary_path = args.out.join("summary.csv");
    std::fs::write(&summary_path, summary)?;
    println!("wrote {}", summary_path.display());
    Ok(if all_completed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode> {
    let cfg = Config::load(&args.config)?;
    let issues = cfg.validate();
    if issues.is_empty() {
        println!("{}: ok", args.config.display());
        Ok(ExitCode::SUCCESS)
    } else {
        for issue in &issues {
            eprintln!("{}: {issue}", args.config.display());
        }
        Ok(ExitCode::from(2))
    }
}
