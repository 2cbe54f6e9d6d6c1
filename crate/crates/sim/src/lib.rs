//! Simulation harness for the clbfet control stack: closed-loop runner,
//! ablation/baseline variants, metrics, TOML configuration, CSV/JSON/SVG
//! export and the benchmark sweep grid. The `clbfet` binary in this crate
//! exposes the `run`, `sweep` and `validate` subcommands.

pub mod config;
pub mod log;
pub mod plot;
pub mod run;

pub use config::Config;
pub use log::{compute_metrics, export, Metrics, RunStatus, SimLog};
pub use run::{configure_cell, run_experiment, sweep_grid, RunArtifacts, SweepCell, Variant};
