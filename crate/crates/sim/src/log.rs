//! Per-tick simulation records, run metrics and file export.
//!
//! `log.csv` holds only deterministic quantities so that identical run
//! configurations produce byte-identical files; wall-clock timings are
//! written separately to `timings.csv` and model updates to `events.csv`.
//! Floats are formatted with Rust's shortest round-trip representation,
//! so re-importing a CSV reproduces every value exactly.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use clbfet_core::trigger::UpdateEvent;
use clbfet_core::Obstacle;

/// One control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRow {
    pub t: f64,
    /// True plant state.
    pub state: Vector6<f64>,
    /// Noisy measured state the controller acted on.
    pub meas: Vector6<f64>,
    /// Desired state from the planning layer.
    pub x_d: Vector6<f64>,
    /// Reference state at `t`.
    pub reference: Vector6<f64>,
    pub mu_d: Vector3<f64>,
    pub mu_pd: Vector3<f64>,
    pub mu_qp: Vector3<f64>,
    pub mu_gp: Vector3<f64>,
    pub sigma: Vector3<f64>,
    pub d1: f64,
    pub d2: f64,
    pub trigger_value: f64,
    /// Safety-function value per obstacle.
    pub h: Vec<f64>,
    /// Applied thrust (after saturation).
    pub u: Vector3<f64>,
    pub fired: bool,
    pub updated: bool,
}

/// Wall-clock timing of one tick (nondeterministic; kept out of log.csv).
#[derive(Debug, Clone, PartialEq)]
pub struct TickTiming {
    pub t: f64,
    pub control_ms: f64,
    pub update_ms: f64,
    pub qp_iterations: usize,
    pub mpc_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RunStatus {
    Completed,
    Diverged { at_t: f64 },
}

#[derive(Debug, Clone)]
pub struct SimLog {
    pub dt: f64,
    pub n_obstacles: usize,
    pub rows: Vec<TickRow>,
    pub timings: Vec<TickTiming>,
    pub events: Vec<UpdateEvent>,
    pub status: RunStatus,
    /// Barrier rows dropped because the state was already outside the safe set.
    pub barrier_drops: usize,
    /// Safety-QP solves that failed and fell back to μ_qp = 0.
    pub qp_failures: usize,
    /// Model refits that failed (previous model kept).
    pub update_failures: usize,
    /// Turbulence samples clipped at the 6σ bound.
    pub clip_events: usize,
}

impl SimLog {
    pub fn new(dt: f64, n_obstacles: usize) -> Self {
        Self {
            dt,
            n_obstacles,
            rows: Vec::new(),
            timings: Vec::new(),
            events: Vec::new(),
            status: RunStatus::Completed,
            barrier_drops: 0,
            qp_failures: 0,
            update_failures: 0,
            clip_events: 0,
        }
    }

    pub fn completed(&self) -> bool {
        matches!(self.status, RunStatus::Completed)
    }

    fn csv_header(&self) -> String {
        let mut cols: Vec<String> = vec!["t".into()];
        let block = |name: &str, labels: &[&str]| -> Vec<String> {
            labels.iter().map(|l| format!("{name}_{l}")).collect()
        };
        let six = ["px", "py", "pz", "vx", "vy", "vz"];
        let three = ["x", "y", "z"];
        cols.extend(block("state", &six));
        cols.extend(block("meas", &six));
        cols.extend(block("xd", &six));
        cols.extend(block("ref", &six));
        cols.extend(block("mu_d", &three));
        cols.extend(block("mu_pd", &three));
        cols.extend(block("mu_qp", &three));
        cols.extend(block("mu_gp", &three));
        cols.extend(block("sigma", &three));
        cols.push("d1".into());
        cols.push("d2".into());
        cols.push("trigger_value".into());
        for i in 0..self.n_obstacles {
            cols.push(format!("h{i}"));
        }
        cols.extend(block("u", &three));
        cols.push("fired".into());
        cols.push("updated".into());
        cols.join(",")
    }

    /// Serializes the deterministic per-tick log.
    pub fn to_csv_string(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for row in &self.rows {
            let mut vals: Vec<String> = Vec::with_capacity(48 + self.n_obstacles);
            vals.push(format!("{}", row.t));
            for v in [&row.state, &row.meas, &row.x_d, &row.reference] {
                vals.extend(v.iter().map(|c| format!("{c}")));
            }
            for v in [&row.mu_d, &row.mu_pd, &row.mu_qp, &row.mu_gp, &row.sigma] {
                vals.extend(v.iter().map(|c| format!("{c}")));
            }
            vals.push(format!("{}", row.d1));
            vals.push(format!("{}", row.d2));
            vals.push(format!("{}", row.trigger_value));
            vals.extend(row.h.iter().map(|c| format!("{c}")));
            vals.extend(row.u.iter().map(|c| format!("{c}")));
            vals.push(if row.fired { "1".into() } else { "0".into() });
            vals.push(if row.updated { "1".into() } else { "0".into() });
            out.push_str(&vals.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses a CSV produced by [`SimLog::to_csv_string`] (timings, events
    /// and counters are not part of the per-tick file).
    pub fn from_csv_str(text: &str, dt: f64) -> io::Result<Self> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty csv".into()))?;
        let n_cols = header.split(',').count();
        let n_obstacles = header.split(',').filter(|c| c.starts_with('h')).count();
        let mut log = SimLog::new(dt, n_obstacles);
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|tok| tok.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(format!("row {}: {e}", i + 2)))?;
            if vals.len() != n_cols {
                return Err(bad(format!("row {}: expected {n_cols} columns", i + 2)));
            }
            let mut it = vals.into_iter();
            let take6 = |it: &mut std::vec::IntoIter<f64>| {
                Vector6::from_iterator(it.by_ref().take(6))
            };
            let take3 = |it: &mut std::vec::IntoIter<f64>| {
                Vector3::from_iterator(it.by_ref().take(3))
            };
            let t = it.next().unwrap();
            let state = take6(&mut it);
            let meas = take6(&mut it);
            let x_d = take6(&mut it);
            let reference = take6(&mut it);
            let mu_d = take3(&mut it);
            let mu_pd = take3(&mut it);
            let mu_qp = take3(&mut it);
            let mu_gp = take3(&mut it);
            let sigma = take3(&mut it);
            let d1 = it.next().unwrap();
            let d2 = it.next().unwrap();
            let trigger_value = it.next().unwrap();
            let h: Vec<f64> = it.by_ref().take(n_obstacles).collect();
            let u = take3(&mut it);
            let fired = it.next().unwrap() != 0.0;
            let updated = it.next().unwrap() != 0.0;
            log.rows.push(TickRow {
                t,
                state,
                meas,
                x_d,
                reference,
                mu_d,
                mu_pd,
                mu_qp,
                mu_gp,
                sigma,
                d1,
                d2,
                trigger_value,
                h,
                u,
                fired,
                updated,
            });
        }
        Ok(log)
    }

    fn timings_csv(&self) -> String {
        let mut out = String::from("t,control_ms,update_ms,qp_iterations,mpc_iterations\n");
        for t in &self.timings {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                t.t, t.control_ms, t.update_ms, t.qp_iterations, t.mpc_iterations
            ));
        }
        out
    }

    fn events_csv(&self) -> String {
        let mut out = String::from("tick,trigger_value,update_duration_ms,hyperparams_changed\n");
        for e in &self.events {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.tick,
                e.trigger_value,
                e.update_duration_ms,
                u8::from(e.hyperparams_changed)
            ));
        }
        out
    }
}

/// Aggregate run measurements.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Metrics {
    pub variant: String,
    pub trajectory: String,
    pub seed: u64,
    pub completed: bool,
    /// Mean position error against the reference [m].
    pub avg_tracking_error: f64,
    /// Mean distance to the nearest obstacle surface [m] (absent without
    /// obstacles).
    pub avg_obstacle_distance: Option<f64>,
    /// Minimum distance to any obstacle surface over the run [m].
    pub min_obstacle_distance: Option<f64>,
    /// True when the center distance dropped below the obstacle radius.
    pub collided: bool,
    pub avg_control_time_ms: f64,
    pub avg_update_time_ms: f64,
    pub update_count: usize,
    pub qp_iterations_median: f64,
    pub barrier_drops: usize,
    pub qp_failures: usize,
    pub update_failures: usize,
    pub clip_events: usize,
}

/// Computes run metrics from a (possibly partial) log.
pub fn compute_metrics(log: &SimLog, obstacles: &[Obstacle]) -> Metrics {
    let n = log.rows.len().max(1) as f64;
    let mut err_sum = 0.0;
    let mut dist_sum = 0.0;
    let mut dist_min = f64::INFINITY;
    let mut collided = false;
    for row in &log.rows {
        let p = Vector3::new(row.state[0], row.state[1], row.state[2]);
        let p_ref = Vector3::new(row.reference[0], row.reference[1], row.reference[2]);
        err_sum += (p - p_ref).norm();
        if !obstacles.is_empty() {
            let mut nearest = f64::INFINITY;
            for obstacle in obstacles {
                let center_dist = (p - obstacle.center).norm();
                if center_dist < obstacle.radius {
                    collided = true;
                }
                nearest = nearest.min(center_dist - obstacle.radius);
            }
            dist_sum += nearest;
            dist_min = dist_min.min(nearest);
        }
    }
    let timings_n = log.timings.len().max(1) as f64;
    let avg_control_time_ms =
        log.timings.iter().map(|t| t.control_ms).sum::<f64>() / timings_n;
    let avg_update_time_ms = if log.events.is_empty() {
        0.0
    } else {
        log.events.iter().map(|e| e.update_duration_ms).sum::<f64>() / log.events.len() as f64
    };
    let mut qp_iters: Vec<usize> = log.timings.iter().map(|t| t.qp_iterations).collect();
    qp_iters.sort_unstable();
    let qp_iterations_median = if qp_iters.is_empty() {
        0.0
    } else {
        qp_iters[qp_iters.len() / 2] as f64
    };
    Metrics {
        variant: String::new(),
        trajectory: String::new(),
        seed: 0,
        completed: log.completed(),
        avg_tracking_error: err_sum / n,
        avg_obstacle_distance: (!obstacles.is_empty()).then_some(dist_sum / n),
        min_obstacle_distance: (!obstacles.is_empty()).then_some(dist_min),
        collided,
        avg_control_time_ms,
        avg_update_time_ms,
        update_count: log.events.len(),
        qp_iterations_median,
        barrier_drops: log.barrier_drops,
        qp_failures: log.qp_failures,
        update_failures: log.update_failures,
        clip_events: log.clip_events,
    }
}

/// Writes `log.csv`, `timings.csv`, `events.csv`, `metrics.json` and
/// optionally `path.svg` into `dir`; returns the written paths.
pub fn export(
    log: &SimLog,
    metrics: &Metrics,
    obstacles: &[Obstacle],
    dir: &Path,
    plot: bool,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut write = |name: &str, contents: String| -> io::Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents)?;
        written.push(path);
        Ok(())
    };
    write("log.csv", log.to_csv_string())?;
    write("timings.csv", log.timings_csv())?;
    write("events.csv", log.events_csv())?;
    write(
        "metrics.json",
        serde_json::to_string_pretty(metrics).expect("metrics serialize") + "\n",
    )?;
    if plot {
        write("path.svg", crate::plot::render_path_svg(log, obstacles))?;
    }
    Ok(written)
}
