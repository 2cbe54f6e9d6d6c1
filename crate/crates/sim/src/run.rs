//! Closed-loop experiment runner and the ablation/baseline variants.
//!
//! Tick order: measure → plan (MPC) → predict disturbance (GP) → assemble
//! and solve the safety QP → evaluate the update trigger → refit if due →
//! actuate → integrate the plant. Candidate training pairs are recorded
//! every tick from backward differences of the measured velocity.

use std::time::Instant;

use anyhow::{anyhow, Result};
use nalgebra::{Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use clbfet_core::controller::{
    cbf_constraint, clf_constraint, compose_pseudo_control, control_constraint,
    feedback_linearize, h_value, lyapunov_solve, pd_term, solve_safety_qp, QpOutcome,
    UncertaintyMargin,
};
use clbfet_core::gp::{self, Dataset, GpModel};
use clbfet_core::plant::{self, State};
use clbfet_core::qp::{QpSolution, QpStatus, WarmStart};
use clbfet_core::trajectories::Reference;
use clbfet_core::trigger::{self, UpdatePolicy, UpdateScheduler};
use clbfet_core::{MpcPlanner, Obstacle, WindField};

use crate::config::Config;
use crate::log::{compute_metrics, Metrics, RunStatus, SimLog, TickRow, TickTiming};

/// Separates the measurement-noise stream from the wind stream under one
/// user-facing seed.
const MEASUREMENT_STREAM_SALT: u64 = 0x6d65_6173_7572_6531;

/// Controller variants of the ablation and baseline studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Full scheme: MPC + GP compensation + safety QP + event updates.
    Clbfet,
    /// No learning: μ_gp = 0, σ = 0, no model updates.
    FlQpMpc,
    /// No safety QP: μ_qp = 0, time-triggered (periodic) updates.
    LbFlMpc,
    /// No MPC: desired state straight from the raw reference, no
    /// feedforward.
    LbFlQp,
    /// Worst-case margins: ‖β‖‖σ‖ replaced by a fixed disturbance bound.
    Robust,
}

impl Variant {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_uppercase().replace('_', "-").as_str() {
            "CLBFET" => Ok(Variant::Clbfet),
            "FL-QP-MPC" => Ok(Variant::FlQpMpc),
            "LB-FL-MPC" => Ok(Variant::LbFlMpc),
            "LB-FL-QP" => Ok(Variant::LbFlQp),
            "ROBUST" => Ok(Variant::Robust),
            other => Err(anyhow!(
                "unknown variant {other}; expected CLBFET, FL-QP-MPC, LB-FL-MPC, LB-FL-QP or ROBUST"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Clbfet => "CLBFET",
            Variant::FlQpMpc => "FL-QP-MPC",
            Variant::LbFlMpc => "LB-FL-MPC",
            Variant::LbFlQp => "LB-FL-QP",
            Variant::Robust => "ROBUST",
        }
    }

    pub fn all() -> [Variant; 5] {
        [Variant::Clbfet, Variant::FlQpMpc, Variant::LbFlMpc, Variant::LbFlQp, Variant::Robust]
    }

    fn uses_gp(self) -> bool {
        !matches!(self, Variant::FlQpMpc)
    }

    fn uses_safety_qp(self) -> bool {
        !matches!(self, Variant::LbFlMpc)
    }

    fn uses_mpc(self) -> bool {
        !matches!(self, Variant::LbFlQp)
    }

    fn update_policy(self, cfg: &Config) -> UpdatePolicy {
        match self {
            Variant::FlQpMpc => UpdatePolicy::Never,
            Variant::LbFlMpc => {
                UpdatePolicy::Periodic { interval_ticks: cfg.trigger.periodic_interval }
            }
            _ => match cfg.trigger.policy.as_str() {
                "periodic" => {
                    UpdatePolicy::Periodic { interval_ticks: cfg.trigger.periodic_interval }
                }
                "never" => UpdatePolicy::Never,
                _ => UpdatePolicy::Event,
            },
        }
    }
}

/// Everything a finished (or aborted) run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub log: SimLog,
    pub metrics: Metrics,
    pub obstacles: Vec<Obstacle>,
}

struct PrevTick {
    v_meas: Vector3<f64>,
    input: Vector6<f64>,
    mu_eff: Vector3<f64>,
}

fn saturate(u: Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|i, _| u[i].clamp(lo[i], hi[i]))
}

fn zero_outcome() -> QpOutcome {
    QpOutcome {
        mu_qp: Vector3::zeros(),
        d1: 0.0,
        d2: 0.0,
        status: QpStatus::Solved,
        iterations: 0,
        solution: QpSolution {
            z: nalgebra::DVector::zeros(5),
            y: nalgebra::DVector::zeros(0),
            status: QpStatus::Solved,
            primal_residual: 0.0,
            dual_residual: 0.0,
            iterations: 0,
        },
    }
}

/// Runs the closed loop for the configured duration.
///
/// Plant divergence aborts the run and returns the partial log with
/// `RunStatus::Diverged`; all other errors are configuration problems.
pub fn run_experiment(cfg: &Config) -> Result<RunArtifacts> {
    let issues = cfg.validate();
    if !issues.is_empty() {
        return Err(anyhow!("invalid configuration: {}", issues.join("; ")));
    }
    let variant = Variant::parse(&cfg.run.variant)?;
    let reference = cfg.reference()?;
    let obstacles =
        reference.place_obstacles(&cfg.trajectory.obstacle_times, cfg.trajectory.obstacle_radius);
    let params = cfg.plant_params();
    let gains = cfg.gains();
    let cert = lyapunov_solve(&gains).map_err(|e| anyhow!("lyapunov certificate: {e}"))?;
    let cbf = cfg.cbf_params();
    let qp_settings = cfg.qp_settings();
    let wind = WindField::new(&cfg.wind_params(), cfg.run.seed);
    let mut rng_meas = ChaCha8Rng::seed_from_u64(cfg.run.seed ^ MEASUREMENT_STREAM_SALT);

    let mut planner = MpcPlanner::new(cfg.mpc_config());
    let horizon = cfg.mpc.horizon;
    let mut model = GpModel::prior(cfg.gp_hyper());
    let mut buffer = Dataset::new(cfg.gp.capacity);
    let mut scheduler =
        UpdateScheduler::new(variant.update_policy(cfg), cfg.trigger.min_gap, cfg.trigger.threshold)
            .with_bootstrap(cfg.trigger.bootstrap_samples);
    let bounds = cfg.hyper_bounds();
    let optim = cfg.optim_options();
    let beta_mode = cfg.beta_mode();
    let f_hat = params.gravity;
    let dt = params.dt;
    let t0 = reference.t0;

    let n_ticks = (cfg.run.duration / dt).round() as u64;
    let mut log = SimLog::new(dt, obstacles.len());
    let mut x_true = State::from_vector(&reference.state(t0));
    let mut warm: Option<WarmStart> = None;
    let mut prev: Option<PrevTick> = None;
    // desired state of the optimized (virtual) plan; the MPC re-plans it
    // toward the reference window each tick and it evolves as an exact
    // double integrator under μ_d, as the error dynamics assume
    let mut x_d_plan = reference.state(t0);

    for k in 0..=n_ticks {
        let t = t0 + k as f64 * dt;
        let att = cfg.attitude_at(t);
        let rot = plant::rotation_matrix(&att);
        let x_meas = plant::measure(&x_true, &params, &mut rng_meas);
        let xv = x_meas.to_vector();

        // label the previous interval and record the pair; the input is the
        // interval-midpoint state, whose averaged velocity noise is
        // uncorrelated with the finite-difference label noise
        if let Some(p) = &prev {
            let y = plant::measure_disturbance(&p.v_meas, &x_meas.v, &p.mu_eff, dt);
            trigger::record_sample(&mut buffer, (p.input + xv) * 0.5, y);
        }

        let control_start = Instant::now();

        // planning layer
        let (x_d, mu_d, mpc_iterations) = if variant.uses_mpc() {
            let window: Vec<Vector6<f64>> =
                (1..=horizon).map(|i| reference.state(t + i as f64 * dt)).collect();
            let step = planner.solve(&x_d_plan, &window, &qp_settings);
            let x_d = x_d_plan;
            x_d_plan = step.x_d;
            (x_d, step.mu_d, step.iterations)
        } else {
            (reference.state(t), Vector3::zeros(), 0)
        };
        let e = xv - x_d;
        let mu_pd = pd_term(&e, &gains);

        // learned compensation and uncertainty margin
        let (mu_gp, sigma) = if variant.uses_gp() {
            gp::predict(&model, &xv)
        } else {
            (Vector3::zeros(), Vector3::zeros())
        };
        let margin = match variant {
            Variant::Robust => UncertaintyMargin::worst_case(cfg.controller.robust_delta_max),
            Variant::FlQpMpc => UncertaintyMargin::zero(),
            _ => {
                let confidence = gp::confidence_beta(&model, cfg.gp.varsigma, beta_mode)
                    .map_err(|e| anyhow!("confidence scale: {e}"))?;
                UncertaintyMargin::from_confidence(&confidence.beta, &sigma)
            }
        };

        // safety QP
        let h: Vec<f64> = obstacles.iter().map(|o| h_value(&x_meas, o, &cbf)).collect();
        let outcome = if variant.uses_safety_qp() {
            let mut rows = vec![clf_constraint(&e, &cert, &gains, margin)];
            for obstacle in &obstacles {
                match cbf_constraint(&x_meas, obstacle, &mu_d, &mu_pd, margin, &cbf) {
                    Ok(row) => rows.push(row),
                    Err(_) => log.barrier_drops += 1,
                }
            }
            rows.extend(
                control_constraint(&mu_d, &mu_pd, &mu_gp, &f_hat, &rot, params.mass, &gains)
                    .map_err(|e| anyhow!("control rows: {e}"))?,
            );
            let outcome = solve_safety_qp(&rows, &gains, &qp_settings, warm.as_ref());
            if outcome.solved() {
                warm = Some(WarmStart::from(&outcome.solution));
            } else {
                warm = None;
                log.qp_failures += 1;
            }
            outcome
        } else {
            zero_outcome()
        };

        let (fired, trigger_value) =
            trigger::check_trigger(&e, &cert, &gains, &outcome.mu_qp, margin);
        let control_ms = control_start.elapsed().as_secs_f64() * 1e3;

        // model update
        let update_start = Instant::now();
        let mut updated = false;
        match trigger::maybe_update(
            &mut scheduler,
            &model,
            &buffer,
            k,
            trigger_value,
            &bounds,
            &optim,
        ) {
            trigger::UpdateOutcome::Updated { model: refit, mut event } => {
                event.update_duration_ms = update_start.elapsed().as_secs_f64() * 1e3;
                model = refit;
                log.events.push(event);
                updated = true;
            }
            trigger::UpdateOutcome::NotDue => {}
            trigger::UpdateOutcome::Failed { .. } => log.update_failures += 1,
        }
        let update_ms = if updated { update_start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };

        // actuation
        let mu = compose_pseudo_control(&mu_d, &mu_pd, &outcome.mu_qp, &mu_gp);
        let u_raw = feedback_linearize(&mu, &f_hat, &rot, params.mass);
        let u = saturate(u_raw, &gains.u_min, &gains.u_max);
        let mu_eff = f_hat + rot * u / params.mass;

        log.rows.push(TickRow {
            t,
            state: x_true.to_vector(),
            meas: xv,
            x_d,
            reference: reference.state(t),
            mu_d,
            mu_pd,
            mu_qp: outcome.mu_qp,
            mu_gp,
            sigma,
            d1: outcome.d1,
            d2: outcome.d2,
            trigger_value,
            h,
            u,
            fired,
            updated,
        });
        log.timings.push(TickTiming {
            t,
            control_ms,
            update_ms,
            qp_iterations: outcome.iterations,
            mpc_iterations,
        });

        if k == n_ticks {
            break;
        }
        match plant::step(&x_true, &att, &u, |tt| wind.total(tt), t, &params) {
            Ok(next) => x_true = next,
            Err(_) => {
                log.status = RunStatus::Diverged { at_t: t };
                break;
            }
        }
        prev = Some(PrevTick { v_meas: x_meas.v, input: xv, mu_eff });
    }

    log.clip_events = wind.clip_events();
    let mut metrics = compute_metrics(&log, &obstacles);
    metrics.variant = variant.name().to_string();
    metrics.trajectory = cfg.run.trajectory.clone();
    metrics.seed = cfg.run.seed;
    Ok(RunArtifacts { log, metrics, obstacles })
}

/// One cell of the benchmark grid.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub trajectory: String,
    pub variant: Variant,
    pub seed: u64,
}

/// Full benchmark grid: every trajectory × variant × seed.
pub fn sweep_grid(trajectories: &[String], variants: &[Variant], seeds: u64) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for trajectory in trajectories {
        for &variant in variants {
            for seed in 0..seeds {
                cells.push(SweepCell { trajectory: trajectory.clone(), variant, seed });
            }
        }
    }
    cells
}

/// Applies a sweep cell onto a base configuration.
pub fn configure_cell(base: &Config, cell: &SweepCell) -> Config {
    let mut cfg = base.clone();
    cfg.run.trajectory = cell.trajectory.clone();
    cfg.run.variant = cell.variant.name().to_string();
    cfg.run.seed = cell.seed;
    cfg
}

/// CSV summary line of a sweep run.
pub fn summary_header() -> String {
    "trajectory,variant,seed,completed,avg_tracking_error,avg_obstacle_distance,\
     min_obstacle_distance,collided,avg_control_time_ms,avg_update_time_ms,update_count,\
     qp_iterations_median"
        .to_string()
}

pub fn summary_line(m: &Metrics) -> String {
    let opt = |v: Option<f64>| v.map_or(String::from(""), |x| format!("{x}"));
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        m.trajectory,
        m.variant,
        m.seed,
        m.completed,
        m.avg_tracking_error,
        opt(m.avg_obstacle_distance),
        opt(m.min_obstacle_distance),
        m.collided,
        m.avg_control_time_ms,
        m.avg_update_time_ms,
        m.update_count,
        m.qp_iterations_median
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_config() -> Config {
        let mut cfg = Config::default();
        cfg.run.duration = 2.0;
        cfg.run.trajectory = "line".into();
        cfg.wind.constant_magnitude = [3.0, 3.0];
        cfg.wind.turbulence.intensities = [0.0; 3];
        cfg.wind.gust.amplitude = [0.0; 3];
        cfg
    }

    #[test]
    fn variant_names_round_trip() {
        for variant in Variant::all() {
            assert_eq!(Variant::parse(variant.name()).unwrap(), variant);
        }
        assert!(Variant::parse("clbfet").is_ok());
        assert!(Variant::parse("lb_fl_qp").is_ok());
        assert!(Variant::parse("what").is_err());
    }

    #[test]
    fn run_produces_expected_row_count() {
        let cfg = quick_config();
        let artifacts = run_experiment(&cfg).unwrap();
        assert!(artifacts.log.completed());
        assert_eq!(artifacts.log.rows.len(), 201);
        assert_eq!(artifacts.obstacles.len(), 3);
        assert_eq!(artifacts.log.rows[0].h.len(), 3);
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = quick_config();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.log.to_csv_string(), b.log.to_csv_string());
    }

    #[test]
    fn all_variants_complete_a_short_run() {
        for variant in Variant::all() {
            let mut cfg = quick_config();
            cfg.run.variant = variant.name().into();
            let artifacts = run_experiment(&cfg).unwrap();
            assert!(artifacts.log.completed(), "{}", variant.name());
            if variant == Variant::FlQpMpc {
                assert_eq!(artifacts.metrics.update_count, 0);
                assert!(artifacts.log.rows.iter().all(|r| r.mu_gp == Vector3::zeros()));
            }
            if variant == Variant::LbFlMpc {
                assert!(artifacts.log.rows.iter().all(|r| r.mu_qp == Vector3::zeros()));
                assert!(artifacts.metrics.update_count > 0, "periodic updates expected");
            }
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = quick_config();
        cfg.plant.mass = -2.0;
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn gp_compensation_tracks_constant_wind() {
        // constant-only wind: the learned mean should approach the true
        // disturbance within a few updates
        let mut cfg = quick_config();
        cfg.run.duration = 6.0;
        let artifacts = run_experiment(&cfg).unwrap();
        let tail = &artifacts.log.rows[artifacts.log.rows.len() - 100..];
        let wind = WindField::new(&cfg.wind_params(), cfg.run.seed);
        let delta = wind.constant_component();
        let mean_err = tail
            .iter()
            .map(|r| (r.mu_gp - delta).norm())
            .sum::<f64>()
            / tail.len() as f64;
        assert!(mean_err < 0.5, "learned compensation off by {mean_err}");
    }
}
