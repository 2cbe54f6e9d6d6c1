//! Event-triggered scheduling of GP refits and training-buffer management.
//!
//! Refitting the disturbance model (Gram refactorization plus
//! hyperparameter optimization) is the expensive part of the loop, so it
//! only runs when the solved stability constraint cannot be certified
//! with the current uncertainty margins: the trigger fires when
//! `2eᵀPB·μ_qp + eᵀPe/ε + 2‖eᵀPB‖·margin > 0` at the applied `μ_qp`.
//! Candidate training pairs are recorded every tick regardless; the
//! trigger gates only the refit.

use nalgebra::{Vector3, Vector6};

use crate::controller::{Gains, LyapunovCert, UncertaintyMargin};
use crate::gp::{
    self, Dataset, GpError, GpModel, HyperBounds, InputVec, OptimOptions,
};

/// When the disturbance model is refit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdatePolicy {
    /// Refit when the stability trigger fires.
    Event,
    /// Refit every `interval_ticks` control ticks.
    Periodic { interval_ticks: u64 },
    /// Never refit.
    Never,
}

/// Record of one model update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateEvent {
    pub tick: u64,
    /// Trigger expression value at the tick that caused the update (or the
    /// value observed at a periodic update).
    pub trigger_value: f64,
    /// Wall-clock duration, stamped by the caller that timed the refit;
    /// zero when untimed.
    pub update_duration_ms: f64,
    pub hyperparams_changed: bool,
}

/// Evaluates the stability trigger at the solved `μ_qp`.
///
/// Returns `(fired, value)` with `fired ⇔ value > 0`. The expression is
/// exactly the left-hand side of the relaxed stability row, so for a
/// solved QP it never exceeds `d₁` by more than the solver tolerance.
pub fn check_trigger(
    e: &Vector6<f64>,
    cert: &LyapunovCert,
    gains: &Gains,
    mu_qp: &Vector3<f64>,
    margin: UncertaintyMargin,
) -> (bool, f64) {
    let omega = cert.omega(e);
    let value =
        2.0 * omega.dot(mu_qp) + cert.value(e) / gains.epsilon + 2.0 * omega.norm() * margin.0;
    (value > 0.0, value)
}

/// Appends a candidate training pair, evicting FIFO beyond capacity.
pub fn record_sample(buffer: &mut Dataset, x: InputVec, y: Vector3<f64>) {
    buffer.push(x, y);
}

/// Decides when a refit is due and enforces the minimum inter-update gap
/// for the event policy.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateScheduler {
    pub policy: UpdatePolicy,
    /// Minimum ticks between event-triggered updates (chatter guard).
    pub min_gap_ticks: u64,
    /// Positive floor under which a trigger value is treated as solver
    /// noise rather than a genuine certificate failure.
    pub threshold: f64,
    /// Buffer fill at which the event policy performs its first fit even
    /// without a certificate failure, so predictions leave the prior soon
    /// after startup.
    pub bootstrap_samples: usize,
    last_update: Option<u64>,
}

impl UpdateScheduler {
    pub fn new(policy: UpdatePolicy, min_gap_ticks: u64, threshold: f64) -> Self {
        Self {
            policy,
            min_gap_ticks,
            threshold,
            bootstrap_samples: 30,
            last_update: None,
        }
    }

    pub fn with_bootstrap(mut self, samples: usize) -> Self {
        self.bootstrap_samples = samples;
        self
    }

    pub fn is_due(&self, tick: u64, trigger_value: f64, samples_available: usize) -> bool {
        match self.policy {
            UpdatePolicy::Never => false,
            UpdatePolicy::Periodic { interval_ticks } => {
                let n = interval_ticks.max(1);
                tick % n == 0
            }
            UpdatePolicy::Event => {
                if self.last_update.is_none() {
                    // first fit: wait for enough data, and for a strictly
                    // positive trigger value so every recorded event
                    // satisfies the trigger condition
                    return samples_available >= self.bootstrap_samples.max(1)
                        && trigger_value > 0.0;
                }
                let gap_ok = tick.saturating_sub(self.last_update.unwrap_or(0))
                    >= self.min_gap_ticks;
                gap_ok && trigger_value > self.threshold
            }
        }
    }

    pub fn mark_updated(&mut self, tick: u64) {
        self.last_update = Some(tick);
    }
}

/// Result of [`maybe_update`].
#[derive(Debug)]
pub enum UpdateOutcome {
    /// No refit was due; the previous model stays in use.
    NotDue,
    /// Refit completed; swap in the returned model.
    Updated { model: GpModel, event: UpdateEvent },
    /// Refit failed; keep the previous model and log the error.
    Failed { error: GpError },
}

/// Refits the model on the current buffer when the scheduler says so:
/// hyperparameter re-optimization (warm-started from the current
/// hyperparameters, so the marginal likelihood never decreases) followed
/// by a fresh factorization.
pub fn maybe_update(
    scheduler: &mut UpdateScheduler,
    model: &GpModel,
    buffer: &Dataset,
    tick: u64,
    trigger_value: f64,
    bounds: &HyperBounds,
    opts: &OptimOptions,
) -> UpdateOutcome {
    if buffer.is_empty() || !scheduler.is_due(tick, trigger_value, buffer.len()) {
        return UpdateOutcome::NotDue;
    }
    let init = model.hyperparams(0).clone();
    let optimized = match gp::optimize_hyperparameters(buffer, &init, bounds, opts) {
        Ok(res) => res,
        Err(error) => return UpdateOutcome::Failed { error },
    };
    let refit = match gp::fit(buffer, &optimized.hyper) {
        Ok(m) => m,
        Err(error) => return UpdateOutcome::Failed { error },
    };
    scheduler.mark_updated(tick);
    let changed = optimized.iterations > 0;
    UpdateOutcome::Updated {
        model: refit,
        event: UpdateEvent {
            tick,
            trigger_value,
            update_duration_ms: 0.0,
            hyperparams_changed: changed,
        },
    }
}
