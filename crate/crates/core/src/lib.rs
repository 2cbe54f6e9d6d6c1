//! Safe learning-based trajectory tracking for feedback-linearizable systems.
//!
//! This crate implements the control stack for a quadrotor tracking a
//! reference trajectory under unknown wind disturbances:
//!
//! - [`plant`]: translational rigid-body dynamics, RK4 integration and
//!   noisy measurement of state and realized disturbance,
//! - [`wind`]: a three-component disturbance generator (constant offset,
//!   von Kármán turbulence, 1−cos gust),
//! - [`gp`]: per-axis Gaussian-process regression with squared-exponential
//!   kernels, log-marginal-likelihood hyperparameter optimization and
//!   high-probability confidence scaling,
//! - [`qp`]: a dense ADMM solver for inequality-constrained convex QPs,
//! - [`controller`]: the feedback-linearization law and the probabilistic
//!   CLF-CBF quadratic program producing the safety correction,
//! - [`mpc`]: condensed linear MPC over the linearized double integrator,
//! - [`trigger`]: event-triggered scheduling of GP refits,
//! - [`trajectories`]: analytic reference paths and obstacle placement.
//!
//! The crate is `no_std`-compatible (with `alloc`); disable the default
//! `std` feature for embedded targets. Simulation orchestration, file
//! formats and the CLI live in the companion `clbfet-sim` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod controller;
pub mod gp;
pub mod mpc;
pub mod plant;
pub mod qp;
pub mod trajectories;
pub mod trigger;
pub mod wind;

pub use controller::{Gains, LyapunovCert, Obstacle, QpOutcome, UncertaintyMargin};
pub use gp::{Confidence, Dataset, GpModel, Hyperparams};
pub use mpc::{MpcConfig, MpcPlanner};
pub use plant::{Attitude, PlantParams, State};
pub use qp::{QpProblem, QpSettings, QpSolution, QpStatus};
pub use trajectories::Reference;
pub use trigger::{UpdateEvent, UpdatePolicy, UpdateScheduler};
pub use wind::{WindField, WindParams};
