//! TOML run configuration.
//!
//! Every numeric default of the control stack lives here (and in
//! `configs/default.toml`, which mirrors this schema): controller gains
//! and penalties, GP hyperparameters and bounds, solver tolerances, wind
//! parameters and trajectory geometry. Sections may be omitted; missing
//! keys take the defaults below.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use clbfet_core::controller::CbfParams;
use clbfet_core::gp::{BetaMode, HyperBounds, Hyperparams, OptimOptions};
use clbfet_core::plant::{Attitude, PlantParams};
use clbfet_core::trajectories::{Reference, ReferenceKind};
use clbfet_core::wind::{GustParams, TurbulenceParams, WindParams};
use clbfet_core::{Gains, MpcConfig, QpSettings};

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub plant: PlantSection,
    pub wind: WindSection,
    pub gp: GpSection,
    pub qp: QpSection,
    pub controller: ControllerSection,
    pub mpc: MpcSection,
    pub trigger: TriggerSection,
    pub trajectory: TrajectorySection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// One of CLBFET, FL-QP-MPC, LB-FL-MPC, LB-FL-QP, ROBUST.
    pub variant: String,
    /// One of line, circle, lemniscate, conical_spiral, cylindrical_helix.
    pub trajectory: String,
    pub seed: u64,
    /// Simulated duration [s].
    pub duration: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            variant: "CLBFET".into(),
            trajectory: "lemniscate".into(),
            seed: 0,
            duration: 35.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub mass: f64,
    pub gravity: [f64; 3],
    pub noise_std: f64,
    pub dt: f64,
    pub attitude: AttitudeSection,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gravity: [0.0, 0.0, -9.81],
            noise_std: 0.01,
            dt: 0.01,
            attitude: AttitudeSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AttitudeSection {
    /// "level" for the hover-aligned identity attitude, or "wobble" for a
    /// prescribed sinusoidal profile.
    pub profile: String,
    /// Wobble amplitude per axis (roll, pitch, yaw) [rad].
    pub amplitude: [f64; 3],
    pub frequency_hz: f64,
}

impl Default for AttitudeSection {
    fn default() -> Self {
        Self { profile: "level".into(), amplitude: [0.0; 3], frequency_hz: 0.2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct WindSection {
    /// Magnitude range [low, high] of the constant component [m/s²].
    pub constant_magnitude: [f64; 2],
    pub turbulence: TurbulenceSection,
    pub gust: GustSection,
}

impl Default for WindSection {
    fn default() -> Self {
        Self {
            constant_magnitude: [3.0, 10.0],
            turbulence: TurbulenceSection::default(),
            gust: GustSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TurbulenceSection {
    pub intensities: [f64; 3],
    pub length_scales: [f64; 3],
    pub airspeed: f64,
    pub modes: usize,
}

impl Default for TurbulenceSection {
    fn default() -> Self {
        let d = TurbulenceParams::default();
        Self {
            intensities: d.intensities,
            length_scales: d.length_scales,
            airspeed: d.airspeed,
            modes: d.modes,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GustSection {
    pub t_start: f64,
    pub duration: f64,
    pub amplitude: [f64; 3],
}

impl Default for GustSection {
    fn default() -> Self {
        Self { t_start: 12.0, duration: 4.0, amplitude: [2.0, 0.0, -3.0] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GpSection {
    pub sigma_f: f64,
    pub length_scales: [f64; 6],
    pub noise_var: f64,
    /// FIFO training-buffer capacity.
    pub capacity: usize,
    /// Probability parameter ς of the confidence bound.
    pub varsigma: f64,
    /// "fixed" or "information_gain".
    pub beta_mode: String,
    pub beta_fixed: f64,
    /// RKHS-norm bound on the disturbance (information-gain mode only).
    pub rkhs_bound: f64,
    pub bounds: GpBoundsSection,
    pub hyperopt: HyperoptSection,
}

impl Default for GpSection {
    fn default() -> Self {
        Self {
            sigma_f: 3.0,
            length_scales: [2.0; 6],
            noise_var: 2.0,
            capacity: 60,
            varsigma: 0.05,
            beta_mode: "fixed".into(),
            beta_fixed: 1.0,
            rkhs_bound: 10.0,
            bounds: GpBoundsSection::default(),
            hyperopt: HyperoptSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GpBoundsSection {
    pub sigma_f: [f64; 2],
    pub length_scale: [f64; 2],
    pub noise_var: [f64; 2],
}

impl Default for GpBoundsSection {
    fn default() -> Self {
        Self {
            sigma_f: [1e-2, 1e2],
            length_scale: [0.25, 1e3],
            noise_var: [0.5, 1e2],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct HyperoptSection {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for HyperoptSection {
    fn default() -> Self {
        Self { max_iter: 40, grad_tol: 1e-5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct QpSection {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
}

impl Default for QpSection {
    fn default() -> Self {
        Self { eps_abs: 1e-6, eps_rel: 1e-6, max_iter: 4000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    /// Diagonal of the proportional gain matrix.
    pub kp: [f64; 3],
    /// Diagonal of the derivative gain matrix.
    pub kd: [f64; 3],
    /// Diagonal of the Lyapunov right-hand side Q.
    pub q_lyap: [f64; 6],
    pub epsilon: f64,
    pub p1: f64,
    pub p2: f64,
    pub u_min: [f64; 3],
    pub u_max: [f64; 3],
    /// Worst-case disturbance bound of the ROBUST baseline [m/s²].
    pub robust_delta_max: f64,
    pub cbf: CbfSection,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            kp: [1.0; 3],
            kd: [1.0; 3],
            q_lyap: [1.0; 6],
            epsilon: 100.0,
            p1: 1e8,
            p2: 1e12,
            u_min: [-30.0; 3],
            u_max: [30.0; 3],
            robust_delta_max: 10.0,
            cbf: CbfSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CbfSection {
    pub gamma: f64,
    pub gamma_p: f64,
}

impl Default for CbfSection {
    fn default() -> Self {
        Self { gamma: 0.08, gamma_p: 5.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSection {
    pub horizon: usize,
    /// Diagonal of the state tracking weight.
    pub q_weights: [f64; 6],
    /// Diagonal of the input weight.
    pub r_weights: [f64; 3],
    /// Symmetric input box; non-finite disables it.
    pub input_bound: f64,
    pub state_lower: Option<[f64; 6]>,
    pub state_upper: Option<[f64; 6]>,
}

impl Default for MpcSection {
    fn default() -> Self {
        Self {
            horizon: 20,
            q_weights: [10.0, 10.0, 10.0, 0.5, 0.5, 0.5],
            r_weights: [0.5; 3],
            input_bound: 30.0,
            state_lower: None,
            state_upper: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerSection {
    /// "event", "periodic" or "never" (the variant may override this).
    pub policy: String,
    pub periodic_interval: u64,
    pub min_gap: u64,
    /// Noise floor below which a positive trigger value is ignored.
    pub threshold: f64,
    /// Buffer fill that forces the first fit under the event policy.
    pub bootstrap_samples: usize,
}

impl Default for TriggerSection {
    fn default() -> Self {
        Self {
            policy: "event".into(),
            periodic_interval: 1,
            min_gap: 5,
            threshold: 0.0,
            bootstrap_samples: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    pub t0: f64,
    pub t_end: f64,
    pub obstacle_times: Vec<f64>,
    pub obstacle_radius: f64,
    pub line: LineSection,
    pub circle: CircleSection,
    pub lemniscate: LemniscateSection,
    pub conical_spiral: ConicalSpiralSection,
    pub cylindrical_helix: CylindricalHelixSection,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            t0: 0.0,
            t_end: 35.0,
            obstacle_times: vec![10.0, 19.0, 28.0],
            obstacle_radius: 1.0,
            line: LineSection::default(),
            circle: CircleSection::default(),
            lemniscate: LemniscateSection::default(),
            conical_spiral: ConicalSpiralSection::default(),
            cylindrical_helix: CylindricalHelixSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LineSection {
    pub start: [f64; 3],
    pub direction: [f64; 3],
    pub speed: f64,
}

impl Default for LineSection {
    fn default() -> Self {
        Self { start: [0.0, 0.0, 2.0], direction: [1.0, 0.0, 0.0], speed: 1.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CircleSection {
    pub center: [f64; 3],
    pub radius: f64,
    pub period: f64,
}

impl Default for CircleSection {
    fn default() -> Self {
        Self { center: [0.0, 0.0, 2.0], radius: 5.0, period: 20.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LemniscateSection {
    pub center: [f64; 3],
    pub half_width: f64,
    pub period: f64,
}

impl Default for LemniscateSection {
    fn default() -> Self {
        Self { center: [0.0, 0.0, 2.0], half_width: 5.0, period: 16.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ConicalSpiralSection {
    pub center: [f64; 3],
    pub base_radius: f64,
    pub radius_rate: f64,
    pub period: f64,
    pub climb_rate: f64,
}

impl Default for ConicalSpiralSection {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0, 1.0],
            base_radius: 1.5,
            radius_rate: 0.12,
            period: 18.0,
            climb_rate: 0.08,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CylindricalHelixSection {
    pub center: [f64; 3],
    pub radius: f64,
    pub period: f64,
    pub climb_rate: f64,
}

impl Default for CylindricalHelixSection {
    fn default() -> Self {
        Self { center: [0.0, 0.0, 1.0], radius: 4.0, period: 15.0, climb_rate: 0.1 }
    }
}

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn vec6(a: [f64; 6]) -> Vector6<f64> {
    Vector6::from_row_slice(&a)
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: Config = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Schema/consistency check; returns every problem found.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                issues.push(msg.to_string());
            }
        };
        check(
            crate::run::Variant::parse(&self.run.variant).is_ok(),
            "run.variant must be one of CLBFET, FL-QP-MPC, LB-FL-MPC, LB-FL-QP, ROBUST",
        );
        check(self.reference().is_ok(), "run.trajectory is not a known kind");
        check(self.run.duration > 0.0, "run.duration must be positive");
        check(self.plant.mass > 0.0, "plant.mass must be positive");
        check(self.plant.dt > 0.0, "plant.dt must be positive");
        check(self.plant.noise_std >= 0.0, "plant.noise_std must be nonnegative");
        check(
            matches!(self.plant.attitude.profile.as_str(), "level" | "wobble"),
            "plant.attitude.profile must be level or wobble",
        );
        check(self.wind_params().is_valid(), "wind section is inconsistent");
        check(
            self.wind.constant_magnitude[0] <= self.wind.constant_magnitude[1],
            "wind.constant_magnitude must be ordered [low, high]",
        );
        check(self.gp_hyper().validate().is_ok(), "gp hyperparameters must be positive");
        check(self.gp.capacity > 0, "gp.capacity must be positive");
        check(
            self.gp.varsigma > 0.0 && self.gp.varsigma < 1.0,
            "gp.varsigma must lie in (0, 1)",
        );
        check(
            matches!(self.gp.beta_mode.as_str(), "fixed" | "information_gain"),
            "gp.beta_mode must be fixed or information_gain",
        );
        check(self.qp.eps_abs > 0.0 && self.qp.eps_rel > 0.0, "qp tolerances must be positive");
        check(self.qp.max_iter > 0, "qp.max_iter must be positive");
        check(self.gains().is_valid(), "controller gains are invalid");
        check(self.controller.cbf.gamma > 0.0, "controller.cbf.gamma must be positive");
        check(self.controller.cbf.gamma_p > 0.0, "controller.cbf.gamma_p must be positive");
        check(self.mpc_config().is_valid(), "mpc section is invalid");
        check(
            matches!(self.trigger.policy.as_str(), "event" | "periodic" | "never"),
            "trigger.policy must be event, periodic or never",
        );
        check(
            self.trajectory.t_end > self.trajectory.t0,
            "trajectory.t_end must exceed trajectory.t0",
        );
        check(self.trajectory.obstacle_radius > 0.0, "trajectory.obstacle_radius must be positive");
        check(
            self.trajectory.obstacle_times.iter().all(|t| {
                *t >= self.trajectory.t0 && *t <= self.trajectory.t_end
            }),
            "trajectory.obstacle_times must lie within [t0, t_end]",
        );
        issues
    }

    pub fn plant_params(&self) -> PlantParams {
        PlantParams {
            mass: self.plant.mass,
            gravity: vec3(self.plant.gravity),
            noise_std: self.plant.noise_std,
            dt: self.plant.dt,
        }
    }

    pub fn attitude_at(&self, t: f64) -> Attitude {
        match self.plant.attitude.profile.as_str() {
            "wobble" => {
                let w = std::f64::consts::TAU * self.plant.attitude.frequency_hz;
                let a = self.plant.attitude.amplitude;
                Attitude::new(a[0] * (w * t).sin(), a[1] * (w * t).sin(), a[2] * (w * t).sin())
            }
            _ => Attitude::level(),
        }
    }

    pub fn wind_params(&self) -> WindParams {
        WindParams {
            constant_magnitude: (self.wind.constant_magnitude[0], self.wind.constant_magnitude[1]),
            turbulence: TurbulenceParams {
                intensities: self.wind.turbulence.intensities,
                length_scales: self.wind.turbulence.length_scales,
                airspeed: self.wind.turbulence.airspeed,
                modes: self.wind.turbulence.modes,
            },
            gust: GustParams {
                t_start: self.wind.gust.t_start,
                duration: self.wind.gust.duration,
                amplitude: vec3(self.wind.gust.amplitude),
            },
        }
    }

    pub fn gp_hyper(&self) -> Hyperparams {
        Hyperparams::new(self.gp.sigma_f, vec6(self.gp.length_scales), self.gp.noise_var)
    }

    pub fn hyper_bounds(&self) -> HyperBounds {
        let b = &self.gp.bounds;
        HyperBounds {
            lower: Hyperparams::isotropic(b.sigma_f[0], b.length_scale[0], b.noise_var[0]),
            upper: Hyperparams::isotropic(b.sigma_f[1], b.length_scale[1], b.noise_var[1]),
        }
    }

    pub fn optim_options(&self) -> OptimOptions {
        OptimOptions {
            max_iter: self.gp.hyperopt.max_iter,
            grad_tol: self.gp.hyperopt.grad_tol,
        }
    }

    pub fn beta_mode(&self) -> BetaMode {
        match self.gp.beta_mode.as_str() {
            "information_gain" => BetaMode::InformationGain { rkhs_bound: self.gp.rkhs_bound },
            _ => BetaMode::Fixed(self.gp.beta_fixed),
        }
    }

    pub fn qp_settings(&self) -> QpSettings {
        QpSettings {
            eps_abs: self.qp.eps_abs,
            eps_rel: self.qp.eps_rel,
            max_iter: self.qp.max_iter,
            ..QpSettings::default()
        }
    }

    pub fn gains(&self) -> Gains {
        Gains {
            kp: Matrix3::from_diagonal(&vec3(self.controller.kp)),
            kd: Matrix3::from_diagonal(&vec3(self.controller.kd)),
            q_lyap: Matrix6::from_diagonal(&vec6(self.controller.q_lyap)),
            epsilon: self.controller.epsilon,
            p1: self.controller.p1,
            p2: self.controller.p2,
            u_min: vec3(self.controller.u_min),
            u_max: vec3(self.controller.u_max),
        }
    }

    pub fn cbf_params(&self) -> CbfParams {
        CbfParams { gamma: self.controller.cbf.gamma, gamma_p: self.controller.cbf.gamma_p }
    }

    pub fn mpc_config(&self) -> MpcConfig {
        let state_bound = match (self.mpc.state_lower, self.mpc.state_upper) {
            (Some(lo), Some(hi)) => Some((vec6(lo), vec6(hi))),
            _ => None,
        };
        MpcConfig {
            horizon: self.mpc.horizon,
            dt: self.plant.dt,
            q_weights: Matrix6::from_diagonal(&vec6(self.mpc.q_weights)),
            r_weights: Matrix3::from_diagonal(&vec3(self.mpc.r_weights)),
            input_bound: self.mpc.input_bound.is_finite().then_some(self.mpc.input_bound),
            state_bound,
        }
    }

    pub fn reference(&self) -> Result<Reference> {
        let t = &self.trajectory;
        let kind = match self.run.trajectory.replace('-', "_").to_lowercase().as_str() {
            "line" => ReferenceKind::Line {
                start: vec3(t.line.start),
                direction: vec3(t.line.direction),
                speed: t.line.speed,
            },
            "circle" => ReferenceKind::Circle {
                center: vec3(t.circle.center),
                radius: t.circle.radius,
                period: t.circle.period,
            },
            "lemniscate" => ReferenceKind::Lemniscate {
                center: vec3(t.lemniscate.center),
                half_width: t.lemniscate.half_width,
                period: t.lemniscate.period,
            },
            "conical_spiral" => ReferenceKind::ConicalSpiral {
                center: vec3(t.conical_spiral.center),
                base_radius: t.conical_spiral.base_radius,
                radius_rate: t.conical_spiral.radius_rate,
                period: t.conical_spiral.period,
                climb_rate: t.conical_spiral.climb_rate,
            },
            "cylindrical_helix" => ReferenceKind::CylindricalHelix {
                center: vec3(t.cylindrical_helix.center),
                radius: t.cylindrical_helix.radius,
                period: t.cylindrical_helix.period,
                climb_rate: t.cylindrical_helix.climb_rate,
            },
            other => bail!("unknown trajectory kind: {other}"),
        };
        Ok(Reference::new(kind, t.t0, t.t_end))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_cleanly() {
        let config = Config::default();
        let issues = config.validate();
        assert!(issues.is_empty(), "{issues:?}");
    }

    #[test]
    fn toml_round_trip_preserves_config() {
        let config = Config::default();
        let text = toml::to_string_pretty(&config).unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn partial_toml_takes_defaults() {
        let config: Config = toml::from_str("[run]\nseed = 7\n").unwrap();
        assert_eq!(config.run.seed, 7);
        assert_eq!(config.run.variant, "CLBFET");
        assert_eq!(config.gp.capacity, 60);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let result: Result<Config, _> = toml::from_str("[run]\nbogus = 1\n");
        assert!(result.is_err());
    }

    #[test]
    fn bad_values_are_reported() {
        let mut config = Config::default();
        config.run.variant = "nope".into();
        config.plant.mass = -1.0;
        config.gp.varsigma = 2.0;
        let issues = config.validate();
        assert!(issues.len() >= 3, "{issues:?}");
    }

    #[test]
    fn every_trajectory_kind_resolves() {
        for kind in ["line", "circle", "lemniscate", "conical_spiral", "cylindrical_helix"] {
            let mut config = Config::default();
            config.run.trajectory = kind.into();
            assert!(config.reference().is_ok(), "{kind}");
        }
    }
}
