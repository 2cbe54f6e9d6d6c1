//! Quadrotor translational dynamics, integration and noisy measurement.
//!
//! The plant is the double-integrator rigid body
//! `ṗ = v`, `v̇ = g + (1/m) R f_u + δ` with thrust vector `f_u` expressed
//! in the body frame, rotation matrix `R` (body to world) and an additive
//! acceleration disturbance `δ`. Attitude dynamics are not simulated; the
//! attitude is prescribed by the caller per control tick.

use core::fmt;

use nalgebra::{Matrix3, Vector3, Vector6};
#[allow(unused_imports)]
use num_traits::Float; // float intrinsics on no_std builds
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Translational state `x = [p; v]` in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    /// Position [m].
    pub p: Vector3<f64>,
    /// Velocity [m/s].
    pub v: Vector3<f64>,
}

impl State {
    pub fn new(p: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { p, v }
    }

    pub fn zero() -> Self {
        Self { p: Vector3::zeros(), v: Vector3::zeros() }
    }

    /// Stacks the state as a 6-vector `[p; v]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z)
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            p: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|c| c.is_finite())
    }
}

/// Euler attitude (roll, pitch, yaw) [rad].
///
/// Valid attitudes keep every angle in `(−π, π]` and `|pitch| < π/2` so the
/// rotation matrix stays away from the gimbal singularity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attitude {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Attitude {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    /// Hover-aligned attitude (identity rotation).
    pub fn level() -> Self {
        Self { roll: 0.0, pitch: 0.0, yaw: 0.0 }
    }

    pub fn is_valid(&self) -> bool {
        use core::f64::consts::{FRAC_PI_2, PI};
        let in_range = |a: f64| a > -PI && a <= PI;
        in_range(self.roll)
            && in_range(self.pitch)
            && in_range(self.yaw)
            && self.pitch.abs() < FRAC_PI_2
    }
}

/// Physical and simulation parameters of the plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams {
    /// Mass [kg].
    pub mass: f64,
    /// Gravity vector in the world frame [m/s²].
    pub gravity: Vector3<f64>,
    /// Per-component standard deviation of measurement noise.
    pub noise_std: f64,
    /// Integration step [s].
    pub dt: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gravity: Vector3::new(0.0, 0.0, -9.81),
            noise_std: 0.01,
            dt: 0.01,
        }
    }
}

impl PlantParams {
    pub fn is_valid(&self) -> bool {
        self.mass > 0.0 && self.dt > 0.0 && self.noise_std >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantError {
    /// The integrator produced a non-finite state.
    IntegrationDiverged { t: f64 },
}

impl fmt::Display for PlantError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlantError::IntegrationDiverged { t } => {
                write!(f, "integration diverged to a non-finite state at t = {t}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PlantError {}

/// Rotation matrix from body frame to world frame for a ZYX Euler attitude.
///
/// Orthonormal with determinant +1 for every valid attitude.
pub fn rotation_matrix(att: &Attitude) -> Matrix3<f64> {
    let (sr, cr) = att.roll.sin_cos();
    let (sp, cp) = att.pitch.sin_cos();
    let (sy, cy) = att.yaw.sin_cos();
    Matrix3::new(
        cp * cy,
        sr * sp * cy - cr * sy,
        cr * sp * cy + sr * sy,
        cp * sy,
        sr * sp * sy + cr * cy,
        cr * sp * sy - sr * cy,
        -sp,
        sr * cp,
        cr * cp,
    )
}

/// Time derivative of the state under thrust `f_u` [N] and disturbance
/// `delta` [m/s²]: `[v; g + R f_u / m + δ]`.
pub fn dynamics_deriv(
    x: &State,
    att: &Attitude,
    f_u: &Vector3<f64>,
    delta: &Vector3<f64>,
    params: &PlantParams,
) -> State {
    let rot = rotation_matrix(att);
    State {
        p: x.v,
        v: params.gravity + rot * f_u / params.mass + delta,
    }
}

/// Advances the state over one control period with classical RK4.
///
/// `wind` is sampled at the stage times `t`, `t + dt/2`, `t + dt`. Attitude
/// and thrust are held constant over the step (zero-order hold).
pub fn step<W>(
    x: &State,
    att: &Attitude,
    f_u: &Vector3<f64>,
    wind: W,
    t: f64,
    params: &PlantParams,
) -> Result<State, PlantError>
where
    W: Fn(f64) -> Vector3<f64>,
{
    let dt = params.dt;
    let deriv = |xs: &State, ts: f64| dynamics_deriv(xs, att, f_u, &wind(ts), params);

    let k1 = deriv(x, t);
    let x2 = State { p: x.p + 0.5 * dt * k1.p, v: x.v + 0.5 * dt * k1.v };
    let k2 = deriv(&x2, t + 0.5 * dt);
    let x3 = State { p: x.p + 0.5 * dt * k2.p, v: x.v + 0.5 * dt * k2.v };
    let k3 = deriv(&x3, t + 0.5 * dt);
    let x4 = State { p: x.p + dt * k3.p, v: x.v + dt * k3.v };
    let k4 = deriv(&x4, t + dt);

    let next = State {
        p: x.p + dt / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p),
        v: x.v + dt / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(PlantError::IntegrationDiverged { t })
    }
}

/// State measurement with i.i.d. Gaussian noise of std `noise_std` per
/// component. `noise_std = 0` returns the exact state.
pub fn measure<R: Rng + ?Sized>(x: &State, params: &PlantParams, rng: &mut R) -> State {
    if params.noise_std == 0.0 {
        return *x;
    }
    let mut noisy = |c: f64| {
        let n: f64 = StandardNormal.sample(rng);
        c + params.noise_std * n
    };
    State {
        p: Vector3::new(noisy(x.p.x), noisy(x.p.y), noisy(x.p.z)),
        v: Vector3::new(noisy(x.v.x), noisy(x.v.y), noisy(x.v.z)),
    }
}

/// Finite-difference estimate of the realized disturbance over one step:
/// `y = (v_next − v_prev)/dt − μ_applied`.
///
/// With the feedback-linearized loop the translational acceleration equals
/// `μ + δ`, so `y` recovers `δ` up to O(dt) discretization and measurement
/// noise.
pub fn measure_disturbance(
    v_prev: &Vector3<f64>,
    v_next: &Vector3<f64>,
    mu_applied: &Vector3<f64>,
    dt: f64,
) -> Vector3<f64> {
    (v_next - v_prev) / dt - mu_applied
}
