//! Feedback-linearization control law and the probabilistic CLF-CBF
//! quadratic program.
//!
//! The pseudo-control applied to the linearized double integrator is the
//! four-term sum `μ = μ_d + μ_pd + μ_qp − μ_gp`: MPC feedforward, PD
//! feedback on the tracking error, the safety/stability correction solved
//! here, and the learned disturbance compensation. The quadratic program
//! minimizes `μ_qpᵀμ_qp + p₁d₁² + p₂d₂²` subject to a Lyapunov decrease
//! row (relaxed by `d₁`), one barrier row per obstacle (sharing `d₂`) and
//! hard actuator rows, all linear in `μ_qp`.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
#[allow(unused_imports)]
use num_traits::Float;

use crate::plant::State;
use crate::qp::{self, QpProblem, QpSettings, QpSolution, QpStatus, WarmStart};

/// Controller gains and QP penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    /// Proportional gain on position error (symmetric positive definite).
    pub kp: Matrix3<f64>,
    /// Derivative gain on velocity error (symmetric positive definite).
    pub kd: Matrix3<f64>,
    /// Lyapunov equation right-hand side `Q` (symmetric positive definite).
    pub q_lyap: Matrix6<f64>,
    /// CLF decrease rate constant ε.
    pub epsilon: f64,
    /// Relaxation penalty on the stability slack d₁.
    pub p1: f64,
    /// Relaxation penalty on the safety slack d₂.
    pub p2: f64,
    /// Componentwise actuator bounds [N].
    pub u_min: Vector3<f64>,
    pub u_max: Vector3<f64>,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            kp: Matrix3::identity(),
            kd: Matrix3::identity(),
            q_lyap: Matrix6::identity(),
            epsilon: 100.0,
            p1: 1e8,
            p2: 1e12,
            u_min: Vector3::repeat(-30.0),
            u_max: Vector3::repeat(30.0),
        }
    }
}

impl Gains {
    pub fn is_valid(&self) -> bool {
        let spd = |m: &Matrix3<f64>| {
            (m - m.transpose()).amax() < 1e-12 && nalgebra::Cholesky::new(*m).is_some()
        };
        spd(&self.kp)
            && spd(&self.kd)
            && (self.q_lyap - self.q_lyap.transpose()).amax() < 1e-12
            && nalgebra::Cholesky::new(self.q_lyap).is_some()
            && self.epsilon > 0.0
            && self.p1 > 0.0
            && self.p2 > 0.0
            && (0..3).all(|i| self.u_min[i] < self.u_max[i])
    }

    /// Closed-loop error matrix `A = [[0, I], [−K_P, −K_D]]`.
    pub fn error_matrix(&self) -> Matrix6<f64> {
        let mut a = Matrix6::zeros();
        a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-self.kp));
        a.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-self.kd));
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlError {
    /// The error matrix is not Hurwitz: no positive definite Lyapunov
    /// certificate exists for the requested `Q`.
    NonHurwitz,
    /// The Lyapunov linear system is singular.
    LyapunovSingular,
    /// The barrier value is non-positive: the state is already outside the
    /// safe set and the reciprocal barrier is undefined.
    BarrierViolated { h: f64 },
    /// The control map `g(x) = R/m` is not invertible.
    SingularControlMap,
}

impl fmt::Display for ControlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlError::NonHurwitz => write!(f, "error dynamics are not Hurwitz"),
            ControlError::LyapunovSingular => write!(f, "Lyapunov equation is singular"),
            ControlError::BarrierViolated { h } => {
                write!(f, "barrier value non-positive (h = {h}); state already unsafe")
            }
            ControlError::SingularControlMap => write!(f, "control map is singular"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ControlError {}

/// Positive definite solution `P` of `AᵀP + PA = −Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCert {
    pub p: Matrix6<f64>,
}

impl LyapunovCert {
    /// Lyapunov value `V(e) = eᵀPe`.
    pub fn value(&self, e: &Vector6<f64>) -> f64 {
        e.dot(&(self.p * e))
    }

    /// `ω = eᵀPB` with `B = [0; I]`: the last three entries of `Pe`.
    pub fn omega(&self, e: &Vector6<f64>) -> Vector3<f64> {
        let pe = self.p * e;
        Vector3::new(pe[3], pe[4], pe[5])
    }
}

/// Solves the continuous Lyapunov equation for the closed-loop error
/// dynamics via the Kronecker-product linear system.
pub fn lyapunov_solve(gains: &Gains) -> Result<LyapunovCert, ControlError> {
    let a = gains.error_matrix();
    let a_dyn = DMatrix::from_fn(6, 6, |i, j| a[(i, j)]);
    let eye = DMatrix::<f64>::identity(6, 6);
    let at = a_dyn.transpose();
    // vec(AᵀP + PA) = (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P)
    let m = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_fn(36, |k, _| -gains.q_lyap[(k % 6, k / 6)]);
    let vec_p = m.full_piv_lu().solve(&rhs).ok_or(ControlError::LyapunovSingular)?;
    let mut p = Matrix6::from_fn(|i, j| vec_p[j * 6 + i]);
    p = (p + p.transpose()) * 0.5;
    if nalgebra::Cholesky::new(p).is_none() {
        return Err(ControlError::NonHurwitz);
    }
    let residual = (a.transpose() * p + p * a + gains.q_lyap).norm();
    if residual > 1e-9 {
        return Err(ControlError::LyapunovSingular);
    }
    Ok(LyapunovCert { p })
}

/// PD feedback `μ_pd = [−K_P −K_D] e` on the tracking error `e = x − x_d`.
pub fn pd_term(e: &Vector6<f64>, gains: &Gains) -> Vector3<f64> {
    let e1 = Vector3::new(e[0], e[1], e[2]);
    let e2 = Vector3::new(e[3], e[4], e[5]);
    -(gains.kp * e1) - gains.kd * e2
}

/// Scalar uncertainty margin entering the stability/safety rows and the
/// update trigger: `‖β‖·‖σ(x)‖`, or a fixed worst-case disturbance bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyMargin(pub f64);

impl UncertaintyMargin {
    pub fn from_confidence(beta: &Vector3<f64>, sigma: &Vector3<f64>) -> Self {
        Self(beta.norm() * sigma.norm())
    }

    /// Fixed bound used by the robust (non-learning-margin) baseline.
    pub fn worst_case(bound: f64) -> Self {
        Self(bound)
    }

    pub fn zero() -> Self {
        Self(0.0)
    }
}

/// Which relaxation variable a constraint row is allowed to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slack {
    /// Hard row.
    None,
    /// Stability relaxation d₁.
    D1,
    /// Safety relaxation d₂.
    D2,
}

/// One linear inequality `coeff·μ_qp + offset ≤ slack`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub coeff: Vector3<f64>,
    pub offset: f64,
    pub slack: Slack,
}

/// Stability row: `2ω·μ_qp + eᵀPe/ε + 2‖ω‖·margin ≤ d₁`.
pub fn clf_constraint(
    e: &Vector6<f64>,
    cert: &LyapunovCert,
    gains: &Gains,
    margin: UncertaintyMargin,
) -> ConstraintRow {
    let omega = cert.omega(e);
    ConstraintRow {
        coeff: 2.0 * omega,
        offset: cert.value(e) / gains.epsilon + 2.0 * omega.norm() * margin.0,
        slack: Slack::D1,
    }
}

/// Spherical obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// Barrier shaping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbfParams {
    /// Class-K slope: `γ(h) = gamma · h`.
    pub gamma: f64,
    /// Weight of the distance term inside `h`.
    pub gamma_p: f64,
}

impl Default for CbfParams {
    fn default() -> Self {
        Self { gamma: 0.08, gamma_p: 5.0 }
    }
}

/// Safety function `h(x) = γ_p (d − r) + v·(p − c)/d` with
/// `d = ‖p − c‖`: positive distance margin plus range rate.
pub fn h_value(x: &State, obstacle: &Obstacle, params: &CbfParams) -> f64 {
    let rel = x.p - obstacle.center;
    let d = rel.norm();
    if d < 1e-12 {
        return -params.gamma_p * obstacle.radius;
    }
    params.gamma_p * (d - obstacle.radius) + x.v.dot(&rel) / d
}

/// Analytic gradient of `h` with respect to the stacked state `[p; v]`.
pub fn h_gradient(x: &State, obstacle: &Obstacle, params: &CbfParams) -> Vector6<f64> {
    let rel = x.p - obstacle.center;
    let d = rel.norm();
    let s = x.v.dot(&rel);
    let dp = params.gamma_p * rel / d + x.v / d - s * rel / (d * d * d);
    let dv = rel / d;
    let mut g = Vector6::zeros();
    g.fixed_rows_mut::<3>(0).copy_from(&dp);
    g.fixed_rows_mut::<3>(3).copy_from(&dv);
    g
}

/// Safety row derived from the reciprocal barrier `B = 1/h`:
/// `(∂B/∂x)ᵀB₀·μ_qp + b ≤ d₂` with
/// `b = −γ(h) + (∂B/∂x)ᵀ(A₀x + B₀(μ_d + μ_pd)) + ‖(∂B/∂x)ᵀB₀‖·margin`.
///
/// Fails when `h(x) ≤ 0` (the barrier is undefined outside the safe set).
pub fn cbf_constraint(
    x: &State,
    obstacle: &Obstacle,
    mu_d: &Vector3<f64>,
    mu_pd: &Vector3<f64>,
    margin: UncertaintyMargin,
    params: &CbfParams,
) -> Result<ConstraintRow, ControlError> {
    let h = h_value(x, obstacle, params);
    if h <= 0.0 {
        return Err(ControlError::BarrierViolated { h });
    }
    let grad_h = h_gradient(x, obstacle, params);
    let db = -grad_h / (h * h);
    let db_p = Vector3::new(db[0], db[1], db[2]);
    let db_v = Vector3::new(db[3], db[4], db[5]);
    // A₀x = [v; 0], B₀u = [0; u]
    let drift = db_p.dot(&x.v) + db_v.dot(&(mu_d + mu_pd));
    Ok(ConstraintRow {
        coeff: db_v,
        offset: -params.gamma * h + drift + db_v.norm() * margin.0,
        slack: Slack::D2,
    })
}

/// Hard actuator rows `u_min ≤ g⁻¹(x)(μ − f̂(x)) ≤ u_max` expressed in
/// `μ_qp`, with `g⁻¹ = m Rᵀ` and `μ = μ_d + μ_pd + μ_qp − μ_gp`.
///
/// Axes with infinite bounds contribute no rows.
pub fn control_constraint(
    mu_d: &Vector3<f64>,
    mu_pd: &Vector3<f64>,
    mu_gp: &Vector3<f64>,
    f_hat: &Vector3<f64>,
    rot: &Matrix3<f64>,
    mass: f64,
    gains: &Gains,
) -> Result<Vec<ConstraintRow>, ControlError> {
    if mass.is_nan() || mass <= 0.0 || rot.determinant().abs() < 1e-8 {
        return Err(ControlError::SingularControlMap);
    }
    let g_inv = mass * rot.transpose();
    let c = g_inv * (mu_d + mu_pd - mu_gp - f_hat);
    let mut rows = Vec::with_capacity(6);
    for i in 0..3 {
        let gi: Vector3<f64> = g_inv.row(i).transpose();
        if gains.u_max[i].is_finite() {
            rows.push(ConstraintRow {
                coeff: gi,
                offset: c[i] - gains.u_max[i],
                slack: Slack::None,
            });
        }
        if gains.u_min[i].is_finite() {
            rows.push(ConstraintRow {
                coeff: -gi,
                offset: gains.u_min[i] - c[i],
                slack: Slack::None,
            });
        }
    }
    Ok(rows)
}

/// Result of the safety QP at one control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct QpOutcome {
    /// Applied correction: the solver output, or zero on failure.
    pub mu_qp: Vector3<f64>,
    pub d1: f64,
    pub d2: f64,
    /// Raw status of the underlying solve.
    pub status: QpStatus,
    pub iterations: usize,
    /// Raw solution, usable to warm-start the next tick.
    pub solution: QpSolution,
}

impl QpOutcome {
    pub fn solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

/// Solves `min μ_qpᵀμ_qp + p₁d₁² + p₂d₂²` over the assembled rows.
///
/// The decision vector is `z = [μ_qp; d₁; d₂]`. On solver failure the
/// outcome falls back to `μ_qp = 0` with the failure status preserved for
/// logging.
pub fn solve_safety_qp(
    rows: &[ConstraintRow],
    gains: &Gains,
    settings: &QpSettings,
    warm: Option<&WarmStart>,
) -> QpOutcome {
    let m = rows.len();
    let mut p = DMatrix::zeros(5, 5);
    p[(0, 0)] = 2.0;
    p[(1, 1)] = 2.0;
    p[(2, 2)] = 2.0;
    p[(3, 3)] = 2.0 * gains.p1;
    p[(4, 4)] = 2.0 * gains.p2;
    let q = DVector::zeros(5);
    let mut a = DMatrix::zeros(m, 5);
    let mut b = DVector::zeros(m);
    for (i, row) in rows.iter().enumerate() {
        a[(i, 0)] = row.coeff[0];
        a[(i, 1)] = row.coeff[1];
        a[(i, 2)] = row.coeff[2];
        match row.slack {
            Slack::D1 => a[(i, 3)] = -1.0,
            Slack::D2 => a[(i, 4)] = -1.0,
            Slack::None => {}
        }
        b[i] = -row.offset;
    }
    let problem = QpProblem::new(p, q, a, b);
    let solution = qp::solve_qp_warm(&problem, settings, warm);
    let (mu_qp, d1, d2) = if solution.status == QpStatus::Solved {
        (
            Vector3::new(solution.z[0], solution.z[1], solution.z[2]),
            solution.z[3],
            solution.z[4],
        )
    } else {
        (Vector3::zeros(), 0.0, 0.0)
    };
    QpOutcome {
        mu_qp,
        d1,
        d2,
        status: solution.status,
        iterations: solution.iterations,
        solution,
    }
}

/// Four-term pseudo-control `μ = μ_d + μ_pd + μ_qp − μ_gp`.
pub fn compose_pseudo_control(
    mu_d: &Vector3<f64>,
    mu_pd: &Vector3<f64>,
    mu_qp: &Vector3<f64>,
    mu_gp: &Vector3<f64>,
) -> Vector3<f64> {
    mu_d + mu_pd + mu_qp - mu_gp
}

/// Inverts the known input map: `u = m Rᵀ (μ − f̂(x))`.
pub fn feedback_linearize(
    mu: &Vector3<f64>,
    f_hat: &Vector3<f64>,
    rot: &Matrix3<f64>,
    mass: f64,
) -> Vector3<f64> {
    mass * rot.transpose() * (mu - f_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{self, Attitude, PlantParams};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_gains() -> Gains {
        Gains::default()
    }

    #[test]
    fn lyapunov_closed_form_for_unit_gains() {
        let cert = lyapunov_solve(&unit_gains()).unwrap();
        let mut expected = Matrix6::zeros();
        for i in 0..3 {
            expected[(i, i)] = 1.5;
            expected[(i + 3, i + 3)] = 1.0;
            expected[(i, i + 3)] = 0.5;
            expected[(i + 3, i)] = 0.5;
        }
        assert!((cert.p - expected).norm() < 1e-9);
        let a = unit_gains().error_matrix();
        assert!((a.transpose() * cert.p + cert.p * a + Matrix6::identity()).norm() < 1e-9);
    }

    #[test]
    fn lyapunov_scales_linearly_with_q() {
        let gains = unit_gains();
        let doubled = Gains { q_lyap: Matrix6::identity() * 2.0, ..gains.clone() };
        let p1 = lyapunov_solve(&gains).unwrap().p;
        let p2 = lyapunov_solve(&doubled).unwrap().p;
        assert!((p2 - 2.0 * p1).norm() < 1e-9);
    }

    #[test]
    fn lyapunov_residual_small_for_random_stable_gains() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let g = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let kp = g * g.transpose() + Matrix3::identity() * 0.3;
            let g2 = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let kd = g2 * g2.transpose() + Matrix3::identity() * 0.3;
            let gains = Gains { kp, kd, ..Gains::default() };
            let cert = lyapunov_solve(&gains).unwrap();
            let a = gains.error_matrix();
            let residual = (a.transpose() * cert.p + cert.p * a + gains.q_lyap).norm();
            assert!(residual < 1e-9, "residual {residual}");
        }
    }

    #[test]
    fn lyapunov_rejects_unstable_gains() {
        let gains = Gains { kp: -Matrix3::identity(), ..Gains::default() };
        assert!(lyapunov_solve(&gains).is_err());
    }

    #[test]
    fn pd_term_cases() {
        let gains = unit_gains();
        assert_eq!(pd_term(&Vector6::zeros(), &gains), Vector3::zeros());
        let e = Vector6::new(1.0, 0.0, 0.0, 2.0, 0.0, 0.0);
        assert_relative_eq!(pd_term(&e, &gains), Vector3::new(-3.0, 0.0, 0.0), epsilon = 1e-15);
        let strong = Gains { kp: Matrix3::identity() * 2.0, ..gains };
        assert_relative_eq!(
            pd_term(&e, &strong),
            Vector3::new(-4.0, 0.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn clf_row_is_vacuous_at_zero_error() {
        let cert = lyapunov_solve(&unit_gains()).unwrap();
        let row = clf_constraint(&Vector6::zeros(), &cert, &unit_gains(), UncertaintyMargin(1.0));
        assert_eq!(row.coeff, Vector3::zeros());
        assert_eq!(row.offset, 0.0);
        assert_eq!(row.slack, Slack::D1);
    }

    #[test]
    fn clf_row_without_uncertainty_reduces_to_lyapunov_rate() {
        let gains = unit_gains();
        let cert = lyapunov_solve(&gains).unwrap();
        let e = Vector6::new(0.3, -0.2, 0.1, 0.0, 0.4, -0.1);
        let row = clf_constraint(&e, &cert, &gains, UncertaintyMargin::zero());
        assert_relative_eq!(row.offset, cert.value(&e) / gains.epsilon, epsilon = 1e-14);
    }

    #[test]
    fn clf_row_hand_case() {
        // e = [1,0,0,0,0,0], unit-gain P, ε = 100, unit-norm β and σ
        let gains = unit_gains();
        let cert = lyapunov_solve(&gains).unwrap();
        let mut e = Vector6::zeros();
        e[0] = 1.0;
        let s = 1.0 / 3.0f64.sqrt();
        let margin =
            UncertaintyMargin::from_confidence(&Vector3::repeat(s), &Vector3::repeat(s));
        let row = clf_constraint(&e, &cert, &gains, margin);
        assert_relative_eq!(row.coeff, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(row.offset, 1.5 / 100.0 + 2.0 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn h_gradient_matches_finite_differences() {
        let params = CbfParams::default();
        let obstacle = Obstacle { center: Vector3::new(1.0, -2.0, 0.5), radius: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let x = State::new(
                Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
                Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
            );
            if (x.p - obstacle.center).norm() < 0.5 {
                continue;
            }
            let grad = h_gradient(&x, &obstacle, &params);
            let fd = 1e-6;
            let mut xv = x.to_vector();
            for k in 0..6 {
                let orig = xv[k];
                xv[k] = orig + fd;
                let hp = h_value(&State::from_vector(&xv), &obstacle, &params);
                xv[k] = orig - fd;
                let hm = h_value(&State::from_vector(&xv), &obstacle, &params);
                xv[k] = orig;
                let numeric = (hp - hm) / (2.0 * fd);
                let denom = numeric.abs().max(grad[k].abs()).max(1e-6);
                assert!(
                    (numeric - grad[k]).abs() / denom < 1e-5,
                    "component {k}: {} vs {numeric}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn cbf_row_inactive_in_far_field() {
        let params = CbfParams::default();
        let obstacle = Obstacle { center: Vector3::new(1e6, 0.0, 0.0), radius: 1.0 };
        let x = State::new(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0));
        let row = cbf_constraint(
            &x,
            &obstacle,
            &Vector3::zeros(),
            &Vector3::zeros(),
            UncertaintyMargin(1.0),
            &params,
        )
        .unwrap();
        assert!(row.coeff.norm() < 1e-10);
        let h = h_value(&x, &obstacle, &params);
        assert_relative_eq!(row.offset, -params.gamma * h, epsilon = 1e-4);
        assert!(row.offset < 0.0);
    }

    #[test]
    fn cbf_rejects_unsafe_state() {
        let params = CbfParams::default();
        let obstacle = Obstacle { center: Vector3::new(1.0, 0.0, 0.0), radius: 1.0 };
        let x = State::new(Vector3::new(0.5, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0));
        let err = cbf_constraint(
            &x,
            &obstacle,
            &Vector3::zeros(),
            &Vector3::zeros(),
            UncertaintyMargin::zero(),
            &params,
        );
        assert!(matches!(err, Err(ControlError::BarrierViolated { .. })));
    }

    #[test]
    fn head_on_approach_forces_deceleration() {
        let params = CbfParams::default();
        let gains = unit_gains();
        let obstacle = Obstacle { center: Vector3::new(5.0, 0.0, 0.0), radius: 1.0 };
        let x = State::new(Vector3::new(3.9, 0.0, 0.0), Vector3::new(0.4, 0.0, 0.0));
        let row = cbf_constraint(
            &x,
            &obstacle,
            &Vector3::zeros(),
            &Vector3::zeros(),
            UncertaintyMargin::zero(),
            &params,
        )
        .unwrap();
        // barrier row grows as the gap closes
        let farther = State::new(Vector3::new(3.5, 0.0, 0.0), Vector3::new(0.4, 0.0, 0.0));
        let row_far = cbf_constraint(
            &farther,
            &obstacle,
            &Vector3::zeros(),
            &Vector3::zeros(),
            UncertaintyMargin::zero(),
            &params,
        )
        .unwrap();
        assert!(row.offset > row_far.offset);

        let outcome = solve_safety_qp(&[row], &gains, &QpSettings::default(), None);
        assert!(outcome.solved());
        assert!(outcome.mu_qp[0] < -1.0, "no braking: {:?}", outcome.mu_qp);
        assert!(outcome.d2.abs() < 1e-6, "safety slack engaged: {}", outcome.d2);
    }

    #[test]
    fn control_rows_reduce_to_box_on_identity_attitude() {
        let gains = Gains {
            u_min: Vector3::repeat(-20.0),
            u_max: Vector3::repeat(20.0),
            ..Gains::default()
        };
        let f_hat = Vector3::new(0.0, 0.0, -9.81);
        let rows = control_constraint(
            &Vector3::zeros(),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &f_hat,
            &Matrix3::identity(),
            1.0,
            &gains,
        )
        .unwrap();
        assert_eq!(rows.len(), 6);
        // upper row for z: μ_z + 9.81 ≤ 20
        let up_z = rows.iter().find(|r| r.coeff[2] > 0.5).unwrap();
        assert_relative_eq!(up_z.offset, 9.81 - 20.0, epsilon = 1e-12);
        let lo_z = rows.iter().find(|r| r.coeff[2] < -0.5).unwrap();
        assert_relative_eq!(lo_z.offset, -20.0 - 9.81, epsilon = 1e-12);
    }

    #[test]
    fn infinite_bounds_produce_no_rows() {
        let gains = Gains {
            u_min: Vector3::repeat(f64::NEG_INFINITY),
            u_max: Vector3::repeat(f64::INFINITY),
            ..Gains::default()
        };
        let rows = control_constraint(
            &Vector3::zeros(),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &Matrix3::identity(),
            1.0,
            &gains,
        )
        .unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn tight_bounds_spill_into_stability_slack() {
        let gains = Gains {
            u_min: Vector3::repeat(-0.5),
            u_max: Vector3::repeat(0.5),
            ..Gains::default()
        };
        let cert = lyapunov_solve(&gains).unwrap();
        let mut e = Vector6::zeros();
        e[0] = 4.0;
        e[3] = 2.0;
        let mut rows = alloc::vec![clf_constraint(&e, &cert, &gains, UncertaintyMargin(2.0))];
        rows.extend(
            control_constraint(
                &Vector3::zeros(),
                &pd_term(&e, &gains),
                &Vector3::zeros(),
                &Vector3::new(0.0, 0.0, -9.81),
                &Matrix3::identity(),
                1.0,
                &gains,
            )
            .unwrap(),
        );
        let outcome = solve_safety_qp(&rows, &gains, &QpSettings::default(), None);
        assert!(outcome.solved());
        assert!(outcome.d1 > 0.0, "expected active stability slack");
    }

    #[test]
    fn unconstrained_safety_qp_returns_zero() {
        let gains = unit_gains();
        let rows = [
            ConstraintRow { coeff: Vector3::new(1.0, 0.0, 0.0), offset: -5.0, slack: Slack::D1 },
            ConstraintRow { coeff: Vector3::new(0.0, 1.0, 0.0), offset: -3.0, slack: Slack::D2 },
        ];
        let outcome = solve_safety_qp(&rows, &gains, &QpSettings::default(), None);
        assert!(outcome.solved());
        assert!(outcome.mu_qp.norm() < 1e-6);
        assert!(outcome.d1.abs() < 1e-9 && outcome.d2.abs() < 1e-9);
    }

    #[test]
    fn single_clf_row_analytic_solution() {
        // row 2ω·μ + b ≤ d₁ with ω = [1,0,0], b = 2 → μ ≈ [−1,0,0], d₁ ≈ 0
        let gains = unit_gains();
        let rows = [ConstraintRow {
            coeff: Vector3::new(2.0, 0.0, 0.0),
            offset: 2.0,
            slack: Slack::D1,
        }];
        let outcome = solve_safety_qp(&rows, &gains, &QpSettings::default(), None);
        assert!(outcome.solved());
        assert_relative_eq!(outcome.mu_qp[0], -1.0, epsilon = 1e-4);
        assert!(outcome.d1.abs() < 1e-6);
    }

    #[test]
    fn qp_outcome_satisfies_all_rows() {
        let gains = unit_gains();
        let cert = lyapunov_solve(&gains).unwrap();
        let e = Vector6::new(0.5, -0.3, 0.2, 0.4, 0.0, -0.2);
        let x = State::new(Vector3::new(1.0, 0.0, 2.0), Vector3::new(1.0, 0.5, 0.0));
        let obstacle = Obstacle { center: Vector3::new(4.0, 0.3, 2.0), radius: 1.0 };
        let mu_d = Vector3::new(0.5, 0.0, 0.0);
        let mu_pd = pd_term(&e, &gains);
        let margin = UncertaintyMargin(0.8);
        let mut rows = alloc::vec![clf_constraint(&e, &cert, &gains, margin)];
        rows.push(
            cbf_constraint(&x, &obstacle, &mu_d, &mu_pd, margin, &CbfParams::default()).unwrap(),
        );
        rows.extend(
            control_constraint(
                &mu_d,
                &mu_pd,
                &Vector3::zeros(),
                &Vector3::new(0.0, 0.0, -9.81),
                &Matrix3::identity(),
                1.0,
                &gains,
            )
            .unwrap(),
        );
        let outcome = solve_safety_qp(&rows, &gains, &QpSettings::default(), None);
        assert!(outcome.solved());
        for row in &rows {
            let slack_val = match row.slack {
                Slack::D1 => outcome.d1,
                Slack::D2 => outcome.d2,
                Slack::None => 0.0,
            };
            let lhs = row.coeff.dot(&outcome.mu_qp) + row.offset;
            assert!(lhs <= slack_val + 1e-5, "row violated: {lhs} > {slack_val}");
        }
    }

    #[test]
    fn qp_outcome_invariant_under_row_permutation() {
        let gains = unit_gains();
        let rows = alloc::vec![
            ConstraintRow { coeff: Vector3::new(2.0, 0.0, 0.0), offset: 1.0, slack: Slack::D1 },
            ConstraintRow { coeff: Vector3::new(0.0, 1.5, 0.0), offset: 0.5, slack: Slack::D2 },
            ConstraintRow { coeff: Vector3::new(1.0, 1.0, 0.0), offset: -0.2, slack: Slack::None },
        ];
        let a = solve_safety_qp(&rows, &gains, &QpSettings::default(), None);
        let permuted = alloc::vec![rows[2].clone(), rows[0].clone(), rows[1].clone()];
        let b = solve_safety_qp(&permuted, &gains, &QpSettings::default(), None);
        assert!((a.mu_qp - b.mu_qp).norm() < 1e-6);
        assert!((a.d1 - b.d1).abs() < 1e-6);
        assert!((a.d2 - b.d2).abs() < 1e-6);
    }

    #[test]
    fn compose_pseudo_control_sums_terms() {
        assert_eq!(
            compose_pseudo_control(
                &Vector3::zeros(),
                &Vector3::zeros(),
                &Vector3::zeros(),
                &Vector3::zeros()
            ),
            Vector3::zeros()
        );
        let mu = compose_pseudo_control(
            &Vector3::new(1.0, 2.0, 3.0),
            &Vector3::new(0.5, -0.5, 0.0),
            &Vector3::new(0.0, 1.0, -1.0),
            &Vector3::new(0.1, 0.2, 0.3),
        );
        assert_relative_eq!(mu, Vector3::new(1.4, 2.3, 1.7), epsilon = 1e-14);
    }

    #[test]
    fn feedback_linearization_hover_case() {
        let u = feedback_linearize(
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, -9.81),
            &Matrix3::identity(),
            1.0,
        );
        assert_relative_eq!(u, Vector3::new(0.0, 0.0, 9.81), epsilon = 1e-14);
        let u2 = feedback_linearize(
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, -9.81),
            &Matrix3::identity(),
            2.0,
        );
        assert_relative_eq!(u2, 2.0 * u, epsilon = 1e-14);
    }

    #[test]
    fn feedback_linearization_round_trips_through_dynamics() {
        // applying u to the plant with f = f̂ recovers v̇ = μ exactly
        let params = PlantParams::default();
        let f_hat = params.gravity;
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let att = Attitude::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-3.0..3.0),
            );
            let rot = plant::rotation_matrix(&att);
            let mu = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let u = feedback_linearize(&mu, &f_hat, &rot, params.mass);
            let x = State::zero();
            let deriv = plant::dynamics_deriv(&x, &att, &u, &Vector3::zeros(), &params);
            assert!((deriv.v - mu).norm() < 1e-12);
        }
    }

    #[test]
    fn regulation_to_fixed_point_with_lyapunov_decrease() {
        // no disturbance, no obstacles, wide bounds: the closed loop
        // regulates to the target and V(e) decreases monotonically
        // unit PD gains decay like e^(−t/2); a 5 cm offset settles below
        // 1e-3 within the 10 s horizon
        let params = PlantParams { noise_std: 0.0, ..PlantParams::default() };
        let gains = unit_gains();
        let cert = lyapunov_solve(&gains).unwrap();
        let settings = QpSettings::default();
        let target = Vector6::new(0.03, -0.04, 0.02, 0.0, 0.0, 0.0);
        let mut x = State::zero();
        let mut v_prev = f64::INFINITY;
        let mut warm: Option<WarmStart> = None;
        for k in 0..1000 {
            let e = x.to_vector() - target;
            let v_now = cert.value(&e);
            assert!(v_now <= v_prev + 1e-9, "V increased at tick {k}");
            v_prev = v_now;
            let mu_pd = pd_term(&e, &gains);
            let mut rows =
                alloc::vec![clf_constraint(&e, &cert, &gains, UncertaintyMargin::zero())];
            rows.extend(
                control_constraint(
                    &Vector3::zeros(),
                    &mu_pd,
                    &Vector3::zeros(),
                    &params.gravity,
                    &Matrix3::identity(),
                    params.mass,
                    &gains,
                )
                .unwrap(),
            );
            let outcome = solve_safety_qp(&rows, &gains, &settings, warm.as_ref());
            assert!(outcome.solved());
            warm = Some(WarmStart::from(&outcome.solution));
            let mu = compose_pseudo_control(
                &Vector3::zeros(),
                &mu_pd,
                &outcome.mu_qp,
                &Vector3::zeros(),
            );
            let u = feedback_linearize(&mu, &params.gravity, &Matrix3::identity(), params.mass);
            x = plant::step(&x, &Attitude::level(), &u, |_| Vector3::zeros(), k as f64 * params.dt, &params)
                .unwrap();
        }
        let e_final = (x.to_vector() - target).norm();
        assert!(e_final < 1e-3, "final error {e_final}");
    }
}
