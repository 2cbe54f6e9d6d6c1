//! Condensed linear MPC over the feedback-linearized double integrator.
//!
//! The planner discretizes `ṗ = v, v̇ = μ` exactly (zero-order hold),
//! stacks the horizon predictions into an input-only quadratic program and
//! reuses the shared ADMM solver when boxes are present. Each tick applies
//! the first optimized input and hands the first predicted state to the
//! tracking layer as the desired state.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6x3, Vector3, Vector6};

use crate::qp::{self, QpProblem, QpSettings, QpStatus, WarmStart};

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Horizon length K (steps).
    pub horizon: usize,
    /// Control period [s].
    pub dt: f64,
    /// State tracking weight (positive semidefinite).
    pub q_weights: Matrix6<f64>,
    /// Input regularization weight (positive definite).
    pub r_weights: Matrix3<f64>,
    /// Componentwise symmetric input box `‖μ_i‖∞ ≤ bound`, if any.
    pub input_bound: Option<f64>,
    /// Componentwise state box `lower ≤ x̄ ≤ upper`, if any.
    pub state_bound: Option<(Vector6<f64>, Vector6<f64>)>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        let mut q = Matrix6::identity();
        for i in 0..3 {
            q[(i, i)] = 10.0;
            q[(i + 3, i + 3)] = 0.5;
        }
        Self {
            horizon: 20,
            dt: 0.01,
            q_weights: q,
            r_weights: Matrix3::identity() * 0.5,
            input_bound: Some(30.0),
            state_bound: None,
        }
    }
}

impl MpcConfig {
    pub fn is_valid(&self) -> bool {
        self.horizon >= 1
            && self.dt > 0.0
            && (self.q_weights - self.q_weights.transpose()).amax() < 1e-12
            && nalgebra::Cholesky::new(self.r_weights).is_some()
    }
}

/// Exact zero-order-hold discretization of the double integrator:
/// `A = [[I, dt·I], [0, I]]`, `B = [[dt²/2·I], [dt·I]]`.
pub fn discretize(dt: f64) -> (Matrix6<f64>, Matrix6x3<f64>) {
    let mut a = Matrix6::identity();
    let mut b = Matrix6x3::zeros();
    for i in 0..3 {
        a[(i, i + 3)] = dt;
        b[(i, i)] = dt * dt / 2.0;
        b[(i + 3, i)] = dt;
    }
    (a, b)
}

/// First-step output of one MPC solve.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcStep {
    /// Desired state handed to the tracking layer: the one-step-ahead
    /// predicted state of the optimized plan.
    pub x_d: Vector6<f64>,
    /// First optimized input.
    pub mu_d: Vector3<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Set when the solve failed and the reference point was substituted.
    pub fallback: bool,
}

/// Horizon-invariant data precomputed at construction.
#[derive(Debug, Clone)]
pub struct MpcPlanner {
    config: MpcConfig,
    a_d: Matrix6<f64>,
    b_d: Matrix6x3<f64>,
    /// Powers `A^i`, i = 1..=K.
    phi: Vec<Matrix6<f64>>,
    /// Stacked prediction matrix (6K × 3K).
    gamma: DMatrix<f64>,
    /// `2 ΓᵀQ̄` (3K × 6K), reused to form the linear term each tick.
    gtq2: DMatrix<f64>,
    /// Constant objective matrix `2(ΓᵀQ̄Γ + R̄)`.
    p_mat: DMatrix<f64>,
    warm: Option<WarmStart>,
}

impl MpcPlanner {
    pub fn new(config: MpcConfig) -> Self {
        assert!(config.is_valid(), "invalid MPC configuration");
        let k = config.horizon;
        let (a_d, b_d) = discretize(config.dt);

        let mut phi = Vec::with_capacity(k);
        let mut power = a_d;
        for _ in 0..k {
            phi.push(power);
            power = a_d * power;
        }
        // impulse responses A^i B, i = 0..K-1
        let mut impulse: Vec<Matrix6x3<f64>> = Vec::with_capacity(k);
        impulse.push(b_d);
        for i in 1..k {
            let next = a_d * impulse[i - 1];
            impulse.push(next);
        }
        let mut gamma = DMatrix::zeros(6 * k, 3 * k);
        for i in 1..=k {
            for j in 0..i {
                let block = &impulse[i - 1 - j];
                for r in 0..6 {
                    for c in 0..3 {
                        gamma[((i - 1) * 6 + r, j * 3 + c)] = block[(r, c)];
                    }
                }
            }
        }
        // Q̄ = blockdiag(Q); form 2ΓᵀQ̄ row-block-wise
        let mut gtq2 = DMatrix::zeros(3 * k, 6 * k);
        for i in 0..k {
            let gblock = gamma.view((i * 6, 0), (6, 3 * k));
            let weighted = gblock.transpose() * config.q_weights * 2.0;
            gtq2.view_mut((0, i * 6), (3 * k, 6)).copy_from(&weighted);
        }
        let mut p_mat = &gtq2 * &gamma;
        for i in 0..k {
            for r in 0..3 {
                for c in 0..3 {
                    p_mat[(i * 3 + r, i * 3 + c)] += 2.0 * config.r_weights[(r, c)];
                }
            }
        }
        // enforce exact symmetry against round-off
        p_mat = (&p_mat + p_mat.transpose()) * 0.5;

        Self { config, a_d, b_d, phi, gamma, gtq2, p_mat, warm: None }
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    /// Free (zero-input) state predictions stacked over the horizon.
    fn free_response(&self, x_now: &Vector6<f64>) -> DVector<f64> {
        let k = self.config.horizon;
        let mut free = DVector::zeros(6 * k);
        for i in 0..k {
            let xi = self.phi[i] * x_now;
            free.rows_mut(i * 6, 6).copy_from(&xi);
        }
        free
    }

    /// Assembles the condensed QP for the current state and reference
    /// window (`ref_window[i]` is the reference at `t + (i+1)·dt`).
    pub fn build_ocp(&self, x_now: &Vector6<f64>, ref_window: &[Vector6<f64>]) -> QpProblem {
        let k = self.config.horizon;
        assert_eq!(ref_window.len(), k, "reference window must match the horizon");
        let free = self.free_response(x_now);
        let mut resid = free.clone();
        for i in 0..k {
            for r in 0..6 {
                resid[i * 6 + r] -= ref_window[i][r];
            }
        }
        let q = &self.gtq2 * &resid;

        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        if let Some(bound) = self.config.input_bound {
            if bound.is_finite() {
                for idx in 0..3 * k {
                    let mut up = DVector::zeros(3 * k);
                    up[idx] = 1.0;
                    rows.push((up, bound));
                    let mut lo = DVector::zeros(3 * k);
                    lo[idx] = -1.0;
                    rows.push((lo, bound));
                }
            }
        }
        if let Some((lower, upper)) = &self.config.state_bound {
            for i in 0..k {
                for r in 0..6 {
                    if upper[r].is_finite() {
                        let g = self.gamma.row(i * 6 + r).transpose();
                        rows.push((g, upper[r] - free[i * 6 + r]));
                    }
                    if lower[r].is_finite() {
                        let g = -self.gamma.row(i * 6 + r).transpose();
                        rows.push((g, free[i * 6 + r] - lower[r]));
                    }
                }
            }
        }
        let m = rows.len();
        let mut a = DMatrix::zeros(m, 3 * k);
        let mut b = DVector::zeros(m);
        for (i, (coeffs, rhs)) in rows.into_iter().enumerate() {
            a.set_row(i, &coeffs.transpose());
            b[i] = rhs;
        }
        QpProblem::new(self.p_mat.clone(), q, a, b)
    }

    /// Solves the horizon problem and returns the first step, warm-started
    /// from the previous tick. On failure falls back to the first
    /// reference sample with zero feedforward.
    pub fn solve(
        &mut self,
        x_now: &Vector6<f64>,
        ref_window: &[Vector6<f64>],
        settings: &QpSettings,
    ) -> MpcStep {
        let problem = self.build_ocp(x_now, ref_window);
        let solution = qp::solve_qp_warm(&problem, settings, self.warm.as_ref());
        if solution.status == QpStatus::Solved {
            let mu_d = Vector3::new(solution.z[0], solution.z[1], solution.z[2]);
            let x_d = self.a_d * x_now + self.b_d * mu_d;
            let step = MpcStep {
                x_d,
                mu_d,
                status: solution.status,
                iterations: solution.iterations,
                fallback: false,
            };
            self.warm = Some(WarmStart::from(&solution));
            step
        } else {
            self.warm = None;
            MpcStep {
                x_d: ref_window[0],
                mu_d: Vector3::zeros(),
                status: solution.status,
                iterations: solution.iterations,
                fallback: true,
            }
        }
    }

    /// Drops the carried warm start (e.g. after a reference jump).
    pub fn reset_warm_start(&mut self) {
        self.warm = None;
    }
}
