//! Dense convex quadratic programming by ADMM operator splitting.
//!
//! Solves problems of the form
//!
//! ```text
//!     minimize   ½ zᵀ P z + qᵀ z
//!     subject to A z ≤ b
//! ```
//!
//! with `P` symmetric positive semidefinite. The solver splits on the
//! constraint image `ζ = A z`, alternating a regularized equality-constrained
//! minimization with a projection onto `(−∞, b]`, and equilibrates the
//! problem data with modified Ruiz scaling so that widely different penalty
//! magnitudes (the relaxation weights reach 1e12) stay solvable at tight
//! tolerances. Termination is decided on unscaled KKT residuals.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

/// Dense inequality-constrained QP data.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Symmetric PSD objective matrix (n × n).
    pub p: DMatrix<f64>,
    /// Linear objective term (n).
    pub q: DVector<f64>,
    /// Constraint matrix (m × n); `m = 0` means unconstrained.
    pub a: DMatrix<f64>,
    /// Constraint right-hand side (m); rows read `aᵢ·z ≤ bᵢ`.
    pub b: DVector<f64>,
}

impl QpProblem {
    pub fn new(p: DMatrix<f64>, q: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let problem = Self { p, q, a, b };
        debug_assert!(problem.is_valid());
        problem
    }

    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        Self::new(p, q, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn is_valid(&self) -> bool {
        let n = self.num_vars();
        let m = self.num_constraints();
        self.p.nrows() == n
            && self.p.ncols() == n
            && self.a.nrows() == m
            && self.a.ncols() == n
            && (self.p.clone() - self.p.transpose()).amax() < 1e-12
    }

    /// Objective value `½ zᵀPz + qᵀz`.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (&self.p * z).dot(z) + self.q.dot(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Residuals are evaluated every this many iterations.
    pub check_interval: usize,
    /// ADMM regularization σ.
    pub sigma: f64,
    /// Over-relaxation parameter.
    pub alpha: f64,
    /// Initial step parameter ρ.
    pub rho: f64,
    /// Enable residual-balancing ρ adaptation.
    pub adaptive_rho: bool,
    /// Infeasibility-certificate tolerance.
    pub eps_pinf: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 4000,
            check_interval: 25,
            sigma: 1e-6,
            alpha: 1.6,
            rho: 0.1,
            adaptive_rho: true,
            eps_pinf: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
}

impl fmt::Display for QpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QpStatus::Solved => write!(f, "solved"),
            QpStatus::MaxIterations => write!(f, "max-iterations"),
            QpStatus::PrimalInfeasible => write!(f, "primal-infeasible"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Inequality multipliers (componentwise ≥ 0 at a solution).
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

/// Primal/dual iterates carried between solves of slowly varying problems.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub z: DVector<f64>,
    pub y: DVector<f64>,
}

impl From<&QpSolution> for WarmStart {
    fn from(sol: &QpSolution) -> Self {
        Self { z: sol.z.clone(), y: sol.y.clone() }
    }
}

struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    cost: f64,
}

/// Modified Ruiz equilibration of `[[P, Aᵀ], [A, 0]]` plus cost scaling.
fn ruiz_equilibrate(
    p: &mut DMatrix<f64>,
    q: &mut DVector<f64>,
    a: &mut DMatrix<f64>,
    iters: usize,
) -> Scaling {
    let n = q.len();
    let m = a.nrows();
    let mut d = DVector::repeat(n, 1.0);
    let mut e = DVector::repeat(m, 1.0);
    let mut cost = 1.0;
    let safe = |v: f64| if v > 1e-12 { v } else { 1.0 };

    for _ in 0..iters {
        for j in 0..n {
            let mut nrm = p.column(j).amax();
            if m > 0 {
                nrm = nrm.max(a.column(j).amax());
            }
            let delta = 1.0 / safe(nrm).sqrt();
            d[j] *= delta;
            // scale variable j: row j and column j of P, column j of A
            for i in 0..n {
                p[(i, j)] *= delta;
                p[(j, i)] *= delta;
            }
            q[j] *= delta;
            for i in 0..m {
                a[(i, j)] *= delta;
            }
        }
        for i in 0..m {
            let delta = 1.0 / safe(a.row(i).amax()).sqrt();
            e[i] *= delta;
            for j in 0..n {
                a[(i, j)] *= delta;
            }
        }
        // cost normalization
        let mean_col: f64 =
            (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n.max(1) as f64;
        let gamma = 1.0 / safe(mean_col.max(q.amax()));
        *p *= gamma;
        *q *= gamma;
        cost *= gamma;
    }
    Scaling { d, e, cost }
}

/// Solves the QP from a cold start.
pub fn solve_qp(problem: &QpProblem, settings: &QpSettings) -> QpSolution {
    solve_qp_warm(problem, settings, None)
}

/// Solves the QP, optionally warm-started from a previous solution.
pub fn solve_qp_warm(
    problem: &QpProblem,
    settings: &QpSettings,
    warm: Option<&WarmStart>,
) -> QpSolution {
    assert!(problem.is_valid(), "malformed QP data");
    let n = problem.num_vars();
    let m = problem.num_constraints();

    if m == 0 {
        return solve_unconstrained(problem);
    }

    // scale
    let mut ps = problem.p.clone();
    let mut qs = problem.q.clone();
    let mut asc = problem.a.clone();
    let scaling = ruiz_equilibrate(&mut ps, &mut qs, &mut asc, 10);
    let bs = DVector::from_fn(m, |i, _| scaling.e[i] * problem.b[i]);

    let mut rho = settings.rho;
    let mut factor = kkt_factor(&ps, &asc, rho, settings.sigma);

    let (mut x, mut y) = match warm {
        Some(w) if w.z.len() == n && w.y.len() == m => (
            DVector::from_fn(n, |i, _| w.z[i] / scaling.d[i]),
            DVector::from_fn(m, |i, _| scaling.cost * w.y[i] / scaling.e[i]),
        ),
        _ => (DVector::zeros(n), DVector::zeros(m)),
    };
    let mut zeta = &asc * &x;
    let mut y_prev_check = y.clone();

    let mut status = QpStatus::MaxIterations;
    let mut iterations = settings.max_iter;
    let mut primal_residual = f64::INFINITY;
    let mut dual_residual = f64::INFINITY;

    for k in 1..=settings.max_iter {
        let rhs = settings.sigma * &x - &qs + asc.transpose() * (rho * &zeta - &y);
        let x_tilde = factor.solve(&rhs);
        let zeta_tilde = &asc * &x_tilde;

        x = settings.alpha * x_tilde + (1.0 - settings.alpha) * &x;
        let mix = settings.alpha * &zeta_tilde + (1.0 - settings.alpha) * &zeta;
        let v = &mix + &y / rho;
        let zeta_new = v.zip_map(&bs, f64::min);
        y += rho * (&mix - &zeta_new);
        zeta = zeta_new;

        if k % settings.check_interval == 0 || k == settings.max_iter {
            // unscale candidates
            let z_u = DVector::from_fn(n, |i, _| x[i] * scaling.d[i]);
            let y_u = DVector::from_fn(m, |i, _| y[i] * scaling.e[i] / scaling.cost);
            let zeta_u = DVector::from_fn(m, |i, _| zeta[i] / scaling.e[i]);

            let az = &problem.a * &z_u;
            let pz = &problem.p * &z_u;
            let aty = problem.a.transpose() * &y_u;

            let r_prim = (&az - &zeta_u).amax();
            let r_dual = (&pz + &problem.q + &aty).amax();
            let eps_prim =
                settings.eps_abs + settings.eps_rel * az.amax().max(zeta_u.amax());
            let eps_dual = settings.eps_abs
                + settings.eps_rel * pz.amax().max(problem.q.amax()).max(aty.amax());

            primal_residual = r_prim;
            dual_residual = r_dual;

            if r_prim <= eps_prim && r_dual <= eps_dual {
                status = QpStatus::Solved;
                iterations = k;
                return QpSolution {
                    z: z_u,
                    y: y_u,
                    status,
                    primal_residual,
                    dual_residual,
                    iterations,
                };
            }

            // primal infeasibility certificate on the dual increment
            let dy = DVector::from_fn(m, |i, _| {
                (y[i] - y_prev_check[i]) * scaling.e[i] / scaling.cost
            });
            let dy_norm = dy.amax();
            if dy_norm > 1e-12 {
                let aty_dy = (problem.a.transpose() * &dy).amax();
                let neg_part = dy.iter().fold(0.0f64, |acc, v| acc.max(-v));
                let support = problem.b.dot(&dy);
                if aty_dy <= settings.eps_pinf * dy_norm
                    && neg_part <= settings.eps_pinf * dy_norm
                    && support < -settings.eps_pinf * dy_norm
                {
                    status = QpStatus::PrimalInfeasible;
                    iterations = k;
                    return QpSolution {
                        z: z_u,
                        y: dy,
                        status,
                        primal_residual,
                        dual_residual,
                        iterations,
                    };
                }
            }
            y_prev_check = y.clone();

            if settings.adaptive_rho && k < settings.max_iter {
                let prim_scale = az.amax().max(zeta_u.amax()).max(1e-12);
                let dual_scale = pz.amax().max(problem.q.amax()).max(aty.amax()).max(1e-12);
                let ratio = ((r_prim / prim_scale) / (r_dual / dual_scale).max(1e-12)).sqrt();
                let rho_new = (rho * ratio).clamp(1e-6, 1e12);
                if rho_new > 2.0 * rho || rho_new < rho / 2.0 {
                    rho = rho_new;
                    factor = kkt_factor(&ps, &asc, rho, settings.sigma);
                }
            }
        }
    }

    let z_u = DVector::from_fn(n, |i, _| x[i] * scaling.d[i]);
    let y_u = DVector::from_fn(m, |i, _| y[i] * scaling.e[i] / scaling.cost);
    QpSolution { z: z_u, y: y_u, status, primal_residual, dual_residual, iterations }
}

fn solve_unconstrained(problem: &QpProblem) -> QpSolution {
    let n = problem.num_vars();
    let lu = problem.p.clone().full_piv_lu();
    match lu.solve(&(-&problem.q)) {
        Some(z) => {
            let dual_residual = (&problem.p * &z + &problem.q).amax();
            QpSolution {
                z,
                y: DVector::zeros(0),
                status: QpStatus::Solved,
                primal_residual: 0.0,
                dual_residual,
                iterations: 0,
            }
        }
        None => QpSolution {
            z: DVector::zeros(n),
            y: DVector::zeros(0),
            status: QpStatus::MaxIterations,
            primal_residual: 0.0,
            dual_residual: f64::INFINITY,
            iterations: 0,
        },
    }
}

fn kkt_factor(
    ps: &DMatrix<f64>,
    asc: &DMatrix<f64>,
    rho: f64,
    sigma: f64,
) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
    let n = ps.ncols();
    let mut m = ps + asc.transpose() * asc * rho;
    for i in 0..n {
        m[(i, i)] += sigma;
    }
    nalgebra::Cholesky::new(m).expect("P + σI + ρAᵀA is positive definite")
}

/// Serializes the problem in a plain text format for offline debugging.
///
/// Layout: a header line `qp n m`, then `P` (n rows), `q` (one row), `A`
/// (m rows) and `b` (one row), all row-major and whitespace-separated.
pub fn dump_problem(problem: &QpProblem) -> String {
    let n = problem.num_vars();
    let m = problem.num_constraints();
    let mut out = format!("qp {n} {m}\n");
    let push_row = |out: &mut String, vals: &mut dyn Iterator<Item = f64>| {
        let row: Vec<String> = vals.map(|v| format!("{v}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    };
    for i in 0..n {
        push_row(&mut out, &mut problem.p.row(i).iter().copied());
    }
    push_row(&mut out, &mut problem.q.iter().copied());
    for i in 0..m {
        push_row(&mut out, &mut problem.a.row(i).iter().copied());
    }
    push_row(&mut out, &mut problem.b.iter().copied());
    out
}

/// Parses the format produced by [`dump_problem`].
pub fn parse_dump(text: &str) -> Option<QpProblem> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next()?;
    let mut parts = header.split_whitespace();
    if parts.next()? != "qp" {
        return None;
    }
    let n: usize = parts.next()?.parse().ok()?;
    let m: usize = parts.next()?.parse().ok()?;
    let mut parse_row = |len: usize| -> Option<Vec<f64>> {
        let row: Vec<f64> = lines
            .next()?
            .split_whitespace()
            .map(|t| t.parse().ok())
            .collect::<Option<_>>()?;
        (row.len() == len).then_some(row)
    };
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        p.set_row(i, &nalgebra::RowDVector::from_vec(parse_row(n)?));
    }
    let q = DVector::from_vec(parse_row(n)?);
    let mut a = DMatrix::zeros(m, n);
    for i in 0..m {
        a.set_row(i, &nalgebra::RowDVector::from_vec(parse_row(n)?));
    }
    let b = DVector::from_vec(parse_row(m)?);
    Some(QpProblem { p, q, a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force reference: enumerate every active set, solve the
    /// equality-constrained KKT system, keep the feasible candidate with
    /// nonnegative multipliers and minimal objective.
    fn active_set_oracle(problem: &QpProblem) -> Option<DVector<f64>> {
        let n = problem.num_vars();
        let m = problem.num_constraints();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << m) {
            let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            let k = rows.len();
            if k > n {
                continue;
            }
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&problem.p);
            for (r, &i) in rows.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + r, j)] = problem.a[(i, j)];
                    kkt[(j, n + r)] = problem.a[(i, j)];
                }
            }
            let mut rhs = DVector::zeros(n + k);
            for j in 0..n {
                rhs[j] = -problem.q[j];
            }
            for (r, &i) in rows.iter().enumerate() {
                rhs[n + r] = problem.b[i];
            }
            let lu = kkt.full_piv_lu();
            let Some(sol) = lu.solve(&rhs) else { continue };
            let z = sol.rows(0, n).into_owned();
            let lambda = sol.rows(n, k);
            if lambda.iter().any(|l| *l < -1e-9) {
                continue;
            }
            let feasible = (0..m).all(|i| problem.a.row(i).transpose().dot(&z) <= problem.b[i] + 1e-8);
            if !feasible {
                continue;
            }
            let obj = problem.objective(&z);
            if best.as_ref().map_or(true, |(o, _)| obj < *o) {
                best = Some((obj, z));
            }
        }
        best.map(|(_, z)| z)
    }

    fn random_spd_problem(seed: u64, n: usize, m: usize) -> QpProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut p = &g * g.transpose();
        for i in 0..n {
            p[(i, i)] += 0.5;
        }
        let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        // keep b around the unconstrained optimum so some rows activate
        let b = DVector::from_fn(m, |_, _| rng.random_range(-0.5..1.5));
        QpProblem::new(p, q, a, b)
    }

    fn assert_kkt(problem: &QpProblem, sol: &QpSolution, tol: f64) {
        assert_eq!(sol.status, QpStatus::Solved);
        let stationarity =
            (&problem.p * &sol.z + &problem.q + problem.a.transpose() * &sol.y).amax();
        assert!(stationarity < tol, "stationarity {stationarity}");
        for i in 0..problem.num_constraints() {
            let slack = problem.a.row(i).transpose().dot(&sol.z) - problem.b[i];
            assert!(slack < tol, "row {i} violated by {slack}");
            assert!(sol.y[i] > -tol, "negative multiplier {}", sol.y[i]);
            assert!(
                (sol.y[i] * slack).abs() < tol * (1.0 + sol.y[i].abs()),
                "complementarity row {i}"
            );
        }
    }

    #[test]
    fn unconstrained_norm_minimization_is_zero() {
        let p = DMatrix::identity(4, 4) * 2.0;
        let problem = QpProblem::unconstrained(p, DVector::zeros(4));
        let sol = solve_qp(&problem, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Solved);
        assert!(sol.z.amax() < 1e-12);
    }

    #[test]
    fn single_active_constraint() {
        // min (z−1)² s.t. z ≤ 0 → z = 0, multiplier 2
        let problem = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -2.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
        );
        let sol = solve_qp(&problem, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Solved);
        assert!(sol.z[0].abs() < 1e-6);
        assert!((sol.y[0] - 2.0).abs() < 1e-4, "multiplier {}", sol.y[0]);
    }

    #[test]
    fn matches_active_set_oracle_on_random_problems() {
        let settings = QpSettings { eps_abs: 1e-9, eps_rel: 1e-9, ..QpSettings::default() };
        for seed in 0..40 {
            let problem = random_spd_problem(seed, 1 + (seed as usize % 5), 1 + (seed as usize % 8));
            let sol = solve_qp(&problem, &settings);
            let Some(z_ref) = active_set_oracle(&problem) else { continue };
            assert_eq!(sol.status, QpStatus::Solved, "seed {seed}");
            assert!(
                (&sol.z - &z_ref).amax() < 1e-6,
                "seed {seed}: admm {:?} oracle {:?}",
                sol.z,
                z_ref
            );
            assert_kkt(&problem, &sol, 1e-6);
        }
    }

    #[test]
    fn solution_beats_random_feasible_points() {
        let problem = random_spd_problem(99, 4, 6);
        let sol = solve_qp(&problem, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Solved);
        let obj = problem.objective(&sol.z);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tested = 0;
        while tested < 200 {
            let cand = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let feasible =
                (0..6).all(|i| problem.a.row(i).transpose().dot(&cand) <= problem.b[i]);
            if feasible {
                tested += 1;
                assert!(problem.objective(&cand) >= obj - 1e-6);
            }
        }
    }

    #[test]
    fn positive_rescaling_keeps_argmin() {
        let problem = random_spd_problem(5, 3, 5);
        let scaled = QpProblem::new(
            &problem.p * 37.0,
            &problem.q * 37.0,
            problem.a.clone(),
            problem.b.clone(),
        );
        let s1 = solve_qp(&problem, &QpSettings::default());
        let s2 = solve_qp(&scaled, &QpSettings::default());
        assert!((&s1.z - &s2.z).amax() < 1e-5);
    }

    #[test]
    fn deterministic_for_fixed_inputs() {
        let problem = random_spd_problem(13, 5, 8);
        let a = solve_qp(&problem, &QpSettings::default());
        let b = solve_qp(&problem, &QpSettings::default());
        assert_eq!(a.z, b.z);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // z ≤ −1 and −z ≤ −1 cannot both hold
        let problem = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::zeros(1),
            DMatrix::from_vec(2, 1, vec![1.0, -1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
        );
        let sol = solve_qp(&problem, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let problem = random_spd_problem(21, 5, 8);
        let settings = QpSettings::default();
        let cold = solve_qp(&problem, &settings);
        let warm = solve_qp_warm(&problem, &settings, Some(&WarmStart::from(&cold)));
        assert_eq!(warm.status, QpStatus::Solved);
        assert!((&warm.z - &cold.z).amax() < 1e-5);
        assert!(warm.iterations <= cold.iterations);
    }

    #[test]
    fn handles_heavy_penalty_scaling() {
        // objective shaped like the safety QP: unit weights on the action
        // block, huge penalties on the slack block
        let mut p = DMatrix::zeros(5, 5);
        for i in 0..3 {
            p[(i, i)] = 2.0;
        }
        p[(3, 3)] = 2.0e8;
        p[(4, 4)] = 2.0e12;
        let q = DVector::zeros(5);
        let mut a = DMatrix::zeros(2, 5);
        a[(0, 0)] = 1.0;
        a[(0, 3)] = -1.0;
        a[(1, 1)] = 0.5;
        a[(1, 4)] = -1.0;
        let b = DVector::from_vec(vec![-1.0, -0.3]);
        let problem = QpProblem::new(p, q, a, b);
        let sol = solve_qp(&problem, &QpSettings::default());
        assert_kkt(&problem, &sol, 1e-4);
        let z_ref = active_set_oracle(&problem).unwrap();
        assert!((&sol.z - &z_ref).amax() < 1e-5, "admm {:?} oracle {:?}", sol.z, z_ref);
    }

    #[test]
    fn dump_round_trips() {
        let problem = random_spd_problem(31, 3, 4);
        let text = dump_problem(&problem);
        let back = parse_dump(&text).unwrap();
        assert_eq!(problem, back);
    }
}
