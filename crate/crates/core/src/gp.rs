//! Per-axis Gaussian-process regression for online disturbance estimation.
//!
//! Three independent GPs (one per acceleration axis) share a 6-D state
//! input and a squared-exponential kernel with ARD length scales. The
//! module provides exact posterior inference through a Cholesky
//! factorization of the noisy Gram matrix, the log marginal likelihood
//! with its analytic gradient in log-hyperparameter space, a projected
//! gradient-ascent hyperparameter optimizer, and the high-probability
//! confidence scaling used by the stability and safety constraints.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
#[allow(unused_imports)]
use num_traits::Float;

/// Input dimension of the regression (stacked position and velocity).
pub const INPUT_DIM: usize = 6;
/// Output dimension (one GP per acceleration axis).
pub const OUTPUT_DIM: usize = 3;
/// Number of log-space hyperparameters: ln σ_f, six ln l_d, ln σ²_noise.
pub const N_HYPER: usize = 8;

/// Relative jitter added to the Gram diagonal before factorization.
const JITTER_REL: f64 = 1e-9;

pub type InputVec = Vector6<f64>;

#[derive(Debug, Clone, PartialEq)]
pub enum GpError {
    /// The noisy Gram matrix failed to factor; hyperparameters are
    /// degenerate or invalid for the data.
    IllConditioned,
    /// A hyperparameter violates strict positivity.
    InvalidHyperparams,
    /// Malformed CSV input.
    CsvParse { line: usize },
}

impl fmt::Display for GpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GpError::IllConditioned => write!(f, "noisy Gram matrix is not positive definite"),
            GpError::InvalidHyperparams => write!(f, "hyperparameters must be strictly positive"),
            GpError::CsvParse { line } => write!(f, "malformed dataset CSV at line {line}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GpError {}

/// Squared-exponential kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Prior standard deviation σ_f.
    pub sigma_f: f64,
    /// Per-input-dimension length scales (ARD).
    pub length_scales: Vector6<f64>,
    /// Observation noise variance σ²_noise.
    pub noise_var: f64,
}

impl Hyperparams {
    pub fn new(sigma_f: f64, length_scales: Vector6<f64>, noise_var: f64) -> Self {
        Self { sigma_f, length_scales, noise_var }
    }

    /// Isotropic helper: one shared length scale across all inputs.
    pub fn isotropic(sigma_f: f64, length_scale: f64, noise_var: f64) -> Self {
        Self::new(sigma_f, Vector6::repeat(length_scale), noise_var)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if pos(self.sigma_f) && pos(self.noise_var) && self.length_scales.iter().all(|l| pos(*l)) {
            Ok(())
        } else {
            Err(GpError::InvalidHyperparams)
        }
    }

    pub fn to_log(&self) -> [f64; N_HYPER] {
        let mut theta = [0.0; N_HYPER];
        theta[0] = self.sigma_f.ln();
        for d in 0..INPUT_DIM {
            theta[1 + d] = self.length_scales[d].ln();
        }
        theta[7] = self.noise_var.ln();
        theta
    }

    pub fn from_log(theta: &[f64; N_HYPER]) -> Self {
        let mut ls = Vector6::zeros();
        for d in 0..INPUT_DIM {
            ls[d] = theta[1 + d].exp();
        }
        Self { sigma_f: theta[0].exp(), length_scales: ls, noise_var: theta[7].exp() }
    }

    fn jitter(&self) -> f64 {
        JITTER_REL * self.sigma_f * self.sigma_f
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::isotropic(3.0, 2.0, 1.0)
    }
}

/// FIFO training buffer of `(x, y)` pairs.
///
/// `capacity = 0` disables eviction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    inputs: Vec<InputVec>,
    targets: Vec<Vector3<f64>>,
    capacity: usize,
}

impl Dataset {
    pub fn new(capacity: usize) -> Self {
        Self { inputs: Vec::new(), targets: Vec::new(), capacity }
    }

    /// Appends a pair, evicting the oldest when at capacity.
    pub fn push(&mut self, x: InputVec, y: Vector3<f64>) {
        if self.capacity > 0 && self.inputs.len() == self.capacity {
            self.inputs.remove(0);
            self.targets.remove(0);
        }
        self.inputs.push(x);
        self.targets.push(y);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inputs(&self) -> &[InputVec] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Vector3<f64>] {
        &self.targets
    }

    /// Targets of output dimension `j` as a column vector.
    pub fn target_column(&self, j: usize) -> DVector<f64> {
        DVector::from_iterator(self.targets.len(), self.targets.iter().map(|y| y[j]))
    }

    /// Serializes as CSV with header `x0..x5,y0..y2`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("x0,x1,x2,x3,x4,x5,y0,y1,y2\n");
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let row: Vec<String> =
                x.iter().chain(y.iter()).map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(s: &str, capacity: usize) -> Result<Self, GpError> {
        let mut ds = Dataset::new(capacity);
        for (i, line) in s.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let vals: Result<Vec<f64>, _> = line.split(',').map(str::parse).collect();
            let vals = vals.map_err(|_| GpError::CsvParse { line: i + 1 })?;
            if vals.len() != INPUT_DIM + OUTPUT_DIM {
                return Err(GpError::CsvParse { line: i + 1 });
            }
            ds.push(
                Vector6::from_row_slice(&vals[..INPUT_DIM]),
                Vector3::from_row_slice(&vals[INPUT_DIM..]),
            );
        }
        Ok(ds)
    }
}

/// SE kernel: `σ_f² exp(−½ Σ_d (a_d − b_d)² / l_d²)`.
pub fn kernel_eval(a: &InputVec, b: &InputVec, hyper: &Hyperparams) -> f64 {
    let mut q = 0.0;
    for d in 0..INPUT_DIM {
        let r = (a[d] - b[d]) / hyper.length_scales[d];
        q += r * r;
    }
    hyper.sigma_f * hyper.sigma_f * (-0.5 * q).exp()
}

#[derive(Debug, Clone)]
struct GpAxis {
    hyper: Hyperparams,
    /// Lower Cholesky factor of `K + (σ²_noise + jitter) I`; empty for the prior.
    chol_l: DMatrix<f64>,
    /// `(K + σ²_noise I)⁻¹ y` for this axis; empty for the prior.
    alpha: DVector<f64>,
}

/// Fitted per-axis GP posteriors sharing one training-input set.
#[derive(Debug, Clone)]
pub struct GpModel {
    axes: [GpAxis; OUTPUT_DIM],
    inputs: Vec<InputVec>,
}

impl GpModel {
    /// Prior model with no data: zero mean, std σ_f everywhere.
    pub fn prior(hyper: Hyperparams) -> Self {
        let axis = GpAxis {
            hyper,
            chol_l: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
        };
        Self { axes: [axis.clone(), axis.clone(), axis], inputs: Vec::new() }
    }

    /// Number of training pairs.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn hyperparams(&self, axis: usize) -> &Hyperparams {
        &self.axes[axis].hyper
    }

    pub fn training_inputs(&self) -> &[InputVec] {
        &self.inputs
    }
}

fn gram(inputs: &[InputVec], hyper: &Hyperparams) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_eval(&inputs[i], &inputs[j], hyper);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn noisy_gram(inputs: &[InputVec], hyper: &Hyperparams) -> DMatrix<f64> {
    let mut ky = gram(inputs, hyper);
    let bump = hyper.noise_var + hyper.jitter();
    for i in 0..inputs.len() {
        ky[(i, i)] += bump;
    }
    ky
}

/// Fits the three per-axis posteriors with shared hyperparameters.
///
/// An empty dataset yields the prior model.
pub fn fit(dataset: &Dataset, hyper: &Hyperparams) -> Result<GpModel, GpError> {
    fit_per_axis(dataset, &[hyper.clone(), hyper.clone(), hyper.clone()])
}

/// Fits with independent hyperparameters per output axis.
pub fn fit_per_axis(
    dataset: &Dataset,
    hypers: &[Hyperparams; OUTPUT_DIM],
) -> Result<GpModel, GpError> {
    for h in hypers {
        h.validate()?;
    }
    if dataset.is_empty() {
        let mut model = GpModel::prior(hypers[0].clone());
        for (axis, h) in model.axes.iter_mut().zip(hypers) {
            axis.hyper = h.clone();
        }
        return Ok(model);
    }
    let build = |hyper: &Hyperparams, j: usize| -> Result<GpAxis, GpError> {
        let ky = noisy_gram(dataset.inputs(), hyper);
        let chol = nalgebra::Cholesky::new(ky).ok_or(GpError::IllConditioned)?;
        let alpha = chol.solve(&dataset.target_column(j));
        Ok(GpAxis { hyper: hyper.clone(), chol_l: chol.unpack(), alpha })
    };
    Ok(GpModel {
        axes: [build(&hypers[0], 0)?, build(&hypers[1], 1)?, build(&hypers[2], 2)?],
        inputs: dataset.inputs().to_vec(),
    })
}

/// Posterior mean and standard deviation per axis at a query state.
pub fn predict(model: &GpModel, x: &InputVec) -> (Vector3<f64>, Vector3<f64>) {
    let mut mean = Vector3::zeros();
    let mut std = Vector3::zeros();
    let n = model.inputs.len();
    for (j, axis) in model.axes.iter().enumerate() {
        if n == 0 {
            std[j] = axis.hyper.sigma_f;
            continue;
        }
        let kvec = DVector::from_iterator(
            n,
            model.inputs.iter().map(|xi| kernel_eval(x, xi, &axis.hyper)),
        );
        mean[j] = kvec.dot(&axis.alpha);
        let w = axis
            .chol_l
            .solve_lower_triangular(&kvec)
            .expect("factor has positive diagonal");
        let prior_var = axis.hyper.sigma_f * axis.hyper.sigma_f;
        std[j] = (prior_var - w.norm_squared()).max(0.0).sqrt();
    }
    (mean, std)
}

/// Log marginal likelihood of the dataset (summed over the three output
/// axes) and its gradient with respect to the log hyperparameters
/// `[ln σ_f, ln l_1 … ln l_6, ln σ²_noise]`.
pub fn log_marginal_likelihood(
    dataset: &Dataset,
    hyper: &Hyperparams,
) -> Result<(f64, [f64; N_HYPER]), GpError> {
    hyper.validate()?;
    let n = dataset.len();
    if n == 0 {
        return Ok((0.0, [0.0; N_HYPER]));
    }
    let inputs = dataset.inputs();
    let k_jittered = {
        let mut k = gram(inputs, hyper);
        let j = hyper.jitter();
        for i in 0..n {
            k[(i, i)] += j;
        }
        k
    };
    let mut ky = k_jittered.clone();
    for i in 0..n {
        ky[(i, i)] += hyper.noise_var;
    }
    let chol = nalgebra::Cholesky::new(ky).ok_or(GpError::IllConditioned)?;
    let ky_inv = chol.inverse();

    // W = Σ_j α_j α_jᵀ − n_axes · K_y⁻¹, so that ∂LML/∂θ = ½ tr(W ∂K_y/∂θ)
    let mut w = &ky_inv * (-(OUTPUT_DIM as f64));
    let mut data_fit = 0.0;
    for j in 0..OUTPUT_DIM {
        let y = dataset.target_column(j);
        let alpha = chol.solve(&y);
        data_fit += 0.5 * y.dot(&alpha);
        w += &alpha * alpha.transpose();
    }
    let l = chol.unpack();
    let log_det_half: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let value =
        -data_fit - (OUTPUT_DIM as f64) * (log_det_half + 0.5 * n as f64 * (2.0 * PI).ln());

    let mut grad = [0.0; N_HYPER];
    // ∂K_y/∂ln σ_f = 2 (K + jitter I)
    grad[0] = k_jittered.iter().zip(w.iter()).map(|(k, wi)| wi * k).sum::<f64>();
    // ∂K_y/∂ln l_d = K ⊙ S_d with S_d[a,b] = (x_a[d] − x_b[d])² / l_d²
    for d in 0..INPUT_DIM {
        let mut acc = 0.0;
        let inv_l2 = 1.0 / (hyper.length_scales[d] * hyper.length_scales[d]);
        for a in 0..n {
            for b in 0..n {
                let diff = inputs[a][d] - inputs[b][d];
                let s = diff * diff * inv_l2;
                // off-diagonal jitter contribution is zero and S_d is zero on the diagonal
                acc += w[(a, b)] * k_jittered[(a, b)] * s;
            }
        }
        grad[1 + d] = 0.5 * acc;
    }
    // ∂K_y/∂ln σ²_noise = σ²_noise I
    grad[7] = 0.5 * hyper.noise_var * (0..n).map(|i| w[(i, i)]).sum::<f64>();
    Ok((value, grad))
}

/// Box bounds for hyperparameter optimization, enforced in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperBounds {
    pub lower: Hyperparams,
    pub upper: Hyperparams,
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            lower: Hyperparams::isotropic(1e-2, 1e-2, 1e-4),
            upper: Hyperparams::isotropic(1e2, 1e3, 1e2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Convergence tolerance on the projected-gradient infinity norm.
    pub grad_tol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { max_iter: 100, grad_tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub hyper: Hyperparams,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when every line search failed before reaching the gradient
    /// tolerance; the returned point is still the best visited.
    pub line_search_failed: bool,
}

/// Maximizes the log marginal likelihood by projected gradient ascent with
/// a backtracking line search in log-hyperparameter space.
///
/// The returned point never decreases the likelihood relative to `init`
/// (after projection onto the bounds).
pub fn optimize_hyperparameters(
    dataset: &Dataset,
    init: &Hyperparams,
    bounds: &HyperBounds,
    opts: &OptimOptions,
) -> Result<OptimResult, GpError> {
    init.validate()?;
    let lo = bounds.lower.to_log();
    let hi = bounds.upper.to_log();
    let clamp = |theta: &[f64; N_HYPER]| {
        let mut out = *theta;
        for i in 0..N_HYPER {
            out[i] = out[i].max(lo[i]).min(hi[i]);
        }
        out
    };

    let mut theta = clamp(&init.to_log());
    let (mut value, mut grad) = log_marginal_likelihood(dataset, &Hyperparams::from_log(&theta))?;
    let mut step = 0.1;
    let mut iterations = 0;
    let mut converged = false;
    let mut line_search_failed = false;

    for _ in 0..opts.max_iter {
        // projected gradient: movement allowed by the box
        let free = clamp(&core::array::from_fn(|i| theta[i] + grad[i]));
        let pg_norm = (0..N_HYPER)
            .map(|i| (free[i] - theta[i]).abs())
            .fold(0.0, f64::max);
        if pg_norm < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut t = step;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = clamp(&core::array::from_fn(|i| theta[i] + t * grad[i]));
            let dir_dot: f64 = (0..N_HYPER).map(|i| grad[i] * (cand[i] - theta[i])).sum();
            if dir_dot <= 0.0 {
                break; // fully pinned by the bounds
            }
            if let Ok((v, g)) = log_marginal_likelihood(dataset, &Hyperparams::from_log(&cand)) {
                if v >= value + 1e-4 * dir_dot {
                    // Barzilai-Borwein spectral step for the next iteration
                    let mut s_dot_dg = 0.0;
                    let mut dg_dot_dg = 0.0;
                    for i in 0..N_HYPER {
                        let s = cand[i] - theta[i];
                        let dg = g[i] - grad[i];
                        s_dot_dg += s * dg;
                        dg_dot_dg += dg * dg;
                    }
                    step = if dg_dot_dg > 1e-300 {
                        (s_dot_dg.abs() / dg_dot_dg).clamp(1e-6, 1e7)
                    } else {
                        (t * 2.0).min(10.0)
                    };
                    theta = cand;
                    value = v;
                    grad = g;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            line_search_failed = true;
            break;
        }
    }

    Ok(OptimResult {
        hyper: Hyperparams::from_log(&theta),
        value,
        iterations,
        converged,
        line_search_failed,
    })
}

/// How the confidence scale β is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    /// A fixed scale applied to every axis.
    Fixed(f64),
    /// Information-gain based scale with a configured RKHS-norm bound on
    /// the disturbance per axis.
    InformationGain { rkhs_bound: f64 },
}

/// Confidence scaling of the posterior standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Confidence {
    pub beta: Vector3<f64>,
    /// Probability parameter ς ∈ (0, 1).
    pub varsigma: f64,
}

/// Per-axis information gain `γ_j = ½ ln det(I + σ⁻²_noise K_j)`.
pub fn information_gain(model: &GpModel, axis: usize) -> Result<f64, GpError> {
    let n = model.inputs.len();
    if n == 0 {
        return Ok(0.0);
    }
    let hyper = &model.axes[axis].hyper;
    let mut m = gram(&model.inputs, hyper) / hyper.noise_var;
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    let chol = nalgebra::Cholesky::new(m).ok_or(GpError::IllConditioned)?;
    let l = chol.unpack();
    Ok((0..n).map(|i| l[(i, i)].ln()).sum())
}

/// Confidence scale for the high-probability error bound
/// `‖μ_gp(x) − δ(x)‖ ≤ ‖β‖·‖σ(x)‖`.
pub fn confidence_beta(
    model: &GpModel,
    varsigma: f64,
    mode: BetaMode,
) -> Result<Confidence, GpError> {
    let beta = match mode {
        BetaMode::Fixed(b) => Vector3::repeat(b),
        BetaMode::InformationGain { rkhs_bound } => {
            let n = model.len() as f64;
            let log_term = ((n + 1.0) / varsigma).ln().powi(3);
            let mut beta = Vector3::zeros();
            for j in 0..OUTPUT_DIM {
                let gamma = information_gain(model, j)?;
                beta[j] = (2.0 * rkhs_bound * rkhs_bound + 300.0 * gamma * log_term).sqrt();
            }
            beta
        }
    };
    Ok(Confidence { beta, varsigma })
}
