//! Stochastic wind-disturbance generator.
//!
//! The acceleration-level disturbance acting on the plant is the sum of
//! three components, `δ(t) = δ_c + δ_t(t) + δ_g(t)`:
//!
//! - `δ_c`: a per-episode constant with uniformly random direction and
//!   magnitude drawn uniformly from a configured range,
//! - `δ_t`: von Kármán turbulence realized per axis by the spectral
//!   (sum-of-cosines) method — mode frequencies sampled from the
//!   von Kármán power spectral density, phases i.i.d. uniform,
//! - `δ_g`: a deterministic 1−cos gust pulse on a fixed time window.
//!
//! A [`WindField`] realizes all random draws at construction from a seed,
//! after which every component is a pure, continuous function of time.

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
use core::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::Vector3;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

/// Normalization constant of the von Kármán spectrum shape (makes the
/// one-sided PSD integrate to the squared intensity).
const VON_KARMAN_A: f64 = 1.339;

/// Per-axis parameters of the turbulent component.
#[derive(Debug, Clone, PartialEq)]
pub struct TurbulenceParams {
    /// Turbulence intensity σ per axis (std of `δ_t,i`).
    pub intensities: [f64; 3],
    /// Turbulence length scale L per axis [m].
    pub length_scales: [f64; 3],
    /// Reference airspeed V converting spatial to temporal frequency [m/s].
    pub airspeed: f64,
    /// Number of cosine modes per axis in the spectral representation.
    pub modes: usize,
}

impl Default for TurbulenceParams {
    fn default() -> Self {
        Self {
            intensities: [2.0, 2.0, 1.0],
            length_scales: [15.0, 15.0, 2.0],
            airspeed: 2.0,
            modes: 64,
        }
    }
}

/// 1−cos gust pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct GustParams {
    /// Window start [s].
    pub t_start: f64,
    /// Window length [s].
    pub duration: f64,
    /// Peak amplitude per axis, reached at the window midpoint.
    pub amplitude: Vector3<f64>,
}

impl Default for GustParams {
    fn default() -> Self {
        Self {
            t_start: 12.0,
            duration: 4.0,
            amplitude: Vector3::new(2.0, 0.0, -3.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindParams {
    /// Magnitude bounds `[low, high]` of the constant component.
    pub constant_magnitude: (f64, f64),
    pub turbulence: TurbulenceParams,
    pub gust: GustParams,
}

impl Default for WindParams {
    fn default() -> Self {
        Self {
            constant_magnitude: (3.0, 10.0),
            turbulence: TurbulenceParams::default(),
            gust: GustParams::default(),
        }
    }
}

impl WindParams {
    pub fn is_valid(&self) -> bool {
        self.constant_magnitude.0 <= self.constant_magnitude.1
            && self.constant_magnitude.0 >= 0.0
            && self.gust.duration > 0.0
            && self.turbulence.airspeed > 0.0
            && self.turbulence.intensities.iter().all(|s| *s >= 0.0)
            && self.turbulence.length_scales.iter().all(|l| *l > 0.0)
    }
}

#[derive(Debug, Clone)]
struct SpectralAxis {
    /// Mode amplitude σ·sqrt(2/M), shared by all modes of the axis.
    amplitude: f64,
    /// Clip level (6σ).
    clip: f64,
    /// (angular frequency, phase) per mode.
    modes: Vec<(f64, f64)>,
}

impl SpectralAxis {
    fn eval(&self, t: f64) -> (f64, bool) {
        if self.amplitude == 0.0 {
            return (0.0, false);
        }
        let mut s = 0.0;
        for &(omega, phase) in &self.modes {
            s += (omega * t + phase).cos();
        }
        let v = self.amplitude * s;
        if v > self.clip {
            (self.clip, true)
        } else if v < -self.clip {
            (-self.clip, true)
        } else {
            (v, false)
        }
    }
}

/// A realized wind episode: all random draws fixed at construction.
///
/// Immutable after construction and safe to share across threads; the only
/// interior state is a counter of turbulence clip events.
#[derive(Debug)]
pub struct WindField {
    delta_c: Vector3<f64>,
    axes: [SpectralAxis; 3],
    gust: GustParams,
    clip_events: AtomicUsize,
}

impl WindField {
    pub fn new(params: &WindParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delta_c = draw_constant(params, &mut rng);
        let table = PsdCdfTable::new();
        let t = &params.turbulence;
        let axes = core::array::from_fn(|i| {
            let sigma = t.intensities[i];
            let scale = t.airspeed / (VON_KARMAN_A * t.length_scales[i]);
            let m = t.modes.max(1);
            let modes = (0..m)
                .map(|_| {
                    let u = table.sample(rng.random_range(0.0..1.0));
                    let omega = u * scale;
                    let phase = rng.random_range(0.0..TAU);
                    (omega, phase)
                })
                .collect();
            SpectralAxis {
                amplitude: sigma * (2.0 / m as f64).sqrt(),
                clip: 6.0 * sigma,
                modes,
            }
        });
        Self {
            delta_c,
            axes,
            gust: params.gust.clone(),
            clip_events: AtomicUsize::new(0),
        }
    }

    /// The per-episode constant component.
    pub fn constant_component(&self) -> Vector3<f64> {
        self.delta_c
    }

    /// Turbulent component at time `t`, clipped at 6σ per axis.
    pub fn turbulence(&self, t: f64) -> Vector3<f64> {
        let mut out = Vector3::zeros();
        for i in 0..3 {
            let (v, clipped) = self.axes[i].eval(t);
            if clipped {
                self.clip_events.fetch_add(1, Ordering::Relaxed);
            }
            out[i] = v;
        }
        out
    }

    /// Gust component at time `t`: `a·(1 − cos(2π(t−t0)/T))/2` on the
    /// window `[t0, t0+T]`, zero elsewhere.
    pub fn gust(&self, t: f64) -> Vector3<f64> {
        let s = t - self.gust.t_start;
        if s < 0.0 || s > self.gust.duration {
            return Vector3::zeros();
        }
        let shape = 0.5 * (1.0 - (TAU * s / self.gust.duration).cos());
        self.gust.amplitude * shape
    }

    /// Total disturbance `δ_c + δ_t(t) + δ_g(t)`.
    pub fn total(&self, t: f64) -> Vector3<f64> {
        self.delta_c + self.turbulence(t) + self.gust(t)
    }

    /// Number of turbulence samples clipped at the 6σ bound so far.
    pub fn clip_events(&self) -> usize {
        self.clip_events.load(Ordering::Relaxed)
    }
}

fn draw_constant<R: Rng>(params: &WindParams, rng: &mut R) -> Vector3<f64> {
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let (lo, hi) = params.constant_magnitude;
    let mag = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    mag * Vector3::from(dir)
}

/// Inverse-CDF table for the normalized von Kármán frequency density
/// `f(u) ∝ (1 + u²)^(−5/6)` on `u ∈ [0, ∞)`, tabulated through the
/// substitution `u = tan θ` (integrand `cos^(−1/3) θ`).
struct PsdCdfTable {
    theta: Vec<f64>,
    cdf: Vec<f64>,
}

impl PsdCdfTable {
    fn new() -> Self {
        const J: usize = 2048;
        let theta_max = PI / 2.0 - 1e-3;
        let h = theta_max / J as f64;
        let mut theta = Vec::with_capacity(J + 1);
        let mut cdf = Vec::with_capacity(J + 1);
        let w = |th: f64| th.cos().powf(-1.0 / 3.0);
        let mut acc = 0.0;
        theta.push(0.0);
        cdf.push(0.0);
        let mut prev = w(0.0);
        for j in 1..=J {
            let th = j as f64 * h;
            let cur = w(th);
            acc += 0.5 * (prev + cur) * h;
            prev = cur;
            theta.push(th);
            cdf.push(acc);
        }
        Self { theta, cdf }
    }

    /// Maps `p ∈ [0,1)` to `u = tan θ(p)`; draws past the tabulated tail
    /// clamp to the largest tabulated frequency.
    fn sample(&self, p: f64) -> f64 {
        let target = p * self.cdf[self.cdf.len() - 1];
        let idx = match self
            .cdf
            .binary_search_by(|c| c.partial_cmp(&target).expect("cdf is finite"))
        {
            Ok(i) => i,
            Err(i) => i,
        };
        if idx == 0 {
            return self.theta[0].tan();
        }
        if idx >= self.cdf.len() {
            return self.theta[self.theta.len() - 1].tan();
        }
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
        let th = self.theta[idx - 1] + frac * (self.theta[idx] - self.theta[idx - 1]);
        th.tan()
    }
}
