//! Analytic reference trajectories and obstacle placement.
//!
//! Five benchmark paths with closed-form position and velocity. All are C¹
//! inside their time range; outside the range the position holds the
//! endpoint and the velocity is zero, so a horizon window running past the
//! end of a trajectory asks the tracker to stop there.

use alloc::vec::Vec;

use nalgebra::{Vector3, Vector6};
#[allow(unused_imports)]
use num_traits::Float;

use crate::controller::Obstacle;

use core::f64::consts::TAU;

/// Path geometry. Angular coordinates advance by `2π/period` per second
/// from the trajectory start time.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceKind {
    Line {
        start: Vector3<f64>,
        /// Unit direction of travel (normalized at evaluation).
        direction: Vector3<f64>,
        speed: f64,
    },
    Circle {
        center: Vector3<f64>,
        radius: f64,
        period: f64,
    },
    /// Figure-eight (Gerono lemniscate): `[a sin θ, (a/2) sin 2θ]` around
    /// the center, crossing the center twice per period.
    Lemniscate {
        center: Vector3<f64>,
        half_width: f64,
        period: f64,
    },
    ConicalSpiral {
        center: Vector3<f64>,
        base_radius: f64,
        /// Radius growth rate [m/s].
        radius_rate: f64,
        period: f64,
        climb_rate: f64,
    },
    CylindricalHelix {
        center: Vector3<f64>,
        radius: f64,
        period: f64,
        climb_rate: f64,
    },
}

/// A timed reference path.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub kind: ReferenceKind,
    pub t0: f64,
    pub t_end: f64,
}

impl Reference {
    pub fn new(kind: ReferenceKind, t0: f64, t_end: f64) -> Self {
        assert!(t_end > t0, "empty time range");
        Self { kind, t0, t_end }
    }

    /// Default benchmark geometries (≈35 s, peak speeds about 2 m/s, at
    /// 1–2 m altitude).
    pub fn line() -> Self {
        Self::new(
            ReferenceKind::Line {
                start: Vector3::new(0.0, 0.0, 2.0),
                direction: Vector3::new(1.0, 0.0, 0.0),
                speed: 1.5,
            },
            0.0,
            35.0,
        )
    }

    pub fn circle() -> Self {
        Self::new(
            ReferenceKind::Circle {
                center: Vector3::new(0.0, 0.0, 2.0),
                radius: 5.0,
                period: 20.0,
            },
            0.0,
            35.0,
        )
    }

    // period 16 keeps the obstacle times (10, 19, 28) away from the
    // figure-eight's center crossings at multiples of 8 s
    pub fn lemniscate() -> Self {
        Self::new(
            ReferenceKind::Lemniscate {
                center: Vector3::new(0.0, 0.0, 2.0),
                half_width: 5.0,
                period: 16.0,
            },
            0.0,
            35.0,
        )
    }

    pub fn conical_spiral() -> Self {
        Self::new(
            ReferenceKind::ConicalSpiral {
                center: Vector3::new(0.0, 0.0, 1.0),
                base_radius: 1.5,
                radius_rate: 0.12,
                period: 18.0,
                climb_rate: 0.08,
            },
            0.0,
            35.0,
        )
    }

    pub fn cylindrical_helix() -> Self {
        Self::new(
            ReferenceKind::CylindricalHelix {
                center: Vector3::new(0.0, 0.0, 1.0),
                radius: 4.0,
                period: 15.0,
                climb_rate: 0.1,
            },
            0.0,
            35.0,
        )
    }

    fn eval(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let s = t - self.t0;
        match &self.kind {
            ReferenceKind::Line { start, direction, speed } => {
                let dir = direction.normalize();
                (start + dir * *speed * s, dir * *speed)
            }
            ReferenceKind::Circle { center, radius, period } => {
                let w = TAU / period;
                let theta = w * s;
                let p = center + Vector3::new(radius * theta.cos(), radius * theta.sin(), 0.0);
                let v = Vector3::new(-radius * w * theta.sin(), radius * w * theta.cos(), 0.0);
                (p, v)
            }
            ReferenceKind::Lemniscate { center, half_width, period } => {
                let w = TAU / period;
                let theta = w * s;
                let a = *half_width;
                let p = center
                    + Vector3::new(a * theta.sin(), 0.5 * a * (2.0 * theta).sin(), 0.0);
                let v = Vector3::new(
                    a * w * theta.cos(),
                    a * w * (2.0 * theta).cos(),
                    0.0,
                );
                (p, v)
            }
            ReferenceKind::ConicalSpiral {
                center,
                base_radius,
                radius_rate,
                period,
                climb_rate,
            } => {
                let w = TAU / period;
                let theta = w * s;
                let r = base_radius + radius_rate * s;
                let (sin, cos) = theta.sin_cos();
                let p = center + Vector3::new(r * cos, r * sin, climb_rate * s);
                let v = Vector3::new(
                    radius_rate * cos - r * w * sin,
                    radius_rate * sin + r * w * cos,
                    *climb_rate,
                );
                (p, v)
            }
            ReferenceKind::CylindricalHelix { center, radius, period, climb_rate } => {
                let w = TAU / period;
                let theta = w * s;
                let (sin, cos) = theta.sin_cos();
                let p = center + Vector3::new(radius * cos, radius * sin, climb_rate * s);
                let v = Vector3::new(-radius * w * sin, radius * w * cos, *climb_rate);
                (p, v)
            }
        }
    }

    /// Position and velocity at `t`, clamped to the time range. Strictly
    /// outside the range the endpoint position is held with zero velocity.
    pub fn sample(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        if t < self.t0 {
            (self.eval(self.t0).0, Vector3::zeros())
        } else if t > self.t_end {
            (self.eval(self.t_end).0, Vector3::zeros())
        } else {
            self.eval(t)
        }
    }

    /// Stacked reference state `[x_1ref; x_2ref]` at `t`.
    pub fn state(&self, t: f64) -> Vector6<f64> {
        let (p, v) = self.sample(t);
        Vector6::new(p.x, p.y, p.z, v.x, v.y, v.z)
    }

    /// Places spherical obstacles centered exactly on the path at the
    /// given times.
    pub fn place_obstacles(&self, times: &[f64], radius: f64) -> Vec<Obstacle> {
        times
            .iter()
            .map(|&t| Obstacle { center: self.sample(t).0, radius })
            .collect()
    }

    /// Numeric bound on the reference speed over the time range.
    pub fn max_speed(&self, samples: usize) -> f64 {
        let n = samples.max(2);
        let mut peak = 0.0f64;
        for i in 0..=n {
            let t = self.t0 + (self.t_end - self.t0) * i as f64 / n as f64;
            peak = peak.max(self.sample(t).1.norm());
        }
        peak
    }
}

/// All five benchmark references with their default geometry.
pub fn standard_references() -> [Reference; 5] {
    [
        Reference::line(),
        Reference::circle(),
        Reference::lemniscate(),
        Reference::conical_spiral(),
        Reference::cylindrical_helix(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn circle_starts_on_circle_with_tangential_speed() {
        let reference = Reference::circle();
        let (p, v) = reference.sample(0.0);
        assert_relative_eq!(p, Vector3::new(5.0, 0.0, 2.0), epsilon = 1e-12);
        assert_relative_eq!(v.norm(), 5.0 * TAU / 20.0, epsilon = 1e-12);
        assert!(v.dot(&(p - Vector3::new(0.0, 0.0, 2.0))).abs() < 1e-12);
    }

    #[test]
    fn velocity_matches_position_finite_differences() {
        let h = 1e-4;
        for reference in standard_references() {
            for i in 1..40 {
                let t = 0.5 + 0.8 * i as f64;
                if t + h > reference.t_end {
                    break;
                }
                let (_, v) = reference.sample(t);
                let (pp, _) = reference.sample(t + h);
                let (pm, _) = reference.sample(t - h);
                let numeric = (pp - pm) / (2.0 * h);
                assert!(
                    (numeric - v).norm() < 1e-6,
                    "{:?} at t={t}: {v:?} vs {numeric:?}",
                    reference.kind
                );
            }
        }
    }

    #[test]
    fn lemniscate_crosses_center_twice_per_period() {
        let reference = Reference::lemniscate();
        let center = Vector3::new(0.0, 0.0, 2.0);
        let (p0, _) = reference.sample(0.0);
        let (p_half, _) = reference.sample(8.0);
        let (p_quarter, _) = reference.sample(4.0);
        assert!((p0 - center).norm() < 1e-12);
        assert!((p_half - center).norm() < 1e-12);
        assert!((p_quarter - center).norm() > 1.0);
    }

    #[test]
    fn benchmark_obstacles_clear_the_start_point() {
        // the quadrotor starts on the path at t0; no obstacle may enclose it
        for reference in standard_references() {
            let start = reference.sample(reference.t0).0;
            for obstacle in reference.place_obstacles(&[10.0, 19.0, 28.0], 1.0) {
                let d = (start - obstacle.center).norm();
                assert!(
                    d > 1.5,
                    "{:?}: obstacle within {d:.2} m of the start",
                    reference.kind
                );
            }
        }
    }

    #[test]
    fn samples_clamp_outside_range() {
        let reference = Reference::line();
        let (p_end, v_end) = reference.sample(100.0);
        let (p_at_end, _) = reference.sample(35.0);
        assert_eq!(p_end, p_at_end);
        assert_eq!(v_end, Vector3::zeros());
        let (p_before, v_before) = reference.sample(-1.0);
        assert_eq!(p_before, reference.sample(0.0).0);
        assert_eq!(v_before, Vector3::zeros());
    }

    #[test]
    fn line_obstacles_are_collinear_and_on_path() {
        let reference = Reference::line();
        let obstacles = reference.place_obstacles(&[10.0, 19.0, 28.0], 1.0);
        assert_eq!(obstacles.len(), 3);
        for (obstacle, t) in obstacles.iter().zip([10.0, 19.0, 28.0]) {
            assert_eq!(obstacle.radius, 1.0);
            assert!((obstacle.center - reference.sample(t).0).norm() < 1e-12);
        }
        let d1 = obstacles[1].center - obstacles[0].center;
        let d2 = obstacles[2].center - obstacles[0].center;
        assert!(d1.cross(&d2).norm() < 1e-10);
    }

    #[test]
    fn obstacles_sit_on_every_reference() {
        for reference in standard_references() {
            for obstacle in reference.place_obstacles(&[10.0, 19.0, 28.0], 1.0) {
                let closest = (0..3500)
                    .map(|k| {
                        let t = 0.01 * k as f64;
                        (reference.sample(t).0 - obstacle.center).norm()
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!(closest < 0.05, "obstacle off path for {:?}", reference.kind);
            }
        }
    }

    #[test]
    fn reference_speeds_are_bounded() {
        for reference in standard_references() {
            let peak = reference.max_speed(5000);
            assert!(peak.is_finite());
            assert!(peak < 3.0, "{:?} too fast: {peak}", reference.kind);
        }
    }
}
