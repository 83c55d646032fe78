//! Euler–Maruyama simulation of `dX = b dt + √(2η) dW` up to the first exit
//! from the unit disk.
//!
//! With additive noise and constant drift the Gaussian increment is the exact
//! transition law, so time discretization error only enters through boundary
//! detection between grid points. Far from the boundary the integrator may
//! take larger steps (see [`Stepping::Adaptive`]); within a boundary layer it
//! always steps with the configured `dt`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{segment_boundary_crossing, DetectorLayout};
use crate::process::ExitRecord;
use crate::source::SourceDraw;
use crate::vec2::Vec2;

pub const DEFAULT_MAX_STEPS: u64 = 1_000_000_000;
pub const DEFAULT_SAFETY_SIGMAS: f64 = 5.0;

/// Drift field `b(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drift {
    Zero,
    Constant(Vec2),
}

impl Drift {
    pub fn from_vector(b: Vec2) -> Self {
        if b == Vec2::ZERO {
            Drift::Zero
        } else {
            Drift::Constant(b)
        }
    }

    pub fn at(&self, _x: Vec2) -> Vec2 {
        match *self {
            Drift::Zero => Vec2::ZERO,
            Drift::Constant(b) => b,
        }
    }

    /// Upper bound on `|b(x)|` over the domain.
    pub fn sup_norm(&self) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Constant(b) => b.norm(),
        }
    }

    pub fn as_vector(&self) -> Vec2 {
        self.at(Vec2::ZERO)
    }
}

/// Time-step control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Stepping {
    /// Every step has length `dt`.
    Fixed,
    /// Steps of length `Δ ≥ dt` chosen so that drift plus `sigmas` standard
    /// deviations of noise cannot reach the boundary; `Δ = dt` inside the
    /// boundary layer.
    Adaptive {
        #[serde(default = "default_sigmas")]
        sigmas: f64,
    },
}

fn default_sigmas() -> f64 {
    DEFAULT_SAFETY_SIGMAS
}

impl Default for Stepping {
    fn default() -> Self {
        Stepping::Adaptive {
            sigmas: DEFAULT_SAFETY_SIGMAS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiffusionFile", into = "DiffusionFile")]
pub struct DiffusionSpec {
    pub drift: Drift,
    pub eta: f64,
    pub dt: f64,
    pub stepping: Stepping,
    pub max_steps: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DiffusionFile {
    b: Vec2,
    eta: f64,
    dt: f64,
    #[serde(default)]
    stepping: Stepping,
    #[serde(default = "default_max_steps")]
    max_steps: u64,
}

fn default_max_steps() -> u64 {
    DEFAULT_MAX_STEPS
}

impl TryFrom<DiffusionFile> for DiffusionSpec {
    type Error = Error;
    fn try_from(f: DiffusionFile) -> Result<Self> {
        let s = DiffusionSpec {
            drift: Drift::from_vector(f.b),
            eta: f.eta,
            dt: f.dt,
            stepping: f.stepping,
            max_steps: f.max_steps,
        };
        s.validate()?;
        Ok(s)
    }
}

impl From<DiffusionSpec> for DiffusionFile {
    fn from(s: DiffusionSpec) -> Self {
        DiffusionFile {
            b: s.drift.as_vector(),
            eta: s.eta,
            dt: s.dt,
            stepping: s.stepping,
            max_steps: s.max_steps,
        }
    }
}

impl DiffusionSpec {
    pub fn new(b: Vec2, eta: f64, dt: f64) -> Result<Self> {
        let s = DiffusionSpec {
            drift: Drift::from_vector(b),
            eta,
            dt,
            stepping: Stepping::default(),
            max_steps: DEFAULT_MAX_STEPS,
        };
        s.validate()?;
        Ok(s)
    }

    /// Standard Brownian motion (`η = 1/2`, no drift).
    pub fn brownian(dt: f64) -> Self {
        Self::new(Vec2::ZERO, 0.5, dt).expect("valid brownian spec")
    }

    pub fn with_stepping(mut self, stepping: Stepping) -> Self {
        self.stepping = stepping;
        self
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidProcess(format!("eta = {} must be positive", self.eta)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidProcess(format!("dt = {} must be positive", self.dt)));
        }
        if (2.0 * self.eta * self.dt).sqrt() >= 0.25 {
            return Err(Error::InvalidProcess(format!(
                "step noise √(2η dt) = {} exceeds a quarter of the domain radius",
                (2.0 * self.eta * self.dt).sqrt()
            )));
        }
        if let Stepping::Adaptive { sigmas } = self.stepping {
            if !(sigmas >= 1.0) {
                return Err(Error::InvalidProcess(format!("adaptive sigmas = {sigmas} < 1")));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidProcess("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Squared radius inside which adaptive steps may exceed `dt`.
    fn layer_radius_sq(&self, noise_scale: f64, drift_norm: f64) -> f64 {
        match self.stepping {
            Stepping::Fixed => -1.0,
            Stepping::Adaptive { sigmas } => {
                let r = 1.0 - sigmas * noise_scale * self.dt.sqrt() - drift_norm * self.dt;
                if r > 0.0 {
                    r * r
                } else {
                    -1.0
                }
            }
        }
    }

    /// Step length `Δ` and `√Δ` at `x`.
    fn step_length(&self, x: Vec2, noise_scale: f64, drift_norm: f64, layer_sq: f64) -> (f64, f64) {
        let n2 = x.norm_sq();
        match self.stepping {
            Stepping::Adaptive { sigmas } if n2 < layer_sq => {
                let d = 1.0 - n2.sqrt();
                // largest s = √Δ with |b| s² + sigmas·σ s ≤ d
                let zs = sigmas * noise_scale;
                let s = 2.0 * d / (zs + (zs * zs + 4.0 * drift_norm * d).sqrt());
                if s * s > self.dt {
                    (s * s, s)
                } else {
                    (self.dt, self.dt.sqrt())
                }
            }
            _ => (self.dt, self.dt.sqrt()),
        }
    }
}

/// Simulates one path from `start` until it leaves the unit disk.
pub fn simulate_path<R: Rng + ?Sized>(
    spec: &DiffusionSpec,
    start: SourceDraw,
    layout: &DetectorLayout,
    rng: &mut R,
) -> Result<ExitRecord> {
    let sigma = (2.0 * spec.eta).sqrt();
    let drift_norm = spec.drift.sup_norm();
    let mut x = start.position;
    let layer_sq = spec.layer_radius_sq(sigma, drift_norm);
    let mut t = 0.0;
    for _ in 0..spec.max_steps {
        let (h, sqrt_h) = spec.step_length(x, sigma, drift_norm, layer_sq);
        let sd = sigma * sqrt_h;
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let next = x + spec.drift.at(x) * h + Vec2::new(z1, z2) * sd;
        if next.norm_sq() >= 1.0 {
            let (frac, hit) = segment_boundary_crossing(x, next)?;
            let hit = hit.classified(layout);
            return Ok(ExitRecord {
                exit_point: hit.point,
                exit_time: t + frac * h,
                detector: hit.detector,
                absorbed: false,
                draw: start,
            });
        }
        x = next;
        t += h;
    }
    Err(Error::PathBudgetExceeded(spec.max_steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn validation() {
        assert!(DiffusionSpec::new(Vec2::ZERO, 0.0, 1e-4).is_err());
        assert!(DiffusionSpec::new(Vec2::ZERO, 0.5, 0.0).is_err());
        assert!(DiffusionSpec::new(Vec2::ZERO, 0.5, 0.1).is_err());
        assert!(DiffusionSpec::new(Vec2::ZERO, 0.5, 1e-2).is_ok());
    }

    #[test]
    fn exit_point_is_on_circle() {
        let spec = DiffusionSpec::brownian(1e-3);
        let layout = DetectorLayout::equally_spaced(5).unwrap();
        for m in 0..200 {
            let mut s = rng::stream(9, &[m]);
            let rec = simulate_path(&spec, SourceDraw::at(Vec2::new(0.3, 0.2)), &layout, &mut s).unwrap();
            assert!((rec.exit_point.norm() - 1.0).abs() <= 1e-12);
            assert!(rec.exit_time >= 0.0);
            assert!(!rec.absorbed);
            assert_eq!(rec.detector, layout.classify(rec.exit_point.angle()));
        }
    }

    #[test]
    fn budget_exceeded() {
        let spec = DiffusionSpec::brownian(1e-4).with_max_steps(3);
        let layout = DetectorLayout::equally_spaced(5).unwrap();
        let mut s = rng::stream(1, &[]);
        let r = simulate_path(&spec, SourceDraw::at(Vec2::ZERO), &layout, &mut s);
        assert_eq!(r, Err(Error::PathBudgetExceeded(3)));
    }

    #[test]
    fn same_stream_same_record() {
        let spec = DiffusionSpec::new(Vec2::new(-2.0, 2.0), 0.5, 1e-4).unwrap();
        let layout = DetectorLayout::equally_spaced(5).unwrap();
        let a = simulate_path(&spec, SourceDraw::at(Vec2::ZERO), &layout, &mut rng::stream(4, &[1])).unwrap();
        let b = simulate_path(&spec, SourceDraw::at(Vec2::ZERO), &layout, &mut rng::stream(4, &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adaptive_steps_respect_boundary_layer() {
        let spec = DiffusionSpec::brownian(1e-4);
        let sigma = 1.0;
        let layer = spec.layer_radius_sq(sigma, 0.0);
        assert_eq!(spec.step_length(Vec2::new(0.999, 0.0), sigma, 0.0, layer).0, 1e-4);
        let far = spec.step_length(Vec2::ZERO, sigma, 0.0, layer).0;
        assert!((far - (1.0f64 / 5.0).powi(2)).abs() < 1e-15);
        // just inside the layer edge the rule and dt agree
        let edge = Vec2::new(layer.sqrt() - 1e-9, 0.0);
        assert!((spec.step_length(edge, sigma, 0.0, layer).0 - 1e-4).abs() < 1e-10);
        let fixed = spec.with_stepping(Stepping::Fixed);
        let layer = fixed.layer_radius_sq(sigma, 0.0);
        assert_eq!(fixed.step_length(Vec2::ZERO, sigma, 0.0, layer).0, 1e-4);
    }
}
