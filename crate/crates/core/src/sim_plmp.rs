//! Event-driven simulation of the piecewise-linear Markov process: straight
//! flights at speed `c`, velocity redraws at rate `σ_s`, absorption at rate `σ_a`.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::geometry::{BoundaryHit, DetectorLayout, Domain};
use crate::process::ExitRecord;
use crate::source::SourceDraw;
use crate::vec2::Vec2;

pub const DEFAULT_MAX_EVENTS: u64 = 10_000_000;
const MAX_REJECTIONS: usize = 10_000;

/// Law of the post-scattering direction angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ScatterLaw {
    /// Uniform on `[0, 2π)`.
    #[serde(alias = "uniform")]
    UniformAngle,
    /// Normal with the given mean and standard deviation, truncated to `(0, 2π]`.
    TruncatedNormal { mean: f64, std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlmpSpec {
    pub c: f64,
    pub sigma_s: f64,
    pub sigma_a: f64,
    pub scatter: ScatterLaw,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
}

fn default_max_events() -> u64 {
    DEFAULT_MAX_EVENTS
}

impl PlmpSpec {
    pub fn new(c: f64, sigma_s: f64, sigma_a: f64, scatter: ScatterLaw) -> Result<Self> {
        let s = PlmpSpec {
            c,
            sigma_s,
            sigma_a,
            scatter,
            max_events: DEFAULT_MAX_EVENTS,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidProcess(format!("speed c = {} must be positive", self.c)));
        }
        if !(self.sigma_s >= 0.0 && self.sigma_a >= 0.0) {
            return Err(Error::InvalidProcess("rates must be non-negative".into()));
        }
        if let ScatterLaw::TruncatedNormal { mean, std } = self.scatter {
            if !(std > 0.0 && mean.is_finite()) {
                return Err(Error::InvalidProcess(format!("truncated normal std = {std} must be positive")));
            }
        }
        if self.max_events == 0 {
            return Err(Error::InvalidProcess("max_events must be positive".into()));
        }
        Ok(())
    }
}

fn exp_clock<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate > 0.0 {
        let e: f64 = rng.sample(Exp1);
        e / rate
    } else {
        f64::INFINITY
    }
}

/// `ln Φ(z)`, with the asymptotic tail series where `erfc` underflows.
fn ln_normal_cdf(z: f64) -> f64 {
    if z > -30.0 {
        (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        let w = 1.0 / (z * z);
        -0.5 * z * z - (-z).ln() - 0.5 * std::f64::consts::TAU.ln() + (1.0 - w + 3.0 * w * w - 15.0 * w * w * w).ln()
    }
}

/// Inverse CDF of the standard normal truncated to `[a, b]`, `a ≤ 0`.
fn standard_truncated_inverse(a: f64, b: f64, u: f64) -> f64 {
    let la = ln_normal_cdf(a);
    let lb = ln_normal_cdf(b);
    let target = lb + (u + (1.0 - u) * (la - lb).exp()).ln();
    let (mut lo, mut hi) = (a, b);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ln_normal_cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Draws a scattering angle from `law`.
pub fn draw_scatter_angle<R: Rng + ?Sized>(law: &ScatterLaw, rng: &mut R) -> f64 {
    match *law {
        ScatterLaw::UniformAngle => TAU * rng.random::<f64>(),
        ScatterLaw::TruncatedNormal { mean, std } => {
            for _ in 0..MAX_REJECTIONS {
                let z: f64 = rng.sample(StandardNormal);
                let a = mean + std * z;
                if a > 0.0 && a <= TAU {
                    return a;
                }
            }
            truncated_normal_inverse_cdf(mean, std, rng.random::<f64>())
        }
    }
}

/// Inverse CDF of `N(mean, std²)` truncated to `(0, 2π]`, by bisection.
pub fn truncated_normal_inverse_cdf(mean: f64, std: f64, u: f64) -> f64 {
    let a = -mean / std;
    let b = (TAU - mean) / std;
    let x = if a > 0.0 {
        // interval in the upper tail: invert the mirrored law
        mean - std * standard_truncated_inverse(-b, -a, 1.0 - u)
    } else {
        mean + std * standard_truncated_inverse(a, b, u)
    };
    x.clamp(f64::MIN_POSITIVE, TAU)
}

/// Simulates one particle from `start` until it exits the disk or is absorbed.
pub fn simulate_path<R: Rng + ?Sized>(
    spec: &PlmpSpec,
    start: SourceDraw,
    layout: &DetectorLayout,
    rng: &mut R,
) -> Result<ExitRecord> {
    let domain = Domain::UnitDisk;
    let mut angle = TAU * rng.random::<f64>();
    let absorb_at = exp_clock(spec.sigma_a, rng);
    let mut x = start.position;
    let mut t = 0.0;
    for _ in 0..spec.max_events {
        let dir = Vec2::from_polar(1.0, angle);
        let to_exit = domain.ray_exit_distance(x, dir).max(0.0) / spec.c;
        let to_scatter = exp_clock(spec.sigma_s, rng);
        let to_absorb = absorb_at - t;
        if to_exit <= to_scatter && to_exit <= to_absorb {
            let hit = BoundaryHit::project(x + dir * (spec.c * to_exit)).classified(layout);
            return Ok(ExitRecord {
                exit_point: hit.point,
                exit_time: t + to_exit,
                detector: hit.detector,
                absorbed: false,
                draw: start,
            });
        }
        if to_absorb <= to_scatter {
            return Ok(ExitRecord {
                exit_point: x + dir * (spec.c * to_absorb),
                exit_time: absorb_at,
                detector: None,
                absorbed: true,
                draw: start,
            });
        }
        x += dir * (spec.c * to_scatter);
        t += to_scatter;
        angle = draw_scatter_angle(&spec.scatter, rng);
    }
    Err(Error::PathBudgetExceeded(spec.max_events))
}
