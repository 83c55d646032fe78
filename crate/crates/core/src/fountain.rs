//! Steady-state stochastic fountain: particles born by a Poisson process on
//! `(t0, T)`, each simulated independently; exits during `[0, T]` are binned
//! by detector.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::ensemble;
use crate::error::{Error, Result};
use crate::geometry::DetectorLayout;
use crate::process::ProcessSpec;
use crate::rng::{self, ns};
use crate::source::SourceSpec;

/// Burn-in multiple of the mean exit time used when `t0` is chosen automatically.
pub const AUTO_BURN_IN: f64 = 20.0;
/// Smallest accepted burn-in multiple.
pub const MIN_BURN_IN: f64 = 10.0;
pub const DEFAULT_PILOT_PATHS: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FountainSpec {
    pub lambda: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub t0: f64,
    pub process: ProcessSpec,
    pub source: SourceSpec,
    pub layout: DetectorLayout,
}

impl FountainSpec {
    /// Builds a spec with `t0 = -20 E[τ]` from a pilot run.
    pub fn with_auto_burn_in(
        lambda: f64,
        t: f64,
        process: ProcessSpec,
        source: SourceSpec,
        layout: DetectorLayout,
        seed: u64,
    ) -> Result<Self> {
        let mean_tau = pilot_mean_exit_time(&process, &source, &layout, DEFAULT_PILOT_PATHS, seed)?;
        let spec = FountainSpec {
            lambda,
            t,
            t0: -AUTO_BURN_IN * mean_tau,
            process,
            source,
            layout,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("birth rate λ = {} must be non-negative", self.lambda)));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::Config(format!("window T = {} must be positive", self.t)));
        }
        if !(self.t0 < 0.0) {
            return Err(Error::Config(format!("start time t0 = {} must be negative", self.t0)));
        }
        self.process.validate()?;
        self.source.validate()
    }

    /// Checks `t0 ≤ -10 E[τ]` against a pilot estimate of the mean exit time.
    pub fn check_burn_in(&self, mean_exit_time: f64) -> Result<()> {
        if self.t0 <= -MIN_BURN_IN * mean_exit_time {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "burn-in too short: t0 = {} but E[τ] ≈ {mean_exit_time}",
                self.t0
            )))
        }
    }

    pub fn expected_births(&self) -> f64 {
        self.lambda * (self.t - self.t0)
    }
}

/// Mean exit (or absorption) time from a short simultaneous-release run.
pub fn pilot_mean_exit_time(
    process: &ProcessSpec,
    source: &SourceSpec,
    layout: &DetectorLayout,
    paths: u64,
    seed: u64,
) -> Result<f64> {
    let total = ensemble::map_reduce(
        paths,
        || 0.0,
        |acc, i| {
            let mut s = rng::stream(seed, &[ns::PILOT, i]);
            let draw = source.sample(&mut s);
            *acc += process.simulate(draw, layout, &mut s)?.exit_time;
            Ok(())
        },
        |a, b| *a += b,
    )?;
    Ok(total / paths.max(1) as f64)
}

/// Binned exit counts over one observation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitCounts {
    pub counts: Vec<u64>,
    #[serde(rename = "T")]
    pub t: f64,
    pub lambda: f64,
    pub total_births: u64,
}

impl ExitCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Default)]
struct Tally {
    counts: Vec<u64>,
}

/// Simulates one fountain window. Particle `n` of replicate `r` uses the
/// stream `(seed, r, n)`, so counts do not depend on the thread count.
pub fn generate_counts(spec: &FountainSpec, seed: u64, replicate: u64) -> Result<ExitCounts> {
    spec.validate()?;
    let j = spec.layout.len();
    let births = if spec.lambda == 0.0 {
        0
    } else {
        let mut s = rng::stream(seed, &[ns::FOUNTAIN, replicate]);
        let law = Poisson::new(spec.expected_births())
            .map_err(|e| Error::Config(format!("birth count law: {e}")))?;
        law.sample(&mut s) as u64
    };
    let span = spec.t - spec.t0;
    let tally = ensemble::map_reduce(
        births,
        || Tally { counts: vec![0; j] },
        |acc, n| {
            let mut s = rng::stream(seed, &[ns::FOUNTAIN, replicate, n]);
            let birth = spec.t0 + span * s.random::<f64>();
            let draw = spec.source.sample(&mut s);
            let rec = spec.process.simulate(draw, &spec.layout, &mut s)?;
            let exit = birth + rec.exit_time;
            if !rec.absorbed && (0.0..=spec.t).contains(&exit) {
                if let Some(d) = rec.detector {
                    acc.counts[d] += 1;
                }
            }
            Ok(())
        },
        |a, b| {
            for (x, y) in a.counts.iter_mut().zip(b.counts) {
                *x += y;
            }
        },
    )?;
    Ok(ExitCounts {
        counts: tally.counts,
        t: spec.t,
        lambda: spec.lambda,
        total_births: births,
    })
}

/// `p̂_j = N_j / (λT)`, unclamped.
pub fn counts_to_probabilities(counts: &ExitCounts) -> Vec<f64> {
    let scale = counts.lambda * counts.t;
    counts.counts.iter().map(|&n| n as f64 / scale).collect()
}

/// Tallies `n` categorical draws from `p = (p_0, p_1, …, p_J)`, where `p_0`
/// is the no-detector outcome. The result has `λ = n` and `T = 1` so that
/// [`counts_to_probabilities`] returns `N_j / n`.
pub fn generate_counts_multinomial<R: Rng + ?Sized>(p: &[f64], n: u64, rng: &mut R) -> Result<ExitCounts> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty probability vector".into()));
    }
    if p.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidDistribution("negative or NaN probability".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {sum}")));
    }
    let mut cdf = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for &x in p {
        acc += x;
        cdf.push(acc);
    }
    let last = p.iter().rposition(|&x| x > 0.0).unwrap_or(0);
    let mut all = vec![0u64; p.len()];
    for _ in 0..n {
        let u = rng.random::<f64>() * sum;
        let k = cdf.partition_point(|&c| c <= u).min(last);
        all[k] += 1;
    }
    Ok(ExitCounts {
        counts: all[1..].to_vec(),
        t: 1.0,
        lambda: n as f64,
        total_births: n,
    })
}

/// One JSON row of fountain output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsRow {
    pub replicate: u64,
    pub counts: Vec<u64>,
    pub lambda: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub seed: u64,
}

impl CountsRow {
    pub fn new(counts: &ExitCounts, replicate: u64, seed: u64) -> Self {
        CountsRow {
            replicate,
            counts: counts.counts.clone(),
            lambda: counts.lambda,
            t: counts.t,
            seed,
        }
    }
}
