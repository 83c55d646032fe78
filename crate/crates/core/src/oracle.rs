//! Reference exit probabilities: the Poisson-kernel harmonic measure for
//! driftless Brownian motion, and cached high-budget Monte Carlo tables for
//! everything else.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, EstimateOptions};
use crate::geometry::{Arc, DetectorLayout};
use crate::process::ProcessSpec;
use crate::provenance::spec_hash;
use crate::quadrature;
use crate::rng::{self, ns};
use crate::source::SourceSpec;
use crate::vec2::Vec2;

pub const DEFAULT_M_REF: u64 = 10_000_000;
const QUAD_TOL: f64 = 1e-8;

fn check_interior(x: Vec2) -> Result<()> {
    if x.norm_sq() < 1.0 && x.x.is_finite() && x.y.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInterior(x.to_array()))
    }
}

/// Poisson kernel of the unit disk, `(1 - |x|²) / (2π |e^{iα} - x|²)`.
pub fn poisson_kernel(x: Vec2, alpha: f64) -> f64 {
    let e = Vec2::from_polar(1.0, alpha);
    (1.0 - x.norm_sq()) / (TAU * (e - x).norm_sq())
}

/// Probability that Brownian motion from `x` leaves the unit disk through `arc`.
///
/// Uses the inscribed-angle form of the Poisson integral: if the arc subtends
/// the angle `γ` at `x` then the harmonic measure is `γ/π - width/(2π)`.
pub fn harmonic_measure(x: Vec2, arc: &Arc) -> Result<f64> {
    check_interior(x)?;
    let width = arc.width();
    if width >= TAU {
        return Ok(1.0);
    }
    let a = Vec2::from_polar(1.0, arc.start()) - x;
    let b = Vec2::from_polar(1.0, arc.start() + width) - x;
    let mut gamma = (a.x * b.y - a.y * b.x).atan2(a.dot(b));
    if gamma < 0.0 {
        gamma += TAU;
    }
    Ok((gamma / PI - width / TAU).clamp(0.0, 1.0))
}

/// Harmonic measure by adaptive quadrature of the Poisson kernel.
pub fn harmonic_measure_quadrature(x: Vec2, arc: &Arc, abs_tol: f64) -> Result<f64> {
    check_interior(x)?;
    let a = arc.start();
    let b = a + arc.width();
    // split at the angle nearest to x, where the kernel peaks
    let peak = x.angle();
    let mut cut = peak;
    while cut < a {
        cut += TAU;
    }
    while cut > b {
        cut -= TAU;
    }
    let f = |t: f64| poisson_kernel(x, t);
    if cut > a && cut < b {
        Ok(quadrature::integrate(f, a, cut, 0.5 * abs_tol, 0.0)?
            + quadrature::integrate(f, cut, b, 0.5 * abs_tol, 0.0)?)
    } else {
        quadrature::integrate(f, a, b, abs_tol, 0.0)
    }
}

/// Harmonic measure of every detector from `x`.
pub fn harmonic_measures(x: Vec2, layout: &DetectorLayout) -> Result<Vec<f64>> {
    layout.arcs().iter().map(|a| harmonic_measure(x, a)).collect()
}

fn polar_rule(source: &SourceSpec, layout: &DetectorLayout, n_r: usize, n_a: usize) -> Result<Vec<f64>> {
    let (nodes, weights) = quadrature::gauss_legendre(n_r);
    let mut p = vec![0.0; layout.len()];
    let da = TAU / n_a as f64;
    for (t, w) in nodes.iter().zip(&weights) {
        // map [-1, 1] to radius ρ in [0, 1]
        let rho = 0.5 * (t + 1.0);
        let radial = 0.5 * w * rho * source.profile.unit_density(rho);
        if radial == 0.0 {
            continue;
        }
        for k in 0..n_a {
            let x = source.theta + Vec2::from_polar(source.beta * rho, k as f64 * da);
            for (pj, arc) in p.iter_mut().zip(layout.arcs()) {
                *pj += radial * da * harmonic_measure(x, arc)?;
            }
        }
    }
    Ok(p)
}

/// `p_j = ∫ w_j φ` for driftless Brownian motion, by Gauss–Legendre (radius)
/// times trapezoid (angle) quadrature refined until successive levels agree
/// to `1e-8`.
pub fn source_exit_probability(source: &SourceSpec, layout: &DetectorLayout) -> Result<Vec<f64>> {
    source.validate()?;
    let (mut n_r, mut n_a) = (16, 32);
    let mut prev = polar_rule(source, layout, n_r, n_a)?;
    for _ in 0..6 {
        n_r *= 2;
        n_a *= 2;
        let next = polar_rule(source, layout, n_r, n_a)?;
        let diff = prev.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if diff <= QUAD_TOL {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureFailed(format!(
        "source integral not converged at {n_r}×{n_a} nodes"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleMethod {
    PoissonKernel,
    HighBudgetMC,
}

/// A reference probability vector, serializable as a cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTable {
    pub spec_hash: String,
    pub method: OracleMethod,
    pub p: Vec<f64>,
    pub se: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad: Option<Vec<Vec2>>,
    pub seed: Option<u64>,
    #[serde(rename = "M")]
    pub m: Option<u64>,
    pub timestamp: Option<String>,
}

impl OracleTable {
    /// Probability of leaving through no detector (gap or absorption).
    pub fn p_none(&self) -> f64 {
        (1.0 - self.p.iter().sum::<f64>()).max(0.0)
    }

    /// `(p_0, p_1, …, p_J)` for multinomial sampling.
    pub fn with_p_none(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.p.len() + 1);
        v.push(self.p_none());
        v.extend_from_slice(&self.p);
        v
    }
}

/// Poisson-kernel table for driftless Brownian motion.
pub fn poisson_kernel_table(source: &SourceSpec, layout: &DetectorLayout) -> Result<OracleTable> {
    let p = source_exit_probability(source, layout)?;
    Ok(OracleTable {
        spec_hash: spec_hash(&("poisson_kernel", source, layout)),
        method: OracleMethod::PoissonKernel,
        se: vec![0.0; p.len()],
        p,
        grad: None,
        seed: None,
        m: None,
        timestamp: None,
    })
}

/// Disk cache for high-budget tables, one JSON file per spec hash.
#[derive(Debug, Clone)]
pub struct OracleCache {
    dir: PathBuf,
}

impl OracleCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        OracleCache { dir: dir.into() }
    }

    pub fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn load(&self, hash: &str) -> Result<Option<OracleTable>> {
        let path = self.path_for(hash);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        let table: OracleTable = serde_json::from_str(&text)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Ok((table.spec_hash == hash).then_some(table))
    }

    pub fn store(&self, table: &OracleTable) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path_for(&table.spec_hash);
        let text = serde_json::to_string_pretty(table).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

/// Hash identifying a high-budget run.
pub fn reference_hash(process: &ProcessSpec, source: &SourceSpec, layout: &DetectorLayout, m_ref: u64, seed: u64) -> String {
    spec_hash(&("high_budget", process, source, layout, m_ref, seed))
}

/// Runs the estimator at `m_ref` paths in the oracle seed namespace, or loads
/// the table from `cache` when present.
pub fn high_budget_reference(
    process: &ProcessSpec,
    source: &SourceSpec,
    layout: &DetectorLayout,
    m_ref: u64,
    seed: u64,
    cache: Option<&OracleCache>,
) -> Result<OracleTable> {
    let hash = reference_hash(process, source, layout, m_ref, seed);
    if let Some(c) = cache {
        if let Some(t) = c.load(&hash)? {
            return Ok(t);
        }
    }
    let bundle = estimator::estimate(
        process,
        source,
        layout,
        m_ref,
        rng::derive_seed(seed, &[ns::ORACLE]),
        &EstimateOptions::probabilities_only(),
    )?;
    let table = OracleTable {
        spec_hash: hash,
        method: OracleMethod::HighBudgetMC,
        p: bundle.p_hat,
        se: bundle.se_p,
        grad: None,
        seed: Some(seed),
        m: Some(m_ref),
        timestamp: None,
    };
    if let Some(c) = cache {
        c.store(&table)?;
    }
    Ok(table)
}

/// Best available reference: the Poisson kernel for driftless Brownian motion
/// (any `η` time-changes the path without moving the exit point), otherwise a
/// high-budget Monte Carlo table.
pub fn reference(
    process: &ProcessSpec,
    source: &SourceSpec,
    layout: &DetectorLayout,
    m_ref: u64,
    seed: u64,
    cache: Option<&OracleCache>,
) -> Result<OracleTable> {
    if process.is_driftless_brownian() {
        poisson_kernel_table(source, layout)
    } else {
        high_budget_reference(process, source, layout, m_ref, seed, cache)
    }
}

/// Default cache directory, `$FOUNTAIN_ID_ORACLE_CACHE` or `./oracle-cache`.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os("FOUNTAIN_ID_ORACLE_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new("oracle-cache").to_path_buf())
}
