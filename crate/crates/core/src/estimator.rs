//! Monte Carlo estimates of detector exit probabilities and their
//! θ-sensitivities from a simultaneous-release ensemble.
//!
//! Initial points are drawn uniformly on the source support and reweighted
//! by `π φ(U; 0, 1)`. The θ-gradient of `P(X_τ ∈ D_j)` has two parts:
//!
//! * an interior score term, `E[1_{D_j}(X_τ) ψ'(|U|) U / (β|U|)]`, estimated
//!   from the same paths as the probability;
//! * a support-boundary term, `Ψ(1)/(C β²) · β ∮ E^{x(α)}[1_{D_j}(X_τ)] (cos α, sin α) dα`,
//!   which only exists for profiles with `Ψ(1) > 0`. It is approximated by the
//!   periodic trapezoid rule over `Q` points `x(α) = θ + β(cos α, sin α)` with
//!   fresh paths launched from each node.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::ensemble;
use crate::error::{Error, Result};
use crate::geometry::DetectorLayout;
use crate::process::{ExitRecord, ProcessSpec};
use crate::provenance::spec_hash;
use crate::rng::{self, ns};
use crate::source::{SourceDraw, SourceSpec};
use crate::vec2::Vec2;

pub const DEFAULT_BOUNDARY_NODES: usize = 64;
pub const DEFAULT_MAX_BOUNDARY_PATHS: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    /// Estimate θ-gradients as well as probabilities.
    pub gradient: bool,
    /// Trapezoid nodes `Q` on the support boundary.
    pub boundary_nodes: usize,
    /// Paths per boundary node; `None` means `max(1, M / Q)`.
    pub boundary_paths_per_node: Option<u64>,
    /// Cap on `Q · M_b`.
    pub max_boundary_paths: u64,
    /// Experimental: also estimate `∂_β` of each exit probability.
    pub beta_gradient: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            gradient: true,
            boundary_nodes: DEFAULT_BOUNDARY_NODES,
            boundary_paths_per_node: None,
            max_boundary_paths: DEFAULT_MAX_BOUNDARY_PATHS,
            beta_gradient: false,
        }
    }
}

impl EstimateOptions {
    pub fn probabilities_only() -> Self {
        EstimateOptions {
            gradient: false,
            ..Default::default()
        }
    }
}

/// Running sums of per-path contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub n_absorbed: u64,
    pub n_gap: u64,
    pub hits: Vec<u64>,
    pub sum_p: Vec<f64>,
    pub sumsq_p: Vec<f64>,
    pub sum_g: Vec<[f64; 2]>,
    pub sumsq_g: Vec<[f64; 2]>,
    pub sum_b: Vec<f64>,
    pub sumsq_b: Vec<f64>,
}

impl Moments {
    pub fn new(j: usize) -> Self {
        Moments {
            n: 0,
            n_absorbed: 0,
            n_gap: 0,
            hits: vec![0; j],
            sum_p: vec![0.0; j],
            sumsq_p: vec![0.0; j],
            sum_g: vec![[0.0; 2]; j],
            sumsq_g: vec![[0.0; 2]; j],
            sum_b: vec![0.0; j],
            sumsq_b: vec![0.0; j],
        }
    }

    fn add(&mut self, rec: &ExitRecord, source: &SourceSpec, opts: &EstimateOptions) {
        self.n += 1;
        if rec.absorbed {
            self.n_absorbed += 1;
            return;
        }
        let Some(j) = rec.detector else {
            self.n_gap += 1;
            return;
        };
        let w = rec.draw.weight;
        self.hits[j] += 1;
        self.sum_p[j] += w;
        self.sumsq_p[j] += w * w;
        if opts.gradient {
            let g = source.grad_log_density_factor(rec.draw.unit) * w;
            self.sum_g[j][0] += g.x;
            self.sum_g[j][1] += g.y;
            self.sumsq_g[j][0] += g.x * g.x;
            self.sumsq_g[j][1] += g.y * g.y;
        }
        if opts.beta_gradient {
            let b = source.beta_log_density_factor(rec.draw.unit) * w;
            self.sum_b[j] += b;
            self.sumsq_b[j] += b * b;
        }
    }

    fn merge(&mut self, o: Moments) {
        self.n += o.n;
        self.n_absorbed += o.n_absorbed;
        self.n_gap += o.n_gap;
        for j in 0..self.hits.len() {
            self.hits[j] += o.hits[j];
            self.sum_p[j] += o.sum_p[j];
            self.sumsq_p[j] += o.sumsq_p[j];
            for k in 0..2 {
                self.sum_g[j][k] += o.sum_g[j][k];
                self.sumsq_g[j][k] += o.sumsq_g[j][k];
            }
            self.sum_b[j] += o.sum_b[j];
            self.sumsq_b[j] += o.sumsq_b[j];
        }
    }
}

/// Sample mean and standard error from a sum and sum of squares.
fn mean_se(sum: f64, sumsq: f64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let nf = n as f64;
    let mean = sum / nf;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Detector hit counts for paths launched from the support-boundary nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryAccumulator {
    pub nodes: usize,
    pub paths_per_node: Vec<u64>,
    /// `hits[q][j]`.
    pub hits: Vec<Vec<u64>>,
}

impl BoundaryAccumulator {
    fn new(nodes: usize, j: usize) -> Self {
        BoundaryAccumulator {
            nodes,
            paths_per_node: vec![0; nodes],
            hits: vec![vec![0; j]; nodes],
        }
    }

    fn merge(&mut self, o: BoundaryAccumulator) {
        for q in 0..self.nodes {
            self.paths_per_node[q] += o.paths_per_node[q];
            for (a, b) in self.hits[q].iter_mut().zip(&o.hits[q]) {
                *a += b;
            }
        }
    }

    pub fn total_paths(&self) -> u64 {
        self.paths_per_node.iter().sum()
    }

    pub fn node_angle(&self, q: usize) -> f64 {
        TAU * q as f64 / self.nodes as f64
    }

    /// Boundary gradient contribution and its standard error for detector `j`.
    /// `scale` is `Ψ(1)/(Cβ²) · β`.
    pub fn theta_term(&self, j: usize, scale: f64) -> (Vec2, Vec2) {
        let step = TAU / self.nodes as f64;
        let (mut g, mut var) = (Vec2::ZERO, Vec2::ZERO);
        for q in 0..self.nodes {
            let n = self.paths_per_node[q] as f64;
            if n == 0.0 {
                continue;
            }
            let p = self.hits[q][j] as f64 / n;
            let (s, c) = self.node_angle(q).sin_cos();
            g += Vec2::new(c, s) * p;
            let v = p * (1.0 - p) / n;
            var += Vec2::new(c * c * v, s * s * v);
        }
        let f = scale * step;
        (g * f, Vec2::new(var.x.sqrt(), var.y.sqrt()) * f)
    }

    /// Boundary contribution to `∂_β P(X_τ ∈ D_j)`.
    pub fn beta_term(&self, j: usize, scale: f64) -> (f64, f64) {
        let step = TAU / self.nodes as f64;
        let (mut g, mut var) = (0.0, 0.0);
        for q in 0..self.nodes {
            let n = self.paths_per_node[q] as f64;
            if n == 0.0 {
                continue;
            }
            let p = self.hits[q][j] as f64 / n;
            g += p;
            var += p * (1.0 - p) / n;
        }
        (g * scale * step, var.sqrt() * scale * step)
    }
}

/// Exit-probability and gradient estimates for one source parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateBundle {
    pub p_hat: Vec<f64>,
    /// `∇_θ p̂_j`, one row per detector.
    pub grad: Vec<Vec2>,
    #[serde(rename = "se")]
    pub se_p: Vec<f64>,
    pub se_grad: Vec<Vec2>,
    #[serde(rename = "M")]
    pub m: u64,
    pub n_absorbed: u64,
    pub seed: u64,
    pub spec_hash: String,
    /// Experimental `∂_β p̂_j`, present only when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_grad: Option<Vec<f64>>,
    /// Paths spent on the support-boundary term (zero when it vanishes).
    pub boundary_paths: u64,
    pub moments: Moments,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryAccumulator>,
    /// `Ψ(1)/(Cβ²) · β`, the scale of the boundary term.
    pub boundary_scale: f64,
    pub options: EstimateOptions,
}

impl EstimateBundle {
    fn assemble(
        moments: Moments,
        boundary: Option<BoundaryAccumulator>,
        boundary_scale: f64,
        seed: u64,
        spec_hash: String,
        options: EstimateOptions,
    ) -> Self {
        let j = moments.hits.len();
        let mut p_hat = vec![0.0; j];
        let mut se_p = vec![0.0; j];
        let mut grad = vec![Vec2::ZERO; j];
        let mut se_grad = vec![Vec2::ZERO; j];
        let mut beta = vec![0.0; j];
        for d in 0..j {
            (p_hat[d], se_p[d]) = mean_se(moments.sum_p[d], moments.sumsq_p[d], moments.n);
            if options.gradient {
                let (gx, sx) = mean_se(moments.sum_g[d][0], moments.sumsq_g[d][0], moments.n);
                let (gy, sy) = mean_se(moments.sum_g[d][1], moments.sumsq_g[d][1], moments.n);
                grad[d] = Vec2::new(gx, gy);
                se_grad[d] = Vec2::new(sx, sy);
                if let Some(b) = &boundary {
                    let (bg, bs) = b.theta_term(d, boundary_scale);
                    grad[d] += bg;
                    se_grad[d] = Vec2::new(sx.hypot(bs.x), sy.hypot(bs.y));
                }
            }
            if options.beta_gradient {
                let (bi, _) = mean_se(moments.sum_b[d], moments.sumsq_b[d], moments.n);
                beta[d] = bi;
                if let Some(b) = &boundary {
                    beta[d] += b.beta_term(d, boundary_scale).0;
                }
            }
        }
        EstimateBundle {
            p_hat,
            grad,
            se_p,
            se_grad,
            m: moments.n,
            n_absorbed: moments.n_absorbed,
            seed,
            spec_hash,
            beta_grad: options.beta_gradient.then_some(beta),
            boundary_paths: boundary.as_ref().map_or(0, BoundaryAccumulator::total_paths),
            moments,
            boundary,
            boundary_scale,
            options,
        }
    }

    pub fn detectors(&self) -> usize {
        self.p_hat.len()
    }

    /// Unweighted fraction of paths that exited through each detector.
    pub fn hit_fractions(&self) -> Vec<f64> {
        self.moments
            .hits
            .iter()
            .map(|&h| h as f64 / self.m.max(1) as f64)
            .collect()
    }

    pub fn absorbed_fraction(&self) -> f64 {
        self.n_absorbed as f64 / self.m.max(1) as f64
    }

    pub fn gap_fraction(&self) -> f64 {
        self.moments.n_gap as f64 / self.m.max(1) as f64
    }
}

fn provenance(process: &ProcessSpec, source: &SourceSpec, layout: &DetectorLayout, opts: &EstimateOptions) -> String {
    spec_hash(&(process, source, layout, opts))
}

fn check_inputs(process: &ProcessSpec, source: &SourceSpec, m: u64) -> Result<()> {
    source.validate()?;
    process.validate()?;
    if m == 0 {
        return Err(Error::Config("ensemble size M must be at least 1".into()));
    }
    Ok(())
}

/// Simulates the path with index `i` under `seed`. Paths with the same
/// `(seed, i)` share their unit-ball draw and all dynamics randomness, which
/// couples estimates at different θ (common random numbers).
pub fn simulate_indexed(
    process: &ProcessSpec,
    source: &SourceSpec,
    layout: &DetectorLayout,
    seed: u64,
    i: u64,
) -> Result<ExitRecord> {
    let mut s = rng::stream(seed, &[ns::ESTIMATE, i]);
    let draw = source.sample(&mut s);
    process.simulate(draw, layout, &mut s)
}

/// Runs an `M`-path ensemble and assembles the estimate bundle.
pub fn estimate(
    process: &ProcessSpec,
    source: &SourceSpec,
    layout: &DetectorLayout,
    m: u64,
    seed: u64,
    opts: &EstimateOptions,
) -> Result<EstimateBundle> {
    check_inputs(process, source, m)?;
    let moments = ensemble::map_reduce(
        m,
        || Moments::new(layout.len()),
        |acc, i| {
            let rec = simulate_indexed(process, source, layout, seed, i)?;
            acc.add(&rec, source, opts);
            Ok(())
        },
        Moments::merge,
    )?;
    let boundary = if (opts.gradient || opts.beta_gradient) && source.has_boundary_term() {
        let per_node = opts
            .boundary_paths_per_node
            .unwrap_or_else(|| (m / opts.boundary_nodes.max(1) as u64).max(1));
        Some(boundary_accumulate(process, source, layout, opts.boundary_nodes, per_node, seed, opts.max_boundary_paths)?)
    } else {
        None
    };
    Ok(EstimateBundle::assemble(
        moments,
        boundary,
        source.boundary_density() * source.beta,
        seed,
        provenance(process, source, layout, opts),
        *opts,
    ))
}

fn boundary_accumulate(
    process: &ProcessSpec,
    source: &SourceSpec,
    layout: &DetectorLayout,
    nodes: usize,
    per_node: u64,
    seed: u64,
    max_paths: u64,
) -> Result<BoundaryAccumulator> {
    if nodes == 0 {
        return Err(Error::Config("boundary term needs at least one node".into()));
    }
    let total = nodes as u64 * per_node;
    if total > max_paths {
        return Err(Error::PathBudgetExceeded(total));
    }
    let proto = BoundaryAccumulator::new(nodes, layout.len());
    ensemble::map_reduce(
        total,
        || BoundaryAccumulator::new(nodes, layout.len()),
        |acc, i| {
            let q = (i / per_node) as usize;
            let k = i % per_node;
            let start = SourceDraw::at(source.support_point(proto.node_angle(q)));
            let mut s = rng::stream(seed, &[ns::BOUNDARY, q as u64, k]);
            let rec = process.simulate(start, layout, &mut s)?;
            acc.paths_per_node[q] += 1;
            if let Some(j) = rec.detector {
                acc.hits[q][j] += 1;
            }
            Ok(())
        },
        BoundaryAccumulator::merge,
    )
}

/// Support-boundary contribution to `∇_θ p_j` for every detector, with
/// standard errors. Zero (and no simulation) when `Ψ(1) = 0`.
pub fn boundary_term(
    process: &ProcessSpec,
    source: &SourceSpec,
    layout: &DetectorLayout,
    nodes: usize,
    paths_per_node: u64,
    seed: u64,
) -> Result<Vec<(Vec2, Vec2)>> {
    source.validate()?;
    if !source.has_boundary_term() {
        return Ok(vec![(Vec2::ZERO, Vec2::ZERO); layout.len()]);
    }
    let acc = boundary_accumulate(process, source, layout, nodes, paths_per_node, seed, DEFAULT_MAX_BOUNDARY_PATHS)?;
    let scale = source.boundary_density() * source.beta;
    Ok((0..layout.len()).map(|j| acc.theta_term(j, scale)).collect())
}

/// Pools bundles computed for the same configuration as if from one run.
pub fn merge(bundles: &[EstimateBundle]) -> Result<EstimateBundle> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::Config("nothing to merge".into()))?;
    let mut moments = first.moments.clone();
    let mut boundary = first.boundary.clone();
    for b in &bundles[1..] {
        if b.spec_hash != first.spec_hash {
            return Err(Error::MixedProvenance(first.spec_hash.clone(), b.spec_hash.clone()));
        }
        moments.merge(b.moments.clone());
        match (&mut boundary, &b.boundary) {
            (Some(acc), Some(other)) if acc.nodes == other.nodes => acc.merge(other.clone()),
            (None, None) => {}
            _ => {
                return Err(Error::MixedProvenance(first.spec_hash.clone(), b.spec_hash.clone()));
            }
        }
    }
    Ok(EstimateBundle::assemble(
        moments,
        boundary,
        first.boundary_scale,
        first.seed,
        first.spec_hash.clone(),
        first.options,
    ))
}
