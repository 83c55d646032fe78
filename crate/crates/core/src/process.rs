//! Baseline Markov processes and per-path exit records.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::DetectorLayout;
use crate::sim_diffusion::{self, DiffusionSpec};
use crate::sim_plmp::{self, PlmpSpec};
use crate::source::SourceDraw;
use crate::vec2::Vec2;

/// Either an Itô diffusion or a piecewise-linear Markov process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessSpec {
    Diffusion(DiffusionSpec),
    Plmp(PlmpSpec),
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProcessSpec::Diffusion(d) => d.validate(),
            ProcessSpec::Plmp(p) => p.validate(),
        }
    }

    /// Simulates one path from `start`.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        start: SourceDraw,
        layout: &DetectorLayout,
        rng: &mut R,
    ) -> Result<ExitRecord> {
        match self {
            ProcessSpec::Diffusion(d) => sim_diffusion::simulate_path(d, start, layout, rng),
            ProcessSpec::Plmp(p) => sim_plmp::simulate_path(p, start, layout, rng),
        }
    }

    /// Whether the driftless Brownian closed-form oracle applies.
    pub fn is_driftless_brownian(&self) -> bool {
        matches!(self, ProcessSpec::Diffusion(d) if d.drift.sup_norm() == 0.0)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ProcessSpec::Diffusion(_) => "diffusion",
            ProcessSpec::Plmp(_) => "plmp",
        }
    }
}

impl From<DiffusionSpec> for ProcessSpec {
    fn from(d: DiffusionSpec) -> Self {
        ProcessSpec::Diffusion(d)
    }
}

impl From<PlmpSpec> for ProcessSpec {
    fn from(p: PlmpSpec) -> Self {
        ProcessSpec::Plmp(p)
    }
}

/// Outcome of one simulated particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    /// Exit location on the circle, or the absorption site.
    pub exit_point: Vec2,
    /// Exit (or absorption) time measured from release.
    pub exit_time: f64,
    pub detector: Option<usize>,
    pub absorbed: bool,
    pub draw: SourceDraw,
}
