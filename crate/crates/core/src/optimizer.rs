//! Stochastic gradient descent on the source location θ for the loss
//! `Σ_j ½ (p̂_j(θ) - p_j^data)²`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, EstimateOptions};
use crate::geometry::DetectorLayout;
use crate::process::ProcessSpec;
use crate::rng::{self, ns};
use crate::source::{Profile, SourceSpec};
use crate::vec2::Vec2;

pub const DEFAULT_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Constant(f64),
    /// `h_k` from the table; the last entry repeats.
    Schedule(Vec<f64>),
}

impl StepSize {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            StepSize::Constant(h) => *h,
            StepSize::Schedule(t) => t[k.min(t.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            StepSize::Constant(h) => *h > 0.0,
            StepSize::Schedule(t) => !t.is_empty() && t.iter().all(|h| *h > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("step sizes must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MSchedule {
    Constant(u64),
    /// `M_k` from the table; the last entry repeats.
    Schedule(Vec<u64>),
}

impl MSchedule {
    pub fn at(&self, k: usize) -> u64 {
        match self {
            MSchedule::Constant(m) => *m,
            MSchedule::Schedule(t) => t[k.min(t.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            MSchedule::Constant(m) => *m > 0,
            MSchedule::Schedule(t) => !t.is_empty() && t.iter().all(|m| *m > 0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("ensemble sizes must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    #[default]
    FixedK,
    GradNormBelow { tol: f64 },
    /// Stop once θ moved less than `tol` over the last `window` steps.
    ThetaStall { tol: f64, window: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescentConfig {
    pub theta_init: Vec2,
    pub beta_known: f64,
    pub steps: usize,
    pub step_size: StepSize,
    pub m_schedule: MSchedule,
    #[serde(default)]
    pub stop_rule: StopRule,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

impl DescentConfig {
    pub fn new(theta_init: Vec2, beta_known: f64, steps: usize, h: f64, m: u64) -> Self {
        DescentConfig {
            theta_init,
            beta_known,
            steps,
            step_size: StepSize::Constant(h),
            m_schedule: MSchedule::Constant(m),
            stop_rule: StopRule::FixedK,
            margin: DEFAULT_MARGIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("descent needs at least one step".into()));
        }
        if !(self.beta_known > 0.0 && self.beta_known + self.margin < 1.0) {
            return Err(Error::Config(format!("beta_known = {} is not admissible", self.beta_known)));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("margin must be non-negative".into()));
        }
        self.step_size.validate()?;
        self.m_schedule.validate()?;
        if self.theta_init.norm() + self.beta_known > 1.0 - self.margin {
            return Err(Error::InvalidSource(format!(
                "initial θ = {:?} puts the support outside the domain",
                self.theta_init.to_array()
            )));
        }
        Ok(())
    }

    /// Radial projection onto `{θ : |θ| + β ≤ 1 - margin}`.
    pub fn project(&self, theta: Vec2) -> Vec2 {
        let r_max = 1.0 - self.margin - self.beta_known;
        let r = theta.norm();
        if r > r_max {
            theta * (r_max / r)
        } else {
            theta
        }
    }
}

/// Model probabilities and their θ-gradients at one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub p: Vec<f64>,
    pub grad: Vec<Vec2>,
}

/// Anything that can estimate exit probabilities and gradients at θ.
pub trait Model {
    fn detectors(&self) -> usize;
    fn evaluate(&self, theta: Vec2, m: u64, seed: u64) -> Result<Evaluation>;
}

/// The Monte Carlo estimator as a descent model.
#[derive(Debug, Clone)]
pub struct SimulationModel {
    pub process: ProcessSpec,
    pub profile: Profile,
    pub beta: f64,
    pub layout: DetectorLayout,
    pub options: EstimateOptions,
}

impl SimulationModel {
    pub fn new(process: ProcessSpec, profile: Profile, beta: f64, layout: DetectorLayout) -> Self {
        SimulationModel {
            process,
            profile,
            beta,
            layout,
            options: EstimateOptions::default(),
        }
    }
}

impl Model for SimulationModel {
    fn detectors(&self) -> usize {
        self.layout.len()
    }

    fn evaluate(&self, theta: Vec2, m: u64, seed: u64) -> Result<Evaluation> {
        let source = SourceSpec::new(theta, self.beta, self.profile)?;
        let b = estimator::estimate(&self.process, &source, &self.layout, m, seed, &self.options)?;
        Ok(Evaluation { p: b.p_hat, grad: b.grad })
    }
}

/// `Σ_j (model_j - data_j)² / 2`.
pub fn loss(model: &[f64], data: &[f64]) -> Result<f64> {
    if model.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: model.len(),
        });
    }
    Ok(model.iter().zip(data).map(|(m, d)| 0.5 * (m - d) * (m - d)).sum())
}

/// `Σ_j (model_j - data_j) ∇model_j`.
pub fn loss_gradient(eval: &Evaluation, data: &[f64]) -> Vec2 {
    eval.p
        .iter()
        .zip(data)
        .zip(&eval.grad)
        .fold(Vec2::ZERO, |acc, ((p, d), g)| acc + *g * (p - d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub k: usize,
    pub theta: Vec2,
    pub p_hat: Vec<f64>,
    /// Estimated loss gradient at `theta`.
    pub grad: Vec2,
    pub loss: f64,
    #[serde(rename = "M")]
    pub m: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    pub iterates: Vec<Iterate>,
    pub final_theta: Vec2,
}

impl DescentTrace {
    pub fn initial_loss(&self) -> f64 {
        self.iterates[0].loss
    }

    pub fn final_loss(&self) -> f64 {
        self.iterates.last().map_or(f64::NAN, |it| it.loss)
    }

    pub fn steps(&self) -> usize {
        self.iterates.len() - 1
    }

    /// Total distance travelled by the iterates.
    pub fn path_length(&self) -> f64 {
        self.iterates
            .windows(2)
            .map(|w| (w[1].theta - w[0].theta).norm())
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,theta_x,theta_y,loss,grad_x,grad_y,M\n");
        for it in &self.iterates {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                it.k, it.theta.x, it.theta.y, it.loss, it.grad.x, it.grad.y, it.m
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Runs the descent. Step `k` evaluates the model with a fresh seed derived
/// from `(master_seed, k)`; the trace holds every evaluated iterate.
pub fn descend<M: Model + ?Sized>(config: &DescentConfig, model: &M, data: &[f64], master_seed: u64) -> Result<DescentTrace> {
    config.validate()?;
    if data.len() != model.detectors() {
        return Err(Error::DimensionMismatch {
            expected: model.detectors(),
            got: data.len(),
        });
    }
    let mut theta = config.theta_init;
    let mut iterates: Vec<Iterate> = Vec::with_capacity(config.steps + 1);
    for k in 0..=config.steps {
        let m = config.m_schedule.at(k);
        let seed = rng::derive_seed(master_seed, &[ns::DESCENT, k as u64]);
        let at_step = |e: Error| Error::AtStep { step: k, source: Box::new(e) };
        let eval = model.evaluate(theta, m, seed).map_err(at_step)?;
        let l = loss(&eval.p, data).map_err(at_step)?;
        let g = loss_gradient(&eval, data);
        iterates.push(Iterate {
            k,
            theta,
            p_hat: eval.p,
            grad: g,
            loss: l,
            m,
            seed,
        });
        if k == config.steps {
            break;
        }
        let stop = match config.stop_rule {
            StopRule::FixedK => false,
            StopRule::GradNormBelow { tol } => g.norm() < tol,
            StopRule::ThetaStall { tol, window } => {
                window > 0 && k >= window && (theta - iterates[k - window].theta).norm() < tol
            }
        };
        if stop {
            break;
        }
        theta = config.project(theta - g * config.step_size.at(k));
    }
    Ok(DescentTrace {
        final_theta: theta,
        iterates,
    })
}
