//! End-to-end studies: descent experiments, the brute-force sweep
//! estimator with its data-size scaling, and the ensemble-size fluctuation
//! study. Every table row carries the configuration hash, seed and crate
//! version that produced it.

use std::f64::consts::FRAC_PI_3;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble;
use crate::error::{Error, Result};
use crate::estimator::{self, EstimateOptions};
use crate::fountain::{self, FountainSpec};
use crate::geometry::DetectorLayout;
use crate::optimizer::{self, DescentConfig, DescentTrace, SimulationModel};
use crate::oracle::{self, OracleCache, OracleTable};
use crate::process::ProcessSpec;
use crate::provenance::{spec_hash, VERSION};
use crate::rng::{self, ns};
use crate::sim_diffusion::DiffusionSpec;
use crate::sim_plmp::{PlmpSpec, ScatterLaw};
use crate::source::{Profile, SourceSpec};
use crate::vec2::Vec2;

/// Euler–Maruyama step used by the default diffusion experiments.
pub const EXPERIMENT_DT: f64 = 1e-3;
pub const TRUE_THETA: Vec2 = Vec2::new(-0.4, 0.1);
pub const TRUE_BETA: f64 = 0.15;
pub const START_THETA: Vec2 = Vec2::new(0.5, -0.05);

/// How the observed exit-probability vector is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DataMode {
    /// Exact reference probabilities (`N = ∞`).
    OracleExact,
    /// `N` categorical draws from the reference probabilities.
    Multinomial { n: u64 },
    /// A simulated fountain window.
    Fountain {
        lambda: f64,
        #[serde(rename = "T")]
        t: f64,
    },
}

/// Acceptance thresholds checked in `--check` mode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanCheck {
    /// Largest allowed `|θ̂ - θ⁰|`.
    pub max_error: Option<f64>,
    /// Largest allowed final-to-initial loss ratio.
    pub max_loss_ratio: Option<f64>,
    /// Smallest allowed path length over straight-line distance.
    pub min_path_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub process: ProcessSpec,
    pub true_source: SourceSpec,
    pub layout: DetectorLayout,
    pub data_mode: DataMode,
    pub descent: DescentConfig,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Paths for the Monte Carlo reference when no closed form applies.
    #[serde(default = "default_m_ref")]
    pub oracle_m: u64,
    #[serde(default)]
    pub check: PlanCheck,
}

fn one() -> usize {
    1
}

fn default_m_ref() -> u64 {
    oracle::DEFAULT_M_REF
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("plan name is empty".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        self.process.validate()?;
        self.true_source.validate()?;
        self.descent.validate()
    }

    pub fn spec_hash(&self) -> String {
        spec_hash(self)
    }

    /// Seed of the reference table, shared by all replicates.
    pub fn oracle_seed(&self) -> u64 {
        rng::derive_seed(self.master_seed, &[ns::ORACLE])
    }

    fn model(&self) -> SimulationModel {
        SimulationModel::new(self.process, self.true_source.profile, self.descent.beta_known, self.layout.clone())
    }
}

/// A list of plans, as read from a TOML file with `[[plan]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    #[serde(rename = "plan")]
    pub plans: Vec<ExperimentPlan>,
}

impl PlanFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let f: PlanFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.plans.is_empty() {
            return Err(Error::Config("no plans".into()));
        }
        for (i, p) in self.plans.iter().enumerate() {
            p.validate().map_err(|e| in_plan(&p.name, e))?;
            if self.plans[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Config(format!("duplicate plan name `{}`", p.name)));
            }
        }
        Ok(())
    }
}

fn in_plan(name: &str, e: Error) -> Error {
    Error::InPlan {
        plan: name.to_string(),
        source: Box::new(e),
    }
}

/// Parses any TOML config section type.
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn brownian_process() -> ProcessSpec {
    DiffusionSpec::brownian(EXPERIMENT_DT).into()
}

pub fn drift_process() -> ProcessSpec {
    DiffusionSpec::new(Vec2::new(-2.0, 2.0), 0.5, EXPERIMENT_DT)
        .expect("valid drift spec")
        .into()
}

pub fn plmp_process(scatter: ScatterLaw) -> ProcessSpec {
    PlmpSpec::new(0.1, 0.8, 0.1, scatter).expect("valid plmp spec").into()
}

pub fn default_layout() -> DetectorLayout {
    DetectorLayout::equally_spaced(5).expect("five detectors")
}

pub fn true_source() -> SourceSpec {
    SourceSpec::new(TRUE_THETA, TRUE_BETA, Profile::Bump).expect("valid source")
}

/// The five standard descent experiments: Brownian motion, drifted
/// diffusion, and the PLMP with uniform and truncated-normal scattering
/// (`ς = 2` and `ς = 10`).
pub fn default_plans() -> Vec<ExperimentPlan> {
    let descent = DescentConfig::new(START_THETA, TRUE_BETA, 1000, 0.01, 10_000);
    let base = |name: &str, process: ProcessSpec, data_mode: DataMode, check: PlanCheck| ExperimentPlan {
        name: name.to_string(),
        process,
        true_source: true_source(),
        layout: default_layout(),
        data_mode,
        descent: descent.clone(),
        replicates: 1,
        master_seed: 0,
        oracle_m: oracle::DEFAULT_M_REF,
        check,
    };
    let loss_check = PlanCheck {
        max_loss_ratio: Some(0.1),
        ..Default::default()
    };
    let noisy = DataMode::Multinomial { n: 50_000 };
    vec![
        base(
            "exp1_brownian",
            brownian_process(),
            DataMode::OracleExact,
            PlanCheck {
                max_error: Some(0.05),
                ..loss_check
            },
        ),
        base(
            "exp2_drift",
            drift_process(),
            noisy,
            PlanCheck {
                min_path_ratio: Some(1.05),
                ..loss_check
            },
        ),
        base("exp3_plmp_uniform", plmp_process(ScatterLaw::UniformAngle), noisy, loss_check),
        base(
            "exp4_plmp_normal_2",
            plmp_process(ScatterLaw::TruncatedNormal { mean: FRAC_PI_3, std: 2.0 }),
            noisy,
            loss_check,
        ),
        base(
            "exp4_plmp_normal_10",
            plmp_process(ScatterLaw::TruncatedNormal { mean: FRAC_PI_3, std: 10.0 }),
            noisy,
            loss_check,
        ),
    ]
}

/// Reference table for a scenario.
pub fn reference_table(
    process: &ProcessSpec,
    source: &SourceSpec,
    layout: &DetectorLayout,
    m_ref: u64,
    seed: u64,
    cache: Option<&OracleCache>,
) -> Result<OracleTable> {
    oracle::reference(process, source, layout, m_ref, seed, cache)
}

/// Builds one observed probability vector.
pub fn make_data(plan: &ExperimentPlan, table: &OracleTable, replicate: u64) -> Result<Vec<f64>> {
    match plan.data_mode {
        DataMode::OracleExact => Ok(table.p.clone()),
        DataMode::Multinomial { n } => {
            let mut s = rng::stream(plan.master_seed, &[ns::MULTINOMIAL, replicate]);
            let counts = fountain::generate_counts_multinomial(&table.with_p_none(), n, &mut s)?;
            Ok(fountain::counts_to_probabilities(&counts))
        }
        DataMode::Fountain { lambda, t } => {
            let seed = rng::derive_seed(plan.master_seed, &[ns::FOUNTAIN]);
            let spec = FountainSpec::with_auto_burn_in(
                lambda,
                t,
                plan.process,
                plan.true_source,
                plan.layout.clone(),
                seed,
            )?;
            let counts = fountain::generate_counts(&spec, seed, replicate)?;
            Ok(fountain::counts_to_probabilities(&counts))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub plan: String,
    pub replicate: usize,
    pub theta_hat: Vec2,
    pub theta_true: Vec2,
    pub error: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_ratio: f64,
    /// Path length over straight-line distance between first and last iterate.
    pub path_ratio: f64,
    pub steps: usize,
    pub coverage_fraction: f64,
    pub spec_hash: String,
    pub master_seed: u64,
    pub version: String,
}

impl SummaryRow {
    pub const CSV_HEADER: &'static str = "plan,replicate,theta_hat_x,theta_hat_y,theta_true_x,theta_true_y,error,initial_loss,final_loss,loss_ratio,path_ratio,steps,coverage_fraction,spec_hash,master_seed,version";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.plan,
            self.replicate,
            self.theta_hat.x,
            self.theta_hat.y,
            self.theta_true.x,
            self.theta_true.y,
            self.error,
            self.initial_loss,
            self.final_loss,
            self.loss_ratio,
            self.path_ratio,
            self.steps,
            self.coverage_fraction,
            self.spec_hash,
            self.master_seed,
            self.version
        )
    }

    /// Failed checks, as human-readable messages.
    pub fn failed_checks(&self, check: &PlanCheck) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(tol) = check.max_error {
            if !(self.error <= tol) {
                out.push(format!("{}[{}]: |θ̂ - θ⁰| = {} > {tol}", self.plan, self.replicate, self.error));
            }
        }
        if let Some(r) = check.max_loss_ratio {
            if !(self.loss_ratio <= r) {
                out.push(format!("{}[{}]: loss ratio {} > {r}", self.plan, self.replicate, self.loss_ratio));
            }
        }
        if let Some(r) = check.min_path_ratio {
            if !(self.path_ratio > r) {
                out.push(format!("{}[{}]: path ratio {} ≤ {r}", self.plan, self.replicate, self.path_ratio));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRun {
    pub replicate: usize,
    pub data: Vec<f64>,
    pub trace: DescentTrace,
    pub summary: SummaryRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub plan: ExperimentPlan,
    pub oracle: OracleTable,
    pub runs: Vec<ReplicateRun>,
}

impl ExperimentOutcome {
    pub fn failed_checks(&self) -> Vec<String> {
        self.runs
            .iter()
            .flat_map(|r| r.summary.failed_checks(&self.plan.check))
            .collect()
    }
}

/// Builds the data, runs every replicate descent and summarizes it.
pub fn run_experiment(plan: &ExperimentPlan, cache: Option<&OracleCache>) -> Result<ExperimentOutcome> {
    let wrap = |e| in_plan(&plan.name, e);
    plan.validate().map_err(wrap)?;
    let table = reference_table(
        &plan.process,
        &plan.true_source,
        &plan.layout,
        plan.oracle_m,
        plan.oracle_seed(),
        cache,
    )
    .map_err(wrap)?;
    let model = plan.model();
    let hash = plan.spec_hash();
    let mut runs = Vec::with_capacity(plan.replicates);
    for r in 0..plan.replicates {
        let data = make_data(plan, &table, r as u64).map_err(wrap)?;
        let seed = rng::derive_seed(plan.master_seed, &[ns::REPLICATE, r as u64]);
        let trace = optimizer::descend(&plan.descent, &model, &data, seed).map_err(wrap)?;
        let first = trace.iterates[0].theta;
        let straight = (trace.final_theta - first).norm();
        let summary = SummaryRow {
            plan: plan.name.clone(),
            replicate: r,
            theta_hat: trace.final_theta,
            theta_true: plan.true_source.theta,
            error: (trace.final_theta - plan.true_source.theta).norm(),
            initial_loss: trace.initial_loss(),
            final_loss: trace.final_loss(),
            loss_ratio: trace.final_loss() / trace.initial_loss(),
            path_ratio: if straight > 0.0 { trace.path_length() / straight } else { 1.0 },
            steps: trace.steps(),
            coverage_fraction: plan.layout.coverage_fraction(),
            spec_hash: hash.clone(),
            master_seed: plan.master_seed,
            version: VERSION.to_string(),
        };
        runs.push(ReplicateRun {
            replicate: r,
            data,
            trace,
            summary,
        });
    }
    Ok(ExperimentOutcome {
        plan: plan.clone(),
        oracle: table,
        runs,
    })
}

/// `n × n` grid on the square of half-width `half_width` around `center`,
/// row-major in `(y, x)`.
pub fn square_grid(center: Vec2, half_width: f64, n: usize) -> Vec<Vec2> {
    let step = if n > 1 { 2.0 * half_width / (n - 1) as f64 } else { 0.0 };
    let lo = center - Vec2::new(half_width, half_width) * if n > 1 { 1.0 } else { 0.0 };
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(lo + Vec2::new(j as f64 * step, i as f64 * step));
        }
    }
    out
}

/// How `p̄(θ)` is computed for sweep candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PbarMethod {
    /// Poisson-kernel quadrature (driftless Brownian motion only).
    Oracle,
    /// `m` simulated paths per candidate, common random numbers across candidates.
    MonteCarlo { m: u64 },
}

/// Model probabilities at every sweep candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTable {
    pub grid: Vec<Vec2>,
    pub p: Vec<Vec<f64>>,
}

pub fn candidate_table(
    process: &ProcessSpec,
    source: &SourceSpec,
    layout: &DetectorLayout,
    grid: &[Vec2],
    method: PbarMethod,
    seed: u64,
) -> Result<CandidateTable> {
    if grid.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let p = ensemble::map_collect(grid.len() as u64, |i| {
        let s = source.with_theta(grid[i as usize]);
        s.validate()?;
        match method {
            PbarMethod::Oracle => {
                if !process.is_driftless_brownian() {
                    return Err(Error::Config("oracle sweep requires driftless Brownian motion".into()));
                }
                oracle::source_exit_probability(&s, layout)
            }
            PbarMethod::MonteCarlo { m } => Ok(estimator::estimate(
                process,
                &s,
                layout,
                m,
                rng::derive_seed(seed, &[ns::SWEEP]),
                &EstimateOptions::probabilities_only(),
            )?
            .p_hat),
        }
    })?;
    Ok(CandidateTable { grid: grid.to_vec(), p })
}

/// Index and location of the candidate minimizing the loss against `data`.
/// Ties go to the lowest index.
pub fn sweep_estimator(table: &CandidateTable, data: &[f64]) -> Result<(usize, Vec2)> {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in table.p.iter().enumerate() {
        let l = optimizer::loss(p, data)?;
        if l < best.1 {
            best = (i, l);
        }
    }
    if best.0 == usize::MAX {
        return Err(Error::Config("no finite loss on the sweep grid".into()));
    }
    Ok((best.0, table.grid[best.0]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    /// `N` or `M`.
    pub size: u64,
    pub mean_abs_error: f64,
    pub se: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub grid: Vec<ScalingPoint>,
    pub fitted_slope: f64,
    pub slope_se: f64,
}

impl ScalingResult {
    /// Least-squares slope of `ln ⟨|error|⟩` against `ln size`; its standard
    /// error propagates the per-point standard errors.
    pub fn fit(mut grid: Vec<ScalingPoint>) -> Self {
        grid.sort_by_key(|p| p.size);
        let xs: Vec<f64> = grid.iter().map(|p| (p.size as f64).ln()).collect();
        let ys: Vec<f64> = grid.iter().map(|p| p.mean_abs_error.ln()).collect();
        let n = xs.len() as f64;
        let xbar = xs.iter().sum::<f64>() / n;
        let ybar = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum::<f64>() / sxx;
        let var: f64 = xs
            .iter()
            .zip(&grid)
            .map(|(x, p)| ((x - xbar) / sxx).powi(2) * (p.se / p.mean_abs_error).powi(2))
            .sum();
        ScalingResult {
            grid,
            fitted_slope: slope,
            slope_se: var.sqrt(),
        }
    }

    pub fn is_decreasing(&self) -> bool {
        self.grid.windows(2).all(|w| w[1].mean_abs_error < w[0].mean_abs_error)
    }
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub process: ProcessSpec,
    pub true_source: SourceSpec,
    pub layout: DetectorLayout,
    pub n_grid: Vec<u64>,
    pub replicates: usize,
    pub grid_half_width: f64,
    pub grid_points: usize,
    pub pbar: PbarMethod,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_m_ref")]
    pub oracle_m: u64,
    #[serde(default)]
    pub slope_range: Option<[f64; 2]>,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            process: brownian_process(),
            true_source: true_source(),
            layout: default_layout(),
            n_grid: vec![1000, 2000, 5000, 10_000],
            replicates: 100,
            grid_half_width: 0.3,
            grid_points: 100,
            pbar: PbarMethod::Oracle,
            master_seed: 0,
            oracle_m: oracle::DEFAULT_M_REF,
            slope_range: Some([-0.65, -0.35]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyOutcome {
    pub scaling: ScalingResult,
    /// Raw errors per `N`, in `n_grid` order.
    pub errors: Vec<Vec<f64>>,
    pub estimates: Vec<Vec<Vec2>>,
    pub data_probabilities: Vec<f64>,
    pub spec_hash: String,
}

/// Error of the sweep estimator under multinomial data of each size.
pub fn consistency_sweep(cfg: &ConsistencyConfig, cache: Option<&OracleCache>) -> Result<ConsistencyOutcome> {
    if cfg.n_grid.len() < 2 || cfg.replicates == 0 {
        return Err(Error::Config("consistency study needs at least two sizes and one replicate".into()));
    }
    let oracle_seed = rng::derive_seed(cfg.master_seed, &[ns::ORACLE]);
    let truth = reference_table(&cfg.process, &cfg.true_source, &cfg.layout, cfg.oracle_m, oracle_seed, cache)?;
    let grid = square_grid(cfg.true_source.theta, cfg.grid_half_width, cfg.grid_points);
    let table = candidate_table(&cfg.process, &cfg.true_source, &cfg.layout, &grid, cfg.pbar, cfg.master_seed)?;
    consistency_from_table(cfg, &truth, &table)
}

/// Same as [`consistency_sweep`] with precomputed reference and candidate
/// probabilities.
pub fn consistency_from_table(cfg: &ConsistencyConfig, truth: &OracleTable, table: &CandidateTable) -> Result<ConsistencyOutcome> {
    let p_full = truth.with_p_none();
    let mut points = Vec::new();
    let mut errors = Vec::new();
    let mut estimates = Vec::new();
    for &n in &cfg.n_grid {
        let results = ensemble::map_collect(cfg.replicates as u64, |r| {
            let mut s = rng::stream(cfg.master_seed, &[ns::MULTINOMIAL, n, r]);
            let counts = fountain::generate_counts_multinomial(&p_full, n, &mut s)?;
            let data = fountain::counts_to_probabilities(&counts);
            Ok(sweep_estimator(table, &data)?.1)
        })?;
        let errs: Vec<f64> = results.iter().map(|t| (*t - cfg.true_source.theta).norm()).collect();
        let (mean, se) = mean_and_se(&errs);
        points.push(ScalingPoint {
            size: n,
            mean_abs_error: mean,
            se,
            replicates: cfg.replicates,
        });
        errors.push(errs);
        estimates.push(results);
    }
    Ok(ConsistencyOutcome {
        scaling: ScalingResult::fit(points),
        errors,
        estimates,
        data_probabilities: truth.p.clone(),
        spec_hash: spec_hash(cfg),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct MStudyConfig {
    pub process: ProcessSpec,
    pub true_source: SourceSpec,
    pub layout: DetectorLayout,
    pub m_grid: Vec<u64>,
    pub theta_init: Vec2,
    pub step_size: f64,
    pub burn_in: usize,
    /// Iterates kept after burn-in.
    pub trailing: usize,
    /// Batches for the batch-means standard error of the trailing mean.
    pub batches: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_m_ref")]
    pub oracle_m: u64,
    #[serde(default)]
    pub slope_range: Option<[f64; 2]>,
}

impl Default for MStudyConfig {
    fn default() -> Self {
        MStudyConfig {
            process: brownian_process(),
            true_source: true_source(),
            layout: default_layout(),
            m_grid: vec![1000, 3000, 8000, 15_000],
            theta_init: START_THETA,
            step_size: 0.01,
            burn_in: 2000,
            trailing: 8000,
            batches: 40,
            master_seed: 0,
            oracle_m: oracle::DEFAULT_M_REF,
            slope_range: Some([-0.40, -0.10]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudStats {
    #[serde(rename = "M")]
    pub m: u64,
    pub mean: Vec2,
    /// RMS distance of trailing iterates from their mean.
    pub dispersion: f64,
    /// Twice the RMS radius.
    pub diameter: f64,
    pub mean_error: f64,
    pub mean_error_se: f64,
    pub trailing: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MStudyOutcome {
    pub scaling: ScalingResult,
    pub clouds: Vec<CloudStats>,
    pub spec_hash: String,
}

impl MStudyOutcome {
    pub fn dispersion_decreasing(&self) -> bool {
        self.clouds.windows(2).all(|w| w[1].dispersion < w[0].dispersion)
    }
}

/// Long descents at each ensemble size; statistics of the iterates kept
/// after burn-in.
pub fn m_fluctuation_study(cfg: &MStudyConfig, cache: Option<&OracleCache>) -> Result<MStudyOutcome> {
    if cfg.m_grid.len() < 2 || cfg.trailing == 0 || cfg.batches == 0 || cfg.batches > cfg.trailing {
        return Err(Error::Config("m-study needs at least two sizes, trailing iterates and 1..=trailing batches".into()));
    }
    let oracle_seed = rng::derive_seed(cfg.master_seed, &[ns::ORACLE]);
    let truth = reference_table(&cfg.process, &cfg.true_source, &cfg.layout, cfg.oracle_m, oracle_seed, cache)?;
    let model = SimulationModel::new(cfg.process, cfg.true_source.profile, cfg.true_source.beta, cfg.layout.clone());
    let mut clouds = Vec::new();
    let mut points = Vec::new();
    for &m in &cfg.m_grid {
        let descent = DescentConfig::new(cfg.theta_init, cfg.true_source.beta, cfg.burn_in + cfg.trailing, cfg.step_size, m);
        let seed = rng::derive_seed(cfg.master_seed, &[ns::REPLICATE, m]);
        let trace = optimizer::descend(&descent, &model, &truth.p, seed)?;
        let trailing: Vec<Vec2> = trace.iterates[trace.iterates.len() - cfg.trailing..]
            .iter()
            .map(|it| it.theta)
            .collect();
        let n = trailing.len() as f64;
        let mean = trailing.iter().fold(Vec2::ZERO, |a, t| a + *t) * (1.0 / n);
        let dispersion = (trailing.iter().map(|t| (*t - mean).norm_sq()).sum::<f64>() / n).sqrt();
        let errs: Vec<f64> = trailing.iter().map(|t| (*t - cfg.true_source.theta).norm()).collect();
        let size = errs.len() / cfg.batches;
        let batch_means: Vec<f64> = errs
            .chunks_exact(size)
            .take(cfg.batches)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        let (_, se) = mean_and_se(&batch_means);
        let mean_error = errs.iter().sum::<f64>() / n;
        points.push(ScalingPoint {
            size: m,
            mean_abs_error: mean_error,
            se,
            replicates: cfg.batches,
        });
        clouds.push(CloudStats {
            m,
            mean,
            dispersion,
            diameter: 2.0 * dispersion,
            mean_error,
            mean_error_se: se,
            trailing,
        });
    }
    Ok(MStudyOutcome {
        scaling: ScalingResult::fit(points),
        clouds,
        spec_hash: spec_hash(cfg),
    })
}

/// Single sweep: data for one replicate and the sweep estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub process: ProcessSpec,
    pub true_source: SourceSpec,
    pub layout: DetectorLayout,
    pub data_mode: DataMode,
    pub grid_half_width: f64,
    pub grid_points: usize,
    pub pbar: PbarMethod,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_m_ref")]
    pub oracle_m: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            process: brownian_process(),
            true_source: true_source(),
            layout: default_layout(),
            data_mode: DataMode::Multinomial { n: 10_000 },
            grid_half_width: 0.3,
            grid_points: 100,
            pbar: PbarMethod::Oracle,
            master_seed: 0,
            oracle_m: oracle::DEFAULT_M_REF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub data: Vec<f64>,
    pub index: usize,
    pub theta_hat: Vec2,
    pub error: f64,
    pub loss_surface: Vec<(Vec2, f64)>,
    pub spec_hash: String,
}

pub fn run_sweep(cfg: &SweepConfig, cache: Option<&OracleCache>) -> Result<SweepOutcome> {
    let plan = ExperimentPlan {
        name: "sweep".into(),
        process: cfg.process,
        true_source: cfg.true_source,
        layout: cfg.layout.clone(),
        data_mode: cfg.data_mode,
        descent: DescentConfig::new(cfg.true_source.theta, cfg.true_source.beta, 1, 1.0, 1),
        replicates: 1,
        master_seed: cfg.master_seed,
        oracle_m: cfg.oracle_m,
        check: PlanCheck::default(),
    };
    let truth = reference_table(&cfg.process, &cfg.true_source, &cfg.layout, cfg.oracle_m, plan.oracle_seed(), cache)?;
    let data = make_data(&plan, &truth, 0)?;
    let grid = square_grid(cfg.true_source.theta, cfg.grid_half_width, cfg.grid_points);
    let table = candidate_table(&cfg.process, &cfg.true_source, &cfg.layout, &grid, cfg.pbar, cfg.master_seed)?;
    let (index, theta_hat) = sweep_estimator(&table, &data)?;
    let loss_surface = table
        .grid
        .iter()
        .zip(&table.p)
        .map(|(t, p)| Ok((*t, optimizer::loss(p, &data)?)))
        .collect::<Result<_>>()?;
    Ok(SweepOutcome {
        error: (theta_hat - cfg.true_source.theta).norm(),
        data,
        index,
        theta_hat,
        loss_surface,
        spec_hash: spec_hash(cfg),
    })
}

fn provenance_cols(hash: &str, seed: u64) -> String {
    format!("{hash},{seed},{VERSION}")
}

/// Long-format table of every iterate: `plan,replicate,k,variable,value,…`.
pub fn trace_plot_table(outcomes: &[ExperimentOutcome]) -> String {
    let mut out = String::from("plan,replicate,k,variable,value,spec_hash,master_seed,version\n");
    for o in outcomes {
        let prov = provenance_cols(&o.plan.spec_hash(), o.plan.master_seed);
        for run in &o.runs {
            for it in &run.trace.iterates {
                for (var, v) in [("theta_x", it.theta.x), ("theta_y", it.theta.y), ("loss", it.loss)] {
                    let _ = writeln!(out, "{},{},{},{var},{v},{prov}", o.plan.name, run.replicate, it.k);
                }
            }
        }
    }
    out
}

pub fn summary_table(outcomes: &[ExperimentOutcome]) -> String {
    let mut out = format!("{}\n", SummaryRow::CSV_HEADER);
    for o in outcomes {
        for r in &o.runs {
            let _ = writeln!(out, "{}", r.summary.csv_row());
        }
    }
    out
}

pub fn scaling_table(kind: &str, s: &ScalingResult, hash: &str, seed: u64) -> String {
    let prov = provenance_cols(hash, seed);
    let mut out = String::from("study,size,mean_abs_error,se,replicates,fitted_slope,slope_se,spec_hash,master_seed,version\n");
    for p in &s.grid {
        let _ = writeln!(
            out,
            "{kind},{},{},{},{},{},{},{prov}",
            p.size, p.mean_abs_error, p.se, p.replicates, s.fitted_slope, s.slope_se
        );
    }
    out
}

/// Raw per-replicate errors in long format.
pub fn error_samples_table(c: &ConsistencyOutcome, seed: u64) -> String {
    let prov = provenance_cols(&c.spec_hash, seed);
    let mut out = String::from("N,replicate,theta_hat_x,theta_hat_y,error,spec_hash,master_seed,version\n");
    for (p, (errs, ests)) in c.scaling.grid.iter().zip(c.errors.iter().zip(&c.estimates)) {
        for (r, (e, t)) in errs.iter().zip(ests).enumerate() {
            let _ = writeln!(out, "{},{r},{},{},{e},{prov}", p.size, t.x, t.y);
        }
    }
    out
}

pub fn cloud_table(m: &MStudyOutcome, seed: u64) -> String {
    let prov = provenance_cols(&m.spec_hash, seed);
    let mut out = String::from("M,index,theta_x,theta_y,spec_hash,master_seed,version\n");
    for c in &m.clouds {
        for (i, t) in c.trailing.iter().enumerate() {
            let _ = writeln!(out, "{},{i},{},{},{prov}", c.m, t.x, t.y);
        }
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("outputs serialize") + "\n"
}
