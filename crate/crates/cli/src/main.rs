use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use fountain_core::harness::{
    self, ConsistencyConfig, ExperimentOutcome, MStudyConfig, PlanFile, SweepConfig,
};
use fountain_core::optimizer::DescentTrace;
use fountain_core::oracle::{self, OracleCache};
use fountain_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "fountain-id", version, about = "Source identification from binned boundary-exit counts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run descent experiments (the five standard ones without --config).
    Run(Common),
    /// Brute-force sweep estimate for one data set.
    Sweep(Common),
    /// Sweep-estimator error against data size.
    Consistency(Common),
    /// Trailing-iterate fluctuation against ensemble size.
    Mstudy(Common),
    /// Compute and cache reference probability tables for a plan file.
    OracleBuild(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for descent traces (defaults to <out>/traces).
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Also write long-format tables for plotting.
    #[arg(long)]
    emit_plot_data: bool,
    /// Exit with status 4 if the run misses its acceptance thresholds.
    #[arg(long)]
    check: bool,
    /// Reference-table cache directory.
    #[arg(long)]
    oracle_cache: Option<PathBuf>,
}

enum Failure {
    Error(Error),
    Check(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type Outcome = Result<(), Failure>;

fn read_config(path: &Option<PathBuf>) -> Result<Option<String>, Error> {
    match path {
        Some(p) => fs::read_to_string(p)
            .map(Some)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => Ok(None),
    }
}

fn cache(common: &Common) -> OracleCache {
    OracleCache::new(common.oracle_cache.clone().unwrap_or_else(oracle::default_cache_dir))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Error> {
    harness::write_text(&dir.join(name), text)
}

fn load_plans(common: &Common) -> Result<PlanFile, Error> {
    let mut file = match read_config(&common.config)? {
        Some(text) => PlanFile::from_toml(&text)?,
        None => PlanFile {
            plans: harness::default_plans(),
        },
    };
    if let Some(seed) = common.seed {
        for p in &mut file.plans {
            p.master_seed = seed;
        }
    }
    Ok(file)
}

fn write_trace(dir: &Path, stem: &str, trace: &DescentTrace) -> Result<(), Error> {
    write(dir, &format!("{stem}.csv"), &trace.to_csv())?;
    write(dir, &format!("{stem}.json"), &(trace.to_json() + "\n"))
}

fn run(common: &Common) -> Outcome {
    let file = load_plans(common)?;
    let cache = cache(common);
    let trace_dir = common.trace_out.clone().unwrap_or_else(|| common.out.join("traces"));
    let mut outcomes: Vec<ExperimentOutcome> = Vec::new();
    for plan in &file.plans {
        let start = Instant::now();
        let outcome = harness::run_experiment(plan, Some(&cache))?;
        for r in &outcome.runs {
            write_trace(&trace_dir, &format!("{}_r{}", plan.name, r.replicate), &r.trace)?;
            eprintln!(
                "{} replicate {}: θ̂ = ({:.4}, {:.4}), |θ̂ - θ⁰| = {:.4}, loss {:.3e} -> {:.3e}",
                plan.name,
                r.replicate,
                r.summary.theta_hat.x,
                r.summary.theta_hat.y,
                r.summary.error,
                r.summary.initial_loss,
                r.summary.final_loss
            );
        }
        eprintln!("{}: wall time {:.1} s", plan.name, start.elapsed().as_secs_f64());
        outcomes.push(outcome);
    }
    write(&common.out, "summary.csv", &harness::summary_table(&outcomes))?;
    let rows: Vec<_> = outcomes.iter().flat_map(|o| o.runs.iter().map(|r| &r.summary)).collect();
    write(&common.out, "summary.json", &harness::to_json(&rows))?;
    if common.emit_plot_data {
        write(&common.out, "plot_data.csv", &harness::trace_plot_table(&outcomes))?;
    }
    if common.check {
        let failed: Vec<String> = outcomes.iter().flat_map(|o| o.failed_checks()).collect();
        if !failed.is_empty() {
            return Err(Failure::Check(failed));
        }
    }
    Ok(())
}

fn load_section<T: serde::de::DeserializeOwned + Default>(common: &Common) -> Result<T, Error> {
    match read_config(&common.config)? {
        Some(text) => harness::parse_toml(&text),
        None => Ok(T::default()),
    }
}

fn sweep(common: &Common) -> Outcome {
    let mut cfg: SweepConfig = load_section(common)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    let outcome = harness::run_sweep(&cfg, Some(&cache(common)))?;
    eprintln!(
        "sweep: θ̂ = ({:.4}, {:.4}), |θ̂ - θ⁰| = {:.4}",
        outcome.theta_hat.x, outcome.theta_hat.y, outcome.error
    );
    let summary = serde_json::json!({
        "theta_hat": outcome.theta_hat,
        "index": outcome.index,
        "error": outcome.error,
        "data": outcome.data,
        "spec_hash": outcome.spec_hash,
        "master_seed": cfg.master_seed,
        "version": fountain_core::provenance::VERSION,
    });
    write(&common.out, "sweep.json", &harness::to_json(&summary))?;
    if common.emit_plot_data {
        let mut csv = String::from("theta_x,theta_y,loss,spec_hash,master_seed,version\n");
        for (t, l) in &outcome.loss_surface {
            csv.push_str(&format!(
                "{},{},{l},{},{},{}\n",
                t.x,
                t.y,
                outcome.spec_hash,
                cfg.master_seed,
                fountain_core::provenance::VERSION
            ));
        }
        write(&common.out, "loss_surface.csv", &csv)?;
    }
    Ok(())
}

fn slope_failures(kind: &str, slope: f64, range: Option<[f64; 2]>) -> Vec<String> {
    match range {
        Some([lo, hi]) if !(lo..=hi).contains(&slope) => {
            vec![format!("{kind}: fitted slope {slope:.4} outside [{lo}, {hi}]")]
        }
        _ => Vec::new(),
    }
}

fn consistency(common: &Common) -> Outcome {
    let mut cfg: ConsistencyConfig = load_section(common)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    let outcome = harness::consistency_sweep(&cfg, Some(&cache(common)))?;
    let s = &outcome.scaling;
    eprintln!("consistency: slope {:.4} ± {:.4}", s.fitted_slope, s.slope_se);
    write(
        &common.out,
        "consistency.csv",
        &harness::scaling_table("consistency", s, &outcome.spec_hash, cfg.master_seed),
    )?;
    write(&common.out, "consistency.json", &harness::to_json(s))?;
    if common.emit_plot_data {
        write(
            &common.out,
            "consistency_errors.csv",
            &harness::error_samples_table(&outcome, cfg.master_seed),
        )?;
    }
    if common.check {
        let failed = slope_failures("consistency", s.fitted_slope, cfg.slope_range);
        if !failed.is_empty() {
            return Err(Failure::Check(failed));
        }
    }
    Ok(())
}

fn mstudy(common: &Common) -> Outcome {
    let mut cfg: MStudyConfig = load_section(common)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    let outcome = harness::m_fluctuation_study(&cfg, Some(&cache(common)))?;
    let s = &outcome.scaling;
    eprintln!("mstudy: slope {:.4} ± {:.4}", s.fitted_slope, s.slope_se);
    write(
        &common.out,
        "mstudy.csv",
        &harness::scaling_table("mstudy", s, &outcome.spec_hash, cfg.master_seed),
    )?;
    let clouds: Vec<_> = outcome
        .clouds
        .iter()
        .map(|c| {
            serde_json::json!({
                "M": c.m,
                "mean": c.mean,
                "dispersion": c.dispersion,
                "diameter": c.diameter,
                "mean_error": c.mean_error,
                "mean_error_se": c.mean_error_se,
            })
        })
        .collect();
    write(
        &common.out,
        "mstudy.json",
        &harness::to_json(&serde_json::json!({ "scaling": s, "clouds": clouds })),
    )?;
    if common.emit_plot_data {
        write(&common.out, "mstudy_clouds.csv", &harness::cloud_table(&outcome, cfg.master_seed))?;
    }
    if common.check {
        let mut failed = slope_failures("mstudy", s.fitted_slope, cfg.slope_range);
        if !s.is_decreasing() {
            failed.push("mstudy: mean error does not decrease with M".into());
        }
        if !failed.is_empty() {
            return Err(Failure::Check(failed));
        }
    }
    Ok(())
}

fn oracle_build(common: &Common) -> Outcome {
    let file = load_plans(common)?;
    let cache = OracleCache::new(common.oracle_cache.clone().unwrap_or_else(|| common.out.clone()));
    let mut tables = Vec::new();
    for plan in &file.plans {
        let table = harness::reference_table(
            &plan.process,
            &plan.true_source,
            &plan.layout,
            plan.oracle_m,
            plan.oracle_seed(),
            Some(&cache),
        )?;
        eprintln!("{}: {:?} p = {:?}", plan.name, table.method, table.p);
        tables.push(serde_json::json!({ "plan": plan.name, "table": table }));
    }
    write(&common.out, "oracle_tables.json", &harness::to_json(&tables))?;
    Ok(())
}

fn configure_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("FOUNTAIN_ID_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("FOUNTAIN_ID_THREADS = `{v}` is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::PathBudgetExceeded(_) => EXIT_BUDGET,
        Error::Config(_)
        | Error::InvalidLayout(_)
        | Error::InvalidSource(_)
        | Error::InvalidProcess(_)
        | Error::InvalidDistribution(_)
        | Error::DimensionMismatch { .. } => EXIT_CONFIG,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let result = match &cli.command {
        Command::Run(c) => run(c),
        Command::Sweep(c) => sweep(c),
        Command::Consistency(c) => consistency(c),
        Command::Mstudy(c) => mstudy(c),
        Command::OracleBuild(c) => oracle_build(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Check(msgs)) => {
            for m in msgs {
                eprintln!("check failed: {m}");
            }
            ExitCode::from(EXIT_CHECK)
        }
    }
}
