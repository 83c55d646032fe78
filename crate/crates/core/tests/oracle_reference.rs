use std::f64::consts::TAU;

use rand::Rng;

use fountain_core::estimator::{self, EstimateOptions};
use fountain_core::geometry::{Arc, DetectorLayout};
use fountain_core::harness;
use fountain_core::oracle::{self, OracleCache, OracleMethod};
use fountain_core::process::ProcessSpec;
use fountain_core::rng;
use fountain_core::sim_diffusion::DiffusionSpec;
use fountain_core::sim_plmp::ScatterLaw;
use fountain_core::source::{Profile, SourceSpec};
use fountain_core::Vec2;

// Double integral of density times harmonic measure (scipy dblquad at 1e-9
// and 1e-12, agreeing to 1e-15), bump and uniform profiles alike.
const EXP1_TARGET: [f64; 5] = [
    0.042429956517910525,
    0.06870727804720228,
    0.2021877452772322,
    0.13190920308020143,
    0.052193563958618475,
];

#[test]
fn experiment_one_target_vector() {
    let layout = harness::default_layout();
    for profile in [Profile::Bump, Profile::Uniform] {
        let src = SourceSpec::new(harness::TRUE_THETA, harness::TRUE_BETA, profile).unwrap();
        let p = oracle::source_exit_probability(&src, &layout).unwrap();
        for (a, b) in p.iter().zip(EXP1_TARGET) {
            assert!((a - b).abs() <= 1e-9, "{profile:?}: {a} vs {b}");
        }
    }
    let w = oracle::harmonic_measures(harness::TRUE_THETA, &layout).unwrap();
    for (a, b) in w.iter().zip(EXP1_TARGET) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn poisson_kernel_integrates_to_one() {
    let mut r = rng::stream(40, &[]);
    let full = Arc::new(0.0, std::f64::consts::PI);
    for _ in 0..50 {
        let x = Vec2::from_polar(0.99 * r.random::<f64>().sqrt(), r.random_range(0.0..TAU));
        let total = oracle::harmonic_measure_quadrature(x, &full, 1e-12).unwrap();
        assert!((total - 1.0).abs() <= 1e-9, "{x:?}: {total}");
    }
}

#[test]
fn brownian_estimator_matches_oracle_for_random_sources() {
    let process: ProcessSpec = DiffusionSpec::brownian(1e-4).into();
    let layout = harness::default_layout();
    let mut r = rng::stream(41, &[]);
    for c in 0..10u64 {
        let beta = r.random_range(0.05..0.3);
        let theta = Vec2::from_polar((0.85 - beta) * r.random::<f64>().sqrt(), r.random_range(0.0..TAU));
        let profile = if c % 2 == 0 { Profile::Bump } else { Profile::Uniform };
        let src = SourceSpec::new(theta, beta, profile).unwrap();
        let exact = oracle::source_exit_probability(&src, &layout).unwrap();
        let est = estimator::estimate(&process, &src, &layout, 20_000, 500 + c, &EstimateOptions::probabilities_only())
            .unwrap();
        for j in 0..layout.len() {
            assert!(
                (est.p_hat[j] - exact[j]).abs() <= 3.0 * est.se_p[j],
                "config {c} detector {j}: {} ± {} vs {}",
                est.p_hat[j],
                est.se_p[j],
                exact[j]
            );
        }
    }
}

#[test]
fn monte_carlo_reference_cross_validates_quadrature() {
    let dir = tempfile::tempdir().unwrap();
    let cache = OracleCache::new(dir.path());
    let process: ProcessSpec = DiffusionSpec::brownian(1e-4).into();
    let src = harness::true_source();
    let layout = harness::default_layout();
    let table = oracle::high_budget_reference(&process, &src, &layout, 100_000, 77, Some(&cache)).unwrap();
    assert_eq!(table.method, OracleMethod::HighBudgetMC);
    for j in 0..layout.len() {
        assert!((table.p[j] - EXP1_TARGET[j]).abs() <= 3.0 * table.se[j]);
    }
    let again = oracle::high_budget_reference(&process, &src, &layout, 100_000, 77, Some(&cache)).unwrap();
    assert_eq!(again, table);
    assert!(cache.path_for(&table.spec_hash).exists());
}

#[test]
fn plmp_symmetric_reference_is_even() {
    let process = harness::plmp_process(ScatterLaw::UniformAngle);
    let src = SourceSpec::new(Vec2::ZERO, 0.15, Profile::Bump).unwrap();
    let layout = harness::default_layout();
    let table = oracle::high_budget_reference(&process, &src, &layout, 200_000, 78, None).unwrap();
    let mean = table.p.iter().sum::<f64>() / layout.len() as f64;
    for j in 0..layout.len() {
        assert!((table.p[j] - mean).abs() <= 3.0 * table.se[j], "{j}: {} vs {mean}", table.p[j]);
    }
}

// Reference table of the standard drift plan (M_ref = 10^7, master seed 0),
// as written by `fountain-id oracle-build`.
const DRIFT_REFERENCE: [f64; 5] = [
    0.0003302095541836726,
    0.023279649425341546,
    0.48535785445182844,
    0.03267360992290444,
    0.00028509248430682747,
];
const DRIFT_REFERENCE_SE: [f64; 5] = [
    7.5275673290134374e-06,
    6.234966048178802e-05,
    0.00024332293171851728,
    7.352265957102435e-05,
    6.929212246855608e-06,
];

#[test]
fn drift_estimate_matches_frozen_reference() {
    let plan = harness::default_plans().remove(1);
    let est = estimator::estimate(
        &plan.process,
        &plan.true_source,
        &plan.layout,
        100_000,
        79,
        &EstimateOptions::probabilities_only(),
    )
    .unwrap();
    for j in 0..5 {
        let tol = 3.0 * est.se_p[j].hypot(DRIFT_REFERENCE_SE[j]);
        assert!((est.p_hat[j] - DRIFT_REFERENCE[j]).abs() <= tol, "{j}: {} vs {}", est.p_hat[j], DRIFT_REFERENCE[j]);
    }
}

#[test]
fn reference_dispatch() {
    let layout = DetectorLayout::equally_spaced(3).unwrap();
    let src = SourceSpec::new(Vec2::new(0.1, 0.2), 0.1, Profile::Uniform).unwrap();
    let bm = oracle::reference(&harness::brownian_process(), &src, &layout, 1000, 1, None).unwrap();
    assert_eq!(bm.method, OracleMethod::PoissonKernel);
    assert!(bm.se.iter().all(|&s| s == 0.0));
    let plmp = oracle::reference(&harness::plmp_process(ScatterLaw::UniformAngle), &src, &layout, 1000, 1, None).unwrap();
    assert_eq!(plmp.method, OracleMethod::HighBudgetMC);
    assert_eq!(plmp.m, Some(1000));
}
