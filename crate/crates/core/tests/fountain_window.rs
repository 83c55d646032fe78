use fountain_core::fountain::{self, FountainSpec};
use fountain_core::harness;
use fountain_core::sim_diffusion::DiffusionSpec;

fn mean_counts(spec: &FountainSpec, seed: u64, replicates: u64) -> (Vec<f64>, Vec<f64>) {
    let runs: Vec<Vec<u64>> = (0..replicates)
        .map(|r| fountain::generate_counts(spec, seed, r).unwrap().counts)
        .collect();
    let n = replicates as f64;
    let j = runs[0].len();
    let mut mean = vec![0.0; j];
    let mut se = vec![0.0; j];
    for d in 0..j {
        let col: Vec<f64> = runs.iter().map(|c| c[d] as f64).collect();
        mean[d] = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|x| (x - mean[d]).powi(2)).sum::<f64>() / (n - 1.0);
        se[d] = (var / n).sqrt();
    }
    (mean, se)
}

#[test]
fn doubling_burn_in_leaves_counts_unchanged() {
    let spec = FountainSpec::with_auto_burn_in(
        50.0,
        5.0,
        harness::brownian_process(),
        harness::true_source(),
        harness::default_layout(),
        1,
    )
    .unwrap();
    let doubled = FountainSpec { t0: 2.0 * spec.t0, ..spec.clone() };
    let (a, sa) = mean_counts(&spec, 10, 200);
    let (b, sb) = mean_counts(&doubled, 11, 200);
    for d in 0..a.len() {
        assert!((a[d] - b[d]).abs() <= 3.0 * sa[d].hypot(sb[d]), "{d}: {} vs {}", a[d], b[d]);
    }
}

#[test]
fn window_rate_matches_exit_probabilities() {
    let layout = harness::default_layout();
    let source = harness::true_source();
    let process = DiffusionSpec::brownian(1e-4).into();
    let spec = FountainSpec::with_auto_burn_in(40.0, 5.0, process, source, layout.clone(), 2).unwrap();
    let p = fountain_core::oracle::source_exit_probability(&source, &layout).unwrap();
    let (mean, se) = mean_counts(&spec, 12, 300);
    for d in 0..mean.len() {
        let expected = spec.lambda * spec.t * p[d];
        assert!((mean[d] - expected).abs() <= 3.0 * se[d], "{d}: {} vs {expected}", mean[d]);
    }
}

#[test]
fn burn_in_check_against_pilot() {
    let spec = FountainSpec::with_auto_burn_in(
        10.0,
        1.0,
        harness::brownian_process(),
        harness::true_source(),
        harness::default_layout(),
        3,
    )
    .unwrap();
    let tau = fountain::pilot_mean_exit_time(&spec.process, &spec.source, &spec.layout, 4096, 3).unwrap();
    assert!(spec.check_burn_in(tau).is_ok());
    let short = FountainSpec { t0: -tau, ..spec };
    assert!(short.check_burn_in(tau).is_err());
}
