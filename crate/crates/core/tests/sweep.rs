use fountain_core::fountain;
use fountain_core::harness::{self, PbarMethod};
use fountain_core::oracle;
use fountain_core::rng;
use fountain_core::Vec2;

#[test]
fn two_point_grid_prefers_truth_under_noise() {
    let src = harness::true_source();
    let layout = harness::default_layout();
    let grid = vec![src.theta, src.theta + Vec2::new(0.3, 0.0)];
    let table = harness::candidate_table(&harness::brownian_process(), &src, &layout, &grid, PbarMethod::Oracle, 0).unwrap();
    let truth = oracle::poisson_kernel_table(&src, &layout).unwrap().with_p_none();
    let mut wins = 0;
    for r in 0..100u64 {
        let counts = fountain::generate_counts_multinomial(&truth, 100_000, &mut rng::stream(70, &[r])).unwrap();
        let data = fountain::counts_to_probabilities(&counts);
        if harness::sweep_estimator(&table, &data).unwrap().0 == 0 {
            wins += 1;
        }
    }
    assert!(wins >= 99, "{wins}/100");
}

#[test]
fn noiseless_error_is_grid_resolution() {
    let src = harness::true_source();
    let layout = harness::default_layout();
    let (half, n) = (0.3, 100);
    let grid = harness::square_grid(src.theta, half, n);
    let table = harness::candidate_table(&harness::brownian_process(), &src, &layout, &grid, PbarMethod::Oracle, 0).unwrap();
    let data = oracle::source_exit_probability(&src, &layout).unwrap();
    let (_, est) = harness::sweep_estimator(&table, &data).unwrap();
    let spacing = 2.0 * half / (n - 1) as f64;
    assert!((est - src.theta).norm() <= spacing / std::f64::consts::SQRT_2 + 1e-12);
}

#[test]
fn monte_carlo_candidates_share_random_numbers() {
    let src = harness::true_source();
    let layout = harness::default_layout();
    let grid = harness::square_grid(src.theta, 0.05, 3);
    let method = PbarMethod::MonteCarlo { m: 4000 };
    let a = harness::candidate_table(&harness::brownian_process(), &src, &layout, &grid, method, 3).unwrap();
    let b = harness::candidate_table(&harness::brownian_process(), &src, &layout, &grid, method, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.p.len(), 9);
}
