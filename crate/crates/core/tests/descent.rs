use fountain_core::harness;
use fountain_core::optimizer::{self, DescentConfig, Model, SimulationModel, StepSize};
use fountain_core::oracle;
use fountain_core::rng;
use fountain_core::sim_diffusion::DiffusionSpec;
use fountain_core::source::Profile;
use fountain_core::Vec2;

fn model(dt: f64) -> SimulationModel {
    SimulationModel::new(
        DiffusionSpec::brownian(dt).into(),
        Profile::Bump,
        harness::TRUE_BETA,
        harness::default_layout(),
    )
}

fn target() -> Vec<f64> {
    oracle::source_exit_probability(&harness::true_source(), &harness::default_layout()).unwrap()
}

#[test]
fn first_step_points_toward_truth() {
    let model = model(4e-3);
    let data = target();
    let displacement = Vec2::new(0.2, 0.0);
    let theta = harness::TRUE_THETA + displacement;
    let mut good = 0;
    for trial in 0..100u64 {
        let eval = model.evaluate(theta, 1_000_000, rng::derive_seed(60, &[trial])).unwrap();
        let step = -optimizer::loss_gradient(&eval, &data);
        if step.dot(displacement) < 0.0 {
            good += 1;
        }
    }
    assert!(good >= 95, "{good}/100");
}

#[test]
fn same_seed_same_trace_bytes() {
    let cfg = DescentConfig::new(harness::START_THETA, harness::TRUE_BETA, 8, 0.01, 2000);
    let data = target();
    let a = optimizer::descend(&cfg, &model(1e-3), &data, 61).unwrap();
    let b = optimizer::descend(&cfg, &model(1e-3), &data, 61).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.to_json(), b.to_json());
    let c = optimizer::descend(&cfg, &model(1e-3), &data, 62).unwrap();
    assert_ne!(a.to_csv(), c.to_csv());
}

#[test]
fn iterates_stay_admissible_under_aggressive_steps() {
    let mut cfg = DescentConfig::new(Vec2::new(0.7, 0.0), harness::TRUE_BETA, 40, 5.0, 2000);
    cfg.step_size = StepSize::Constant(5.0);
    // data concentrated on the far detector pulls θ hard toward the rim
    let data = vec![0.0, 0.0, 0.0, 0.0, 0.9];
    let trace = optimizer::descend(&cfg, &model(1e-3), &data, 63).unwrap();
    for it in &trace.iterates {
        assert!(it.theta.norm() + harness::TRUE_BETA <= 1.0 - cfg.margin + 1e-12, "{:?}", it.theta);
    }
    assert!(trace.iterates.iter().any(|it| it.theta.norm() + harness::TRUE_BETA > 1.0 - 2.0 * cfg.margin));
}

#[test]
fn descent_reduces_loss_on_exact_data() {
    let cfg = DescentConfig::new(harness::START_THETA, harness::TRUE_BETA, 200, 0.01, 5000);
    let trace = optimizer::descend(&cfg, &model(1e-3), &target(), 64).unwrap();
    assert!(trace.final_loss() < trace.initial_loss());
    assert!((trace.final_theta - harness::TRUE_THETA).norm() < (harness::START_THETA - harness::TRUE_THETA).norm());
}
