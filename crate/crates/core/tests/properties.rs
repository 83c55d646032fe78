use std::f64::consts::TAU;

use proptest::prelude::*;

use fountain_core::fountain;
use fountain_core::geometry::{segment_boundary_crossing, Arc, DetectorLayout};
use fountain_core::oracle;
use fountain_core::rng;
use fountain_core::source::{Profile, SourceSpec};
use fountain_core::Vec2;

fn profile() -> impl Strategy<Value = Profile> {
    prop_oneof![Just(Profile::Bump), Just(Profile::Uniform)]
}

fn source() -> impl Strategy<Value = SourceSpec> {
    (0.02f64..0.4, 0.0f64..1.0, 0.0..TAU, profile()).prop_map(|(beta, s, a, p)| {
        let theta = Vec2::from_polar((0.97 - beta) * s, a);
        SourceSpec::new(theta, beta, p).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn draws_stay_in_support(src in source(), seed in any::<u64>()) {
        let mut s = rng::stream(seed, &[]);
        for _ in 0..200 {
            let d = src.sample(&mut s);
            prop_assert!((d.position - src.theta).norm() <= src.beta * (1.0 + 1e-12));
            prop_assert!(d.weight >= 0.0);
            prop_assert!(d.position.norm() < 1.0);
        }
    }

    #[test]
    fn importance_weights_average_to_one(src in source(), seed in any::<u64>()) {
        let mut s = rng::stream(seed, &[]);
        let n = 20_000;
        let w: Vec<f64> = (0..n).map(|_| src.sample(&mut s).weight).collect();
        let mean = w.iter().sum::<f64>() / n as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        prop_assert!((mean - 1.0).abs() <= 4.0 * se + 1e-12, "mean {mean} se {se}");
    }

    #[test]
    fn weighted_score_has_zero_mean(src in source(), seed in any::<u64>()) {
        let mut s = rng::stream(seed, &[]);
        let n = 20_000;
        let mut sum = Vec2::ZERO;
        let mut sumsq = [0.0; 2];
        for _ in 0..n {
            let d = src.sample(&mut s);
            let g = src.grad_log_density_factor(d.unit) * d.weight;
            sum += g;
            sumsq[0] += g.x * g.x;
            sumsq[1] += g.y * g.y;
        }
        let nf = n as f64;
        let mean = sum * (1.0 / nf);
        let se = [(sumsq[0] / nf - mean.x * mean.x).max(0.0).sqrt() / nf.sqrt(),
                  (sumsq[1] / nf - mean.y * mean.y).max(0.0).sqrt() / nf.sqrt()];
        prop_assert!(mean.x.abs() <= 4.0 * se[0] + 1e-12);
        prop_assert!(mean.y.abs() <= 4.0 * se[1] + 1e-12);
    }

    #[test]
    fn crossing_lies_on_circle_between_endpoints(r in 0.0f64..0.999, a in 0.0..TAU, len in 1e-6f64..0.5, dir in 0.0..TAU) {
        let p_in = Vec2::from_polar(r, a);
        let p_out = p_in + Vec2::from_polar(1.0, dir) * (1.0 - r + len);
        prop_assume!(p_out.norm() >= 1.0);
        let (t, hit) = segment_boundary_crossing(p_in, p_out).unwrap();
        prop_assert!(t > 0.0 && t <= 1.0);
        prop_assert!((hit.point.norm() - 1.0).abs() <= 1e-12);
        prop_assert!((p_in + (p_out - p_in) * t - hit.point).norm() <= 1e-9);
    }

    #[test]
    fn classification_rotates_with_layout(j in 1usize..8, by in -10.0f64..10.0, angle in 0.0..TAU) {
        let layout = DetectorLayout::equally_spaced(j).unwrap();
        let turned = layout.rotated(by);
        prop_assert_eq!(layout.classify(angle), turned.classify(angle + by));
    }

    #[test]
    fn harmonic_measures_sum_to_coverage_at_center(j in 1usize..9, fill in 0.05f64..0.95, rot in 0.0..TAU) {
        let half = 0.5 * fill * TAU / j as f64;
        let arcs = (0..j).map(|k| Arc::new(rot + TAU * k as f64 / j as f64, half)).collect();
        let layout = DetectorLayout::new(arcs).unwrap();
        let w = oracle::harmonic_measures(Vec2::ZERO, &layout).unwrap();
        let total: f64 = w.iter().sum();
        prop_assert!((total - layout.coverage_fraction()).abs() <= 1e-12);
    }

    #[test]
    fn multinomial_counts_total_n(p in prop::collection::vec(0.0f64..1.0, 2..7), n in 0u64..5000, seed in any::<u64>()) {
        let sum: f64 = p.iter().sum();
        prop_assume!(sum > 0.0);
        let mut p: Vec<f64> = p.iter().map(|x| x / sum).collect();
        let drift: f64 = 1.0 - p.iter().sum::<f64>();
        p[0] += drift;
        prop_assume!(p[0] >= 0.0);
        let c = fountain::generate_counts_multinomial(&p, n, &mut rng::stream(seed, &[])).unwrap();
        prop_assert_eq!(c.counts.len(), p.len() - 1);
        prop_assert!(c.total() <= n);
    }
}
