use proptest::prelude::*;

use nonlocal_korn::cli::{canonical_json, ExperimentConfig};
use nonlocal_korn::extension::ReflectionConstants;
use nonlocal_korn::fields::{projected_difference_values, AffineField, VectorField};
use nonlocal_korn::geometry::{comparison_threshold, BallDomain, EpigraphDomain, Profile};
use nonlocal_korn::nonlocal::{Coefficient, CoefficientKind};
use nonlocal_korn::seminorms::{w_integrand, x_integrand, SeminormParams};

fn profile() -> impl Strategy<Value = Profile> {
    (prop::sample::select(Profile::NAMES.to_vec()), 0.0..0.59f64).prop_map(|(n, m)| Profile::with_lipschitz(n, m).unwrap())
}

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn flattening_round_trips(prof in profile(), xp in point(1), depth in 1e-6..5.0f64, eta in 0.1..10.0f64) {
        let dom = EpigraphDomain::new(2, prof).unwrap();
        let x = vec![xp[0], dom.height(&[xp[0], 0.0]) - depth];
        let y = dom.phi_eta(eta, &x).unwrap();
        prop_assert!(dom.height(&y) < y[1]);
        let back = dom.phi_eta_inverse(eta, &y).unwrap();
        prop_assert!((back[0] - x[0]).abs() <= 1e-12 && (back[1] - x[1]).abs() <= 1e-12 * x[1].abs().max(1.0));
    }

    #[test]
    fn reflection_relations_hold(lambda in 0.01..20.0f64, mu in 0.01..20.0f64) {
        prop_assume!((lambda - mu).abs() > 1e-3);
        let c = ReflectionConstants::solve(lambda, mu).unwrap();
        let scale = 1.0 + c.k.abs() + c.l.abs() + c.m.abs() + c.n.abs();
        prop_assert!(c.max_residual() <= 1e-12 * scale);
    }

    #[test]
    fn projected_difference_is_dominated(ux in point(3), uy in point(3), x in point(3), y in point(3), s in 0.05..0.95f64, p in 1.1..4.0f64) {
        prop_assume!(x.iter().zip(&y).any(|(a, b)| a != b));
        let full: f64 = ux.iter().zip(&uy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(projected_difference_values(&ux, &uy, &x, &y).abs() <= full * (1.0 + 1e-12));
        let params = SeminormParams::new(s, p).unwrap();
        prop_assert!(x_integrand(&ux, &uy, &x, &y, &params) <= w_integrand(&ux, &uy, &x, &y, &params) * (1.0 + 1e-12));
    }

    #[test]
    fn skew_fields_have_no_projected_difference(seed in any::<u64>(), x in point(3), y in point(3)) {
        let w = AffineField::skew(3, seed);
        let (ux, uy) = (w.eval(&x), w.eval(&y));
        let full: f64 = ux.iter().zip(&uy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(projected_difference_values(&ux, &uy, &x, &y).abs() <= 1e-14 * full.max(1e-300) + 1e-300);
    }

    #[test]
    fn comparison_threshold_exceeds_nine_25ths_away_from_one(log_eta in -3.0..3.0f64) {
        prop_assume!(log_eta.abs() > 1e-6);
        let eta = 10f64.powf(log_eta);
        prop_assert!(comparison_threshold(eta, 2.0 * eta.max(1.0)) > 9.0 / 25.0);
    }

    #[test]
    fn coefficients_are_symmetric_and_bounded(cell in 0.05..1.0f64, lambda in 1.01..10.0f64, seed in any::<u64>(), x in point(2), y in point(2)) {
        for kind in [CoefficientKind::Checkerboard { cell }, CoefficientKind::RandomSymmetric { cell, seed }] {
            let c = Coefficient::new(kind, lambda).unwrap();
            let (a, b) = (c.eval(&x, &y), c.eval(&y, &x));
            prop_assert_eq!(a, b);
            prop_assert!(a >= 1.0 / lambda && a <= lambda);
        }
    }

    #[test]
    fn ball_sampling_stays_inside(cx in -5.0..5.0f64, cy in -5.0..5.0f64, r in 0.01..3.0f64, seed in any::<u64>()) {
        use rand::SeedableRng;
        let ball = BallDomain::new(vec![cx, cy], r).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut out = [0.0; 2];
        for _ in 0..50 {
            ball.sample_into(&mut rng, &mut out);
            prop_assert!((out[0] - cx).hypot(out[1] - cy) <= r * (1.0 + 1e-12));
        }
    }

    #[test]
    fn canonical_json_is_stable(m in 0.0..1.0f64, eta in 0.1..10.0f64, n in 1usize..1_000_000, seed in any::<u64>()) {
        let text = format!(r#"{{"seed": {seed}, "params": {{"eta": {eta:e}, "n_pairs": {n}, "m": {m:e}}}, "command": "geom-check"}}"#);
        let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap();
        let once = canonical_json(&serde_json::to_value(&cfg).unwrap());
        let reparsed: serde_json::Value = serde_json::from_str(&once).unwrap();
        prop_assert_eq!(canonical_json(&reparsed), once.clone());
        let keys: Vec<&String> = reparsed.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        prop_assert_eq!(keys, sorted);
        prop_assert_eq!(cfg.hash().unwrap(), cfg.hash().unwrap());
    }
}
