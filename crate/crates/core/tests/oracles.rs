//! Reference values computed independently of the library (closed forms,
//! high-precision quadrature frozen as literals, brute-force grids) and the
//! constants quoted by the underlying theory.

// the frozen literals keep every digit the reference computation produced
#![allow(clippy::excessive_precision)]

use approx::assert_relative_eq;

use nonlocal_korn::extension::{ReflectionConstants, M0};
use nonlocal_korn::fields::catalog_field;
use nonlocal_korn::geometry::{comparison_threshold, BallDomain, EpigraphDomain, Profile};
use nonlocal_korn::korn::{
    epigraph_korn_check, epigraph_test_field, j_bound_check, max_ratio_search, straightening_bound_check, SearchFamily, SearchOptions,
};
use nonlocal_korn::nonlocal::poincare_sobolev_check;
use nonlocal_korn::quadrature::PlanSettings;
use nonlocal_korn::seminorms::{dense_seminorms_p, joint_seminorms_p, lp_norm_p, seminorm_plan, SeminormParams};
use nonlocal_korn::Error;

// 1.25^{p/2} 2 pi int_0^0.8 exp(-p / (1 - r^2 / 0.64)) r dr, evaluated with
// mpmath at 30 digits. The translation catalog field has amplitude (1, 1/2).
const TRANSLATION_LP2: f64 = 0.094333888954534932063;
const TRANSLATION_LP3: f64 = 0.02990302084226256791;
// 2 pi int_0^0.8 exp(-2 / (1 - r^2 / 0.64)) r^3 dr for the radial field b(x) x.
const RADIAL_LP2: f64 = 0.0095234279802958503679;

#[test]
fn lp_norms_match_frozen_high_precision_quadrature() {
    let ball = BallDomain::unit(2);
    for (name, p, exact) in [("translation", 2.0, TRANSLATION_LP2), ("translation", 3.0, TRANSLATION_LP3), ("radial2d", 2.0, RADIAL_LP2)] {
        let u = catalog_field(name, 2, 0).unwrap();
        let e = lp_norm_p(&*u, &ball, p, 400_000, 3).unwrap();
        assert_relative_eq!(e.value, exact, max_relative = 0.02);
        assert!((e.value - exact).abs() <= 4.0 * e.std_error, "{name} p={p}: {} +- {} vs {exact}", e.value, e.std_error);
    }
}

#[test]
fn reflection_constants_for_swapped_roles() {
    let c = ReflectionConstants::solve(2.0, 1.0).unwrap();
    assert_eq!((c.k, c.l, c.m, c.n), (-2.0, 3.0, 4.0, -3.0));
    // k + l = 1 = m + n, lambda k = -m, mu l = -n
    for (lambda, mu) in [(0.3, 7.0), (5.0, 0.25), (1.0, 2.0)] {
        let c = ReflectionConstants::solve(lambda, mu).unwrap();
        assert_relative_eq!(c.k + c.l, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.m + c.n, 1.0, epsilon = 1e-12);
        assert_relative_eq!(lambda * c.k, -c.m, epsilon = 1e-12);
        assert_relative_eq!(mu * c.l, -c.n, epsilon = 1e-12);
    }
}

#[test]
fn smallness_threshold_constants() {
    assert_eq!(M0, 3.0 / 5.0);
    assert_relative_eq!(M0 * M0, 9.0 / 25.0, epsilon = 1e-15);
    // with C = 2 max(1, eta) the bound reaches 9/25 exactly at eta = 1
    assert_relative_eq!(comparison_threshold(1.0, 2.0), 9.0 / 25.0, epsilon = 1e-15);
    for eta in [0.2f64, 0.9, 1.1, 3.0, 50.0] {
        assert!(comparison_threshold(eta, 2.0 * eta.max(1.0)) > 9.0 / 25.0);
    }
    // closed form on eta >= 1: (3 eta^2)(4 eta^2 - 1) / (4 eta^2 + eta)^2
    let eta: f64 = 2.5;
    let closed = 3.0 * eta * eta * (4.0 * eta * eta - 1.0) / (4.0 * eta * eta + eta).powi(2);
    assert_relative_eq!(comparison_threshold(eta, 2.0 * eta), closed, max_relative = 1e-14);
}

#[test]
fn bump_seminorms_match_a_41_point_tensor_grid() {
    let ball = BallDomain::unit(2);
    let params = SeminormParams::new(0.5, 2.0).unwrap();
    for name in ["translation", "radial2d"] {
        let u = catalog_field(name, 2, 0).unwrap();
        let (x, w) = dense_seminorms_p(&*u, &ball, &params, 41).unwrap();
        let plan = seminorm_plan(&*u, &ball, &params, PlanSettings::default()).unwrap();
        let mc = joint_seminorms_p(&*u, &ball, &params, &plan, 5).unwrap();
        assert_relative_eq!(mc.w.value, w.value, max_relative = 0.02);
        assert_relative_eq!(mc.x.value, x.value, max_relative = 0.02);
    }
}

#[test]
fn flat_j_bound_product_is_constant() {
    let params = SeminormParams::new(0.5, 2.0).unwrap();
    let flat = EpigraphDomain::half_space(2);
    let r = j_bound_check(&flat, &params, &[0.0], &[1e-1, 1e-2, 1e-3], 40_000, 2).unwrap();
    // product = J a^{sp} has log-log slope slope + sp
    assert!(r.slope_error <= 0.1, "slope {}", r.slope);
    let products: Vec<f64> = r.rows.iter().map(|row| row.product).collect();
    let spread = products.iter().cloned().fold(0.0, f64::max) / products.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 1.1, "{products:?}");

    let wavy = EpigraphDomain::new(2, Profile::with_lipschitz("sine", 0.3).unwrap()).unwrap();
    let r = j_bound_check(&wavy, &params, &[0.4], &[1e-1, 1e-2, 1e-3], 40_000, 2).unwrap();
    assert!(r.sup_product.is_finite() && r.slope_error <= 0.1);
}

#[test]
fn flat_straightening_is_the_identity_ratio() {
    let params = SeminormParams::new(0.4, 2.0).unwrap();
    let flat = EpigraphDomain::half_space(2);
    let u = epigraph_test_field(&flat, "random", 1).unwrap();
    let r = straightening_bound_check(u, &flat, &params, PlanSettings::default(), 4).unwrap();
    assert_relative_eq!(r.ratio, 1.0, max_relative = 0.03);

    let wavy = EpigraphDomain::new(2, Profile::with_lipschitz("sine", 0.3).unwrap()).unwrap();
    let u = epigraph_test_field(&wavy, "random", 1).unwrap();
    let r = straightening_bound_check(u, &wavy, &params, PlanSettings::default(), 4).unwrap();
    assert!(r.ratio.is_finite() && r.ratio > 0.0);
}

#[test]
fn epigraph_korn_ratio_is_robust_to_the_profile() {
    let params = SeminormParams::new(0.4, 2.0).unwrap();
    let half = EpigraphDomain::half_space(2);
    let u = epigraph_test_field(&half, "random", 0).unwrap();
    let flat = epigraph_korn_check(&*u, &half, &params, PlanSettings::default(), 1).unwrap();
    let wavy = EpigraphDomain::new(2, Profile::with_lipschitz("sine", 0.3).unwrap()).unwrap();
    let u = epigraph_test_field(&wavy, "random", 0).unwrap();
    let bent = epigraph_korn_check(&*u, &wavy, &params, PlanSettings::default(), 1).unwrap();
    assert!(flat.ratio.is_finite() && bent.ratio.is_finite());
    assert!((bent.ratio / flat.ratio - 1.0).abs() < 0.5, "{} vs {}", bent.ratio, flat.ratio);
    let skew = epigraph_test_field(&wavy, "skew-bump", 0).unwrap();
    assert!(epigraph_korn_check(&*skew, &wavy, &params, PlanSettings::default(), 1).unwrap().ratio.is_finite());
}

#[test]
fn ratio_search_is_deterministic_and_improves() {
    let params = SeminormParams::new(0.4, 2.0).unwrap();
    let ball = BallDomain::unit(2);
    let opts = SearchOptions { family: SearchFamily::Skew, restarts: 2, iterations: 60, eval_budget: 600, seed: 5, ..Default::default() };
    let a = max_ratio_search(&ball, &params, &opts).unwrap();
    let b = max_ratio_search(&ball, &params, &opts).unwrap();
    assert_eq!(a, b);
    let meta = a.search.as_ref().unwrap();
    assert!(meta.improvement_factor > 1.0);
    assert!(meta.trace.windows(2).all(|w| w[1] >= w[0]));

    let sym = max_ratio_search(&ball, &params, &SearchOptions { family: SearchFamily::Symmetric, ..opts }).unwrap();
    assert!(a.max_ratio > sym.max_ratio, "skew {} vs symmetric {}", a.max_ratio, sym.max_ratio);
}

#[test]
fn poincare_sobolev_exponent_and_homogeneity() {
    let b = BallDomain::new(vec![0.0, 0.0], 1.0).unwrap();
    let v = catalog_field("random", 2, 3).unwrap();
    let r = poincare_sobolev_check(&*v, &b, 0.5, 2.0, PlanSettings::default(), 1).unwrap();
    assert_relative_eq!(r.q_star, 4.0, epsilon = 1e-15);
    assert!(r.ratio.is_finite() && r.ratio > 0.0);
    assert!(matches!(poincare_sobolev_check(&*v, &b, 0.5, 4.0, PlanSettings::default(), 1), Err(Error::HypothesisUnmet(_))));
    let zero = catalog_field("zero", 2, 0).unwrap();
    assert!(matches!(poincare_sobolev_check(&*zero, &b, 0.5, 2.0, PlanSettings::default(), 1), Err(Error::Degenerate(_))));
    assert_eq!(zero.eval(&[0.1, 0.2]), vec![0.0, 0.0]);
}
