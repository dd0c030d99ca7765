//! The projected-difference seminorm `[u]_X^p`, the Gagliardo seminorm
//! `|u|_W^p`, `||u||_p^p` and the Hardy-weighted integral, all in p-th power
//! form.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{projected_difference_values, VectorField};
use crate::geometry::{BallDomain, Region};
use crate::quadrature::{self, estimate_double_integrals, Estimate, PairSamplingPlan, PlanSettings};

/// Largest dimension handled by the stack-allocated integrand buffers.
pub const MAX_DIM: usize = 8;

/// Smoothness `s` and integrability `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeminormParams {
    pub s: f64,
    pub p: f64,
}

impl SeminormParams {
    pub fn new(s: f64, p: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::param("s", "must lie in (0, 1)"));
        }
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::param("p", "must lie in (1, inf)"));
        }
        Ok(Self { s, p })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.s, self.p).map(|_| ())
    }

    pub fn sp(&self) -> f64 {
        self.s * self.p
    }

    /// Whether `sp` stays away from the excluded value 1.
    pub fn sp_is_not_one(&self) -> bool {
        (self.sp() - 1.0).abs() > 1e-9
    }

    pub fn require_sp_not_one(&self) -> Result<()> {
        if self.sp_is_not_one() {
            Ok(())
        } else {
            Err(Error::HypothesisUnmet(format!("sp = {} must differ from 1", self.sp())))
        }
    }

    pub fn require_sp_below(&self, d: usize) -> Result<()> {
        if self.sp() < d as f64 {
            Ok(())
        } else {
            Err(Error::HypothesisUnmet(format!("sp = {} must be below d = {d}", self.sp())))
        }
    }

    /// `p (1 - s)`: the seminorm integrands of smooth fields behave like
    /// `|x - y|^{p(1-s) - d}` near the diagonal.
    pub fn diagonal_order(&self) -> f64 {
        self.p * (1.0 - self.s)
    }
}

/// X-integrand `|D(u)(x,y)|^p / |x-y|^{d+sp}` from evaluated values.
#[inline]
pub fn x_integrand(ux: &[f64], uy: &[f64], x: &[f64], y: &[f64], params: &SeminormParams) -> f64 {
    let pd = projected_difference_values(ux, uy, x, y);
    if pd == 0.0 {
        return 0.0;
    }
    let r = crate::numerics::dist(x, y);
    pd.abs().powf(params.p) * r.powf(-(x.len() as f64) - params.sp())
}

/// W-integrand `|u(x)-u(y)|^p / |x-y|^{d+sp}` from evaluated values.
#[inline]
pub fn w_integrand(ux: &[f64], uy: &[f64], x: &[f64], y: &[f64], params: &SeminormParams) -> f64 {
    let diff = crate::numerics::dist(ux, uy);
    if diff == 0.0 {
        return 0.0;
    }
    let r = crate::numerics::dist(x, y);
    diff.powf(params.p) * r.powf(-(x.len() as f64) - params.sp())
}

fn check_field(u: &dyn VectorField, omega: &dyn Region) -> Result<()> {
    if u.dim() != omega.dim() {
        return Err(Error::param("field", "dimension does not match the domain"));
    }
    if u.dim() > MAX_DIM {
        return Err(Error::param("d", format!("at most {MAX_DIM} dimensions are supported")));
    }
    Ok(())
}

/// Default plan for a seminorm of `u` over `omega`: base points in the
/// support ball of `u`, shells down to `core_ratio` times the support
/// diameter and an exterior shell whenever `omega` reaches beyond it.
pub fn seminorm_plan(u: &dyn VectorField, omega: &dyn Region, params: &SeminormParams, settings: PlanSettings) -> Result<PairSamplingPlan> {
    params.validate()?;
    check_field(u, omega)?;
    let support = u.support().ok_or_else(|| Error::param("field", "seminorm estimation needs a bounded support"))?;
    Ok(PairSamplingPlan::for_support(&support, omega.diameter(), params.sp(), settings)?.with_core_exponent(params.diagonal_order()))
}

/// Both seminorms from one pair stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSeminorms {
    pub x: Estimate,
    pub w: Estimate,
    /// Pairs at which the X-integrand exceeded the W-integrand.
    pub dominance_violations: u64,
    /// Pairs at which both integrands were evaluated.
    pub pairs_compared: u64,
}

/// `[u]_X^p` and `|u|_W^p` with common random numbers, counting per-sample
/// dominance failures of the X-integrand over the W-integrand.
pub fn joint_seminorms_p(
    u: &dyn VectorField,
    omega: &dyn Region,
    params: &SeminormParams,
    plan: &PairSamplingPlan,
    seed: u64,
) -> Result<JointSeminorms> {
    params.validate()?;
    check_field(u, omega)?;
    let d = u.dim();
    let violations = AtomicU64::new(0);
    let compared = AtomicU64::new(0);
    let est = estimate_double_integrals(
        2,
        |x, y, out| {
            let mut ux = [0.0; MAX_DIM];
            let mut uy = [0.0; MAX_DIM];
            u.eval_into(x, &mut ux[..d]);
            u.eval_into(y, &mut uy[..d]);
            out[0] = x_integrand(&ux[..d], &uy[..d], x, y, params);
            out[1] = w_integrand(&ux[..d], &uy[..d], x, y, params);
            compared.fetch_add(1, Ordering::Relaxed);
            if out[0] > out[1] * (1.0 + 1e-12) {
                violations.fetch_add(1, Ordering::Relaxed);
            }
        },
        omega,
        omega,
        plan,
        seed,
    )?;
    let mut it = est.into_iter();
    Ok(JointSeminorms {
        x: it.next().expect("two estimates"),
        w: it.next().expect("two estimates"),
        dominance_violations: violations.into_inner(),
        pairs_compared: compared.into_inner(),
    })
}

/// `[u]_X^p` over `omega x omega`.
pub fn x_seminorm_p(
    u: &dyn VectorField,
    omega: &dyn Region,
    params: &SeminormParams,
    plan: &PairSamplingPlan,
    seed: u64,
) -> Result<Estimate> {
    params.validate()?;
    check_field(u, omega)?;
    let d = u.dim();
    let mut v = estimate_double_integrals(
        1,
        |x, y, out| {
            let mut ux = [0.0; MAX_DIM];
            let mut uy = [0.0; MAX_DIM];
            u.eval_into(x, &mut ux[..d]);
            u.eval_into(y, &mut uy[..d]);
            out[0] = x_integrand(&ux[..d], &uy[..d], x, y, params);
        },
        omega,
        omega,
        plan,
        seed,
    )?;
    Ok(v.remove(0))
}

/// `|u|_W^p` over `omega x omega`.
pub fn w_seminorm_p(
    u: &dyn VectorField,
    omega: &dyn Region,
    params: &SeminormParams,
    plan: &PairSamplingPlan,
    seed: u64,
) -> Result<Estimate> {
    params.validate()?;
    check_field(u, omega)?;
    let d = u.dim();
    let mut v = estimate_double_integrals(
        1,
        |x, y, out| {
            let mut ux = [0.0; MAX_DIM];
            let mut uy = [0.0; MAX_DIM];
            u.eval_into(x, &mut ux[..d]);
            u.eval_into(y, &mut uy[..d]);
            out[0] = w_integrand(&ux[..d], &uy[..d], x, y, params);
        },
        omega,
        omega,
        plan,
        seed,
    )?;
    Ok(v.remove(0))
}

/// `||u||_{L^p(omega)}^p`, sampling the support ball of `u`.
pub fn lp_norm_p(u: &dyn VectorField, omega: &dyn Region, p: f64, n_samples: usize, seed: u64) -> Result<Estimate> {
    if !(p >= 1.0) {
        return Err(Error::param("p", "must be at least 1"));
    }
    check_field(u, omega)?;
    let support = u.support().ok_or_else(|| Error::param("field", "L^p estimation needs a bounded support"))?;
    let d = u.dim();
    quadrature::estimate_volume_integral(
        |x| {
            if !omega.contains(x) {
                return 0.0;
            }
            let mut ux = [0.0; MAX_DIM];
            u.eval_into(x, &mut ux[..d]);
            let n = crate::numerics::norm(&ux[..d]);
            if n == 0.0 {
                0.0
            } else {
                n.powf(p)
            }
        },
        &support,
        n_samples,
        seed,
    )
}

/// `int_{x_d > 0} |g(x)|^p / x_d^{sp} dx`.
pub fn hardy_weighted_p(g: &dyn VectorField, sp: f64, p: f64, n_samples: usize, seed: u64) -> Result<Estimate> {
    if !(sp > 0.0) || !(p >= 1.0) {
        return Err(Error::param("sp", "need sp > 0 and p >= 1"));
    }
    let d = g.dim();
    if d > MAX_DIM {
        return Err(Error::param("d", format!("at most {MAX_DIM} dimensions are supported")));
    }
    let support = g.support().ok_or_else(|| Error::param("field", "needs a bounded support"))?;
    if support.center[d - 1] - support.radius < 1e-6 {
        return Err(Error::OutsideDomain(format!(
            "support ball reaches within 1e-6 of the boundary hyperplane (lowest point {:.3e})",
            support.center[d - 1] - support.radius
        )));
    }
    quadrature::estimate_volume_integral(
        |x| {
            let mut gx = [0.0; MAX_DIM];
            g.eval_into(x, &mut gx[..d]);
            let n = crate::numerics::norm(&gx[..d]);
            if n == 0.0 {
                0.0
            } else {
                n.powf(p) * x[d - 1].powf(-sp)
            }
        },
        &support,
        n_samples,
        seed,
    )
}

/// Dense-oracle version of both seminorm integrands for `d = 2` on a ball,
/// used as the brute-force cross-check.
pub fn dense_seminorms_p(
    u: &dyn VectorField,
    omega: &BallDomain,
    params: &SeminormParams,
    n_per_axis: usize,
) -> Result<(Estimate, Estimate)> {
    params.validate()?;
    check_field(u, omega)?;
    let lo = [omega.center[0] - omega.radius, omega.center[1] - omega.radius];
    let hi = [omega.center[0] + omega.radius, omega.center[1] + omega.radius];
    let opts = quadrature::OracleOptions { n_per_axis, diagonal_order: Some(params.diagonal_order()), ..Default::default() };
    let x = quadrature::dense_oracle(
        |x, y| {
            let (ux, uy) = (u.eval(x), u.eval(y));
            x_integrand(&ux, &uy, x, y, params)
        },
        omega,
        omega,
        lo,
        hi,
        &opts,
    )?;
    let w = quadrature::dense_oracle(
        |x, y| {
            let (ux, uy) = (u.eval(x), u.eval(y));
            w_integrand(&ux, &uy, x, y, params)
        },
        omega,
        omega,
        lo,
        hi,
        &opts,
    )?;
    Ok((x, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{catalog_field, AffineField, ZeroField};
    use crate::geometry::WholeSpace;

    fn settings(budget: usize) -> PlanSettings {
        PlanSettings { budget, ..Default::default() }
    }

    #[test]
    fn params_validation() {
        assert!(SeminormParams::new(0.0, 2.0).is_err());
        assert!(SeminormParams::new(1.0, 2.0).is_err());
        assert!(SeminormParams::new(0.5, 1.0).is_err());
        let p = SeminormParams::new(0.5, 2.0).unwrap();
        assert!(p.require_sp_not_one().is_err());
        assert!(SeminormParams::new(0.4, 2.0).unwrap().require_sp_not_one().is_ok());
        assert!(SeminormParams::new(0.9, 3.0).unwrap().require_sp_below(2).is_err());
    }

    #[test]
    fn zero_field_has_zero_seminorms() {
        let u = ZeroField { d: 2 };
        let b = BallDomain::unit(2);
        let params = SeminormParams::new(0.5, 2.0).unwrap();
        let plan = seminorm_plan(&u, &b, &params, settings(10_000)).unwrap();
        let j = joint_seminorms_p(&u, &b, &params, &plan, 1).unwrap();
        assert_eq!((j.x.value, j.w.value), (0.0, 0.0));
        assert_eq!(lp_norm_p(&u, &b, 2.0, 1000, 1).unwrap().value, 0.0);
    }

    #[test]
    fn skew_affine_integrand_vanishes() {
        let w = AffineField::skew(2, 3);
        let params = SeminormParams::new(0.4, 2.0).unwrap();
        for (x, y) in [([0.1, 0.2], [0.5, -0.3]), ([1.0, 2.0], [-3.0, 0.5])] {
            let (ux, uy) = (w.eval(&x), w.eval(&y));
            assert!(x_integrand(&ux, &uy, &x, &y, &params) < 1e-28);
            assert!(w_integrand(&ux, &uy, &x, &y, &params) > 0.0);
        }
    }

    #[test]
    fn monotone_in_the_domain() {
        let u = catalog_field("random", 2, 2).unwrap();
        let params = SeminormParams::new(0.4, 2.0).unwrap();
        let small = BallDomain::new(vec![0.0, 0.0], 0.5).unwrap();
        let whole = WholeSpace { d: 2 };
        let plan = seminorm_plan(&*u, &whole, &params, settings(100_000)).unwrap();
        let a = x_seminorm_p(&*u, &small, &params, &plan, 5).unwrap();
        let b = x_seminorm_p(&*u, &whole, &params, &plan, 5).unwrap();
        assert!(a.value <= b.value);
    }

    #[test]
    fn lp_norm_of_a_translation_bump_matches_radial_quadrature() {
        let u = catalog_field("translation", 2, 0).unwrap();
        let amp2: f64 = 1.0 + 0.25;
        let p = 3.0;
        // 2 pi int_0^rho e^{-p / (1 - r^2/rho^2)} r dr by Gauss-Legendre
        let rule = gauss_quad::GaussLegendre::new(200).unwrap();
        let rho = 0.8;
        let radial = rule.integrate(0.0, rho, |r| (-p / (1.0 - r * r / (rho * rho))).exp() * r);
        let exact = amp2.powf(p / 2.0) * 2.0 * std::f64::consts::PI * radial;
        let e = lp_norm_p(&*u, &BallDomain::unit(2), p, 400_000, 7).unwrap();
        assert!((e.value - exact).abs() < 0.02 * exact, "{} vs {exact}", e.value);
    }

    #[test]
    fn hardy_integral_rejects_supports_touching_the_boundary() {
        let u = catalog_field("radial2d", 2, 0).unwrap();
        assert!(matches!(hardy_weighted_p(&*u, 0.8, 2.0, 100, 1), Err(Error::OutsideDomain(_))));
    }
}
