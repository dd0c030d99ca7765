//! Two-reflection extension of fields from an epigraph `D` to all of `R^d`.
//!
//! Below the graph, the tangential components are combined as
//! `k u_i(Phi_lambda x) + l u_i(Phi_mu x)` and the normal component as
//! `m u_d(Phi_lambda x) + n u_d(Phi_mu x)`, where `Phi_eta` reflects the
//! lower region into `D` with stretch `eta`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FieldRef, VectorField};
use crate::geometry::{BallDomain, EpigraphDomain, Region, WholeSpace};
use crate::quadrature::{Estimate, PlanSettings};
use crate::seminorms::{self, SeminormParams};

/// Largest Lipschitz constant for which the extension estimate is claimed.
pub const M0: f64 = 0.6;

/// `(lambda, mu, k, l, m, n)` with `k + l = 1 = m + n`, `lambda k = -m`, `mu l = -n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionConstants {
    pub lambda: f64,
    pub mu: f64,
    pub k: f64,
    pub l: f64,
    pub m: f64,
    pub n: f64,
}

impl ReflectionConstants {
    /// Unique solution of the four linear relations.
    pub fn solve(lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::param("lambda", "must be positive"));
        }
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::param("mu", "must be positive"));
        }
        if lambda == mu {
            return Err(Error::Degenerate(format!("lambda = mu = {lambda} makes the reflection system singular")));
        }
        let k = -(1.0 + mu) / (lambda - mu);
        let l = (1.0 + lambda) / (lambda - mu);
        Ok(Self { lambda, mu, k, l, m: -lambda * k, n: -mu * l })
    }

    /// Largest absolute defect among the four defining relations.
    pub fn max_residual(&self) -> f64 {
        [self.k + self.l - 1.0, self.m + self.n - 1.0, self.lambda * self.k + self.m, self.mu * self.l + self.n]
            .iter()
            .fold(0.0f64, |a, r| a.max(r.abs()))
    }
}

impl Default for ReflectionConstants {
    fn default() -> Self {
        Self::solve(1.0, 2.0).expect("1 != 2")
    }
}

/// `u_j(Phi_eta(x))` for `x` below the graph.
pub fn reflect_component(u: &dyn VectorField, dom: &EpigraphDomain, eta: f64, j: usize, x: &[f64]) -> Result<f64> {
    if j >= dom.d {
        return Err(Error::param("j", "component index out of range"));
    }
    let y = dom.phi_eta(eta, x)?;
    Ok(u.eval(&y)[j])
}

/// The extended field `E(u)`.
#[derive(Debug, Clone)]
pub struct ExtendedField {
    inner: FieldRef,
    dom: EpigraphDomain,
    constants: ReflectionConstants,
}

pub fn extend(u: FieldRef, dom: &EpigraphDomain, constants: ReflectionConstants) -> Result<ExtendedField> {
    if u.dim() != dom.d {
        return Err(Error::param("field", "dimension does not match the domain"));
    }
    Ok(ExtendedField { inner: u, dom: dom.clone(), constants })
}

impl ExtendedField {
    pub fn constants(&self) -> &ReflectionConstants {
        &self.constants
    }
}

impl VectorField for ExtendedField {
    fn dim(&self) -> usize {
        self.dom.d
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        if self.dom.contains(x) {
            self.inner.eval_into(x, out);
            return;
        }
        let d = self.dom.d;
        let c = &self.constants;
        let mut y = [0.0; seminorms::MAX_DIM];
        let mut a = [0.0; seminorms::MAX_DIM];
        let mut b = [0.0; seminorms::MAX_DIM];
        self.dom.reflect_up(c.lambda, x, &mut y[..d]);
        self.inner.eval_into(&y[..d], &mut a[..d]);
        self.dom.reflect_up(c.mu, x, &mut y[..d]);
        self.inner.eval_into(&y[..d], &mut b[..d]);
        for i in 0..d - 1 {
            out[i] = c.k * a[i] + c.l * b[i];
        }
        out[d - 1] = c.m * a[d - 1] + c.n * b[d - 1];
    }

    fn support(&self) -> Option<BallDomain> {
        let s = self.inner.support()?;
        let d = self.dom.d;
        let mm = self.dom.lipschitz();
        let fc = self.dom.height(&s.center);
        let elev = s.center[d - 1] - fc;
        let mut lo: Vec<f64> = s.center.iter().map(|c| c - s.radius).collect();
        let mut hi: Vec<f64> = s.center.iter().map(|c| c + s.radius).collect();
        // Preimages of the support under both reflections stay within this slab.
        let eta_min = self.constants.lambda.min(self.constants.mu);
        lo[d - 1] = lo[d - 1].min(fc - mm * s.radius - (elev + s.radius * (1.0 + mm)) / eta_min);
        hi[d - 1] = hi[d - 1].max(fc + mm * s.radius);
        Some(BallDomain::enclosing_box(&lo, &hi))
    }
}

/// Terms of the extension estimate, in p-th powers, and the empirical constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionReport {
    pub lipschitz: f64,
    pub constants: ReflectionConstants,
    pub params: SeminormParams,
    /// `[E u]_X^p` over `R^d x R^d`.
    pub ext_x_p: Estimate,
    pub ext_lp_p: Estimate,
    pub u_x_p: Estimate,
    pub u_w_p: Estimate,
    pub u_lp_p: Estimate,
    /// `||E u||_X / (||u||_X + M ||u||_W)` with `||.||_X = [.]_X + ||.||_p`.
    pub ratio: f64,
    /// The same ratio recomputed with twice the budget and a fresh seed.
    pub ratio_doubled: f64,
    pub relative_change: f64,
}

fn ensure_inside(u: &dyn VectorField, dom: &EpigraphDomain) -> Result<BallDomain> {
    let s = u.support().ok_or_else(|| Error::param("field", "needs a bounded support"))?;
    let d = dom.d;
    let clearance = s.center[d - 1] - s.radius - dom.height(&s.center) - dom.lipschitz() * s.radius;
    if clearance <= 0.0 {
        return Err(Error::OutsideDomain(format!(
            "support ball of the field is not certified to lie inside the epigraph (clearance {clearance:.3e})"
        )));
    }
    Ok(s)
}

fn ratio_once(
    u: &FieldRef,
    dom: &EpigraphDomain,
    constants: ReflectionConstants,
    params: &SeminormParams,
    settings: PlanSettings,
    seed: u64,
) -> Result<(Estimate, Estimate, Estimate, Estimate, Estimate, f64)> {
    let e = extend(u.clone(), dom, constants)?;
    let whole = WholeSpace { d: dom.d };
    let plan_e = seminorms::seminorm_plan(&e, &whole, params, settings)?;
    let ext_x = seminorms::x_seminorm_p(&e, &whole, params, &plan_e, seed)?;
    let ext_l = seminorms::lp_norm_p(&e, &whole, params.p, settings.budget, seed)?;
    let plan_u = seminorms::seminorm_plan(&**u, dom, params, settings)?;
    let j = seminorms::joint_seminorms_p(&**u, dom, params, &plan_u, seed)?;
    let u_l = seminorms::lp_norm_p(&**u, dom, params.p, settings.budget, seed)?;
    let root = |v: f64| v.max(0.0).powf(1.0 / params.p);
    let lhs = root(ext_x.value) + root(ext_l.value);
    let rhs = root(j.x.value) + root(u_l.value) + dom.lipschitz() * (root(j.w.value) + root(u_l.value));
    if rhs <= 0.0 {
        return Err(Error::param("field", "the field is zero"));
    }
    Ok((ext_x, ext_l, j.x, j.w, u_l, lhs / rhs))
}

/// Empirical constant in `||E u||_X(R^d) <= C (||u||_X(D) + M ||u||_W(D))`.
///
/// The left side integrates over all of `R^d`: base points are drawn in the
/// support of `E u` and far pairs fall into the exterior shell, so nothing
/// is truncated.
pub fn extension_bound_check(
    u: FieldRef,
    dom: &EpigraphDomain,
    constants: ReflectionConstants,
    params: &SeminormParams,
    settings: PlanSettings,
    seed: u64,
) -> Result<ExtensionReport> {
    params.validate()?;
    let mm = dom.lipschitz();
    if mm >= M0 {
        return Err(Error::HypothesisUnmet(format!("Lipschitz constant {mm} is not below {M0}")));
    }
    ensure_inside(&*u, dom)?;
    let (ext_x_p, ext_lp_p, u_x_p, u_w_p, u_lp_p, ratio) = ratio_once(&u, dom, constants, params, settings, seed)?;
    let doubled = PlanSettings { budget: 2 * settings.budget, ..settings };
    let ratio_doubled = ratio_once(&u, dom, constants, params, doubled, seed.wrapping_add(1))?.5;
    Ok(ExtensionReport {
        lipschitz: mm,
        constants,
        params: *params,
        ext_x_p,
        ext_lp_p,
        u_x_p,
        u_w_p,
        u_lp_p,
        ratio,
        ratio_doubled,
        relative_change: (ratio_doubled - ratio).abs() / ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLimitRow {
    pub offset: f64,
    /// Largest `|Eu(x', f + t) - Eu(x', f - t)|` over the base points.
    pub max_jump: f64,
    pub jump_over_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLimitReport {
    pub rows: Vec<BoundaryLimitRow>,
    /// Least-squares slope of `log max_jump` against `log offset`; close to 1
    /// when the one-sided limits agree.
    pub rate: f64,
}

/// Compares the extended field just above and just below the graph at each
/// base point `x'` and offset `t`.
pub fn boundary_limit_check(ext: &ExtendedField, base_points: &[Vec<f64>], offsets: &[f64]) -> Result<BoundaryLimitReport> {
    let d = ext.dom.d;
    if base_points.is_empty() || base_points.iter().any(|b| b.len() != d - 1) {
        return Err(Error::param("base_points", "need at least one point with d - 1 coordinates"));
    }
    if offsets.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::param("offsets", "must be positive"));
    }
    let mut rows = Vec::with_capacity(offsets.len());
    let (mut up, mut down) = (vec![0.0; d], vec![0.0; d]);
    for &t in offsets {
        let mut max_jump = 0.0f64;
        for b in base_points {
            let f = ext.dom.profile.value(b);
            let mut x = b.clone();
            x.push(f + t);
            ext.eval_into(&x, &mut up);
            x[d - 1] = f - t;
            ext.eval_into(&x, &mut down);
            max_jump = max_jump.max(crate::numerics::dist(&up, &down));
        }
        rows.push(BoundaryLimitRow { offset: t, max_jump, jump_over_offset: max_jump / t });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.offset.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.max_jump.max(f64::MIN_POSITIVE).ln()).collect();
    let rate = if rows.len() >= 2 { crate::numerics::ls_slope(&xs, &ys) } else { f64::NAN };
    Ok(BoundaryLimitReport { rows, rate })
}

/// A smooth test field supported inside `dom`: two atoms sitting at
/// elevation 1.5 above the graph with radius 0.5.
pub fn standard_extension_field(dom: &EpigraphDomain) -> Result<FieldRef> {
    use crate::fields::{BumpAtom, BumpField};
    let d = dom.d;
    let mut atoms = Vec::new();
    for (shift, amp) in [(-0.3, 1.0), (0.35, -0.6)] {
        let mut c = vec![0.0; d];
        c[0] = shift;
        c[d - 1] = dom.height(&c) + 1.5;
        let mut amplitude = vec![0.0; d];
        amplitude[0] = amp;
        amplitude[d - 1] = 0.5 * amp;
        let mut skew = vec![0.0; d * d];
        skew[d - 1] = 0.7;
        skew[(d - 1) * d] = 0.4;
        atoms.push(BumpAtom { center: c, radius: 0.5, amplitude, skew: Some(skew) });
    }
    Ok(Arc::new(BumpField::new(atoms)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{catalog_field, Combination};
    use crate::geometry::Profile;

    #[test]
    fn one_sided_limits_agree_at_first_order() {
        let dom = EpigraphDomain::new(2, Profile::with_lipschitz("sine", 0.4).unwrap()).unwrap();
        let u = catalog_field("random", 2, 2).unwrap();
        let ext = extend(u, &dom, ReflectionConstants::default()).unwrap();
        let base: Vec<Vec<f64>> = (0..9).map(|i| vec![-0.4 + 0.1 * i as f64]).collect();
        let offsets: Vec<f64> = (2..=6).map(|k| 10f64.powi(-k)).collect();
        let rep = boundary_limit_check(&ext, &base, &offsets).unwrap();
        assert!((rep.rate - 1.0).abs() < 0.05, "{rep:?}");
        assert!(rep.rows.iter().all(|r| r.jump_over_offset < 50.0));
    }

    #[test]
    fn constants_for_small_integers() {
        let c = ReflectionConstants::solve(1.0, 2.0).unwrap();
        assert_eq!((c.k, c.l, c.m, c.n), (3.0, -2.0, -3.0, 4.0));
        let c = ReflectionConstants::solve(2.0, 1.0).unwrap();
        assert_eq!((c.k, c.l, c.m, c.n), (-2.0, 3.0, 4.0, -3.0));
        assert!(matches!(ReflectionConstants::solve(1.0, 1.0), Err(Error::Degenerate(_))));
        assert!(ReflectionConstants::solve(0.0, 1.0).is_err());
        assert!(ReflectionConstants::solve(1.0, -2.0).is_err());
    }

    #[test]
    fn flat_reflection_of_a_component() {
        let dom = EpigraphDomain::half_space(2);
        let u = catalog_field("random", 2, 1).unwrap();
        let x = [0.2, -0.3];
        assert_eq!(reflect_component(&*u, &dom, 1.0, 0, &x).unwrap(), u.eval(&[0.2, 0.3])[0]);
        assert!(reflect_component(&*u, &dom, 1.0, 0, &[0.2, 0.3]).is_err());
    }

    #[test]
    fn extension_is_the_identity_on_d_and_linear() {
        let dom = EpigraphDomain::new(2, Profile::Sine { m: 0.3, omega: 2.0 }).unwrap();
        let u1 = catalog_field("random", 2, 4).unwrap();
        let u2 = catalog_field("skew-bump", 2, 0).unwrap();
        let c = ReflectionConstants::default();
        let e1 = extend(u1.clone(), &dom, c).unwrap();
        let e2 = extend(u2.clone(), &dom, c).unwrap();
        let combo: FieldRef = Arc::new(Combination::new(vec![(2.5, u1.clone()), (1.0, u2)]).unwrap());
        let ec = extend(combo, &dom, c).unwrap();
        for x in [[0.1, 0.4], [0.3, -0.2], [-0.2, -0.05], [0.0, 0.3]] {
            if dom.contains(&x) {
                assert_eq!(e1.eval(&x), u1.eval(&x));
            }
            let (a, b, l) = (e1.eval(&x), e2.eval(&x), ec.eval(&x));
            for i in 0..2 {
                assert!((l[i] - (2.5 * a[i] + b[i])).abs() < 1e-12);
            }
        }
    }
}
