//! Empirical Korn-type ratios: `|u|_W^p / ([u]_X^p + ||u||_p^p)` on balls,
//! `|u|_W^p / [u]_X^p` on epigraphs, the flattening estimate, the ball
//! rescaling identities and the boundary-distance bound for `J(x)`.

use std::sync::{Arc, Mutex};

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extension::M0;
use crate::fields::{self, BumpAtom, BumpField, FieldRef, VectorField};
use crate::geometry::{BallDomain, DomainSpec, EpigraphDomain, HalfSpace, Region};
use crate::numerics::{self, stream_rng};
use crate::quadrature::{self, Estimate, PlanSettings, Shell};
use crate::seminorms::{self, SeminormParams};

/// One field's contribution to a Korn report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KornRecord {
    pub field_id: String,
    pub x_p: Estimate,
    pub w_p: Estimate,
    pub lp_p: Estimate,
    pub ratio: f64,
}

/// Best-so-far bookkeeping for the ratio search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchMeta {
    pub family: SearchFamily,
    pub restarts: usize,
    pub iterations_per_restart: u64,
    pub evaluations: usize,
    pub seed: u64,
    /// Best ratio among the random starting points.
    pub initial_best: f64,
    pub improvement_factor: f64,
    /// Best ratio after each objective evaluation (nondecreasing).
    pub trace: Vec<f64>,
    /// Termination status of each restart.
    pub status: Vec<String>,
    pub best_atoms: BumpField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KornReport {
    pub domain: DomainSpec,
    pub params: SeminormParams,
    pub records: Vec<KornRecord>,
    pub max_ratio: f64,
    pub search: Option<SearchMeta>,
}

impl KornReport {
    fn from_records(domain: DomainSpec, params: SeminormParams, records: Vec<KornRecord>, search: Option<SearchMeta>) -> Self {
        let max_ratio = records.iter().map(|r| r.ratio).fold(0.0, f64::max);
        Self { domain, params, records, max_ratio, search }
    }
}

/// `|u|_W^p / ([u]_X^p + ||u||_p^p)` on a bounded domain, with the two
/// seminorms sharing one pair stream.
pub fn korn_ratio(
    u: &dyn VectorField,
    omega: &BallDomain,
    params: &SeminormParams,
    settings: PlanSettings,
    seed: u64,
) -> Result<KornRecord> {
    let plan = seminorms::seminorm_plan(u, omega, params, settings)?;
    let j = seminorms::joint_seminorms_p(u, omega, params, &plan, seed)?;
    let lp = seminorms::lp_norm_p(u, omega, params.p, settings.budget.max(2), seed)?;
    let den = j.x.value + lp.value;
    if !(den > 0.0) {
        return Err(Error::param("field", "the Korn ratio of the zero field is undefined"));
    }
    Ok(KornRecord { field_id: String::new(), ratio: j.w.value / den, x_p: j.x, w_p: j.w, lp_p: lp })
}

/// Korn ratios of every catalog field on `omega`.
pub fn catalog_korn_report(omega: &BallDomain, params: &SeminormParams, settings: PlanSettings, seed: u64) -> Result<KornReport> {
    let d = omega.center.len();
    let mut records = Vec::new();
    for name in fields::CATALOG {
        if name == "radial2d" && d != 2 {
            continue;
        }
        // catalog fields live in B_0.8(0); push them forward onto omega
        let u = fields::unscale(fields::catalog_field(name, d, seed)?, &omega.center, omega.radius, params.s)?;
        let mut rec = korn_ratio(&u, omega, params, settings, seed)?;
        rec.field_id = name.to_string();
        records.push(rec);
    }
    Ok(KornReport::from_records(DomainSpec::Ball { center: omega.center.clone(), radius: omega.radius }, *params, records, None))
}

/// Which matrices the atoms of the search family may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchFamily {
    /// Skew-symmetric matrices: fields close to infinitesimal rigid motions.
    Skew,
    /// Symmetric matrices: gradient-like fields.
    Symmetric,
    /// Unconstrained matrices.
    General,
}

impl SearchFamily {
    fn matrix_params(&self, d: usize) -> usize {
        match self {
            SearchFamily::Skew => d * (d - 1) / 2,
            SearchFamily::Symmetric => d * (d + 1) / 2,
            SearchFamily::General => d * d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub family: SearchFamily,
    pub atoms: usize,
    pub restarts: usize,
    pub iterations: u64,
    /// Pair budget of each objective evaluation.
    pub eval_budget: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { family: SearchFamily::General, atoms: 1, restarts: 5, iterations: 200, eval_budget: 20_000, seed: 0 }
    }
}

struct Decoder {
    omega: BallDomain,
    family: SearchFamily,
    atoms: usize,
}

impl Decoder {
    fn d(&self) -> usize {
        self.omega.center.len()
    }

    fn per_atom(&self) -> usize {
        let d = self.d();
        2 * d + 1 + self.family.matrix_params(d)
    }

    fn dim(&self) -> usize {
        self.atoms * self.per_atom()
    }

    /// Maps unconstrained parameters to atoms whose supports stay inside `omega`.
    fn decode(&self, z: &[f64]) -> Result<BumpField> {
        let d = self.d();
        let big_r = self.omega.radius;
        let atoms = z
            .chunks(self.per_atom())
            .map(|c| {
                let rho = big_r * (0.15 + 0.3 / (1.0 + (-c[d]).exp()));
                let reach = 0.95 * (big_r - rho) / (d as f64).sqrt();
                let center = (0..d).map(|i| self.omega.center[i] + reach * c[i].tanh()).collect();
                let amplitude = c[d + 1..2 * d + 1].to_vec();
                let raw = &c[2 * d + 1..];
                let mut w = vec![0.0; d * d];
                let mut k = 0;
                match self.family {
                    SearchFamily::General => w.copy_from_slice(raw),
                    SearchFamily::Skew => {
                        for i in 0..d {
                            for j in i + 1..d {
                                w[i * d + j] = raw[k];
                                w[j * d + i] = -raw[k];
                                k += 1;
                            }
                        }
                    }
                    SearchFamily::Symmetric => {
                        for i in 0..d {
                            for j in i..d {
                                w[i * d + j] = raw[k];
                                w[j * d + i] = raw[k];
                                k += 1;
                            }
                        }
                    }
                }
                // matrices act on (x - c) / rho so that all parameters are O(1)
                w.iter_mut().for_each(|v| *v /= rho);
                BumpAtom { center, radius: rho, amplitude, skew: Some(w) }
            })
            .collect();
        BumpField::new(atoms)
    }
}

struct Objective<'a> {
    decoder: &'a Decoder,
    params: SeminormParams,
    settings: PlanSettings,
    seed: u64,
    trace: &'a Mutex<Vec<f64>>,
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, z: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let ratio = self
            .decoder
            .decode(z)
            .and_then(|u| korn_ratio(&u, &self.decoder.omega, &self.params, self.settings, self.seed))
            .map(|r| r.ratio)
            .unwrap_or(0.0);
        let mut t = self.trace.lock().expect("trace lock");
        let best = t.last().copied().unwrap_or(0.0).max(ratio);
        t.push(best);
        Ok(-ratio)
    }
}

/// Nelder-Mead maximization of the Korn ratio over bump-atom parameters.
/// Every evaluation uses the same seed, so the objective is a deterministic
/// function of the parameters.
pub fn max_ratio_search(omega: &BallDomain, params: &SeminormParams, opts: &SearchOptions) -> Result<KornReport> {
    params.validate()?;
    if opts.atoms == 0 || opts.restarts == 0 {
        return Err(Error::param("search", "need at least one atom and one restart"));
    }
    let decoder = Decoder { omega: omega.clone(), family: opts.family, atoms: opts.atoms };
    let n = decoder.dim();
    if n > 40 {
        return Err(Error::param("search", format!("family dimension {n} exceeds 40")));
    }
    let settings = PlanSettings { budget: opts.eval_budget, ..Default::default() };
    let trace = Mutex::new(Vec::new());
    let mut rng = stream_rng(opts.seed, 0x51);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut initial_best: f64 = 0.0;
    let mut status = Vec::new();
    for _ in 0..opts.restarts {
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = Objective { decoder: &decoder, params: *params, settings, seed: opts.seed, trace: &trace };
        initial_best = initial_best.max(-objective.cost(&x0).unwrap_or(0.0));
        let mut simplex = vec![x0.clone()];
        for i in 0..n {
            let mut v = x0.clone();
            v[i] += 0.5;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex).with_sd_tolerance(1e-7).map_err(|e| Error::Solver(e.to_string()))?;
        let res = Executor::new(objective, solver)
            .configure(|s| s.max_iters(opts.iterations))
            .timer(false)
            .run()
            .map_err(|e| Error::Solver(e.to_string()))?;
        let state = res.state();
        status.push(format!("{}", state.get_termination_status()));
        if let Some(p) = state.get_best_param() {
            let r = -state.get_best_cost();
            if best.as_ref().is_none_or(|b| r > b.0) {
                best = Some((r, p.clone()));
            }
        }
    }
    let (_, z) = best.ok_or_else(|| Error::Solver("no restart produced a parameter".into()))?;
    let atoms = decoder.decode(&z)?;
    let mut rec = korn_ratio(&atoms, omega, params, settings, opts.seed)?;
    rec.field_id = format!("search-best-{:?}", opts.family).to_lowercase();
    let trace = trace.into_inner().expect("trace lock");
    let meta = SearchMeta {
        family: opts.family,
        restarts: opts.restarts,
        iterations_per_restart: opts.iterations,
        evaluations: trace.len(),
        seed: opts.seed,
        initial_best,
        improvement_factor: if initial_best > 0.0 { rec.ratio / initial_best } else { f64::INFINITY },
        trace,
        status,
        best_atoms: atoms,
    };
    Ok(KornReport::from_records(DomainSpec::Ball { center: omega.center.clone(), radius: omega.radius }, *params, vec![rec], Some(meta)))
}

fn check_epigraph_hypotheses(dom: &EpigraphDomain, params: &SeminormParams) -> Result<()> {
    params.validate()?;
    params.require_sp_not_one()?;
    if dom.lipschitz() >= M0 {
        return Err(Error::HypothesisUnmet(format!("Lipschitz constant {} is not below {M0}", dom.lipschitz())));
    }
    Ok(())
}

fn check_support_inside(u: &dyn VectorField, dom: &EpigraphDomain) -> Result<()> {
    let s = u.support().ok_or_else(|| Error::param("field", "needs a bounded support"))?;
    let d = dom.d;
    let clearance = s.center[d - 1] - s.radius - dom.height(&s.center) - dom.lipschitz() * s.radius;
    if clearance <= 0.0 {
        return Err(Error::OutsideDomain("field support is not certified to lie inside the epigraph".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpigraphKornRecord {
    pub lipschitz: f64,
    pub x_p: Estimate,
    pub w_p: Estimate,
    /// `|u|_W^p / [u]_X^p`.
    pub ratio: f64,
}

/// `|u|_W^p / [u]_X^p` over an epigraph, without a lower-order term.
pub fn epigraph_korn_check(
    u: &dyn VectorField,
    dom: &EpigraphDomain,
    params: &SeminormParams,
    settings: PlanSettings,
    seed: u64,
) -> Result<EpigraphKornRecord> {
    check_epigraph_hypotheses(dom, params)?;
    check_support_inside(u, dom)?;
    let plan = seminorms::seminorm_plan(u, dom, params, settings)?;
    let j = seminorms::joint_seminorms_p(u, dom, params, &plan, seed)?;
    if !(j.x.value > 0.0) {
        return Err(Error::param("field", "X-seminorm vanished; ratio undefined"));
    }
    Ok(EpigraphKornRecord { lipschitz: dom.lipschitz(), ratio: j.w.value / j.x.value, x_p: j.x, w_p: j.w })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StraighteningReport {
    pub lipschitz: f64,
    /// `[v]_X^p` of the flattened field over the half-space.
    pub v_x_p: Estimate,
    pub u_x_p: Estimate,
    pub u_w_p: Estimate,
    /// `[v]_X^p / ([u]_X^p + M^p |u|_W^p)`.
    pub ratio: f64,
}

/// Compares the X-seminorm of the flattened field with the right-hand side
/// `[u]_X^p + M^p |u|_W^p` on the epigraph.
pub fn straightening_bound_check(
    u: FieldRef,
    dom: &EpigraphDomain,
    params: &SeminormParams,
    settings: PlanSettings,
    seed: u64,
) -> Result<StraighteningReport> {
    params.validate()?;
    check_support_inside(&*u, dom)?;
    let v = fields::straighten_field(u.clone(), dom)?;
    let half = HalfSpace { d: dom.d };
    let plan_v = seminorms::seminorm_plan(&v, &half, params, settings)?;
    let v_x_p = seminorms::x_seminorm_p(&v, &half, params, &plan_v, seed)?;
    let plan_u = seminorms::seminorm_plan(&*u, dom, params, settings)?;
    let j = seminorms::joint_seminorms_p(&*u, dom, params, &plan_u, seed)?;
    let mm = dom.lipschitz();
    let den = j.x.value + mm.powf(params.p) * j.w.value;
    if !(den > 0.0) {
        return Err(Error::param("field", "right-hand side vanished"));
    }
    Ok(StraighteningReport { lipschitz: mm, ratio: v_x_p.value / den, v_x_p, u_x_p: j.x, u_w_p: j.w })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub r: f64,
    pub u_x_p: Estimate,
    /// `r^d [v]_X^p(B_1)`.
    pub v_x_p_scaled: Estimate,
    pub u_w_p: Estimate,
    pub v_w_p_scaled: Estimate,
    /// `|difference| / combined standard error` for the X identity.
    pub x_sigmas: f64,
    pub w_sigmas: f64,
    /// `|u|_W^p / ([u]_X^p + r^{-sp} ||u||_p^p)` on `B_r`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub params: SeminormParams,
    pub center: Vec<f64>,
    pub rows: Vec<ScalingRow>,
    /// `max ratio / min ratio` across the radii.
    pub ratio_spread: f64,
}

fn sigmas(a: &Estimate, b: &Estimate) -> f64 {
    let se = a.combined_error(b);
    let diff = (a.value - b.value).abs();
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Pushes `v` (supported in the unit ball) forward to `u` on `B_r(x0)` for
/// each radius and compares `[u]^p` with `r^d [v]^p` for both seminorms,
/// using independent seeds on the two sides.
pub fn ball_scaling_check(
    v: FieldRef,
    x0: &[f64],
    radii: &[f64],
    params: &SeminormParams,
    settings: PlanSettings,
    seed: u64,
) -> Result<ScalingReport> {
    params.validate()?;
    let d = v.dim();
    let unit = BallDomain::new(vec![0.0; d], 1.0)?;
    let plan_v = seminorms::seminorm_plan(&*v, &unit, params, settings)?;
    let jv = seminorms::joint_seminorms_p(&*v, &unit, params, &plan_v, seed)?;
    let mut rows = Vec::new();
    for (k, &r) in radii.iter().enumerate() {
        let ball = BallDomain::new(x0.to_vec(), r)?;
        let u = fields::unscale(v.clone(), x0, r, params.s)?;
        let plan_u = seminorms::seminorm_plan(&u, &ball, params, settings)?;
        let seed_u = seed.wrapping_add(1 + k as u64);
        let ju = seminorms::joint_seminorms_p(&u, &ball, params, &plan_u, seed_u)?;
        let lp = seminorms::lp_norm_p(&u, &ball, params.p, settings.budget, seed_u)?;
        let rd = r.powi(d as i32);
        let v_x = jv.x.scaled(rd);
        let v_w = jv.w.scaled(rd);
        let den = ju.x.value + r.powf(-params.sp()) * lp.value;
        rows.push(ScalingRow {
            r,
            x_sigmas: sigmas(&ju.x, &v_x),
            w_sigmas: sigmas(&ju.w, &v_w),
            ratio: ju.w.value / den,
            u_x_p: ju.x,
            v_x_p_scaled: v_x,
            u_w_p: ju.w,
            v_w_p_scaled: v_w,
        });
    }
    let hi = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let lo = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    Ok(ScalingReport { params: *params, center: x0.to_vec(), rows, ratio_spread: hi / lo })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JBoundRow {
    /// Distance `x_d - f(x')` to the graph.
    pub distance: f64,
    pub j: Estimate,
    /// `J(x) distance^{sp}`.
    pub product: f64,
    /// Relative standard error below 5%.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JBoundReport {
    pub lipschitz: f64,
    pub params: SeminormParams,
    pub base_point: Vec<f64>,
    pub rows: Vec<JBoundRow>,
    /// Least-squares slope of `log J` against `log distance`.
    pub slope: f64,
    /// `|slope + sp|`.
    pub slope_error: f64,
    pub sup_product: f64,
}

/// `J(x) = int_D |y_d - f(x')|^p / |y - c|^{d + (s+1)p} dy` with
/// `c = (x', f(x') - a)` and `a = x_d - f(x')`, evaluated at points above
/// `base` at the given distances from the graph.
pub fn j_bound_check(
    dom: &EpigraphDomain,
    params: &SeminormParams,
    base: &[f64],
    distances: &[f64],
    budget: usize,
    seed: u64,
) -> Result<JBoundReport> {
    params.validate()?;
    let mm = dom.lipschitz();
    if mm >= M0 {
        return Err(Error::HypothesisUnmet(format!("Lipschitz constant {mm} is not below {M0}")));
    }
    let d = dom.d;
    if base.len() != d - 1 {
        return Err(Error::param("base", "must have d - 1 coordinates"));
    }
    if distances.len() < 2 || distances.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::param("distances", "need at least two positive distances"));
    }
    let (s, p) = (params.s, params.p);
    let expo = d as f64 + (s + 1.0) * p;
    let f0 = dom.profile.value(base);
    let mut rows = Vec::new();
    for (k, &a) in distances.iter().enumerate() {
        let mut c = base.to_vec();
        c.push(f0 - a);
        // No point of D lies closer to c than a / sqrt(1 + M^2).
        let r0 = 0.99 * a / (1.0 + mm * mm).sqrt();
        let mut shells = quadrature::geometric_shells(r0, r0 * 64.0);
        shells.insert(0, Shell::Exterior { inner: r0 * 64.0, decay: params.sp() });
        let j = quadrature::estimate_centered_integral(
            |y| {
                if !dom.contains(y) {
                    return 0.0;
                }
                (y[d - 1] - f0).abs().powf(p) * numerics::dist(y, &c).powf(-expo)
            },
            &c,
            &shells,
            budget,
            seed.wrapping_add(k as u64),
        )?;
        rows.push(JBoundRow { distance: a, product: j.value * a.powf(params.sp()), converged: j.std_error <= 0.05 * j.value.abs(), j });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.distance.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.j.value.max(f64::MIN_POSITIVE).ln()).collect();
    let slope = numerics::ls_slope(&xs, &ys);
    let sup_product = rows.iter().map(|r| r.product).fold(0.0, f64::max);
    Ok(JBoundReport {
        lipschitz: mm,
        params: *params,
        base_point: base.to_vec(),
        rows,
        slope,
        slope_error: (slope + params.sp()).abs(),
        sup_product,
    })
}

/// A catalog field lifted 1.3 above the graph at the origin, used by the
/// epigraph checks.
pub fn epigraph_test_field(dom: &EpigraphDomain, name: &str, seed: u64) -> Result<FieldRef> {
    let base = fields::catalog_field(name, dom.d, seed)?;
    let mut shift = vec![0.0; dom.d];
    // catalog supports sit in B_0.8(0); lifting by 1.3 above f(0) leaves
    // clearance 0.5 - 0.8 M, positive for M < 0.6.
    shift[dom.d - 1] = dom.height(&shift) + 1.3;
    let moved = fields::move_field(base, crate::geometry::RigidMotion::translation(shift))?;
    Ok(Arc::new(moved))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Profile;

    #[test]
    fn zero_field_ratio_is_rejected() {
        let b = BallDomain::unit(2);
        let params = SeminormParams::new(0.4, 2.0).unwrap();
        let z = fields::ZeroField { d: 2 };
        assert!(korn_ratio(&z, &b, &params, PlanSettings { budget: 2000, ..Default::default() }, 1).is_err());
    }

    #[test]
    fn decoded_atoms_stay_inside_the_ball() {
        let omega = BallDomain::new(vec![0.5, -0.2], 1.5).unwrap();
        for family in [SearchFamily::Skew, SearchFamily::Symmetric, SearchFamily::General] {
            let dec = Decoder { omega: omega.clone(), family, atoms: 2 };
            let mut rng = stream_rng(3, 3);
            for _ in 0..100 {
                let z: Vec<f64> = (0..dec.dim()).map(|_| rng.random_range(-20.0..20.0)).collect();
                let f = dec.decode(&z).unwrap();
                for a in f.atoms() {
                    assert!(numerics::dist(&a.center, &omega.center) + a.radius < omega.radius);
                }
            }
        }
    }

    #[test]
    fn epigraph_hypotheses_are_gated() {
        let params = SeminormParams::new(0.4, 2.0).unwrap();
        let steep = EpigraphDomain::new(2, Profile::Sine { m: 0.7, omega: 1.0 }).unwrap();
        let u = epigraph_test_field(&EpigraphDomain::half_space(2), "random", 1).unwrap();
        let s = PlanSettings { budget: 2000, ..Default::default() };
        assert!(matches!(epigraph_korn_check(&*u, &steep, &params, s, 1), Err(Error::HypothesisUnmet(_))));
        let half = SeminormParams::new(0.5, 2.0).unwrap();
        assert!(matches!(epigraph_korn_check(&*u, &EpigraphDomain::half_space(2), &half, s, 1), Err(Error::HypothesisUnmet(_))));
    }

    #[test]
    fn flat_j_integral_scales_exactly() {
        let dom = EpigraphDomain::half_space(2);
        let params = SeminormParams::new(0.5, 2.0).unwrap();
        let rep = j_bound_check(&dom, &params, &[0.0], &[0.1, 0.01, 0.001], 20_000, 3).unwrap();
        assert!(rep.slope_error < 0.1, "{rep:?}");
        assert!(rep.rows.iter().all(|r| r.converged));
    }
}
