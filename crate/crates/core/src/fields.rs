//! Vector fields `R^d -> R^d` as evaluators, the projected difference, and
//! the field transforms used to move fields between domains (flattening,
//! the anisotropic stretch `F_eta`, cutoffs, zero extension, rescaling and
//! rigid motions).

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BallDomain, EpigraphDomain, Region, RigidMotion};
use crate::numerics::{self, stream_rng};

/// A vector field on `R^d`.
///
/// Implementations must be pure: the same `x` always yields the same value,
/// and evaluation from several threads at once is allowed.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Writes `u(x)` into `out` (length `dim()`).
    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    /// A ball outside of which the field vanishes identically, if known.
    fn support(&self) -> Option<BallDomain>;

    /// Analytic Jacobian `J[i * d + j] = d u_i / d x_j`, when available.
    fn jacobian_into(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }
}

pub type FieldRef = Arc<dyn VectorField>;

/// `(u(x) - u(y)) . (x - y) / |x - y|` for already evaluated `u(x)`, `u(y)`.
#[inline]
pub fn projected_difference_values(ux: &[f64], uy: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut r2 = 0.0;
    for i in 0..x.len() {
        let dx = x[i] - y[i];
        num += (ux[i] - uy[i]) * dx;
        r2 += dx * dx;
    }
    num / r2.sqrt()
}

/// The projected difference `D(u)(x, y)`; the diagonal is excluded.
pub fn projected_difference(u: &dyn VectorField, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != u.dim() || y.len() != u.dim() {
        return Err(Error::param("x", "dimension mismatch"));
    }
    if x == y {
        return Err(Error::param("y", "projected difference is undefined on the diagonal x = y"));
    }
    Ok(projected_difference_values(&u.eval(x), &u.eval(y), x, y))
}

/// Central-difference Jacobian with step `1e-5 (1 + |x|)`.
pub fn finite_difference_jacobian(u: &dyn VectorField, x: &[f64]) -> Vec<f64> {
    let d = u.dim();
    let h = 1e-5 * (1.0 + numerics::norm(x));
    let mut jac = vec![0.0; d * d];
    let mut xp = x.to_vec();
    let mut up = vec![0.0; d];
    let mut um = vec![0.0; d];
    for j in 0..d {
        xp[j] = x[j] + h;
        u.eval_into(&xp, &mut up);
        xp[j] = x[j] - h;
        u.eval_into(&xp, &mut um);
        xp[j] = x[j];
        for i in 0..d {
            jac[i * d + j] = (up[i] - um[i]) / (2.0 * h);
        }
    }
    jac
}

fn enclosing_ball_of_balls(balls: &[BallDomain]) -> Option<BallDomain> {
    let first = balls.first()?;
    let d = first.center.len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for b in balls {
        for i in 0..d {
            lo[i] = lo[i].min(b.center[i] - b.radius);
            hi[i] = hi[i].max(b.center[i] + b.radius);
        }
    }
    // A single ball is its own best enclosure.
    if balls.len() == 1 {
        return Some(first.clone());
    }
    let c: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let r = balls.iter().map(|b| numerics::dist(&b.center, &c) + b.radius).fold(0.0, f64::max);
    Some(BallDomain { center: c, radius: r })
}

#[derive(Debug, Clone, Copy)]
pub struct ZeroField {
    pub d: usize,
}

impl VectorField for ZeroField {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval_into(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn support(&self) -> Option<BallDomain> {
        Some(BallDomain { center: vec![0.0; self.d], radius: 1e-12 })
    }
    fn jacobian_into(&self, _x: &[f64], out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|o| *o = 0.0);
        true
    }
}

/// `u(x) = W x + b`, not compactly supported.
#[derive(Debug, Clone)]
pub struct AffineField {
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineField {
    pub fn identity(d: usize) -> Self {
        let mut m = vec![0.0; d * d];
        (0..d).for_each(|i| m[i * d + i] = 1.0);
        Self { matrix: m, offset: vec![0.0; d] }
    }

    /// A skew-symmetric linear field (infinitesimal rotation).
    pub fn skew(d: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x21);
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in i + 1..d {
                let a: f64 = StandardNormal.sample(&mut rng);
                m[i * d + j] = a;
                m[j * d + i] = -a;
            }
        }
        Self { matrix: m, offset: vec![0.0; d] }
    }
}

impl VectorField for AffineField {
    fn dim(&self) -> usize {
        self.offset.len()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            out[i] = self.offset[i] + numerics::dot(&self.matrix[i * d..(i + 1) * d], x);
        }
    }
    fn support(&self) -> Option<BallDomain> {
        None
    }
    fn jacobian_into(&self, _x: &[f64], out: &mut [f64]) -> bool {
        out.copy_from_slice(&self.matrix);
        true
    }
}

/// One mollifier atom: `b(x) (a + S (x - c))` with
/// `b(x) = exp(-1 / (1 - |x - c|^2 / rho^2))` inside the ball and 0 outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpAtom {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: Vec<f64>,
    /// Row-major `d x d` matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skew: Option<Vec<f64>>,
}

impl BumpAtom {
    fn validate(&self) -> Result<()> {
        let d = self.center.len();
        if !(self.radius > 0.0) {
            return Err(Error::param("atom.radius", "must be positive"));
        }
        if self.amplitude.len() != d {
            return Err(Error::param("atom.amplitude", "length must match the center"));
        }
        if let Some(s) = &self.skew {
            if s.len() != d * d {
                return Err(Error::param("atom.skew", "must have d * d entries"));
            }
        }
        Ok(())
    }

    #[inline]
    fn accumulate(&self, x: &[f64], out: &mut [f64]) {
        let d = self.center.len();
        let mut t = 0.0;
        for i in 0..d {
            let z = x[i] - self.center[i];
            t += z * z;
        }
        t /= self.radius * self.radius;
        if t >= 1.0 {
            return;
        }
        let b = (-1.0 / (1.0 - t)).exp();
        for i in 0..d {
            let mut v = self.amplitude[i];
            if let Some(s) = &self.skew {
                for j in 0..d {
                    v += s[i * d + j] * (x[j] - self.center[j]);
                }
            }
            out[i] += b * v;
        }
    }

    fn accumulate_jacobian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.center.len();
        let r2 = self.radius * self.radius;
        let z: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let t = numerics::dot(&z, &z) / r2;
        if t >= 1.0 {
            return;
        }
        let one_t = 1.0 - t;
        let b = (-1.0 / one_t).exp();
        // d b / d x_j = -b / (1 - t)^2 * 2 z_j / rho^2
        let db: Vec<f64> = z.iter().map(|zj| -b / (one_t * one_t) * 2.0 * zj / r2).collect();
        for i in 0..d {
            let mut v = self.amplitude[i];
            if let Some(s) = &self.skew {
                v += numerics::dot(&s[i * d..(i + 1) * d], &z);
            }
            for j in 0..d {
                let mut e = db[j] * v;
                if let Some(s) = &self.skew {
                    e += b * s[i * d + j];
                }
                out[i * d + j] += e;
            }
        }
    }
}

/// Superposition of mollifier atoms; smooth with compact support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BumpAtom>", into = "Vec<BumpAtom>")]
pub struct BumpField {
    atoms: Vec<BumpAtom>,
    d: usize,
}

impl BumpField {
    pub fn new(atoms: Vec<BumpAtom>) -> Result<Self> {
        let d = atoms.first().map(|a| a.center.len()).ok_or_else(|| Error::param("atoms", "need at least one atom"))?;
        for a in &atoms {
            a.validate()?;
            if a.center.len() != d {
                return Err(Error::param("atoms", "all atoms must share one dimension"));
            }
        }
        Ok(Self { atoms, d })
    }

    pub fn atoms(&self) -> &[BumpAtom] {
        &self.atoms
    }
}

impl TryFrom<Vec<BumpAtom>> for BumpField {
    type Error = Error;
    fn try_from(atoms: Vec<BumpAtom>) -> Result<Self> {
        BumpField::new(atoms)
    }
}

impl From<BumpField> for Vec<BumpAtom> {
    fn from(f: BumpField) -> Self {
        f.atoms
    }
}

impl VectorField for BumpField {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for a in &self.atoms {
            a.accumulate(x, out);
        }
    }
    fn support(&self) -> Option<BallDomain> {
        let balls: Vec<BallDomain> = self.atoms.iter().map(|a| BallDomain { center: a.center.clone(), radius: a.radius }).collect();
        enclosing_ball_of_balls(&balls)
    }
    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|o| *o = 0.0);
        for a in &self.atoms {
            a.accumulate_jacobian(x, out);
        }
        true
    }
}

/// Names addressable through [`catalog_field`].
pub const CATALOG: [&str; 4] = ["radial2d", "skew-bump", "translation", "random"];

/// Standard test fields, all supported in `B_{0.8}(0)`.
///
/// * `radial2d` / `radial`: `b(x) x`, a pure dilation bump
/// * `skew-bump`: `b(x) W x` with `W` an infinitesimal rotation
/// * `translation`: `b(x) a` with a fixed vector `a`
/// * `random`: three atoms with seeded centers, radii, amplitudes and matrices
/// * `zero`
pub fn catalog_field(name: &str, d: usize, seed: u64) -> Result<FieldRef> {
    if d < 1 {
        return Err(Error::param("d", "must be positive"));
    }
    if name == "radial2d" && d != 2 {
        return Err(Error::param("field", "`radial2d` is two-dimensional"));
    }
    let eye = |scale: f64| {
        let mut m = vec![0.0; d * d];
        (0..d).for_each(|i| m[i * d + i] = scale);
        m
    };
    let atom = |amplitude: Vec<f64>, skew: Option<Vec<f64>>| BumpAtom { center: vec![0.0; d], radius: 0.8, amplitude, skew };
    let field = match name {
        "zero" => return Ok(Arc::new(ZeroField { d })),
        "radial" | "radial2d" => BumpField::new(vec![atom(vec![0.0; d], Some(eye(1.0)))])?,
        "skew-bump" => {
            if d < 2 {
                return Err(Error::param("field", "`skew-bump` needs d >= 2"));
            }
            let mut w = vec![0.0; d * d];
            w[1] = -1.0;
            w[d] = 1.0;
            BumpField::new(vec![atom(vec![0.0; d], Some(w))])?
        }
        "translation" => {
            let a = (0..d).map(|i| 1.0 / (1.0 + i as f64)).collect();
            BumpField::new(vec![atom(a, None)])?
        }
        "random" => {
            let mut rng = stream_rng(seed, 0x22);
            let atoms = (0..3)
                .map(|_| {
                    let mut c = vec![0.0; d];
                    numerics::random_direction(&mut rng, &mut c);
                    let rc: f64 = 0.3 * rng.random::<f64>();
                    c.iter_mut().for_each(|v| *v *= rc);
                    BumpAtom {
                        center: c,
                        radius: rng.random_range(0.3..0.5),
                        amplitude: (0..d).map(|_| StandardNormal.sample(&mut rng)).collect(),
                        skew: Some((0..d * d).map(|_| StandardNormal.sample(&mut rng)).collect()),
                    }
                })
                .collect();
            BumpField::new(atoms)?
        }
        other => return Err(Error::param("field", format!("unknown catalog field `{other}`"))),
    };
    Ok(Arc::new(field))
}

/// Flattened field `v(x', x_d) = u(x', f(x') + x_d)` on the upper half-space.
#[derive(Debug, Clone)]
pub struct Straightened {
    inner: FieldRef,
    dom: EpigraphDomain,
}

pub fn straighten_field(u: FieldRef, dom: &EpigraphDomain) -> Result<Straightened> {
    if u.dim() != dom.d {
        return Err(Error::param("field", "dimension does not match the domain"));
    }
    Ok(Straightened { inner: u, dom: dom.clone() })
}

impl VectorField for Straightened {
    fn dim(&self) -> usize {
        self.dom.d
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let y = self.dom.unstraighten(x);
        self.inner.eval_into(&y, out);
    }
    fn support(&self) -> Option<BallDomain> {
        let s = self.inner.support()?;
        let d = self.dom.d;
        let m = self.dom.lipschitz();
        let mut center = s.center.clone();
        center[d - 1] -= self.dom.height(&s.center);
        let vertical = s.radius * (1.0 + m);
        Some(BallDomain { center, radius: (s.radius * s.radius + vertical * vertical).sqrt() })
    }
}

/// `F_eta(w)(x) = (w'(x) / eta, w_d(x', eta x_d))`.
#[derive(Debug, Clone)]
pub struct FEta {
    inner: FieldRef,
    eta: f64,
}

pub fn f_eta_map(w: FieldRef, eta: f64) -> Result<FEta> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::param("eta", "must be positive and finite"));
    }
    Ok(FEta { inner: w, eta })
}

impl VectorField for FEta {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        self.inner.eval_into(x, out);
        for o in out[..d - 1].iter_mut() {
            *o /= self.eta;
        }
        let mut xs = x.to_vec();
        xs[d - 1] *= self.eta;
        let mut tmp = vec![0.0; d];
        self.inner.eval_into(&xs, &mut tmp);
        out[d - 1] = tmp[d - 1];
    }
    fn support(&self) -> Option<BallDomain> {
        let s = self.inner.support()?;
        let d = self.dim();
        let lo: Vec<f64> = (0..d)
            .map(|i| {
                let a = s.center[i] - s.radius;
                if i == d - 1 {
                    a.min(a / self.eta)
                } else {
                    a
                }
            })
            .collect();
        let hi: Vec<f64> = (0..d)
            .map(|i| {
                let a = s.center[i] + s.radius;
                if i == d - 1 {
                    a.max(a / self.eta)
                } else {
                    a
                }
            })
            .collect();
        Some(BallDomain::enclosing_box(&lo, &hi))
    }
}

/// Smooth radial cutoff supported in the half ball `B_{r/2}(x0)` and equal
/// to one on `B_{t r/2}(x0)`, built from the quintic smoothstep.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffFunction {
    ball: BallDomain,
    plateau: f64,
}

impl CutoffFunction {
    pub fn new(ball: BallDomain, plateau: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&plateau) {
            return Err(Error::param("plateau", "must lie in [0, 1)"));
        }
        Ok(Self { ball, plateau })
    }

    pub fn with_default_plateau(ball: BallDomain) -> Self {
        Self { ball, plateau: 0.5 }
    }

    pub fn ball(&self) -> &BallDomain {
        &self.ball
    }

    fn radii(&self) -> (f64, f64) {
        let outer = 0.5 * self.ball.radius;
        (self.plateau * outer, outer)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let (inner, outer) = self.radii();
        let rho = numerics::dist(x, &self.ball.center);
        let t = ((outer - rho) / (outer - inner)).clamp(0.0, 1.0);
        t * t * t * (t * (6.0 * t - 15.0) + 10.0)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let (inner, outer) = self.radii();
        let rho = numerics::dist(x, &self.ball.center);
        out.iter_mut().for_each(|o| *o = 0.0);
        if rho >= outer || rho <= inner || rho == 0.0 {
            return;
        }
        let t = (outer - rho) / (outer - inner);
        let ds = 30.0 * t * t * (t - 1.0) * (t - 1.0);
        let dpsi_drho = -ds / (outer - inner);
        for i in 0..out.len() {
            out[i] = dpsi_drho * (x[i] - self.ball.center[i]) / rho;
        }
    }

    /// The constant `C(d)` in `|grad psi| <= C(d) / r`.
    pub fn gradient_constant(&self) -> f64 {
        // max of the smoothstep derivative is 15/8, over a transition band of width (1 - t) r / 2
        15.0 / 8.0 * 2.0 / (1.0 - self.plateau)
    }

    /// `sup psi + sup |grad psi|`.
    pub fn w1_inf_norm(&self) -> f64 {
        1.0 + self.gradient_constant() / self.ball.radius
    }
}

/// Pointwise product `psi u`.
#[derive(Debug, Clone)]
pub struct Truncated {
    inner: FieldRef,
    cutoff: CutoffFunction,
}

pub fn truncate(u: FieldRef, psi: &CutoffFunction) -> Truncated {
    Truncated { inner: u, cutoff: psi.clone() }
}

impl VectorField for Truncated {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let psi = self.cutoff.value(x);
        if psi == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        self.inner.eval_into(x, out);
        out.iter_mut().for_each(|o| *o *= psi);
    }
    fn support(&self) -> Option<BallDomain> {
        let half = self.cutoff.ball.half();
        match self.inner.support() {
            Some(s) if s.radius < half.radius => Some(s),
            _ => Some(half),
        }
    }
}

/// Extension by zero from `omega` to a larger domain.
#[derive(Clone)]
pub struct ZeroExtended {
    inner: FieldRef,
    omega: Arc<dyn Region + Send>,
}

impl fmt::Debug for ZeroExtended {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ZeroExtended").field("inner", &self.inner).finish_non_exhaustive()
    }
}

/// Extends `u` by zero outside `omega`, after checking by sampling that the
/// support of `u` keeps distance at least `beta` from `enclosing \ omega`.
pub fn zero_extend(
    u: FieldRef,
    omega: Arc<dyn Region + Send>,
    enclosing: &dyn Region,
    beta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ZeroExtended> {
    if !(beta > 0.0) {
        return Err(Error::param("beta", "must be positive"));
    }
    let supp = u.support().ok_or_else(|| Error::param("field", "zero extension needs a bounded support"))?;
    let d = u.dim();
    let reach = BallDomain { center: supp.center.clone(), radius: supp.radius + beta };
    let mut rng = stream_rng(seed, 0x23);
    let mut y = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut val = vec![0.0; d];
    for _ in 0..n_samples {
        reach.sample_into(&mut rng, &mut y);
        if omega.contains(&y) || !enclosing.contains(&y) {
            continue;
        }
        // y lies in enclosing \ omega: u must vanish on B_beta(y).
        let probe = BallDomain { center: y.clone(), radius: beta };
        for _ in 0..8 {
            probe.sample_into(&mut rng, &mut z);
            u.eval_into(&z, &mut val);
            if val.iter().any(|v| *v != 0.0) {
                return Err(Error::OutsideDomain(format!("support comes closer than beta = {beta} to the exterior point {y:?}")));
            }
        }
    }
    Ok(ZeroExtended { inner: u, omega })
}

impl VectorField for ZeroExtended {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        if self.omega.contains(x) {
            self.inner.eval_into(x, out);
        } else {
            out.iter_mut().for_each(|o| *o = 0.0);
        }
    }
    fn support(&self) -> Option<BallDomain> {
        self.inner.support()
    }
}

/// `x -> factor * u(shift + scale x)`.
#[derive(Debug, Clone)]
pub struct Rescaled {
    inner: FieldRef,
    factor: f64,
    shift: Vec<f64>,
    scale: f64,
}

/// Pulls a field on `B_r(x0)` back to the unit ball: `v(x) = u(x0 + r x) / r^s`.
pub fn rescale(u: FieldRef, x0: &[f64], r: f64, s: f64) -> Result<Rescaled> {
    if !(r > 0.0) {
        return Err(Error::param("r", "must be positive"));
    }
    Ok(Rescaled { inner: u, factor: r.powf(-s), shift: x0.to_vec(), scale: r })
}

/// Pushes a field on the unit ball forward to `B_r(x0)`: `u(x) = r^s v((x - x0) / r)`.
/// This is the inverse of [`rescale`].
pub fn unscale(v: FieldRef, x0: &[f64], r: f64, s: f64) -> Result<Rescaled> {
    if !(r > 0.0) {
        return Err(Error::param("r", "must be positive"));
    }
    Ok(Rescaled { inner: v, factor: r.powf(s), shift: x0.iter().map(|c| -c / r).collect(), scale: 1.0 / r })
}

impl VectorField for Rescaled {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let y: Vec<f64> = x.iter().zip(&self.shift).map(|(xi, b)| b + self.scale * xi).collect();
        self.inner.eval_into(&y, out);
        out.iter_mut().for_each(|o| *o *= self.factor);
    }
    fn support(&self) -> Option<BallDomain> {
        let s = self.inner.support()?;
        let center = s.center.iter().zip(&self.shift).map(|(c, b)| (c - b) / self.scale).collect();
        Some(BallDomain { center, radius: s.radius / self.scale })
    }
}

/// `x -> R u(T^{-1} x)` for a rigid motion `T x = R x + t`.
#[derive(Debug, Clone)]
pub struct Moved {
    inner: FieldRef,
    motion: RigidMotion,
}

pub fn move_field(u: FieldRef, motion: RigidMotion) -> Result<Moved> {
    if motion.dim() != u.dim() {
        return Err(Error::param("motion", "dimension mismatch"));
    }
    Ok(Moved { inner: u, motion })
}

impl VectorField for Moved {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut pre = vec![0.0; d];
        self.motion.apply_inverse_into(x, &mut pre);
        let mut val = vec![0.0; d];
        self.inner.eval_into(&pre, &mut val);
        self.motion.rotate_into(&val, out);
    }
    fn support(&self) -> Option<BallDomain> {
        let s = self.inner.support()?;
        Some(BallDomain { center: self.motion.apply(&s.center), radius: s.radius })
    }
}

/// Linear combination `sum_k a_k u_k`.
#[derive(Debug, Clone)]
pub struct Combination {
    terms: Vec<(f64, FieldRef)>,
}

impl Combination {
    pub fn new(terms: Vec<(f64, FieldRef)>) -> Result<Self> {
        let d = terms.first().map(|t| t.1.dim()).ok_or_else(|| Error::param("terms", "empty combination"))?;
        if terms.iter().any(|t| t.1.dim() != d) {
            return Err(Error::param("terms", "dimension mismatch"));
        }
        Ok(Self { terms })
    }

    pub fn difference(a: FieldRef, b: FieldRef) -> Result<Self> {
        Self::new(vec![(1.0, a), (-1.0, b)])
    }
}

impl VectorField for Combination {
    fn dim(&self) -> usize {
        self.terms[0].1.dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; self.dim()];
        out.iter_mut().for_each(|o| *o = 0.0);
        for (a, u) in &self.terms {
            u.eval_into(x, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += a * t;
            }
        }
    }
    fn support(&self) -> Option<BallDomain> {
        let balls: Option<Vec<BallDomain>> = self.terms.iter().map(|t| t.1.support()).collect();
        enclosing_ball_of_balls(&balls?)
    }
}
