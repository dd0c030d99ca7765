//! Computational domains: balls, half-spaces and epigraphs of Lipschitz
//! profiles, together with the reflection maps between an epigraph and its
//! complement and the flattening map onto the upper half-space.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, stream_rng};

/// Membership oracle for a subset of `R^d`.
pub trait Region: Sync {
    fn dim(&self) -> usize;
    fn contains(&self, x: &[f64]) -> bool;

    /// Diameter of the region, `None` when unbounded.
    fn diameter(&self) -> Option<f64> {
        None
    }
}

/// Open ball `B_r(x0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallDomain {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallDomain {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::param("radius", "must be positive and finite"));
        }
        if center.is_empty() {
            return Err(Error::param("center", "dimension must be at least 1"));
        }
        Ok(Self { center, radius })
    }

    pub fn unit(d: usize) -> Self {
        Self { center: vec![0.0; d], radius: 1.0 }
    }

    /// The concentric ball of half the radius.
    pub fn half(&self) -> Self {
        Self { center: self.center.clone(), radius: 0.5 * self.radius }
    }

    pub fn volume(&self) -> f64 {
        numerics::unit_ball_volume(self.center.len()) * self.radius.powi(self.center.len() as i32)
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    /// Uniform sample in the ball.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.center.len();
        numerics::random_direction(rng, out);
        let u: f64 = rng.random();
        let r = self.radius * u.powf(1.0 / d as f64);
        for (o, c) in out.iter_mut().zip(&self.center) {
            *o = c + r * *o;
        }
    }

    /// Smallest ball (about the box midpoint) containing the box `[lo, hi]`.
    pub fn enclosing_box(lo: &[f64], hi: &[f64]) -> Self {
        let center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let radius = 0.5 * numerics::dist(lo, hi);
        Self { center, radius: radius.max(1e-12) }
    }
}

impl Region for BallDomain {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn contains(&self, x: &[f64]) -> bool {
        numerics::dist(x, &self.center) < self.radius
    }
    fn diameter(&self) -> Option<f64> {
        Some(2.0 * self.radius)
    }
}

/// Open upper half-space `{x_d > 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub d: usize,
}

impl Region for HalfSpace {
    fn dim(&self) -> usize {
        self.d
    }
    fn contains(&self, x: &[f64]) -> bool {
        x[self.d - 1] > 0.0
    }
}

/// All of `R^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WholeSpace {
    pub d: usize,
}

impl Region for WholeSpace {
    fn dim(&self) -> usize {
        self.d
    }
    fn contains(&self, _x: &[f64]) -> bool {
        true
    }
}

/// Boundary profiles with an analytically certified Lipschitz bound.
///
/// Each profile satisfies `f(0) = 0`; all but `Affine` also have `grad f(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `f = 0`.
    Zero,
    /// `f(x') = a . x'`.
    Affine { slope: Vec<f64> },
    /// Phase-shifted sinusoid in the first tangential coordinate,
    /// `f(x') = (m / w) (1 - cos(w x'_1))`, so `|grad f| <= m`.
    Sine { m: f64, omega: f64 },
    /// Smoothed ridge `f(x') = h (1 - exp(-|x'|^2 / w^2))` with the height
    /// chosen so that `sup |grad f| = m`.
    Ridge { m: f64, width: f64 },
}

impl Profile {
    /// Registered names, in the order used by scans.
    pub const NAMES: [&'static str; 4] = ["zero", "affine", "sine", "ridge"];

    /// Builds a profile of the given family with Lipschitz constant `m`.
    pub fn with_lipschitz(name: &str, m: f64) -> Result<Self> {
        if !(m >= 0.0) {
            return Err(Error::param("M", "Lipschitz constant must be nonnegative"));
        }
        match name {
            "zero" => Ok(Profile::Zero),
            "affine" => Ok(Profile::Affine { slope: vec![m] }),
            "sine" => Ok(Profile::Sine { m, omega: 1.0 }),
            "ridge" => Ok(Profile::Ridge { m, width: 1.0 }),
            other => Err(Error::param("profile", format!("unknown profile `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Zero => "zero",
            Profile::Affine { .. } => "affine",
            Profile::Sine { .. } => "sine",
            Profile::Ridge { .. } => "ridge",
        }
    }

    fn ridge_height(m: f64, width: f64) -> f64 {
        // sup of 2 h r / w^2 exp(-r^2/w^2) is attained at r = w / sqrt 2
        m * width * 0.5f64.exp() * FRAC_1_SQRT_2
    }

    pub fn value(&self, xp: &[f64]) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Affine { slope } => slope.iter().zip(xp).map(|(a, x)| a * x).sum(),
            Profile::Sine { m, omega } => {
                let x1 = xp.first().copied().unwrap_or(0.0);
                m / omega * (1.0 - (omega * x1).cos())
            }
            Profile::Ridge { m, width } => {
                let r2: f64 = xp.iter().map(|x| x * x).sum();
                Self::ridge_height(*m, *width) * (1.0 - (-r2 / (width * width)).exp())
            }
        }
    }

    pub fn gradient_into(&self, xp: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        match self {
            Profile::Zero => {}
            Profile::Affine { slope } => {
                for (o, a) in out.iter_mut().zip(slope) {
                    *o = *a;
                }
            }
            Profile::Sine { m, omega } => {
                if let Some(o) = out.first_mut() {
                    *o = m * (omega * xp[0]).sin();
                }
            }
            Profile::Ridge { m, width } => {
                let w2 = width * width;
                let r2: f64 = xp.iter().map(|x| x * x).sum();
                let c = Self::ridge_height(*m, *width) * 2.0 / w2 * (-r2 / w2).exp();
                for (o, x) in out.iter_mut().zip(xp) {
                    *o = c * x;
                }
            }
        }
    }

    /// Certified upper bound on `sup |grad f|`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Affine { slope } => numerics::norm(slope),
            Profile::Sine { m, .. } | Profile::Ridge { m, .. } => *m,
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            Profile::Zero => vec![],
            Profile::Affine { slope } => slope.clone(),
            Profile::Sine { m, omega } => vec![*m, *omega],
            Profile::Ridge { m, width } => vec![*m, *width],
        }
    }
}

/// Serialized form of a profile: registered name plus parameter list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl TryFrom<ProfileSpec> for Profile {
    type Error = Error;

    fn try_from(spec: ProfileSpec) -> Result<Self> {
        let p = &spec.params;
        let need = |n: usize| -> Result<()> {
            if p.len() == n {
                Ok(())
            } else {
                Err(Error::param("profile.params", format!("`{}` takes {n} parameters, got {}", spec.name, p.len())))
            }
        };
        let prof = match spec.name.as_str() {
            "zero" => {
                need(0)?;
                Profile::Zero
            }
            "affine" => {
                if p.is_empty() {
                    return Err(Error::param("profile.params", "`affine` needs a slope vector"));
                }
                Profile::Affine { slope: p.clone() }
            }
            "sine" => {
                need(2)?;
                if !(p[0] >= 0.0) || !(p[1] > 0.0) {
                    return Err(Error::param("profile.params", "`sine` needs m >= 0 and omega > 0"));
                }
                Profile::Sine { m: p[0], omega: p[1] }
            }
            "ridge" => {
                need(2)?;
                if !(p[0] >= 0.0) || !(p[1] > 0.0) {
                    return Err(Error::param("profile.params", "`ridge` needs m >= 0 and width > 0"));
                }
                Profile::Ridge { m: p[0], width: p[1] }
            }
            other => return Err(Error::param("profile.name", format!("unknown profile `{other}`"))),
        };
        Ok(prof)
    }
}

impl From<&Profile> for ProfileSpec {
    fn from(p: &Profile) -> Self {
        ProfileSpec { name: p.name().to_string(), params: p.params() }
    }
}

/// The open set `{ (x', x_d) : x_d > f(x') }`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpigraphDomain {
    pub d: usize,
    pub profile: Profile,
}

impl EpigraphDomain {
    pub fn new(d: usize, profile: Profile) -> Result<Self> {
        if d < 2 {
            return Err(Error::param("d", "epigraphs are built for d >= 2"));
        }
        if let Profile::Affine { slope } = &profile {
            if slope.len() != d - 1 {
                return Err(Error::param("profile.params", "affine slope must have d - 1 entries"));
            }
        }
        Ok(Self { d, profile })
    }

    pub fn half_space(d: usize) -> Self {
        Self { d, profile: Profile::Zero }
    }

    pub fn lipschitz(&self) -> f64 {
        self.profile.lipschitz()
    }

    /// Profile height above the tangential part of `x`.
    #[inline]
    pub fn height(&self, x: &[f64]) -> f64 {
        self.profile.value(&x[..self.d - 1])
    }

    /// Signed vertical distance `x_d - f(x')`.
    #[inline]
    pub fn elevation(&self, x: &[f64]) -> f64 {
        x[self.d - 1] - self.height(x)
    }

    pub fn in_lower(&self, x: &[f64]) -> bool {
        self.elevation(x) < 0.0
    }

    fn check_eta(eta: f64) -> Result<()> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::param("eta", "must be positive and finite"));
        }
        Ok(())
    }

    /// Unchecked reflection `x -> (x', f + eta (f - x_d))`.
    #[inline]
    pub(crate) fn reflect_up(&self, eta: f64, x: &[f64], out: &mut [f64]) {
        let f = self.height(x);
        out[..self.d - 1].copy_from_slice(&x[..self.d - 1]);
        out[self.d - 1] = f + eta * (f - x[self.d - 1]);
    }

    /// Maps a point below the graph to a point above it.
    pub fn phi_eta(&self, eta: f64, x: &[f64]) -> Result<Vec<f64>> {
        Self::check_eta(eta)?;
        self.check_dim(x)?;
        if !self.in_lower(x) {
            return Err(Error::OutsideDomain(format!("{x:?} is not below the graph")));
        }
        let mut out = vec![0.0; self.d];
        self.reflect_up(eta, x, &mut out);
        Ok(out)
    }

    /// Inverse of [`phi_eta`](Self::phi_eta).
    pub fn phi_eta_inverse(&self, eta: f64, x: &[f64]) -> Result<Vec<f64>> {
        Self::check_eta(eta)?;
        self.check_dim(x)?;
        if !self.contains(x) {
            return Err(Error::OutsideDomain(format!("{x:?} is not above the graph")));
        }
        let mut out = vec![0.0; self.d];
        self.reflect_up(1.0 / eta, x, &mut out);
        Ok(out)
    }

    /// Flattens the epigraph onto the upper half-space.
    pub fn straighten(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        if !self.contains(x) {
            return Err(Error::OutsideDomain(format!("{x:?} is not above the graph")));
        }
        let mut out = x.to_vec();
        out[self.d - 1] -= self.height(x);
        Ok(out)
    }

    /// Inverse of [`straighten`](Self::straighten), defined on all of `R^d`.
    pub fn unstraighten(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        out[self.d - 1] += self.height(x);
        out
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::param("x", format!("expected {} coordinates, got {}", self.d, x.len())));
        }
        Ok(())
    }

    /// Samples a point of `D`: tangential part uniform in `[-box, box]^{d-1}`,
    /// elevation exponential with the given mean.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R, half_box: f64, mean_elevation: f64, out: &mut [f64]) {
        for o in out[..self.d - 1].iter_mut() {
            *o = rng.random_range(-half_box..half_box);
        }
        let exp = Exp::new(1.0 / mean_elevation).expect("positive mean");
        let mut e: f64 = exp.sample(rng);
        while e <= 0.0 {
            e = exp.sample(rng);
        }
        out[self.d - 1] = self.height(out) + e;
    }

    /// Spot-checks the certified Lipschitz bound on random pairs; returns the
    /// largest observed difference quotient.
    pub fn sampled_lipschitz(&self, n: usize, half_box: f64, seed: u64) -> f64 {
        let mut rng = stream_rng(seed, 0x11);
        let dm = self.d - 1;
        let mut a = vec![0.0; dm];
        let mut b = vec![0.0; dm];
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            for (u, v) in a.iter_mut().zip(b.iter_mut()) {
                *u = rng.random_range(-half_box..half_box);
                *v = *u + rng.random_range(-0.5..0.5);
            }
            let den = numerics::dist(&a, &b);
            if den > 0.0 {
                worst = worst.max((self.profile.value(&a) - self.profile.value(&b)).abs() / den);
            }
        }
        worst
    }
}

impl Region for EpigraphDomain {
    fn dim(&self) -> usize {
        self.d
    }
    fn contains(&self, x: &[f64]) -> bool {
        self.elevation(x) > 0.0
    }
}

/// Serializable domain descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DomainSpec {
    Ball { center: Vec<f64>, radius: f64 },
    Halfspace { d: usize },
    Epigraph { d: usize, profile: ProfileSpec },
}

/// A validated domain.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Ball(BallDomain),
    HalfSpace(HalfSpace),
    Epigraph(EpigraphDomain),
}

impl Domain {
    pub fn from_spec(spec: &DomainSpec) -> Result<Self> {
        match spec {
            DomainSpec::Ball { center, radius } => Ok(Domain::Ball(BallDomain::new(center.clone(), *radius)?)),
            DomainSpec::Halfspace { d } => {
                if *d < 1 {
                    return Err(Error::param("d", "must be positive"));
                }
                Ok(Domain::HalfSpace(HalfSpace { d: *d }))
            }
            DomainSpec::Epigraph { d, profile } => Ok(Domain::Epigraph(EpigraphDomain::new(*d, Profile::try_from(profile.clone())?)?)),
        }
    }

    pub fn to_spec(&self) -> DomainSpec {
        match self {
            Domain::Ball(b) => DomainSpec::Ball { center: b.center.clone(), radius: b.radius },
            Domain::HalfSpace(h) => DomainSpec::Halfspace { d: h.d },
            Domain::Epigraph(e) => DomainSpec::Epigraph { d: e.d, profile: (&e.profile).into() },
        }
    }

    pub fn as_region(&self) -> &dyn Region {
        match self {
            Domain::Ball(b) => b,
            Domain::HalfSpace(h) => h,
            Domain::Epigraph(e) => e,
        }
    }

    /// The bounding ball when the domain is bounded.
    pub fn bounding_ball(&self) -> Option<&BallDomain> {
        match self {
            Domain::Ball(b) => Some(b),
            _ => None,
        }
    }

    /// The domain as an epigraph (half-spaces included).
    pub fn as_epigraph(&self) -> Option<EpigraphDomain> {
        match self {
            Domain::Ball(_) => None,
            Domain::HalfSpace(h) => Some(EpigraphDomain::half_space(h.d)),
            Domain::Epigraph(e) => Some(e.clone()),
        }
    }
}

impl Region for Domain {
    fn dim(&self) -> usize {
        self.as_region().dim()
    }
    fn contains(&self, x: &[f64]) -> bool {
        self.as_region().contains(x)
    }
    fn diameter(&self) -> Option<f64> {
        self.as_region().diameter()
    }
}

/// `x -> R x + t` with `R` orthogonal.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidMotion {
    rotation: DMatrix<f64>,
    translation: Vec<f64>,
}

impl RigidMotion {
    pub fn new(rotation: DMatrix<f64>, translation: Vec<f64>) -> Result<Self> {
        let d = translation.len();
        if rotation.nrows() != d || rotation.ncols() != d {
            return Err(Error::param("rotation", "must be d x d"));
        }
        let defect = (&rotation * rotation.transpose() - DMatrix::<f64>::identity(d, d)).abs().max();
        if defect > 1e-12 {
            return Err(Error::param("rotation", format!("not orthogonal (defect {defect:e})")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn translation(shift: Vec<f64>) -> Self {
        let d = shift.len();
        Self { rotation: DMatrix::identity(d, d), translation: shift }
    }

    /// Planar rotation by `angle` followed by a translation.
    pub fn planar(angle: f64, translation: [f64; 2]) -> Self {
        let (s, c) = angle.sin_cos();
        Self { rotation: DMatrix::from_row_slice(2, 2, &[c, -s, s, c]), translation: translation.to_vec() }
    }

    /// A random orthogonal matrix (QR of a Gaussian matrix) and translation.
    pub fn random(d: usize, seed: u64) -> Self {
        use rand_distr::StandardNormal;
        let mut rng = stream_rng(seed, 0x12);
        let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..d {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let translation = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { rotation: q, translation }
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn rotate_into(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            out[i] = (0..d).map(|j| self.rotation[(i, j)] * v[j]).sum();
        }
    }

    pub fn rotate_transpose_into(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            out[i] = (0..d).map(|j| self.rotation[(j, i)] * v[j]).sum();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.rotate_into(x, &mut out);
        out.iter_mut().zip(&self.translation).for_each(|(o, t)| *o += t);
        out
    }

    pub fn apply_inverse_into(&self, x: &[f64], out: &mut [f64]) {
        let shifted: Vec<f64> = x.iter().zip(&self.translation).map(|(a, t)| a - t).collect();
        self.rotate_transpose_into(&shifted, out);
    }
}

/// The constant bound on `M^2` under which the comparison inequality
/// `|z - y| <= C |Phi^{-1}(z) - y|` holds for all `z, y` in the epigraph.
pub fn comparison_threshold(eta: f64, c_eta: f64) -> f64 {
    let c2 = c_eta * c_eta;
    (c2 - eta * eta) * (c2 - 1.0) / ((c2 + eta) * (c2 + eta))
}

/// Outcome of [`geometric_inequality_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometricReport {
    pub eta: f64,
    pub c_eta: f64,
    pub lipschitz: f64,
    pub threshold: f64,
    pub n_pairs: usize,
    pub violations: usize,
    /// Largest observed `|z - y| / (C |Phi^{-1}(z) - y|)`.
    pub worst_ratio: f64,
    /// Pairs where the expanded quadratic form in (alpha, beta, gamma, delta) came out negative.
    pub polynomial_violations: usize,
}

/// Samples pairs `(z, y)` of the epigraph and tests the distance comparison
/// between `z` and its reflected image.
pub fn geometric_inequality_check(dom: &EpigraphDomain, eta: f64, c_eta: f64, n_samples: usize, seed: u64) -> Result<GeometricReport> {
    EpigraphDomain::check_eta(eta)?;
    if !(c_eta > eta.max(1.0)) {
        return Err(Error::param("C_eta", "must exceed max(1, eta)"));
    }
    let threshold = comparison_threshold(eta, c_eta);
    let m = dom.lipschitz();
    if m * m > threshold {
        return Err(Error::HypothesisUnmet(format!(
            "M^2 = {:.6} exceeds the comparison threshold {:.6} for eta = {eta}, C = {c_eta}",
            m * m,
            threshold
        )));
    }

    let d = dom.d;
    let c2 = c_eta * c_eta;
    let mut rng = stream_rng(seed, 0x13);
    let mut z = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut zi = vec![0.0; d];
    let mut violations = 0;
    let mut polynomial_violations = 0;
    let mut worst: f64 = 0.0;
    for k in 0..n_samples {
        // Mix global pairs with clustered near-boundary pairs.
        let scale = 10f64.powf(rng.random_range(-3.0..0.5));
        dom.sample_point(&mut rng, 3.0, scale, &mut z);
        if k % 2 == 0 {
            let scale_y = 10f64.powf(rng.random_range(-3.0..0.5));
            dom.sample_point(&mut rng, 3.0, scale_y, &mut y);
        } else {
            let spread = 10f64.powf(rng.random_range(-3.0..0.0));
            for i in 0..d - 1 {
                y[i] = z[i] + rng.random_range(-spread..spread);
            }
            y[d - 1] = dom.height(&y) + Exp::new(1.0 / spread).unwrap().sample(&mut rng);
        }
        if !dom.contains(&z) || !dom.contains(&y) {
            continue;
        }
        dom.reflect_up(1.0 / eta, &z, &mut zi);
        let lhs = numerics::dist(&z, &y);
        let rhs = c_eta * numerics::dist(&zi, &y);
        let ratio = if rhs > 0.0 { lhs / rhs } else { f64::INFINITY };
        worst = worst.max(ratio);
        if lhs > rhs * (1.0 + 1e-12) {
            violations += 1;
        }

        // Second route: the quadratic form whose nonnegativity is equivalent
        // to the squared inequality.
        let alpha = dom.elevation(&z);
        let beta = dom.height(&z) - dom.height(&y);
        let gamma = dom.elevation(&y);
        let delta2: f64 = (0..d - 1).map(|i| (z[i] - y[i]).powi(2)).sum();
        let poly = (c2 / (eta * eta) - 1.0) * alpha * alpha - 2.0 * (c2 / eta + 1.0) * alpha * beta
            + 2.0 * (c2 / eta + 1.0) * alpha * gamma
            + (c2 - 1.0) * (beta - gamma).powi(2)
            + (c2 - 1.0) * delta2;
        let scale2 = alpha * alpha + beta * beta + gamma * gamma + delta2;
        if poly < -1e-12 * scale2 * c2 {
            polynomial_violations += 1;
        }
    }
    Ok(GeometricReport { eta, c_eta, lipschitz: m, threshold, n_pairs: n_samples, violations, worst_ratio: worst, polynomial_violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wavy() -> EpigraphDomain {
        EpigraphDomain::new(2, Profile::Sine { m: 0.3, omega: 1.0 }).unwrap()
    }

    #[test]
    fn flat_reflection() {
        let dom = EpigraphDomain::half_space(2);
        assert_eq!(dom.phi_eta(1.0, &[0.3, -0.7]).unwrap(), vec![0.3, 0.7]);
        assert_eq!(dom.phi_eta_inverse(2.0, &[0.0, 1.0]).unwrap(), vec![0.0, -0.5]);
    }

    #[test]
    fn reflection_rejects_bad_input() {
        let dom = wavy();
        assert!(matches!(dom.phi_eta(0.0, &[0.0, -1.0]), Err(Error::InvalidParameter { .. })));
        assert!(matches!(dom.phi_eta(-1.0, &[0.0, -1.0]), Err(Error::InvalidParameter { .. })));
        assert!(matches!(dom.phi_eta(1.0, &[0.0, 1.0]), Err(Error::OutsideDomain(_))));
        assert!(matches!(dom.phi_eta_inverse(1.0, &[0.0, -1.0]), Err(Error::OutsideDomain(_))));
        assert!(matches!(dom.straighten(&[0.0, -1.0]), Err(Error::OutsideDomain(_))));
    }

    #[test]
    fn straighten_affine_by_hand() {
        let dom = EpigraphDomain::new(2, Profile::Affine { slope: vec![0.2] }).unwrap();
        let v = dom.straighten(&[1.0, 1.5]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15 && (v[1] - 1.3).abs() < 1e-15);
        assert_eq!(dom.unstraighten(&v), vec![1.0, 1.5]);
        let flat = EpigraphDomain::half_space(3);
        assert_eq!(flat.straighten(&[0.1, 0.2, 0.3]).unwrap(), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn certified_lipschitz_bounds_hold_when_sampled() {
        for name in Profile::NAMES {
            let dom = EpigraphDomain::new(2, Profile::with_lipschitz(name, 0.45).unwrap()).unwrap();
            let seen = dom.sampled_lipschitz(20_000, 4.0, 3);
            assert!(seen <= dom.lipschitz() + 1e-9, "{name}: {seen} > {}", dom.lipschitz());
        }
        let ridge = EpigraphDomain::new(3, Profile::Ridge { m: 0.5, width: 0.7 }).unwrap();
        // The certified bound is attained on the ring r = w / sqrt 2.
        let mut g = [0.0; 2];
        ridge.profile.gradient_into(&[0.7 * FRAC_1_SQRT_2, 0.0], &mut g);
        assert!((numerics::norm(&g) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn profile_gradients_match_differences() {
        let h = 1e-6;
        for prof in
            [Profile::Sine { m: 0.4, omega: 2.0 }, Profile::Ridge { m: 0.3, width: 0.8 }, Profile::Affine { slope: vec![0.2, -0.1] }]
        {
            let x = [0.37, -0.21];
            let mut g = [0.0; 2];
            prof.gradient_into(&x, &mut g);
            for i in 0..2 {
                let mut a = x;
                let mut b = x;
                a[i] += h;
                b[i] -= h;
                let fd = (prof.value(&a) - prof.value(&b)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-8, "{prof:?}");
            }
        }
    }

    #[test]
    fn domain_json_round_trip() {
        let json = r#"{"kind":"epigraph","d":2,"profile":{"name":"sine","params":[0.3,1.0]}}"#;
        let spec: DomainSpec = serde_json::from_str(json).unwrap();
        let dom = Domain::from_spec(&spec).unwrap();
        assert_eq!(dom.to_spec(), spec);
        assert!(dom.contains(&[0.0, 0.1]));
        let ball: DomainSpec = serde_json::from_str(r#"{"kind":"ball","center":[0,0],"radius":1}"#).unwrap();
        assert!(Domain::from_spec(&ball).unwrap().contains(&[0.5, 0.5]));
        let bad: DomainSpec = serde_json::from_str(r#"{"kind":"epigraph","d":2,"profile":{"name":"nope"}}"#).unwrap();
        assert!(Domain::from_spec(&bad).is_err());
    }

    #[test]
    fn rigid_motion_checks_orthogonality() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(RigidMotion::new(m, vec![0.0, 0.0]).is_err());
        let t = RigidMotion::random(3, 9);
        let x = [0.1, 0.5, -0.2];
        let y = [1.0, -0.3, 0.4];
        let d0 = numerics::dist(&x, &y);
        let d1 = numerics::dist(&t.apply(&x), &t.apply(&y));
        assert!((d0 - d1).abs() < 1e-12);
        let mut back = [0.0; 3];
        t.apply_inverse_into(&t.apply(&x), &mut back);
        assert!(numerics::dist(&back, &x) < 1e-12);
    }

    #[test]
    fn comparison_threshold_has_its_minimum_at_eta_one() {
        assert!((comparison_threshold(1.0, 2.0) - 9.0 / 25.0).abs() < 1e-15);
        for k in 0..100 {
            let eta = 10f64.powf(-2.0 + 4.0 * k as f64 / 99.0);
            let t = comparison_threshold(eta, 2.0 * eta.max(1.0));
            assert!(t > 9.0 / 25.0, "eta = {eta}: {t}");
        }
    }

    #[test]
    fn geometric_check_flags_unmet_hypothesis() {
        let dom = EpigraphDomain::new(2, Profile::Sine { m: 0.7, omega: 1.0 }).unwrap();
        let err = geometric_inequality_check(&dom, 1.0, 2.0, 10, 1).unwrap_err();
        assert!(matches!(err, Error::HypothesisUnmet(_)));
        assert!(geometric_inequality_check(&wavy(), 1.0, 1.0, 10, 1).is_err());
    }

    #[test]
    fn flat_boundary_ratio_is_at_most_one_over_c() {
        let dom = EpigraphDomain::half_space(2);
        for eta in [0.5, 1.0, 2.0] {
            let c = 2.0 * f64::max(1.0, eta);
            let rep = geometric_inequality_check(&dom, eta, c, 5000, 4).unwrap();
            assert_eq!(rep.violations, 0);
            assert!(rep.worst_ratio <= 1.0);
        }
    }
}
