//! Singular double integrals `int int g(x, y) dx dy` with a kernel that blows
//! up on the diagonal.
//!
//! The Monte Carlo estimator stratifies the pair distance `|x - y|` into
//! geometric shells. Within a shell, `x` is drawn uniformly from a window
//! ball and `y = x + r theta` with `r` uniform in the shell's volume and
//! `theta` uniform on the sphere. An optional outermost shell reaches to
//! infinity with Pareto-distributed radii. Work is cut into fixed-size
//! chunks, each driven by its own counter-based stream, and the partial
//! sums are merged in chunk order, so results do not depend on the number
//! of worker threads.

use gauss_quad::GaussLegendre;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BallDomain, Region};
use crate::numerics::{self, stream_id, stream_rng, NeumaierSum};

/// Pairs drawn per work unit.
const CHUNK: usize = 2048;
/// Smallest number of pairs any shell receives.
const MIN_SHELL_BUDGET: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MonteCarlo,
    DenseOracle,
}

/// An integral estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub method: Method,
    /// Estimated contribution of the excluded core `|x - y| < r_K`.
    pub core_bias: f64,
}

impl Estimate {
    pub fn zero(method: Method, seed: u64) -> Self {
        Self { value: 0.0, std_error: 0.0, n_samples: 0, seed, method, core_bias: 0.0 }
    }

    /// `sqrt(se_a^2 + se_b^2)`.
    pub fn combined_error(&self, other: &Estimate) -> f64 {
        self.std_error.hypot(other.std_error)
    }

    /// Agreement within `max(rel |other|, n_sigma * combined error)`.
    pub fn agrees_with(&self, other: &Estimate, rel: f64, n_sigma: f64) -> bool {
        let tol = (rel * other.value.abs()).max(n_sigma * self.combined_error(other));
        (self.value - other.value).abs() <= tol
    }

    /// Multiplies value and error by a positive constant.
    pub fn scaled(&self, c: f64) -> Estimate {
        Estimate { value: c * self.value, std_error: c.abs() * self.std_error, core_bias: c.abs() * self.core_bias, ..self.clone() }
    }
}

/// One stratum of the pair distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shell {
    /// `inner <= |x - y| < outer`, radii uniform in volume.
    Annulus { inner: f64, outer: f64 },
    /// `|x - y| >= inner`, radii Pareto with tail index `decay`.
    Exterior { inner: f64, decay: f64 },
}

impl Shell {
    fn validate(&self) -> Result<()> {
        match *self {
            Shell::Annulus { inner, outer } if inner > 0.0 && outer > inner && outer.is_finite() => Ok(()),
            Shell::Exterior { inner, decay } if inner > 0.0 && decay > 0.0 && inner.is_finite() => Ok(()),
            _ => Err(Error::param("shell", format!("malformed shell {self:?}"))),
        }
    }

    /// Draws a radius and returns it with its importance weight, so that
    /// `E[weight * h(r theta)] = int_shell h(z) dz`.
    #[inline]
    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R, d: usize) -> (f64, f64) {
        let df = d as f64;
        let sphere = numerics::unit_sphere_area(d);
        match *self {
            Shell::Annulus { inner, outer } => {
                let (a, b) = (inner.powi(d as i32), outer.powi(d as i32));
                let u: f64 = rng.random();
                let r = (a + u * (b - a)).powf(1.0 / df);
                (r, sphere / df * (b - a))
            }
            Shell::Exterior { inner, decay } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                let r = inner * u.powf(-1.0 / decay);
                let w = sphere * r.powf(df + decay) / (decay * inner.powf(decay));
                (r, w)
            }
        }
    }
}

/// Annuli with ratio 2 from `inner` up to `outer`, largest first.
pub fn geometric_shells(inner: f64, outer: f64) -> Vec<Shell> {
    let mut shells = Vec::new();
    let mut hi = outer;
    while hi > inner * (1.0 + 1e-12) {
        let lo = (0.5 * hi).max(inner);
        shells.push(Shell::Annulus { inner: lo, outer: hi });
        hi = lo;
    }
    shells
}

/// Splits `total` over shells with weights decaying like `2^{-k/2}`,
/// since the inner shells of a seminorm carry geometrically less mass.
fn allocate(n_shells: usize, total: usize) -> Vec<usize> {
    let w: Vec<f64> = (0..n_shells).map(|k| 0.5f64.powf(0.5 * k as f64)).collect();
    let sum: f64 = w.iter().sum();
    w.iter().map(|wk| ((total as f64 * wk / sum).round() as usize).max(MIN_SHELL_BUDGET)).collect()
}

/// Where and how pairs are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSamplingPlan {
    /// Base points `x` are uniform in this ball; it must contain every `x`
    /// that can contribute.
    pub window: BallDomain,
    /// When set, the integrand is taken to be symmetric and to vanish
    /// unless `x` or `y` lies in `window`; pairs with `y` outside the window
    /// then count twice, which accounts for the mirrored pairs with `x`
    /// outside.
    pub symmetric_split: bool,
    pub shells: Vec<Shell>,
    pub budgets: Vec<usize>,
    /// Exponent `a` with `g(x, y) ~ |x - y|^{a - d}` near the diagonal,
    /// used to extrapolate the excluded core.
    pub core_exponent: f64,
}

/// Defaults shared by every plan builder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanSettings {
    /// Total pair budget.
    pub budget: usize,
    /// Innermost shell radius relative to the outermost annulus radius.
    pub core_ratio: f64,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self { budget: 200_000, core_ratio: 1e-4 }
    }
}

impl PlanSettings {
    fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::param("budget", "must be positive"));
        }
        if !(self.core_ratio > 0.0 && self.core_ratio < 1.0) {
            return Err(Error::param("core_ratio", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

impl PairSamplingPlan {
    /// Plan for a bounded domain: `x` uniform in `omega`, annuli up to its diameter.
    pub fn for_bounded(omega: &BallDomain, settings: PlanSettings) -> Result<Self> {
        settings.validate()?;
        let outer = omega.diameter();
        let shells = geometric_shells(settings.core_ratio * outer, outer);
        let budgets = allocate(shells.len(), settings.budget);
        Ok(Self { window: omega.clone(), symmetric_split: false, shells, budgets, core_exponent: 1.0 })
    }

    /// Plan for a symmetric integrand that vanishes off `support x R^d` and
    /// `R^d x support`, over a domain of the given diameter (`None` for
    /// unbounded). Pairs farther apart than the support diameter go into a
    /// Pareto exterior shell with tail index `decay`.
    pub fn for_support(support: &BallDomain, omega_diameter: Option<f64>, decay: f64, settings: PlanSettings) -> Result<Self> {
        settings.validate()?;
        let reach = support.diameter();
        let top = omega_diameter.map_or(reach, |dm| dm.min(reach));
        let mut shells = geometric_shells(settings.core_ratio * top, top);
        if omega_diameter.is_none_or(|dm| dm > reach) {
            shells.insert(0, Shell::Exterior { inner: top, decay });
        }
        let budgets = allocate(shells.len(), settings.budget);
        Ok(Self { window: support.clone(), symmetric_split: true, shells, budgets, core_exponent: 1.0 })
    }

    pub fn with_core_exponent(mut self, a: f64) -> Self {
        self.core_exponent = a;
        self
    }

    /// Same shells with every budget multiplied by `factor`.
    pub fn scaled_budget(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.budgets.iter_mut().for_each(|b| *b = ((*b as f64 * factor).round() as usize).max(1));
        out
    }

    pub fn total_budget(&self) -> usize {
        self.budgets.iter().sum()
    }

    /// Innermost radius; pairs closer than this are excluded.
    pub fn core_radius(&self) -> f64 {
        self.shells
            .iter()
            .map(|s| match *s {
                Shell::Annulus { inner, .. } | Shell::Exterior { inner, .. } => inner,
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shells.is_empty() || self.shells.len() != self.budgets.len() {
            return Err(Error::param("plan", "need one positive budget per shell"));
        }
        if self.budgets.contains(&0) {
            return Err(Error::param("plan.budgets", "budgets must be positive"));
        }
        self.shells.iter().try_for_each(Shell::validate)
    }
}

#[derive(Clone)]
struct Moments {
    sum: Vec<NeumaierSum>,
    sq: Vec<NeumaierSum>,
}

impl Moments {
    fn new(k: usize) -> Self {
        Self { sum: vec![NeumaierSum::new(); k], sq: vec![NeumaierSum::new(); k] }
    }
    fn merge(&mut self, o: &Moments) {
        for j in 0..self.sum.len() {
            self.sum[j].merge(&o.sum[j]);
            self.sq[j].merge(&o.sq[j]);
        }
    }
}

fn chunk_sizes(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n.div_ceil(CHUNK)).map(move |c| (c, CHUNK.min(n - c * CHUNK)))
}

/// Estimates `k` double integrals at once from one stream of pairs
/// (common random numbers). `g(x, y, out)` writes the `k` integrand values.
pub fn estimate_double_integrals<G>(
    k: usize,
    g: G,
    omega1: &dyn Region,
    omega2: &dyn Region,
    plan: &PairSamplingPlan,
    seed: u64,
) -> Result<Vec<Estimate>>
where
    G: Fn(&[f64], &[f64], &mut [f64]) + Sync,
{
    plan.validate()?;
    let d = plan.window.center.len();
    if omega1.dim() != d || omega2.dim() != d {
        return Err(Error::param("plan.window", "dimension does not match the domains"));
    }
    let vol = plan.window.volume();
    let mut values = vec![0.0; k];
    let mut variances = vec![0.0; k];
    let mut innermost = vec![0.0; k];
    let mut innermost_r = f64::INFINITY;

    for (si, (shell, &n)) in plan.shells.iter().zip(&plan.budgets).enumerate() {
        let jobs: Vec<(usize, usize)> = chunk_sizes(n).collect();
        let parts: Vec<Result<Moments>> = jobs
            .par_iter()
            .map(|&(c, len)| {
                let mut rng = stream_rng(seed, stream_id(1, si as u32, c as u32));
                let mut m = Moments::new(k);
                let mut x = vec![0.0; d];
                let mut y = vec![0.0; d];
                let mut dir = vec![0.0; d];
                let mut out = vec![0.0; k];
                for _ in 0..len {
                    plan.window.sample_into(&mut rng, &mut x);
                    numerics::random_direction(&mut rng, &mut dir);
                    let (r, w) = shell.sample(&mut rng, d);
                    for i in 0..d {
                        y[i] = x[i] + r * dir[i];
                    }
                    if !omega1.contains(&x) || !omega2.contains(&y) {
                        // zero contribution, still a sample
                        for j in 0..k {
                            m.sum[j].add(0.0);
                        }
                        continue;
                    }
                    let mult = if plan.symmetric_split && !plan.window.contains(&y) { 2.0 } else { 1.0 };
                    g(&x, &y, &mut out);
                    for j in 0..k {
                        if !out[j].is_finite() {
                            return Err(Error::NonFinite { x: x.clone(), y: y.clone(), value: out[j] });
                        }
                        let v = vol * w * mult * out[j];
                        m.sum[j].add(v);
                        m.sq[j].add(v * v);
                    }
                }
                Ok(m)
            })
            .collect();
        let mut total = Moments::new(k);
        for p in parts {
            total.merge(&p?);
        }
        let nf = n as f64;
        for j in 0..k {
            let mean = total.sum[j].value() / nf;
            let var = if n > 1 { ((total.sq[j].value() / nf - mean * mean) * nf / (nf - 1.0)).max(0.0) } else { 0.0 };
            values[j] += mean;
            variances[j] += var / nf;
            if let Shell::Annulus { inner, .. } = *shell {
                if inner < innermost_r {
                    innermost[j] = mean;
                }
            }
        }
        if let Shell::Annulus { inner, .. } = *shell {
            innermost_r = innermost_r.min(inner);
        }
    }

    let a = plan.core_exponent.max(1e-3);
    let n_total = plan.total_budget() as u64;
    Ok((0..k)
        .map(|j| Estimate {
            value: values[j],
            std_error: variances[j].sqrt(),
            n_samples: n_total,
            seed,
            method: Method::MonteCarlo,
            core_bias: innermost[j].abs() / (2f64.powf(a) - 1.0),
        })
        .collect())
}

/// Single-integrand form of [`estimate_double_integrals`].
pub fn estimate_double_integral<G>(g: G, omega1: &dyn Region, omega2: &dyn Region, plan: &PairSamplingPlan, seed: u64) -> Result<Estimate>
where
    G: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    let mut v = estimate_double_integrals(1, |x, y, out| out[0] = g(x, y), omega1, omega2, plan, seed)?;
    Ok(v.remove(0))
}

/// Estimates `int h(y) dy` over the union of the given shells centered at
/// `center`, splitting `budget` evenly across shells.
pub fn estimate_centered_integral<H>(h: H, center: &[f64], shells: &[Shell], budget: usize, seed: u64) -> Result<Estimate>
where
    H: Fn(&[f64]) -> f64 + Sync,
{
    if shells.is_empty() {
        return Ok(Estimate::zero(Method::MonteCarlo, seed));
    }
    shells.iter().try_for_each(Shell::validate)?;
    let d = center.len();
    let per = (budget / shells.len()).max(MIN_SHELL_BUDGET);
    let mut value = 0.0;
    let mut var = 0.0;
    for (si, shell) in shells.iter().enumerate() {
        let parts: Vec<Result<Moments>> = chunk_sizes(per)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&(c, len)| {
                let mut rng = stream_rng(seed, stream_id(2, si as u32, c as u32));
                let mut m = Moments::new(1);
                let mut y = vec![0.0; d];
                for _ in 0..len {
                    numerics::random_direction(&mut rng, &mut y);
                    let (r, w) = shell.sample(&mut rng, d);
                    for i in 0..d {
                        y[i] = center[i] + r * y[i];
                    }
                    let v = h(&y);
                    if !v.is_finite() {
                        return Err(Error::NonFinite { x: center.to_vec(), y: y.clone(), value: v });
                    }
                    m.sum[0].add(w * v);
                    m.sq[0].add(w * w * v * v);
                }
                Ok(m)
            })
            .collect();
        let mut total = Moments::new(1);
        for p in parts {
            total.merge(&p?);
        }
        let nf = per as f64;
        let mean = total.sum[0].value() / nf;
        value += mean;
        var += ((total.sq[0].value() / nf - mean * mean) / (nf - 1.0)).max(0.0);
    }
    Ok(Estimate { value, std_error: var.sqrt(), n_samples: (per * shells.len()) as u64, seed, method: Method::MonteCarlo, core_bias: 0.0 })
}

/// `int_B h(x) dx` with `x` uniform in the ball.
pub fn estimate_volume_integral<H>(h: H, ball: &BallDomain, n_samples: usize, seed: u64) -> Result<Estimate>
where
    H: Fn(&[f64]) -> f64 + Sync,
{
    if n_samples < 2 {
        return Err(Error::param("n_samples", "need at least two samples"));
    }
    let d = ball.center.len();
    let vol = ball.volume();
    let parts: Vec<Result<Moments>> = chunk_sizes(n_samples)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(c, len)| {
            let mut rng = stream_rng(seed, stream_id(3, 0, c as u32));
            let mut m = Moments::new(1);
            let mut x = vec![0.0; d];
            for _ in 0..len {
                ball.sample_into(&mut rng, &mut x);
                let v = h(&x);
                if !v.is_finite() {
                    return Err(Error::NonFinite { x: x.clone(), y: x.clone(), value: v });
                }
                m.sum[0].add(vol * v);
                m.sq[0].add(vol * vol * v * v);
            }
            Ok(m)
        })
        .collect();
    let mut total = Moments::new(1);
    for p in parts {
        total.merge(&p?);
    }
    let nf = n_samples as f64;
    let mean = total.sum[0].value() / nf;
    let var = ((total.sq[0].value() / nf - mean * mean) / (nf - 1.0)).max(0.0);
    Ok(Estimate { value: mean, std_error: var.sqrt(), n_samples: n_samples as u64, seed, method: Method::MonteCarlo, core_bias: 0.0 })
}

/// How far the exterior region of a tail integral reaches.
#[derive(Debug, Clone, PartialEq)]
pub enum TailExtent {
    /// The integrand vanishes outside this ball.
    Support(BallDomain),
    /// The integrand decays at least like the kernel; sample to infinity.
    Unbounded,
}

/// `int_{R^d \ B} g(y) |x0 - y|^{-d - sp} dy` for the ball `B = B_r(x0)`.
pub fn estimate_tail_integral<G>(g: G, ball: &BallDomain, sp: f64, extent: &TailExtent, budget: usize, seed: u64) -> Result<Estimate>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    if !(sp > 0.0) {
        return Err(Error::param("sp", "must be positive"));
    }
    let d = ball.center.len();
    let shells = match extent {
        TailExtent::Unbounded => vec![Shell::Exterior { inner: ball.radius, decay: sp }],
        TailExtent::Support(s) => {
            let reach = numerics::dist(&s.center, &ball.center) + s.radius;
            if reach <= ball.radius {
                return Ok(Estimate::zero(Method::MonteCarlo, seed));
            }
            geometric_shells(ball.radius, reach)
        }
    };
    let x0 = &ball.center;
    let expo = d as f64 + sp;
    estimate_centered_integral(
        |y| {
            let v = g(y);
            if v == 0.0 {
                0.0
            } else {
                v * numerics::dist(x0, y).powf(-expo)
            }
        },
        x0,
        &shells,
        budget,
        seed,
    )
}

/// Options for [`dense_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub n_per_axis: usize,
    /// Upper bound on the number of cell pairs `n^{2d}`.
    pub max_cell_pairs: u64,
    /// Exponent `a` with `g ~ |x - y|^{a - d}` on the diagonal. When given,
    /// the radial variable of the near-field rule is substituted so that
    /// this singularity is integrated exactly.
    pub diagonal_order: Option<f64>,
    /// Cells within this Chebyshev distance form the near field of a cell.
    pub near_cells: usize,
    /// Cells within this Chebyshev distance (and beyond the near field) get
    /// a 2x2 product rule on both sides; farther pairs use midpoints.
    pub mid_cells: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { n_per_axis: 41, max_cell_pairs: 50_000_000, diagonal_order: None, near_cells: 2, mid_cells: 6 }
    }
}

fn unit_rule(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(n).expect("degree >= 2");
    rule.as_node_weight_pairs().iter().map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect()
}

/// Deterministic tensor-grid cross-check for `d = 2`.
///
/// The box `[lo, hi]` is cut into `n x n` cells. Cells cut by a domain
/// boundary carry the fraction of their area inside (from 8x8 subsampling).
/// For every cell `A`, the part of the `y` integral over the block of cells
/// within `near_cells` of `A` is done in triangle coordinates centred at
/// each outer node `x`, which turns the diagonal singularity into a smooth
/// integrand; the remaining cells use product rules.
pub fn dense_oracle<G>(g: G, omega1: &dyn Region, omega2: &dyn Region, lo: [f64; 2], hi: [f64; 2], opts: &OracleOptions) -> Result<Estimate>
where
    G: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    let n = opts.n_per_axis;
    if n < 8 {
        return Err(Error::param("n_per_axis", "must be at least 8"));
    }
    if omega1.dim() != 2 || omega2.dim() != 2 {
        return Err(Error::param("d", "the dense oracle is two-dimensional"));
    }
    if !(hi[0] > lo[0] && hi[1] > lo[1]) {
        return Err(Error::param("box", "hi must exceed lo"));
    }
    let pairs = (n as u64).pow(4);
    if pairs > opts.max_cell_pairs {
        return Err(Error::WorkCap(format!("{pairs} cell pairs exceed the cap {}", opts.max_cell_pairs)));
    }
    if let Some(a) = opts.diagonal_order {
        if !(a > 0.0) {
            return Err(Error::param("diagonal_order", "must be positive"));
        }
    }
    let h = [(hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64];
    let area = h[0] * h[1];
    let corner = |i: usize, j: usize| [lo[0] + i as f64 * h[0], lo[1] + j as f64 * h[1]];

    let fraction = |omega: &dyn Region| -> Vec<f64> {
        (0..n * n)
            .into_par_iter()
            .map(|c| {
                let (i, j) = (c % n, c / n);
                let o = corner(i, j);
                let mut hits = 0;
                for a in 0..8 {
                    for b in 0..8 {
                        let p = [o[0] + (a as f64 + 0.5) * h[0] / 8.0, o[1] + (b as f64 + 0.5) * h[1] / 8.0];
                        if omega.contains(&p) {
                            hits += 1;
                        }
                    }
                }
                hits as f64 / 64.0
            })
            .collect()
    };
    let frac1 = fraction(omega1);
    let frac2 = fraction(omega2);

    let gl2 = unit_rule(2);
    let gl_out = unit_rule(3);
    let gl_near = unit_rule(12);
    let mid = |i: usize, j: usize| {
        let o = corner(i, j);
        [o[0] + 0.5 * h[0], o[1] + 0.5 * h[1]]
    };
    let nodes2 = |i: usize, j: usize| {
        let o = corner(i, j);
        let mut v = [[0.0; 2]; 4];
        let mut k = 0;
        for &(a, _) in &gl2 {
            for &(b, _) in &gl2 {
                v[k] = [o[0] + a * h[0], o[1] + b * h[1]];
                k += 1;
            }
        }
        v
    };
    let m = opts.near_cells as isize;
    let mr = opts.mid_cells.max(opts.near_cells) as isize;
    let alpha = opts.diagonal_order;

    let per_cell: Vec<Result<NeumaierSum>> = (0..n * n)
        .into_par_iter()
        .map(|ca| {
            let mut acc = NeumaierSum::new();
            let (ia, ja) = ((ca % n) as isize, (ca / n) as isize);
            let fa = frac1[ca];
            if fa == 0.0 {
                return Ok(acc);
            }
            let eval = |x: &[f64], y: &[f64]| -> Result<f64> {
                let v = g(x, y);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite { x: x.to_vec(), y: y.to_vec(), value: v })
                }
            };

            // Near block, clipped to the grid.
            let bi0 = (ia - m).max(0) as usize;
            let bi1 = ((ia + m) as usize).min(n - 1) + 1;
            let bj0 = (ja - m).max(0) as usize;
            let bj1 = ((ja + m) as usize).min(n - 1) + 1;
            let p0 = corner(bi0, bj0);
            let p2 = corner(bi1, bj1);
            let quad = [p0, [p2[0], p0[1]], p2, [p0[0], p2[1]]];
            let oa = corner(ia as usize, ja as usize);
            let mut y = [0.0; 2];
            for &(ax, wx) in &gl_out {
                for &(ay, wy) in &gl_out {
                    let x = [oa[0] + ax * h[0], oa[1] + ay * h[1]];
                    let wxa = fa * area * wx * wy;
                    for e in 0..4 {
                        let pa = quad[e];
                        let pb = quad[(e + 1) % 4];
                        let ea = [pa[0] - x[0], pa[1] - x[1]];
                        let edge = [pb[0] - pa[0], pb[1] - pa[1]];
                        let det = (ea[0] * edge[1] - ea[1] * edge[0]).abs();
                        for &(t, wt) in &gl_near {
                            let (u, ju) = match alpha {
                                Some(a) => {
                                    let u = t.powf(1.0 / a);
                                    (u, u / (a * t))
                                }
                                None => (t, 1.0),
                            };
                            for &(v, wv) in &gl_near {
                                y[0] = x[0] + u * (ea[0] + v * edge[0]);
                                y[1] = x[1] + u * (ea[1] + v * edge[1]);
                                if !omega2.contains(&y) {
                                    continue;
                                }
                                acc.add(wxa * wt * wv * ju * u * det * eval(&x, &y)?);
                            }
                        }
                    }
                }
            }

            // Mid- and far-field cells.
            let na = nodes2(ia as usize, ja as usize);
            let xa = mid(ia as usize, ja as usize);
            for cb in 0..n * n {
                let fb = frac2[cb];
                if fb == 0.0 {
                    continue;
                }
                let (ib, jb) = ((cb % n) as isize, (cb / n) as isize);
                let cheb = (ib - ia).abs().max((jb - ja).abs());
                if cheb <= m {
                    continue;
                }
                let w = fa * fb * area * area;
                if cheb <= mr {
                    let nb = nodes2(ib as usize, jb as usize);
                    let mut s = 0.0;
                    for xn in &na {
                        for yn in &nb {
                            s += eval(xn, yn)?;
                        }
                    }
                    acc.add(w * s / 16.0);
                } else {
                    acc.add(w * eval(&xa, &mid(ib as usize, jb as usize))?);
                }
            }
            Ok(acc)
        })
        .collect();

    let mut total = NeumaierSum::new();
    for p in per_cell {
        total.merge(&p?);
    }
    Ok(Estimate { value: total.value(), std_error: 0.0, n_samples: pairs, seed: 0, method: Method::DenseOracle, core_bias: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WholeSpace;
    use std::f64::consts::PI;

    struct UnitSquare;
    impl Region for UnitSquare {
        fn dim(&self) -> usize {
            2
        }
        fn contains(&self, x: &[f64]) -> bool {
            (0.0..=1.0).contains(&x[0]) && (0.0..=1.0).contains(&x[1])
        }
    }

    #[test]
    fn zero_integrand_gives_exact_zero() {
        let b = BallDomain::unit(2);
        let plan = PairSamplingPlan::for_bounded(&b, PlanSettings { budget: 20_000, ..Default::default() }).unwrap();
        let e = estimate_double_integral(|_, _| 0.0, &b, &b, &plan, 1).unwrap();
        assert_eq!((e.value, e.std_error), (0.0, 0.0));
    }

    #[test]
    fn constant_integrand_on_the_disc() {
        let b = BallDomain::unit(2);
        let plan = PairSamplingPlan::for_bounded(&b, PlanSettings { budget: 200_000, ..Default::default() }).unwrap();
        let e = estimate_double_integral(|_, _| 1.0, &b, &b, &plan, 3).unwrap();
        assert!((e.value - PI * PI).abs() < 3.0 * e.std_error + e.core_bias, "{e:?}");
    }

    #[test]
    fn thread_count_does_not_change_the_estimate() {
        let b = BallDomain::unit(2);
        let plan = PairSamplingPlan::for_bounded(&b, PlanSettings { budget: 50_000, ..Default::default() }).unwrap();
        let g = |x: &[f64], y: &[f64]| (x[0] - y[1]).powi(2) / numerics::dist(x, y);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| estimate_double_integral(g, &b, &b, &plan, 9).unwrap());
        let c = four.install(|| estimate_double_integral(g, &b, &b, &plan, 9).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn non_finite_integrand_reports_the_pair() {
        let b = BallDomain::unit(2);
        let plan = PairSamplingPlan::for_bounded(&b, PlanSettings { budget: 1000, ..Default::default() }).unwrap();
        let r = estimate_double_integral(|_, _| f64::NAN, &b, &b, &plan, 1);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn oracle_constant_on_unit_square_is_exact() {
        let e = dense_oracle(
            |_, _| 1.0,
            &UnitSquare,
            &UnitSquare,
            [0.0, 0.0],
            [1.0, 1.0],
            &OracleOptions { n_per_axis: 16, ..Default::default() },
        )
        .unwrap();
        assert!((e.value - 1.0).abs() < 1e-12, "{}", e.value);
        let e = dense_oracle(
            |_, _| 1.0,
            &UnitSquare,
            &UnitSquare,
            [0.0, 0.0],
            [1.0, 1.0],
            &OracleOptions { n_per_axis: 16, diagonal_order: Some(2.0), ..Default::default() },
        )
        .unwrap();
        assert!((e.value - 1.0).abs() < 1e-12, "{}", e.value);
    }

    #[test]
    fn oracle_rejects_oversized_grids() {
        let opts = OracleOptions { n_per_axis: 200, ..Default::default() };
        assert!(matches!(dense_oracle(|_, _| 1.0, &UnitSquare, &UnitSquare, [0.0, 0.0], [1.0, 1.0], &opts), Err(Error::WorkCap(_))));
        let opts = OracleOptions { n_per_axis: 4, ..Default::default() };
        assert!(dense_oracle(|_, _| 1.0, &UnitSquare, &UnitSquare, [0.0, 0.0], [1.0, 1.0], &opts).is_err());
    }

    #[test]
    fn oracle_integrates_a_weak_diagonal_singularity() {
        // int int |x - y|^{-1} over the unit square (closed form).
        let exact = 4.0 / 3.0 * (1.0 - 2f64.sqrt()) + 4.0 * (1.0 + 2f64.sqrt()).ln();
        let e = dense_oracle(
            |x, y| 1.0 / numerics::dist(x, y),
            &UnitSquare,
            &UnitSquare,
            [0.0, 0.0],
            [1.0, 1.0],
            &OracleOptions { n_per_axis: 16, diagonal_order: Some(1.0), ..Default::default() },
        )
        .unwrap();
        assert!((e.value - exact).abs() < 2e-3 * exact, "{} vs {exact}", e.value);
    }

    #[test]
    fn tail_of_the_kernel_alone() {
        for (s, p, r) in [(0.5, 2.0, 0.5), (0.3, 2.0, 1.0), (0.4, 3.0, 2.0)] {
            let sp: f64 = s * p;
            let b = BallDomain::new(vec![0.3, -0.2], r).unwrap();
            let e = estimate_tail_integral(|_| 1.0, &b, sp, &TailExtent::Unbounded, 10_000, 4).unwrap();
            let exact = 2.0 * PI * r.powf(-sp) / sp;
            assert!((e.value - exact).abs() < 1e-2 * exact);
        }
    }

    #[test]
    fn tail_of_a_field_inside_the_ball_vanishes() {
        let b = BallDomain::unit(2);
        let s = BallDomain::new(vec![0.1, 0.0], 0.5).unwrap();
        let e = estimate_tail_integral(|_| 1.0, &b, 0.8, &TailExtent::Support(s), 1000, 1).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn exterior_shell_of_a_pair_plan() {
        // Symmetric split over R^2 of g = 1_{x in S or y in S} |x-y|^{-2-sp} 1_{|x-y| > rho}
        // counts each unordered pair once per order, so equals the brute formula
        // 2|S| * 2 pi rho^{-sp} / sp - |S x S part| (checked only for positivity here).
        let s = BallDomain::new(vec![0.0, 0.0], 0.5).unwrap();
        let plan = PairSamplingPlan::for_support(&s, None, 1.0, PlanSettings { budget: 20_000, ..Default::default() }).unwrap();
        assert!(matches!(plan.shells[0], Shell::Exterior { .. }));
        let e = estimate_double_integral(
            |x, y| {
                if s.contains(x) || s.contains(y) {
                    numerics::dist(x, y).powf(-3.0) * (numerics::dist(x, y) > 1.0) as u8 as f64
                } else {
                    0.0
                }
            },
            &WholeSpace { d: 2 },
            &WholeSpace { d: 2 },
            &plan,
            2,
        )
        .unwrap();
        // 2 |S| int_{|z|>1} |z|^{-3} dz = 2 * (pi/4) * 2 pi
        let exact = 2.0 * (PI * 0.25) * 2.0 * PI;
        assert!((e.value - exact).abs() < 4.0 * e.std_error.max(1e-3 * exact), "{e:?} {exact}");
    }
}
