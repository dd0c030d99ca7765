//! Grid discretization of the nonlocal p-Laplace system
//!
//! ```text
//! E(u) = (1/p) sum_{i != j} w^2 A(x_i, x_j) |D(u)(x_i, x_j)|^p / |x_i - x_j|^{d+sp}
//!        - sum_i w f(x_i) . u_i
//! ```
//!
//! on a regular grid over the bounding box of a ball `Omega`, with the nodes
//! outside `Omega` frozen at zero, together with the diagnostics evaluated on
//! its minimizers.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{self, BumpAtom, BumpField, CutoffFunction, FieldRef, VectorField};
use crate::geometry::{BallDomain, Region};
use crate::numerics::{self, stream_id, stream_rng, NeumaierSum};
use crate::quadrature::{self, Estimate, PairSamplingPlan, PlanSettings};
use crate::seminorms::{self, SeminormParams, MAX_DIM};

const PAIR_CHUNK: usize = 8192;

/// Symmetric coefficient families. Every variant takes values in `[1/L, L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoefficientKind {
    Constant {
        value: f64,
    },
    /// `L` or `1/L` by the parity of the summed cell indices of both points.
    Checkerboard {
        cell: f64,
    },
    /// Log-uniform value in `[1/L, L]` per unordered pair of cells.
    RandomSymmetric {
        cell: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    #[serde(flatten)]
    pub kind: CoefficientKind,
    /// Ellipticity bound `L > 1`.
    pub lambda: f64,
}

impl Coefficient {
    pub fn new(kind: CoefficientKind, lambda: f64) -> Result<Self> {
        let c = Self { kind, lambda };
        c.validate()?;
        Ok(c)
    }

    pub fn constant(lambda: f64) -> Self {
        Self { kind: CoefficientKind::Constant { value: 1.0 }, lambda }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 1.0) || !self.lambda.is_finite() {
            return Err(Error::param("coefficient.lambda", "ellipticity bound must exceed 1"));
        }
        match self.kind {
            CoefficientKind::Constant { value } => {
                if !(value >= 1.0 / self.lambda && value <= self.lambda) {
                    return Err(Error::param("coefficient.value", "must lie in [1/lambda, lambda]"));
                }
            }
            CoefficientKind::Checkerboard { cell } | CoefficientKind::RandomSymmetric { cell, .. } => {
                if !(cell > 0.0) || !cell.is_finite() {
                    return Err(Error::param("coefficient.cell", "must be positive"));
                }
            }
        }
        Ok(())
    }

    fn cell_key(x: &[f64], cell: f64) -> u32 {
        // FNV-style fold of the integer cell indices
        x.iter().fold(0x811c_9dc5u32, |h, &c| {
            let k = (c / cell).floor() as i64 as u32;
            (h ^ k).wrapping_mul(0x0100_0193)
        })
    }

    /// `A(x, y)`, evaluated on the lexicographically sorted pair.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let (a, b) = if x.partial_cmp(y) == Some(std::cmp::Ordering::Greater) { (y, x) } else { (x, y) };
        match self.kind {
            CoefficientKind::Constant { value } => value,
            CoefficientKind::Checkerboard { cell } => {
                let parity: i64 = a.iter().chain(b).map(|c| (c / cell).floor() as i64).sum();
                if parity.rem_euclid(2) == 0 {
                    self.lambda
                } else {
                    1.0 / self.lambda
                }
            }
            CoefficientKind::RandomSymmetric { cell, seed } => {
                let (ka, kb) = (Self::cell_key(a, cell), Self::cell_key(b, cell));
                let (lo, hi) = if ka <= kb { (ka, kb) } else { (kb, ka) };
                let t: f64 = stream_rng(seed, stream_id(0x31, lo, hi)).random();
                self.lambda.powf(2.0 * t - 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientCheck {
    pub pairs: usize,
    pub asymmetric: usize,
    pub out_of_bounds: usize,
    pub min: f64,
    pub max: f64,
}

/// Symmetry and ellipticity of `A` on random pairs from `ball`.
pub fn coefficient_check(coef: &Coefficient, ball: &BallDomain, pairs: usize, seed: u64) -> CoefficientCheck {
    let d = ball.center.len();
    let mut rng = stream_rng(seed, 0x32);
    let (mut x, mut y) = (vec![0.0; d], vec![0.0; d]);
    let mut out = CoefficientCheck { pairs, asymmetric: 0, out_of_bounds: 0, min: f64::INFINITY, max: 0.0 };
    for _ in 0..pairs {
        ball.sample_into(&mut rng, &mut x);
        ball.sample_into(&mut rng, &mut y);
        let (a, b) = (coef.eval(&x, &y), coef.eval(&y, &x));
        if a != b {
            out.asymmetric += 1;
        }
        if a < 1.0 / coef.lambda || a > coef.lambda {
            out.out_of_bounds += 1;
        }
        out.min = out.min.min(a);
        out.max = out.max.max(a);
    }
    out
}

/// Right-hand side of the system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ForceSpec {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// A catalog field pushed forward onto `Omega`.
    Catalog {
        name: String,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlocalProblem {
    pub d: usize,
    pub params: SeminormParams,
    pub omega: BallDomain,
    pub coefficient: Coefficient,
    pub force: ForceSpec,
}

impl NonlocalProblem {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.params.p < 2.0 {
            return Err(Error::param("p", "the solver requires p >= 2"));
        }
        self.params.require_sp_below(self.d)?;
        self.params.require_sp_not_one()?;
        if self.omega.center.len() != self.d || self.d > MAX_DIM {
            return Err(Error::param("omega", "dimension mismatch"));
        }
        self.coefficient.validate()?;
        if let ForceSpec::Constant { value } = &self.force {
            if value.len() != self.d {
                return Err(Error::param("force.value", "must have d entries"));
            }
        }
        Ok(())
    }

    /// Dual exponent `p' = p / (p - 1)`.
    pub fn p_prime(&self) -> f64 {
        self.params.p / (self.params.p - 1.0)
    }

    /// Integrability exponent of the force, `p'_* = p' d / (d + p' s)`.
    pub fn p_prime_star(&self) -> f64 {
        let pp = self.p_prime();
        pp * self.d as f64 / (self.d as f64 + pp * self.params.s)
    }

    pub fn force_field(&self) -> Result<Option<FieldRef>> {
        Ok(match &self.force {
            ForceSpec::Zero => None,
            ForceSpec::Constant { value } => {
                Some(Arc::new(fields::AffineField { matrix: vec![0.0; self.d * self.d], offset: value.clone() }))
            }
            ForceSpec::Catalog { name, seed } => {
                let base = fields::catalog_field(name, self.d, *seed)?;
                Some(Arc::new(fields::unscale(base, &self.omega.center, self.omega.radius, 0.0)?))
            }
        })
    }

    /// Problem on the unit disc with a checkerboard coefficient (`L = 2`,
    /// cells of width 0.25) and a constant force.
    pub fn reference(s: f64, p: f64) -> Result<Self> {
        let prob = Self {
            d: 2,
            params: SeminormParams::new(s, p)?,
            omega: BallDomain::unit(2),
            coefficient: Coefficient { kind: CoefficientKind::Checkerboard { cell: 0.25 }, lambda: 2.0 },
            force: ForceSpec::Constant { value: vec![1.0, 0.5] },
        };
        prob.validate()?;
        Ok(prob)
    }
}

/// How the interaction between `Omega` and its complement, where `u = 0`,
/// enters the discrete energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExteriorModel {
    /// Integrate the kernel over `R^d \ Omega` along a fixed set of rays from
    /// each free node, with the exact distance to the sphere.
    #[default]
    Analytic,
    /// Sum over the frozen grid nodes of the bounding box only.
    FrozenNodes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_per_axis: usize,
    #[serde(default)]
    pub exterior: ExteriorModel,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n_per_axis: 17, exterior: ExteriorModel::Analytic }
    }
}

impl GridSpec {
    pub fn new(n_per_axis: usize) -> Self {
        Self { n_per_axis, ..Default::default() }
    }
}

const RADIAL_NODES: usize = 16;

/// Ray directions and their solid-angle weights.
fn exterior_directions(d: usize) -> (Vec<f64>, Vec<f64>) {
    if d == 2 {
        let m = 128;
        let dirs = (0..m)
            .flat_map(|k| {
                let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / m as f64;
                [a.cos(), a.sin()]
            })
            .collect();
        (dirs, vec![2.0 * std::f64::consts::PI / m as f64; m])
    } else {
        let m = 512;
        let mut rng = stream_rng(0, 0x36);
        let mut dirs = vec![0.0; m * d];
        for k in 0..m {
            numerics::random_direction(&mut rng, &mut dirs[k * d..(k + 1) * d]);
        }
        (dirs, vec![numerics::unit_sphere_area(d) / m as f64; m])
    }
}

/// `int_{R^d \ Omega} A(x, y) / |x - y|^{d+sp} dy` split by ray direction:
/// entry `m` is `dtheta_m int_{rho_m}^inf A(x, x + r theta_m) r^{-1-sp} dr`,
/// with the radial part integrated in `t = r^{-sp}`.
fn exterior_weights(prob: &NonlocalProblem, x: &[f64], dirs: &[f64], dtheta: &[f64]) -> Vec<f64> {
    let d = prob.d;
    let sp = prob.params.sp();
    let om = &prob.omega;
    let v: Vec<f64> = x.iter().zip(&om.center).map(|(a, c)| a - c).collect();
    let vv = numerics::dot(&v, &v);
    let mut y = vec![0.0; d];
    dtheta
        .iter()
        .enumerate()
        .map(|(m, &dt)| {
            let th = &dirs[m * d..(m + 1) * d];
            let b = numerics::dot(&v, th);
            let rho = -b + (b * b - vv + om.radius * om.radius).max(0.0).sqrt();
            let top = rho.powf(-sp);
            let radial = if let CoefficientKind::Constant { value } = prob.coefficient.kind {
                value * top
            } else {
                (0..RADIAL_NODES)
                    .map(|q| {
                        let t = top * (q as f64 + 0.5) / RADIAL_NODES as f64;
                        let r = t.powf(-1.0 / sp);
                        for k in 0..d {
                            y[k] = x[k] + r * th[k];
                        }
                        prob.coefficient.eval(x, &y)
                    })
                    .sum::<f64>()
                    * top
                    / RADIAL_NODES as f64
            };
            dt * radial / sp
        })
        .collect()
}

/// Assembled grid: nodes, free mask, force samples and the interacting pairs
/// with their kernel weights `w^2 A / |x_i - x_j|^{d+sp}` and unit directions.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub problem: NonlocalProblem,
    pub n_per_axis: usize,
    pub h: f64,
    /// Quadrature weight `h^d`.
    pub weight: f64,
    nodes: Vec<f64>,
    free: Vec<bool>,
    force: Vec<f64>,
    pair_idx: Vec<(u32, u32)>,
    pair_kernel: Vec<f64>,
    pair_dir: Vec<f64>,
    ext_dirs: Vec<f64>,
    /// `w` times the ray weights, one row per node (zero rows when unused).
    ext_weights: Vec<f64>,
}

impl Discretization {
    pub fn new(problem: &NonlocalProblem, grid: GridSpec) -> Result<Self> {
        problem.validate()?;
        let d = problem.d;
        let n = grid.n_per_axis;
        let om = &problem.omega;
        let h = 2.0 * om.radius / (n.max(2) - 1) as f64;
        // nodes strictly inside Omega along the central axis
        let interior_per_axis = (0..n).filter(|&k| (-om.radius + k as f64 * h).abs() < om.radius).count();
        if interior_per_axis < 9 {
            return Err(Error::param("grid.n_per_axis", "need at least 9 interior nodes per axis"));
        }
        let total = n.checked_pow(d as u32).filter(|&t| t <= 200_000).ok_or_else(|| Error::WorkCap("grid too large".into()))?;
        let mut nodes = Vec::with_capacity(total * d);
        let mut free = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rest = idx;
            let start = nodes.len();
            for k in 0..d {
                nodes.push(om.center[k] - om.radius + (rest % n) as f64 * h);
                rest /= n;
            }
            free.push(om.contains(&nodes[start..]));
        }
        let force = match problem.force_field()? {
            None => vec![0.0; total * d],
            Some(f) => {
                let mut out = vec![0.0; total * d];
                for i in 0..total {
                    if free[i] {
                        f.eval_into(&nodes[i * d..(i + 1) * d], &mut out[i * d..(i + 1) * d]);
                    }
                }
                out
            }
        };
        let weight = h.powi(d as i32);
        let expo = d as f64 + problem.params.sp();
        let mut pair_idx = Vec::new();
        let mut pair_kernel = Vec::new();
        let mut pair_dir = Vec::new();
        let analytic = grid.exterior == ExteriorModel::Analytic;
        for i in 0..total {
            for j in i + 1..total {
                if !(free[i] && free[j]) && (analytic || !free[i] && !free[j]) {
                    continue;
                }
                let (xi, xj) = (&nodes[i * d..(i + 1) * d], &nodes[j * d..(j + 1) * d]);
                let r = numerics::dist(xi, xj);
                pair_idx.push((i as u32, j as u32));
                pair_kernel.push(weight * weight * problem.coefficient.eval(xi, xj) * r.powf(-expo));
                pair_dir.extend(xi.iter().zip(xj).map(|(a, b)| (a - b) / r));
            }
        }
        let (ext_dirs, dtheta) = exterior_directions(d);
        let mut ext_weights = Vec::new();
        if analytic {
            ext_weights = vec![0.0; total * dtheta.len()];
            for i in (0..total).filter(|&i| free[i]) {
                let row = exterior_weights(problem, &nodes[i * d..(i + 1) * d], &ext_dirs, &dtheta);
                for (slot, v) in ext_weights[i * dtheta.len()..(i + 1) * dtheta.len()].iter_mut().zip(row) {
                    *slot = weight * v;
                }
            }
        }
        Ok(Self {
            problem: problem.clone(),
            n_per_axis: n,
            h,
            weight,
            nodes,
            free,
            force,
            pair_idx,
            pair_kernel,
            pair_dir,
            ext_dirs,
            ext_weights,
        })
    }

    pub fn d(&self) -> usize {
        self.problem.d
    }

    pub fn node_count(&self) -> usize {
        self.free.len()
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|f| **f).count()
    }

    pub fn pair_count(&self) -> usize {
        self.pair_idx.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.nodes[i * d..(i + 1) * d]
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.free[i]
    }

    pub fn zero_field(&self) -> DiscreteField {
        DiscreteField { values: vec![0.0; self.nodes.len()] }
    }

    /// Nodal samples of `phi`, zero on frozen nodes.
    pub fn sample(&self, phi: &dyn VectorField) -> DiscreteField {
        let d = self.d();
        let mut values = vec![0.0; self.nodes.len()];
        for i in 0..self.node_count() {
            if self.free[i] {
                phi.eval_into(self.node(i), &mut values[i * d..(i + 1) * d]);
            }
        }
        DiscreteField { values }
    }

    fn check_shape(&self, u: &DiscreteField) -> Result<()> {
        if u.values.len() != self.nodes.len() {
            return Err(Error::param("field", "nodal vector has the wrong length"));
        }
        Ok(())
    }

    #[inline]
    fn projected(&self, k: usize, u: &[f64]) -> f64 {
        let d = self.d();
        let (i, j) = self.pair_idx[k];
        let (i, j) = (i as usize, j as usize);
        let e = &self.pair_dir[k * d..(k + 1) * d];
        (0..d).map(|c| (u[i * d + c] - u[j * d + c]) * e[c]).sum()
    }

    fn chunk_ranges(&self) -> Vec<(usize, usize)> {
        let m = self.pair_count();
        (0..m.div_ceil(PAIR_CHUNK)).map(|c| (c * PAIR_CHUNK, ((c + 1) * PAIR_CHUNK).min(m))).collect()
    }

    fn non_finite(&self, k: usize, value: f64) -> Error {
        let (i, j) = self.pair_idx[k];
        Error::NonFinite { x: self.node(i as usize).to_vec(), y: self.node(j as usize).to_vec(), value }
    }

    fn ext_count(&self) -> usize {
        self.ext_dirs.len() / self.d()
    }

    /// Calls `f(node, weight, direction)` for every exterior ray with nonzero weight.
    fn for_each_ray(&self, mut f: impl FnMut(usize, f64, &[f64])) {
        let (d, m) = (self.d(), self.ext_count());
        if self.ext_weights.is_empty() {
            return;
        }
        for i in 0..self.node_count() {
            if !self.free[i] {
                continue;
            }
            for k in 0..m {
                f(i, self.ext_weights[i * m + k], &self.ext_dirs[k * d..(k + 1) * d]);
            }
        }
    }

    fn ray_projection(&self, u: &[f64], i: usize, th: &[f64]) -> f64 {
        let d = self.d();
        numerics::dot(&u[i * d..(i + 1) * d], th)
    }

    fn force_pairing(&self, u: &[f64]) -> f64 {
        let mut s = NeumaierSum::new();
        for (f, v) in self.force.iter().zip(u) {
            s.add(f * v);
        }
        self.weight * s.value()
    }

    /// Discrete energy.
    pub fn energy(&self, u: &DiscreteField) -> Result<f64> {
        self.check_shape(u)?;
        let p = self.problem.params.p;
        let parts: Vec<Result<NeumaierSum>> = self
            .chunk_ranges()
            .par_iter()
            .map(|&(a, b)| {
                let mut s = NeumaierSum::new();
                for k in a..b {
                    let t = self.pair_kernel[k] * pow_abs(self.projected(k, &u.values), p);
                    if !t.is_finite() {
                        return Err(self.non_finite(k, t));
                    }
                    s.add(t);
                }
                Ok(s)
            })
            .collect();
        let mut total = NeumaierSum::new();
        for part in parts {
            total.merge(&part?);
        }
        self.for_each_ray(|i, c, th| total.add(c * pow_abs(self.ray_projection(&u.values, i, th), p)));
        // each unordered pair, and each (Omega, complement) pair, appears twice
        Ok(2.0 / p * total.value() - self.force_pairing(&u.values))
    }

    /// `E(u + alpha dir) - E(u)` without subtracting two large energies.
    pub fn energy_change(&self, u: &DiscreteField, dir: &DiscreteField, alpha: f64) -> Result<f64> {
        self.check_shape(u)?;
        self.check_shape(dir)?;
        let p = self.problem.params.p;
        let parts: Vec<Result<NeumaierSum>> = self
            .chunk_ranges()
            .par_iter()
            .map(|&(a, b)| {
                let mut s = NeumaierSum::new();
                for k in a..b {
                    let d0 = self.projected(k, &u.values);
                    let dd = alpha * self.projected(k, &dir.values);
                    let t = self.pair_kernel[k] * pow_abs_change(d0, dd, p);
                    if !t.is_finite() {
                        return Err(self.non_finite(k, t));
                    }
                    s.add(t);
                }
                Ok(s)
            })
            .collect();
        let mut total = NeumaierSum::new();
        for part in parts {
            total.merge(&part?);
        }
        self.for_each_ray(|i, c, th| {
            let b = self.ray_projection(&u.values, i, th);
            total.add(c * pow_abs_change(b, alpha * self.ray_projection(&dir.values, i, th), p));
        });
        Ok(2.0 / p * total.value() - alpha * self.force_pairing(&dir.values))
    }

    /// Partial derivatives `dE/du_i`; frozen components are zero.
    pub fn gradient(&self, u: &DiscreteField) -> Result<DiscreteField> {
        self.check_shape(u)?;
        let d = self.d();
        let p = self.problem.params.p;
        let parts: Vec<Result<Vec<f64>>> = self
            .chunk_ranges()
            .par_iter()
            .map(|&(a, b)| {
                let mut g = vec![0.0; self.nodes.len()];
                for k in a..b {
                    let dk = self.projected(k, &u.values);
                    let c = 2.0 * self.pair_kernel[k] * pow_abs(dk, p - 2.0) * dk;
                    if !c.is_finite() {
                        return Err(self.non_finite(k, c));
                    }
                    let (i, j) = self.pair_idx[k];
                    let (i, j) = (i as usize, j as usize);
                    let e = &self.pair_dir[k * d..(k + 1) * d];
                    for q in 0..d {
                        g[i * d + q] += c * e[q];
                        g[j * d + q] -= c * e[q];
                    }
                }
                Ok(g)
            })
            .collect();
        let mut g = vec![0.0; self.nodes.len()];
        for part in parts {
            for (a, b) in g.iter_mut().zip(part?) {
                *a += b;
            }
        }
        self.for_each_ray(|i, c, th| {
            let b = self.ray_projection(&u.values, i, th);
            let f = 2.0 * c * pow_abs(b, p - 2.0) * b;
            for q in 0..d {
                g[i * d + q] += f * th[q];
            }
        });
        for i in 0..self.node_count() {
            for q in 0..d {
                let at = i * d + q;
                g[at] = if self.free[i] { g[at] - self.weight * self.force[at] } else { 0.0 };
            }
        }
        Ok(DiscreteField { values: g })
    }

    /// Dual norm of a gradient in the discrete `L^2` inner product.
    pub fn riesz_norm(&self, g: &DiscreteField) -> f64 {
        (g.values.iter().map(|v| v * v).sum::<f64>() / self.weight).sqrt()
    }

    /// Central finite-difference check of the gradient along `n_dirs` random
    /// directions at `u`. Returns the largest relative discrepancy, which is
    /// only informative where the gradient is not close to zero.
    pub fn gradient_fd_check(&self, u: &DiscreteField, n_dirs: usize, seed: u64) -> Result<f64> {
        let g = self.gradient(u)?;
        let d = self.d();
        let mut rng = stream_rng(seed, 0x33);
        let scale = u.values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        let mut worst = 0.0f64;
        for _ in 0..n_dirs {
            let mut dir = self.zero_field();
            for i in 0..self.node_count() {
                if self.free[i] {
                    for q in 0..d {
                        dir.values[i * d + q] = rng.sample(StandardNormal);
                    }
                }
            }
            // energy_change has no cancellation, so a small step costs no accuracy
            let t = 1e-6 * scale;
            let fd = (self.energy_change(u, &dir, t)? - self.energy_change(u, &dir, -t)?) / (2.0 * t);
            let an: f64 = g.values.iter().zip(&dir.values).map(|(a, b)| a * b).sum();
            worst = worst.max((fd - an).abs() / an.abs().max(1e-300));
        }
        Ok(worst)
    }

    /// Discrete `E(u, phi) - sum_i w f_i . phi_i` with its magnitude scale.
    pub fn weak_residual(&self, u: &DiscreteField, phi: &DiscreteField) -> Result<WeakResidual> {
        self.check_shape(phi)?;
        let g = self.gradient(u)?;
        let d = self.d();
        let p = self.problem.params.p;
        let mut phi_free = phi.clone();
        for i in 0..self.node_count() {
            if !self.free[i] {
                phi_free.values[i * d..(i + 1) * d].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let residual: f64 = g.values.iter().zip(&phi_free.values).map(|(a, b)| a * b).sum();
        let mut scale = NeumaierSum::new();
        for k in 0..self.pair_count() {
            let du = self.projected(k, &u.values);
            scale.add(2.0 * self.pair_kernel[k] * pow_abs(du, p - 1.0) * self.projected(k, &phi_free.values).abs());
        }
        self.for_each_ray(|i, c, th| {
            let b = self.ray_projection(&u.values, i, th);
            scale.add(2.0 * c * pow_abs(b, p - 1.0) * self.ray_projection(&phi_free.values, i, th).abs());
        });
        let force: f64 = self.force.iter().zip(&phi_free.values).map(|(f, v)| (f * v).abs()).sum();
        let scale = scale.value() + self.weight * force;
        Ok(WeakResidual { residual, scale, relative: if scale > 0.0 { residual.abs() / scale } else { 0.0 } })
    }

    /// For `p = 2` the energy is quadratic; solves the normal equations on the
    /// free nodes with a dense Cholesky factorization.
    pub fn dense_linear_solve(&self) -> Result<DiscreteField> {
        if self.problem.params.p != 2.0 {
            return Err(Error::param("p", "the dense linear oracle needs p = 2"));
        }
        let d = self.d();
        let mut map = vec![usize::MAX; self.node_count()];
        let mut m = 0;
        for i in 0..self.node_count() {
            if self.free[i] {
                map[i] = m;
                m += 1;
            }
        }
        if m * d > 6000 {
            return Err(Error::WorkCap("dense oracle limited to 6000 unknowns".into()));
        }
        let mut hm = DMatrix::<f64>::zeros(m * d, m * d);
        for k in 0..self.pair_count() {
            let (i, j) = self.pair_idx[k];
            let (mi, mj) = (map[i as usize], map[j as usize]);
            let e = &self.pair_dir[k * d..(k + 1) * d];
            let c = 2.0 * self.pair_kernel[k];
            for a in 0..d {
                for b in 0..d {
                    let v = c * e[a] * e[b];
                    if mi != usize::MAX {
                        hm[(mi * d + a, mi * d + b)] += v;
                    }
                    if mj != usize::MAX {
                        hm[(mj * d + a, mj * d + b)] += v;
                    }
                    if mi != usize::MAX && mj != usize::MAX {
                        hm[(mi * d + a, mj * d + b)] -= v;
                        hm[(mj * d + a, mi * d + b)] -= v;
                    }
                }
            }
        }
        self.for_each_ray(|i, c, th| {
            let mi = map[i];
            for a in 0..d {
                for b in 0..d {
                    hm[(mi * d + a, mi * d + b)] += 2.0 * c * th[a] * th[b];
                }
            }
        });
        let mut rhs = DVector::<f64>::zeros(m * d);
        for i in 0..self.node_count() {
            if map[i] != usize::MAX {
                for a in 0..d {
                    rhs[map[i] * d + a] = self.weight * self.force[i * d + a];
                }
            }
        }
        let chol = hm.cholesky().ok_or_else(|| Error::Degenerate("stiffness matrix is not positive definite".into()))?;
        let sol = chol.solve(&rhs);
        let mut out = self.zero_field();
        for i in 0..self.node_count() {
            if map[i] != usize::MAX {
                out.values[i * d..(i + 1) * d].copy_from_slice(&sol.as_slice()[map[i] * d..(map[i] + 1) * d]);
            }
        }
        Ok(out)
    }

    /// Multilinear interpolant of nodal values, zero outside the grid box.
    pub fn interpolant(&self, u: &DiscreteField) -> GridInterpolant {
        let d = self.d();
        GridInterpolant {
            d,
            n: self.n_per_axis,
            lo: (0..d).map(|k| self.problem.omega.center[k] - self.problem.omega.radius).collect(),
            h: self.h,
            values: u.values.clone(),
        }
    }
}

#[inline]
fn pow_abs(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if p == 1.0 {
        x.abs()
    } else if p == 2.0 {
        x * x
    } else if p == 3.0 {
        x.abs() * x * x
    } else if x == 0.0 {
        0.0
    } else {
        x.abs().powf(p)
    }
}

/// `|b + t|^p - |b|^p`, accurate when `t` is small relative to `b`.
#[inline]
fn pow_abs_change(b: f64, t: f64, p: f64) -> f64 {
    if p == 2.0 {
        return t * (2.0 * b + t);
    }
    let a = b + t;
    if b != 0.0 && a.signum() == b.signum() {
        let ratio = (t * b.signum()) / b.abs();
        pow_abs(b, p) * (p * ratio.ln_1p()).exp_m1()
    } else {
        pow_abs(a, p) - pow_abs(b, p)
    }
}

/// Nodal values, `d` components per node in node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteField {
    pub values: Vec<f64>,
}

impl DiscreteField {
    pub fn sup_distance(&self, other: &DiscreteField) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))
    }

    fn axpy(&mut self, alpha: f64, x: &DiscreteField) {
        self.values.iter_mut().zip(&x.values).for_each(|(a, b)| *a += alpha * b);
    }

    fn dot(&self, other: &DiscreteField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    pub residual: f64,
    pub scale: f64,
    pub relative: f64,
}

/// Multilinear interpolation on the solver grid.
#[derive(Debug, Clone)]
pub struct GridInterpolant {
    d: usize,
    n: usize,
    lo: Vec<f64>,
    h: f64,
    values: Vec<f64>,
}

impl VectorField for GridInterpolant {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for k in 0..d {
            let t = (x[k] - self.lo[k]) / self.h;
            if !(t >= 0.0 && t <= (self.n - 1) as f64) {
                return;
            }
            let i = (t.floor() as usize).min(self.n - 2);
            base[k] = i;
            frac[k] = t - i as f64;
        }
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                idx += (base[k] + bit) * stride;
                stride *= self.n;
            }
            if w != 0.0 {
                for q in 0..d {
                    out[q] += w * self.values[idx * d + q];
                }
            }
        }
    }

    fn support(&self) -> Option<BallDomain> {
        let hi: Vec<f64> = self.lo.iter().map(|l| l + self.h * (self.n - 1) as f64).collect();
        Some(BallDomain::enclosing_box(&self.lo, &hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// The line search could not decrease the energy at working precision.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Target for the dual gradient norm.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Start from random nodal values instead of zero.
    pub random_init: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 2000, seed: 0, random_init: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelResidual {
    pub id: usize,
    #[serde(flatten)]
    pub residual: WeakResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub final_energy: f64,
    /// Energy after each accepted step; the first entry is the initial energy.
    pub energy_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    pub weak_residuals: Vec<PanelResidual>,
    pub iterations: usize,
    pub status: SolveStatus,
    pub free_nodes: usize,
    pub pairs: usize,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Polak-Ribiere+ conjugate gradients with an Armijo backtracking line
/// search (factor 0.5, `c1 = 1e-4`). The first trial step comes from a
/// secant on the directional derivative, which is exact for `p = 2`.
pub fn solve(disc: &Discretization, opts: &SolveOptions) -> Result<(DiscreteField, SolveReport)> {
    if !(opts.tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    let start = Instant::now();
    let d = disc.d();
    let mut u = disc.zero_field();
    if opts.random_init {
        let mut rng = stream_rng(opts.seed, 0x34);
        for i in 0..disc.node_count() {
            if disc.is_free(i) {
                for q in 0..d {
                    u.values[i * d + q] = rng.random_range(-1.0..1.0);
                }
            }
        }
    }
    let mut energy = disc.energy(&u)?;
    let mut energy_trace = vec![energy];
    let mut g = disc.gradient(&u)?;
    let mut grad_norm_trace = Vec::new();
    let mut dir = g.clone();
    dir.values.iter_mut().for_each(|v| *v = -*v);
    let mut step = 0.0;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    while iterations <= opts.max_iter {
        let gn = disc.riesz_norm(&g);
        grad_norm_trace.push(gn);
        if gn <= opts.tol {
            status = SolveStatus::Converged;
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            dir = g.clone();
            dir.values.iter_mut().for_each(|v| *v = -*v);
            slope = g.dot(&dir);
        }
        let dir_sup = dir.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let trial = if step > 0.0 { step } else { 0.1 * disc.problem.omega.radius / dir_sup };
        let mut probe = u.clone();
        probe.axpy(trial, &dir);
        let slope_trial = disc.gradient(&probe)?.dot(&dir);
        let mut alpha = if slope_trial > slope { trial * slope / (slope - slope_trial) } else { 2.0 * trial };
        let mut accepted = None;
        for _ in 0..60 {
            let change = disc.energy_change(&u, &dir, alpha)?;
            if change <= 1e-4 * alpha * slope {
                accepted = Some(change);
                break;
            }
            alpha *= 0.5;
        }
        let Some(change) = accepted else {
            if dir.dot(&g) == -g.dot(&g) {
                status = SolveStatus::Stalled;
                break;
            }
            // retry from steepest descent
            dir = g.clone();
            dir.values.iter_mut().for_each(|v| *v = -*v);
            step = 0.0;
            grad_norm_trace.pop();
            continue;
        };
        if change > 0.0 {
            return Err(Error::Solver(format!("line search accepted an energy increase of {change:e}")));
        }
        u.axpy(alpha, &dir);
        energy += change;
        energy_trace.push(energy);
        step = alpha;
        let g_new = disc.gradient(&u)?;
        let beta = (g_new.dot(&g_new) - g_new.dot(&g)) / g.dot(&g);
        let beta = beta.max(0.0);
        for (dv, gv) in dir.values.iter_mut().zip(&g_new.values) {
            *dv = -gv + beta * *dv;
        }
        g = g_new;
        iterations += 1;
    }
    let final_energy = disc.energy(&u)?;
    let panel = test_panel(&disc.problem, 10, opts.seed)?;
    let weak_residuals = panel
        .iter()
        .enumerate()
        .map(|(id, phi)| Ok(PanelResidual { id, residual: disc.weak_residual(&u, &disc.sample(&**phi))? }))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        u,
        SolveReport {
            final_energy,
            energy_trace,
            grad_norm_trace,
            weak_residuals,
            iterations,
            status,
            free_nodes: disc.free_count(),
            pairs: disc.pair_count(),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Random smooth bumps compactly supported in `Omega`, used as weak-form
/// test fields.
pub fn test_panel(prob: &NonlocalProblem, count: usize, seed: u64) -> Result<Vec<FieldRef>> {
    let d = prob.d;
    let om = &prob.omega;
    let mut rng = stream_rng(seed, 0x35);
    (0..count)
        .map(|_| {
            let radius = om.radius * rng.random_range(0.2..0.5);
            let mut dirv = vec![0.0; d];
            numerics::random_direction(&mut rng, &mut dirv);
            let reach = rng.random_range(0.0..0.9) * (om.radius - radius);
            let center = (0..d).map(|k| om.center[k] + reach * dirv[k]).collect();
            let amplitude = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let skew = Some((0..d * d).map(|_| rng.sample::<f64, _>(StandardNormal) / radius).collect());
            Ok(Arc::new(BumpField::new(vec![BumpAtom { center, radius, amplitude, skew }])?) as FieldRef)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaccioppoliReport {
    pub center: Vec<f64>,
    pub radius: f64,
    /// `int_B int_B |psi u(x) - psi u(y)|^p / |x - y|^{d+sp}`: the off-diagonal
    /// node sum plus `lhs_diagonal`.
    pub lhs: f64,
    /// Contribution of each node's own cell, from the central-difference
    /// gradient of `psi u` on a disc of the cell's volume.
    pub lhs_diagonal: f64,
    /// `r^{-sp} int_B |u|^p`.
    pub mass: f64,
    /// `(int_{R^d \ B} |u|^{p-1} / |x0 - y|^{d+sp}) int_B |u|`.
    pub tail: f64,
    /// `r^{d+sp'} (avg_B |f|^{p'_*})^{p'/p'_*}`.
    pub force: f64,
    pub ratio: f64,
    pub grid_n: usize,
}

/// Discrete Caccioppoli quantities for a nodal solution on the ball `b`,
/// with the cutoff `psi` (supported in the half ball).
pub fn caccioppoli_check(disc: &Discretization, u: &DiscreteField, b: &BallDomain, psi: &CutoffFunction) -> Result<CaccioppoliReport> {
    disc.check_shape(u)?;
    let prob = &disc.problem;
    let d = prob.d;
    if b.center.len() != d {
        return Err(Error::param("ball", "dimension mismatch"));
    }
    if numerics::dist(&b.center, &prob.omega.center) + b.radius > prob.omega.radius + 1e-12 {
        return Err(Error::OutsideDomain("the Caccioppoli ball must lie inside Omega".into()));
    }
    let (s, p) = (prob.params.s, prob.params.p);
    let w = disc.weight;
    let expo = d as f64 + s * p;
    let norm_at = |i: usize| numerics::norm(&u.values[i * d..(i + 1) * d]);
    let inside: Vec<usize> = (0..disc.node_count()).filter(|&i| b.contains(disc.node(i))).collect();
    if inside.len() < 2 {
        return Err(Error::param("ball", "contains fewer than two grid nodes"));
    }
    let cut: Vec<f64> = inside
        .iter()
        .flat_map(|&i| {
            let c = psi.value(disc.node(i));
            (0..d).map(move |q| c * u.values[i * d + q])
        })
        .collect();
    let lhs_parts: Vec<NeumaierSum> = (0..inside.len())
        .into_par_iter()
        .map(|a| {
            let mut acc = NeumaierSum::new();
            for bb in a + 1..inside.len() {
                let r = numerics::dist(disc.node(inside[a]), disc.node(inside[bb]));
                let diff = numerics::dist(&cut[a * d..(a + 1) * d], &cut[bb * d..(bb + 1) * d]);
                acc.add(pow_abs(diff, p) * r.powf(-expo));
            }
            acc
        })
        .collect();
    let mut lhs = NeumaierSum::new();
    lhs_parts.iter().for_each(|x| lhs.merge(x));
    let lhs_off = 2.0 * w * w * lhs.value();

    // int_{|z| < rho} |G z|^p / |z|^{d+sp} dz = rho^{p-sp} / (p - sp) int_S |G theta|^p
    let rho = disc.h * (1.0 / numerics::unit_ball_volume(d)).powf(1.0 / d as f64);
    let (dirs, dtheta) = exterior_directions(d);
    let n = disc.n_per_axis;
    let psi_u = |node: usize, q: usize| psi.value(disc.node(node)) * u.values[node * d + q];
    let mut diag = NeumaierSum::new();
    let mut grad = vec![0.0; d * d];
    for &i in &inside {
        let mut stride = 1;
        for k in 0..d {
            let pos = (i / stride) % n;
            if pos == 0 || pos == n - 1 {
                grad.iter_mut().for_each(|g| *g = 0.0);
                break;
            }
            for q in 0..d {
                grad[q * d + k] = (psi_u(i + stride, q) - psi_u(i - stride, q)) / (2.0 * disc.h);
            }
            stride *= n;
        }
        let mut ang = 0.0;
        for (m, dt) in dtheta.iter().enumerate() {
            let th = &dirs[m * d..(m + 1) * d];
            let gt: f64 = (0..d).map(|q| numerics::dot(&grad[q * d..(q + 1) * d], th).powi(2)).sum::<f64>().sqrt();
            ang += dt * pow_abs(gt, p);
        }
        diag.add(w * ang);
    }
    let lhs_diagonal = diag.value() * rho.powf(p - s * p) / (p - s * p);
    let lhs = lhs_off + lhs_diagonal;

    let mass = b.radius.powf(-s * p) * w * inside.iter().map(|&i| pow_abs(norm_at(i), p)).sum::<f64>();
    let mut tail_integral = NeumaierSum::new();
    for i in 0..disc.node_count() {
        if !b.contains(disc.node(i)) {
            let n = norm_at(i);
            if n > 0.0 {
                tail_integral.add(w * n.powf(p - 1.0) * numerics::dist(&b.center, disc.node(i)).powf(-expo));
            }
        }
    }
    let l1 = w * inside.iter().map(|&i| norm_at(i)).sum::<f64>();
    let tail = tail_integral.value() * l1;

    let pp = prob.p_prime();
    let pps = prob.p_prime_star();
    let favg = inside.iter().map(|&i| numerics::norm(&disc.force[i * d..(i + 1) * d]).powf(pps)).sum::<f64>() / inside.len() as f64;
    let force = b.radius.powf(d as f64 + s * pp) * favg.powf(pp / pps);
    let rhs = mass + tail + force;
    for (name, v) in [("lhs", lhs), ("mass", mass), ("tail", tail), ("force", force)] {
        if !v.is_finite() {
            return Err(Error::Solver(format!("Caccioppoli {name} term is not finite ({v})")));
        }
    }
    Ok(CaccioppoliReport {
        center: b.center.clone(),
        radius: b.radius,
        lhs,
        lhs_diagonal,
        mass,
        tail,
        force,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        grid_n: disc.n_per_axis,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareReport {
    pub t: f64,
    pub q: f64,
    pub q_star: f64,
    /// `(avg_B |v / r^t|^{q*})^{1/q*}`.
    pub lhs: Estimate,
    /// `(int_B avg_B |v(x) - v(y)|^q / |x - y|^{d+tq})^{1/q}`.
    pub rhs: Estimate,
    pub ratio: f64,
}

/// Fractional Poincare-Sobolev quotient for `v` compactly supported in `b`.
pub fn poincare_sobolev_check(
    v: &dyn VectorField,
    b: &BallDomain,
    t: f64,
    q: f64,
    settings: PlanSettings,
    seed: u64,
) -> Result<PoincareReport> {
    let d = b.center.len();
    let params = SeminormParams::new(t, q)?;
    if t * q >= d as f64 {
        return Err(Error::HypothesisUnmet(format!("tq = {} must be below d = {d}", t * q)));
    }
    let q_star = d as f64 * q / (d as f64 - t * q);
    let vol = b.volume();
    let r_t = b.radius.powf(t);
    let lhs_p = quadrature::estimate_volume_integral(
        |x| {
            let mut vx = [0.0; MAX_DIM];
            v.eval_into(x, &mut vx[..d]);
            pow_abs(numerics::norm(&vx[..d]) / r_t, q_star)
        },
        b,
        settings.budget,
        seed,
    )?;
    let plan = PairSamplingPlan::for_bounded(b, settings)?.with_core_exponent(params.diagonal_order());
    let w = seminorms::w_seminorm_p(v, b, &params, &plan, seed)?;
    if lhs_p.value == 0.0 && w.value == 0.0 {
        return Err(Error::Degenerate("both sides vanish (zero field)".into()));
    }
    let root = |e: &Estimate, power: f64| {
        let m = e.value.max(0.0) / vol;
        let val = m.powf(1.0 / power);
        // delta method
        let se = if m > 0.0 { val / power * (e.std_error / vol) / m } else { 0.0 };
        Estimate { value: val, std_error: se, ..e.clone() }
    };
    let lhs = root(&lhs_p, q_star);
    let rhs = root(&w, q);
    Ok(PoincareReport { t, q, q_star, ratio: lhs.value / rhs.value, lhs, rhs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPairRow {
    pub delta: f64,
    /// `||U||_{L^{p+delta}(nu)}^{p+delta}` on `B x B`.
    pub value: Estimate,
    pub doubled: Estimate,
    pub relative_change: f64,
    pub stable: bool,
    /// Smoothness index of the equivalent seminorm, `s + delta eps / (p + delta)`.
    pub seminorm_s: f64,
    pub seminorm_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPairReport {
    pub epsilon: f64,
    pub params: SeminormParams,
    pub rows: Vec<DualPairRow>,
    /// Largest `delta` such that it and every smaller grid value are stable.
    pub largest_stable_delta: Option<f64>,
    /// `|u|_W^p` on `B` from an independent stream, to compare with `delta = 0`.
    pub direct_w: Estimate,
    /// `|row(0) - direct| / combined standard error`.
    pub delta0_sigmas: Option<f64>,
}

/// Integrability-gain table for `U(x, y) = |u(x) - u(y)| / |x - y|^{s+eps}`
/// against `nu = |x - y|^{-(d - eps p)} dx dy` on `B x B`.
pub fn dual_pair_diagnostic(
    u: &dyn VectorField,
    b: &BallDomain,
    params: &SeminormParams,
    epsilon: f64,
    deltas: &[f64],
    settings: PlanSettings,
    seed: u64,
) -> Result<DualPairReport> {
    params.validate()?;
    if !(epsilon > 0.0 && epsilon < 1.0 - params.s) {
        return Err(Error::param("epsilon", "must lie in (0, 1 - s)"));
    }
    if deltas.is_empty() || deltas.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::param("deltas", "need nonnegative values"));
    }
    let d = b.center.len();
    let (s, p) = (params.s, params.p);
    let a_min = deltas.iter().map(|&dl| (p + dl) * (1.0 - s) - dl * epsilon).fold(f64::INFINITY, f64::min);
    if !(a_min > 0.0) {
        return Err(Error::param("deltas", "integrand not integrable on the diagonal for this delta"));
    }
    let plan = PairSamplingPlan::for_bounded(b, settings)?.with_core_exponent(a_min);
    let integrand = |x: &[f64], y: &[f64], out: &mut [f64]| {
        let mut ux = [0.0; MAX_DIM];
        let mut uy = [0.0; MAX_DIM];
        u.eval_into(x, &mut ux[..d]);
        u.eval_into(y, &mut uy[..d]);
        let diff = numerics::dist(&ux[..d], &uy[..d]);
        let r = numerics::dist(x, y);
        for (o, &dl) in out.iter_mut().zip(deltas) {
            let q = p + dl;
            *o = if diff == 0.0 { 0.0 } else { diff.powf(q) * r.powf(-(d as f64 + q * s + dl * epsilon)) };
        }
    };
    let first = quadrature::estimate_double_integrals(deltas.len(), integrand, b, b, &plan, seed)?;
    let second = quadrature::estimate_double_integrals(deltas.len(), integrand, b, b, &plan.scaled_budget(2.0), seed.wrapping_add(1))?;
    let mut rows = Vec::new();
    for ((&delta, v1), v2) in deltas.iter().zip(first).zip(second) {
        let rel = if v2.value != 0.0 { (v2.value - v1.value).abs() / v2.value.abs() } else { 0.0 };
        let gap = (v2.value - v1.value).abs();
        let stable = v1.value.is_finite() && (rel <= 0.1 || gap <= 3.0 * v1.combined_error(&v2));
        rows.push(DualPairRow {
            delta,
            relative_change: rel,
            stable,
            seminorm_s: s + delta * epsilon / (p + delta),
            seminorm_p: p + delta,
            value: v1,
            doubled: v2,
        });
    }
    let mut order: Vec<&DualPairRow> = rows.iter().collect();
    order.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    let largest_stable_delta = order.iter().take_while(|r| r.stable).last().map(|r| r.delta);
    let direct_plan = PairSamplingPlan::for_bounded(b, settings)?.with_core_exponent(params.diagonal_order());
    let direct_w = seminorms::w_seminorm_p(u, b, params, &direct_plan, seed.wrapping_add(2))?;
    let delta0_sigmas = rows.iter().find(|r| r.delta == 0.0).map(|r| {
        let se = r.value.combined_error(&direct_w);
        let gap = (r.value.value - direct_w.value).abs();
        if se > 0.0 {
            gap / se
        } else if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    });
    Ok(DualPairReport { epsilon, params: *params, rows, largest_stable_delta, direct_w, delta0_sigmas })
}
