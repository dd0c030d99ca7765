//! Batch entry point shared by the `nonlocal-korn` binary.
//!
//! A run reads an [`ExperimentConfig`], executes one command and writes
//! `<out>/<command>.json` plus CSV sidecars. Reports are canonical JSON:
//! object keys sorted, floats printed as `{:.12e}`, so repeated runs with the
//! same configuration and seed are byte-identical.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::extension::{self, ReflectionConstants};
use crate::fields::{self, CutoffFunction, FieldRef};
use crate::geometry::{self, BallDomain, Domain, DomainSpec, EpigraphDomain, Profile, ProfileSpec};
use crate::korn::{self, SearchFamily, SearchOptions};
use crate::nonlocal::{self, DiscreteField, Discretization, GridSpec, NonlocalProblem, SolveOptions};
use crate::quadrature::PlanSettings;
use crate::seminorms::{self, SeminormParams};

pub const VERSION: &str = concat!("nonlocal-korn ", env!("CARGO_PKG_VERSION"));

/// Output directory when `--out` is not given.
pub const DEFAULT_OUT: &str = "nonlocal-korn-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

fn default_seed() -> u64 {
    0
}

/// One experiment: a command, its parameters and the global seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub command: Command,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "params", rename_all = "kebab-case")]
pub enum Command {
    Seminorm(SeminormCmd),
    Korn(KornCmd),
    ExtendCheck(ExtendCheckCmd),
    GeomCheck(GeomCheckCmd),
    Solve(SolveCmd),
    Caccioppoli(CaccioppoliCmd),
    DualPair(DualPairCmd),
    Jbound(JboundCmd),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Seminorm(_) => "seminorm",
            Command::Korn(_) => "korn",
            Command::ExtendCheck(_) => "extend-check",
            Command::GeomCheck(_) => "geom-check",
            Command::Solve(_) => "solve",
            Command::Caccioppoli(_) => "caccioppoli",
            Command::DualPair(_) => "dual-pair",
            Command::Jbound(_) => "jbound",
        }
    }

    /// Default parameters for a command name.
    pub fn default_for(name: CommandName) -> Self {
        match name {
            CommandName::Seminorm => Command::Seminorm(SeminormCmd::default()),
            CommandName::Korn => Command::Korn(KornCmd::default()),
            CommandName::ExtendCheck => Command::ExtendCheck(ExtendCheckCmd::default()),
            CommandName::GeomCheck => Command::GeomCheck(GeomCheckCmd::default()),
            CommandName::Solve => Command::Solve(SolveCmd::default()),
            CommandName::Caccioppoli => Command::Caccioppoli(CaccioppoliCmd::default()),
            CommandName::DualPair => Command::DualPair(DualPairCmd::default()),
            CommandName::Jbound => Command::Jbound(JboundCmd::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CommandName {
    Seminorm,
    Korn,
    ExtendCheck,
    GeomCheck,
    Solve,
    Caccioppoli,
    DualPair,
    Jbound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeminormCmd {
    pub field: String,
    pub field_seed: u64,
    pub domain: DomainSpec,
    pub s: f64,
    pub p: f64,
    pub budget: usize,
    /// Grid size of the `d = 2` dense cross-check on ball domains.
    pub oracle_n: Option<usize>,
}

impl Default for SeminormCmd {
    fn default() -> Self {
        Self {
            field: "random".into(),
            field_seed: 0,
            domain: DomainSpec::Ball { center: vec![0.0, 0.0], radius: 1.0 },
            s: 0.5,
            p: 2.0,
            budget: 200_000,
            oracle_n: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KornMode {
    Catalog,
    Search,
    Epigraph,
    Straightening,
    Scaling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KornCmd {
    pub mode: KornMode,
    pub ball: BallDomain,
    /// Boundary profile for the epigraph and straightening modes.
    pub profile: ProfileSpec,
    /// Catalog field for the epigraph, straightening and scaling modes.
    pub field: String,
    pub s: f64,
    pub p: f64,
    pub budget: usize,
    pub family: SearchFamily,
    pub atoms: usize,
    pub restarts: usize,
    pub iterations: u64,
    pub eval_budget: usize,
    pub radii: Vec<f64>,
}

impl Default for KornCmd {
    fn default() -> Self {
        Self {
            mode: KornMode::Catalog,
            ball: BallDomain::unit(2),
            profile: ProfileSpec { name: "sine".into(), params: vec![0.3, 1.0] },
            field: "random".into(),
            s: 0.4,
            p: 2.0,
            budget: 200_000,
            family: SearchFamily::General,
            atoms: 1,
            restarts: 5,
            iterations: 200,
            eval_budget: 20_000,
            radii: vec![0.5, 1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtendCheckCmd {
    pub d: usize,
    pub profile: ProfileSpec,
    pub lambda: f64,
    pub mu: f64,
    pub s: f64,
    pub p: f64,
    pub budget: usize,
    pub offsets: Vec<f64>,
}

impl Default for ExtendCheckCmd {
    fn default() -> Self {
        Self {
            d: 2,
            profile: ProfileSpec { name: "sine".into(), params: vec![0.3, 1.0] },
            lambda: 1.0,
            mu: 2.0,
            s: 0.4,
            p: 2.0,
            budget: 200_000,
            offsets: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeomCheckCmd {
    pub d: usize,
    /// Profile family (`zero`, `affine`, `sine`, `ridge`) built with Lipschitz constant `m`.
    pub profile: String,
    pub m: f64,
    pub eta: f64,
    /// Defaults to `2 max(1, eta)`.
    pub c_eta: Option<f64>,
    pub n_pairs: usize,
    /// Points of the logarithmic `eta` grid on `[0.1, 10]` for the scalar bound.
    pub scan_points: usize,
}

impl Default for GeomCheckCmd {
    fn default() -> Self {
        Self { d: 2, profile: "sine".into(), m: 0.59, eta: 1.0, c_eta: None, n_pairs: 100_000, scan_points: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveCmd {
    pub problem: NonlocalProblem,
    pub grid: GridSpec,
    pub tol: f64,
    pub max_iter: usize,
    pub random_init: bool,
}

impl Default for SolveCmd {
    fn default() -> Self {
        Self {
            problem: NonlocalProblem::reference(0.4, 2.0).expect("reference problem is valid"),
            grid: GridSpec::default(),
            tol: 1e-9,
            max_iter: 2000,
            random_init: false,
        }
    }
}

impl SolveCmd {
    fn options(&self, seed: u64) -> SolveOptions {
        SolveOptions { tol: self.tol, max_iter: self.max_iter, seed, random_init: self.random_init }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaccioppoliCmd {
    pub solve: SolveCmd,
    pub balls: Vec<BallDomain>,
    /// Plateau of the cutoff relative to its support radius.
    pub plateau: f64,
}

impl Default for CaccioppoliCmd {
    fn default() -> Self {
        Self {
            solve: SolveCmd::default(),
            balls: vec![BallDomain { center: vec![0.0, 0.0], radius: 0.5 }, BallDomain { center: vec![0.2, -0.1], radius: 0.25 }],
            plateau: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualPairCmd {
    pub solve: SolveCmd,
    pub ball: BallDomain,
    pub epsilon: f64,
    pub deltas: Vec<f64>,
    pub budget: usize,
}

impl Default for DualPairCmd {
    fn default() -> Self {
        Self {
            solve: SolveCmd::default(),
            ball: BallDomain { center: vec![0.0, 0.0], radius: 0.5 },
            epsilon: 0.1,
            deltas: vec![0.0, 0.05, 0.1, 0.2],
            budget: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JboundCmd {
    pub d: usize,
    pub profile: ProfileSpec,
    pub s: f64,
    pub p: f64,
    /// Tangential coordinates `x'` of the base point.
    pub base: Vec<f64>,
    pub distances: Vec<f64>,
    pub budget: usize,
}

impl Default for JboundCmd {
    fn default() -> Self {
        Self {
            d: 2,
            profile: ProfileSpec { name: "sine".into(), params: vec![0.5, 1.0] },
            s: 0.4,
            p: 2.0,
            base: vec![0.3],
            distances: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
            budget: 40_000,
        }
    }
}

/// A CSV sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(name: &str, headers: &[&str]) -> Self {
        Self { name: name.into(), headers: headers.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<Value>) {
        self.rows.push(row);
    }
}

/// Result of a command before it is wrapped into a report.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub result: Value,
    pub tables: Vec<Table>,
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Io(e.to_string()))
}

fn f(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

fn epigraph(d: usize, spec: &ProfileSpec) -> Result<EpigraphDomain> {
    EpigraphDomain::new(d, Profile::try_from(spec.clone())?)
}

fn params(s: f64, p: f64) -> Result<SeminormParams> {
    SeminormParams::new(s, p)
}

fn settings(budget: usize) -> PlanSettings {
    PlanSettings { budget, ..Default::default() }
}

impl ExperimentConfig {
    /// Checks every precondition that can be decided without computing.
    pub fn validate(&self) -> Result<()> {
        match &self.command {
            Command::Seminorm(c) => {
                params(c.s, c.p)?;
                let dom = Domain::from_spec(&c.domain)?;
                fields::catalog_field(&c.field, dom.as_region().dim(), c.field_seed)?;
                if c.budget == 0 {
                    return Err(Error::param("budget", "must be positive"));
                }
            }
            Command::Korn(c) => {
                params(c.s, c.p)?;
                BallDomain::new(c.ball.center.clone(), c.ball.radius)?;
                if matches!(c.mode, KornMode::Epigraph | KornMode::Straightening) {
                    epigraph(c.ball.center.len(), &c.profile)?;
                }
                if c.mode == KornMode::Scaling && (c.radii.is_empty() || c.radii.iter().any(|r| !(*r > 0.0))) {
                    return Err(Error::param("radii", "need positive radii"));
                }
            }
            Command::ExtendCheck(c) => {
                params(c.s, c.p)?;
                epigraph(c.d, &c.profile)?;
                ReflectionConstants::solve(c.lambda, c.mu)?;
            }
            Command::GeomCheck(c) => {
                EpigraphDomain::new(c.d, Profile::with_lipschitz(&c.profile, c.m)?)?;
                if c.n_pairs == 0 || c.scan_points < 2 {
                    return Err(Error::param("n_pairs", "need pairs and at least two scan points"));
                }
            }
            Command::Solve(c) => validate_solve(c)?,
            Command::Caccioppoli(c) => {
                validate_solve(&c.solve)?;
                for b in &c.balls {
                    BallDomain::new(b.center.clone(), b.radius)?;
                }
                CutoffFunction::new(BallDomain::unit(c.solve.problem.d), c.plateau)?;
            }
            Command::DualPair(c) => {
                validate_solve(&c.solve)?;
                BallDomain::new(c.ball.center.clone(), c.ball.radius)?;
            }
            Command::Jbound(c) => {
                params(c.s, c.p)?;
                epigraph(c.d, &c.profile)?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the effective configuration.
    pub fn hash(&self) -> Result<String> {
        let text = canonical_json(&to_value(self)?);
        Ok(Sha256::digest(text.as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }
}

fn validate_solve(c: &SolveCmd) -> Result<()> {
    c.problem.validate()?;
    if !(c.tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    Ok(())
}

/// Places a catalog field inside a domain: pushed onto a ball, lifted above
/// an epigraph.
fn field_in(domain: &Domain, name: &str, seed: u64, s: f64) -> Result<FieldRef> {
    match domain {
        Domain::Ball(b) => {
            Ok(std::sync::Arc::new(fields::unscale(fields::catalog_field(name, b.center.len(), seed)?, &b.center, b.radius, s)?))
        }
        Domain::HalfSpace(h) => korn::epigraph_test_field(&EpigraphDomain::half_space(h.d), name, seed),
        Domain::Epigraph(e) => korn::epigraph_test_field(e, name, seed),
    }
}

fn run_command(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let seed = cfg.seed;
    match &cfg.command {
        Command::Seminorm(c) => {
            let prm = params(c.s, c.p)?;
            let dom = Domain::from_spec(&c.domain)?;
            let u = field_in(&dom, &c.field, c.field_seed, c.s)?;
            let plan = seminorms::seminorm_plan(&*u, dom.as_region(), &prm, settings(c.budget))?;
            let joint = seminorms::joint_seminorms_p(&*u, dom.as_region(), &prm, &plan, seed)?;
            let mut result = serde_json::json!({
                "field": c.field,
                "params": to_value(&prm)?,
                "domain": to_value(&c.domain)?,
                "x_p": to_value(&joint.x)?,
                "w_p": to_value(&joint.w)?,
                "dominance_violations": joint.dominance_violations,
                "pairs_compared": joint.pairs_compared,
            });
            if let (Some(n), Domain::Ball(b)) = (c.oracle_n, &dom) {
                let (x, w) = seminorms::dense_seminorms_p(&*u, b, &prm, n)?;
                result["oracle"] = serde_json::json!({ "x_p": to_value(&x)?, "w_p": to_value(&w)? });
            }
            Ok(CommandOutput { result, tables: vec![] })
        }
        Command::Korn(c) => run_korn(c, seed),
        Command::ExtendCheck(c) => {
            let prm = params(c.s, c.p)?;
            let dom = epigraph(c.d, &c.profile)?;
            let constants = ReflectionConstants::solve(c.lambda, c.mu)?;
            let u = extension::standard_extension_field(&dom)?;
            let report = extension::extension_bound_check(u, &dom, constants, &prm, settings(c.budget), seed)?;
            let boundary_field = fields::catalog_field("random", c.d, seed)?;
            let ext = extension::extend(boundary_field, &dom, constants)?;
            let base: Vec<Vec<f64>> = (0..11).map(|k| vec![-0.5 + 0.1 * k as f64; c.d - 1]).collect();
            let limits = extension::boundary_limit_check(&ext, &base, &c.offsets)?;
            let mut t = Table::new("boundary_limits", &["offset", "max_jump", "jump_over_offset"]);
            for r in &limits.rows {
                t.push(vec![f(r.offset), f(r.max_jump), f(r.jump_over_offset)]);
            }
            Ok(CommandOutput {
                result: serde_json::json!({
                    "constants": to_value(&constants)?,
                    "constants_residual": constants.max_residual(),
                    "bound": to_value(&report)?,
                    "boundary_limits": to_value(&limits)?,
                }),
                tables: vec![t],
            })
        }
        Command::GeomCheck(c) => {
            let dom = EpigraphDomain::new(c.d, Profile::with_lipschitz(&c.profile, c.m)?)?;
            let c_eta = c.c_eta.unwrap_or(2.0 * c.eta.max(1.0));
            let report = geometry::geometric_inequality_check(&dom, c.eta, c_eta, c.n_pairs, seed)?;
            let mut t = Table::new("threshold_scan", &["eta", "c_eta", "threshold", "exceeds_9_25"]);
            let mut min_threshold = f64::INFINITY;
            for k in 0..c.scan_points {
                let eta = 10f64.powf(-1.0 + 2.0 * k as f64 / (c.scan_points - 1) as f64);
                let ce = 2.0 * eta.max(1.0);
                let th = geometry::comparison_threshold(eta, ce);
                min_threshold = min_threshold.min(th);
                t.push(vec![f(eta), f(ce), f(th), Value::Bool(th > 9.0 / 25.0)]);
            }
            Ok(CommandOutput {
                result: serde_json::json!({
                    "check": to_value(&report)?,
                    "scan_min_threshold": min_threshold,
                    "scan_all_exceed_9_25": t.rows.iter().all(|r| r[3] == Value::Bool(true)),
                }),
                tables: vec![t],
            })
        }
        Command::Solve(c) => {
            let disc = Discretization::new(&c.problem, c.grid)?;
            let (u, report) = nonlocal::solve(&disc, &c.options(seed))?;
            let mut trace = Table::new("trace", &["iteration", "energy", "grad_norm"]);
            for (k, e) in report.energy_trace.iter().enumerate() {
                trace.push(vec![Value::from(k), f(*e), report.grad_norm_trace.get(k).map_or(Value::Null, |g| f(*g))]);
            }
            Ok(CommandOutput {
                result: serde_json::json!({ "report": to_value(&report)?, "h": disc.h }),
                tables: vec![nodal_table(&disc, &u), trace],
            })
        }
        Command::Caccioppoli(c) => {
            let disc = Discretization::new(&c.solve.problem, c.solve.grid)?;
            let (u, report) = nonlocal::solve(&disc, &c.solve.options(seed))?;
            let mut t = Table::new("caccioppoli", &["center", "radius", "lhs", "lhs_diagonal", "mass", "tail", "force", "ratio"]);
            let mut rows = Vec::new();
            for b in &c.balls {
                let psi = CutoffFunction::new(b.clone(), c.plateau)?;
                let r = nonlocal::caccioppoli_check(&disc, &u, b, &psi)?;
                t.push(vec![
                    Value::String(format!("{:?}", b.center)),
                    f(b.radius),
                    f(r.lhs),
                    f(r.lhs_diagonal),
                    f(r.mass),
                    f(r.tail),
                    f(r.force),
                    f(r.ratio),
                ]);
                rows.push(r);
            }
            Ok(CommandOutput {
                result: serde_json::json!({
                    "solve": solve_summary(&report)?,
                    "balls": to_value(&rows)?,
                }),
                tables: vec![t],
            })
        }
        Command::DualPair(c) => {
            let disc = Discretization::new(&c.solve.problem, c.solve.grid)?;
            let (u, report) = nonlocal::solve(&disc, &c.solve.options(seed))?;
            let it = disc.interpolant(&u);
            let dp = nonlocal::dual_pair_diagnostic(&it, &c.ball, &c.solve.problem.params, c.epsilon, &c.deltas, settings(c.budget), seed)?;
            let mut t = Table::new(
                "dual_pair",
                &["delta", "value", "std_error", "doubled", "relative_change", "stable", "seminorm_s", "seminorm_p"],
            );
            for r in &dp.rows {
                t.push(vec![
                    f(r.delta),
                    f(r.value.value),
                    f(r.value.std_error),
                    f(r.doubled.value),
                    f(r.relative_change),
                    Value::Bool(r.stable),
                    f(r.seminorm_s),
                    f(r.seminorm_p),
                ]);
            }
            Ok(CommandOutput {
                result: serde_json::json!({ "solve": solve_summary(&report)?, "diagnostic": to_value(&dp)? }),
                tables: vec![t],
            })
        }
        Command::Jbound(c) => {
            let prm = params(c.s, c.p)?;
            let dom = epigraph(c.d, &c.profile)?;
            let rep = korn::j_bound_check(&dom, &prm, &c.base, &c.distances, c.budget, seed)?;
            let mut t = Table::new("jbound", &["distance", "j", "std_error", "product", "converged"]);
            for r in &rep.rows {
                t.push(vec![f(r.distance), f(r.j.value), f(r.j.std_error), f(r.product), Value::Bool(r.converged)]);
            }
            Ok(CommandOutput { result: to_value(&rep)?, tables: vec![t] })
        }
    }
}

fn solve_summary(r: &nonlocal::SolveReport) -> Result<Value> {
    Ok(serde_json::json!({
        "final_energy": r.final_energy,
        "iterations": r.iterations,
        "status": to_value(&r.status)?,
        "final_grad_norm": r.grad_norm_trace.last().copied().unwrap_or(f64::NAN),
        "max_relative_weak_residual": r.weak_residuals.iter().map(|w| w.residual.relative).fold(0.0, f64::max),
    }))
}

fn nodal_table(disc: &Discretization, u: &DiscreteField) -> Table {
    let d = disc.d();
    let coords: Vec<String> = if d == 2 { vec!["x".into(), "y".into()] } else { (1..=d).map(|k| format!("x{k}")).collect() };
    let mut headers: Vec<String> = coords;
    headers.extend((1..=d).map(|k| format!("u{k}")));
    let mut t = Table { name: "field".into(), headers, rows: Vec::new() };
    for i in 0..disc.node_count() {
        let mut row: Vec<Value> = disc.node(i).iter().map(|v| f(*v)).collect();
        row.extend(u.values[i * d..(i + 1) * d].iter().map(|v| f(*v)));
        t.push(row);
    }
    t
}

fn estimate_cells(e: &crate::quadrature::Estimate) -> [Value; 2] {
    [f(e.value), f(e.std_error)]
}

fn korn_records_table(records: &[korn::KornRecord]) -> Table {
    let mut t = Table::new("records", &["field_id", "x_p", "x_se", "w_p", "w_se", "lp_p", "lp_se", "ratio"]);
    for r in records {
        let mut row = vec![Value::String(r.field_id.clone())];
        row.extend(estimate_cells(&r.x_p));
        row.extend(estimate_cells(&r.w_p));
        row.extend(estimate_cells(&r.lp_p));
        row.push(f(r.ratio));
        t.push(row);
    }
    t
}

fn run_korn(c: &KornCmd, seed: u64) -> Result<CommandOutput> {
    let prm = params(c.s, c.p)?;
    let ball = BallDomain::new(c.ball.center.clone(), c.ball.radius)?;
    let d = ball.center.len();
    match c.mode {
        KornMode::Catalog => {
            let rep = korn::catalog_korn_report(&ball, &prm, settings(c.budget), seed)?;
            Ok(CommandOutput { tables: vec![korn_records_table(&rep.records)], result: to_value(&rep)? })
        }
        KornMode::Search => {
            let opts = SearchOptions {
                family: c.family,
                atoms: c.atoms,
                restarts: c.restarts,
                iterations: c.iterations,
                eval_budget: c.eval_budget,
                seed,
            };
            let rep = korn::max_ratio_search(&ball, &prm, &opts)?;
            let mut trace = Table::new("trace", &["evaluation", "best_ratio"]);
            if let Some(m) = &rep.search {
                for (k, v) in m.trace.iter().enumerate() {
                    trace.push(vec![Value::from(k), f(*v)]);
                }
            }
            Ok(CommandOutput { tables: vec![korn_records_table(&rep.records), trace], result: to_value(&rep)? })
        }
        KornMode::Epigraph => {
            let dom = epigraph(d, &c.profile)?;
            let u = korn::epigraph_test_field(&dom, &c.field, seed)?;
            let rep = korn::epigraph_korn_check(&*u, &dom, &prm, settings(c.budget), seed)?;
            Ok(CommandOutput { result: to_value(&rep)?, tables: vec![] })
        }
        KornMode::Straightening => {
            let dom = epigraph(d, &c.profile)?;
            let u = korn::epigraph_test_field(&dom, &c.field, seed)?;
            let rep = korn::straightening_bound_check(u, &dom, &prm, settings(c.budget), seed)?;
            Ok(CommandOutput { result: to_value(&rep)?, tables: vec![] })
        }
        KornMode::Scaling => {
            let v = fields::catalog_field(&c.field, d, seed)?;
            let rep = korn::ball_scaling_check(v, &ball.center, &c.radii, &prm, settings(c.budget), seed)?;
            let mut t = Table::new("scaling", &["r", "u_x_p", "v_x_p_scaled", "x_sigmas", "u_w_p", "v_w_p_scaled", "w_sigmas", "ratio"]);
            for r in &rep.rows {
                t.push(vec![
                    f(r.r),
                    f(r.u_x_p.value),
                    f(r.v_x_p_scaled.value),
                    f(r.x_sigmas),
                    f(r.u_w_p.value),
                    f(r.v_w_p_scaled.value),
                    f(r.w_sigmas),
                    f(r.ratio),
                ]);
            }
            Ok(CommandOutput { result: to_value(&rep)?, tables: vec![t] })
        }
    }
}

/// Canonical JSON text: sorted keys, floats as `{:.12e}`, no whitespace.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn format_number(n: &serde_json::Number) -> String {
    if let Some(i) = n.as_i64() {
        if !n.is_f64() {
            return i.to_string();
        }
    }
    if let Some(u) = n.as_u64() {
        if !n.is_f64() {
            return u.to_string();
        }
    }
    format!("{:.12e}", n.as_f64().unwrap_or(f64::NAN))
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => out.push_str(&format_number(n)),
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(a) => {
            out.push('[');
            for (k, x) in a.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write_canonical(x, out);
            }
            out.push(']');
        }
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (k, key) in keys.into_iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("strings serialize"));
                out.push(':');
                write_canonical(&m[key], out);
            }
            out.push('}');
        }
    }
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => format_number(n),
        Value::Null => String::new(),
        other => canonical_json(other),
    }
}

/// Writes the JSON report and CSV sidecars into `dir`, creating it if needed.
/// Returns the report path.
pub fn emit_report(report: &Value, tables: &[Table], dir: &Path, stem: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.json"));
    let mut text = canonical_json(report);
    text.push('\n');
    fs::write(&path, text)?;
    for t in tables {
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}_{}.csv", t.name))).map_err(|e| Error::Io(e.to_string()))?;
        w.write_record(&t.headers).map_err(|e| Error::Io(e.to_string()))?;
        for row in &t.rows {
            w.write_record(row.iter().map(cell_text)).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(path)
}

/// Status of a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    HypothesisUnmet,
    InvalidConfig,
    Failed,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Ok => EXIT_OK,
            RunStatus::HypothesisUnmet => EXIT_HYPOTHESIS,
            RunStatus::InvalidConfig => EXIT_USAGE,
            RunStatus::Failed => EXIT_FAILURE,
        }
    }

    fn of(e: &Error) -> Self {
        match e {
            Error::HypothesisUnmet(_) => RunStatus::HypothesisUnmet,
            Error::InvalidParameter { .. } => RunStatus::InvalidConfig,
            _ => RunStatus::Failed,
        }
    }
}

/// The report document and its tables, before they are written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub report: Value,
    pub tables: Vec<Table>,
}

/// Validates and executes a configuration without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> RunOutcome {
    let envelope = |status: RunStatus, result: Value, error: Option<String>| -> Value {
        serde_json::json!({
            "command": cfg.command.name(),
            "config": to_value(cfg).unwrap_or(Value::Null),
            "config_sha256": cfg.hash().unwrap_or_default(),
            "seed": cfg.seed,
            "version": VERSION,
            "status": to_value(&status).unwrap_or(Value::Null),
            "error": error,
            "result": result,
        })
    };
    let outcome = cfg.validate().and_then(|_| run_command(cfg));
    match outcome {
        Ok(out) => RunOutcome { status: RunStatus::Ok, report: envelope(RunStatus::Ok, out.result, None), tables: out.tables },
        Err(e) => {
            let status = RunStatus::of(&e);
            RunOutcome { status, report: envelope(status, Value::Null, Some(e.to_string())), tables: vec![] }
        }
    }
}

/// Runs a configuration and writes its artifacts into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> (RunStatus, Option<PathBuf>) {
    let outcome = execute(cfg);
    match emit_report(&outcome.report, &outcome.tables, out, cfg.command.name()) {
        Ok(path) => (outcome.status, Some(path)),
        Err(e) => {
            eprintln!("error: cannot write report to {}: {e}", out.display());
            (RunStatus::Failed, None)
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nonlocal-korn", version, about = "Fractional Korn diagnostics and nonlocal p-Laplace solver")]
struct Cli {
    /// Command to run; taken from the configuration file when omitted.
    #[arg(value_enum)]
    command: Option<CommandName>,
    /// JSON configuration document.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn usage(msg: impl std::fmt::Display) -> i32 {
    eprintln!("usage error: {msg}");
    EXIT_USAGE
}

/// Best-effort report for a configuration that could not be read, so that a
/// run always leaves a JSON document behind.
fn write_usage_report(cli: &Cli, msg: &str) {
    let from_file = cli
        .config
        .as_ref()
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|t| serde_json::from_str::<Value>(&t).ok())
        .and_then(|v| v.get("command").and_then(Value::as_str).map(str::to_owned));
    let name = cli
        .command
        .map(|c| Command::default_for(c).name().to_owned())
        .or(from_file)
        .filter(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_lowercase() || c == '-'))
        .unwrap_or_else(|| "invalid-config".to_owned());
    let report = serde_json::json!({
        "command": name,
        "config": Value::Null,
        "config_sha256": Value::Null,
        "seed": cli.seed,
        "version": VERSION,
        "status": "invalid-config",
        "error": msg,
        "result": Value::Null,
    });
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    if let Err(e) = emit_report(&report, &[], &out, &name) {
        eprintln!("error: cannot write report to {}: {e}", out.display());
    }
}

/// Builds the effective configuration from parsed flags.
fn resolve(cli: &Cli) -> std::result::Result<ExperimentConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            if let Some(name) = cli.command {
                let wanted = Command::default_for(name);
                if wanted.name() != cfg.command.name() {
                    return Err(format!(
                        "subcommand `{}` does not match the configuration's command `{}`",
                        wanted.name(),
                        cfg.command.name()
                    ));
                }
            }
            cfg
        }
        None => {
            let name = cli.command.ok_or("give a command or --config")?;
            ExperimentConfig { command: Command::default_for(name), seed: 0, threads: None, out: None }
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    Ok(cfg)
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(msg) => {
            write_usage_report(&cli, &msg);
            return usage(msg);
        }
    };
    if let Some(n) = cfg.threads {
        if n == 0 {
            let msg = "--threads must be positive";
            write_usage_report(&cli, msg);
            return usage(msg);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: thread pool already initialised: {e}");
        }
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let (status, path) = run(&cfg, &out);
    if let Some(p) = path {
        eprintln!("{}: {:?}, report at {}", cfg.command.name(), status, p.display());
    }
    status.exit_code()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_is_fixed() {
        assert_eq!(canonical_json(&serde_json::json!(1.0)), "1.000000000000e0");
        assert_eq!(canonical_json(&serde_json::json!(-0.00125)), "-1.250000000000e-3");
        assert_eq!(canonical_json(&serde_json::json!(7)), "7");
        assert_eq!(canonical_json(&serde_json::json!({"b": 1, "a": [true, null]})), r#"{"a":[true,null],"b":1}"#);
    }

    #[test]
    fn config_round_trips_and_defaults_fill_in() {
        let text = r#"{"command": "geom-check", "params": {"m": 0.7}, "seed": 3}"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        let Command::GeomCheck(g) = &cfg.command else { panic!() };
        assert_eq!((g.m, g.eta, g.n_pairs), (0.7, 1.0, 100_000));
        let back: ExperimentConfig = serde_json::from_value(to_value(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"command": "geom-check", "params": {"bogus": 1}}"#).is_err());
    }

    #[test]
    fn every_command_has_valid_defaults() {
        for name in CommandName::value_variants() {
            let cfg = ExperimentConfig { command: Command::default_for(*name), seed: 0, threads: None, out: None };
            cfg.validate().unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn hypothesis_gate_maps_to_exit_two() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"command": "geom-check", "params": {"m": 0.7, "n_pairs": 100}}"#).unwrap();
        let out = execute(&cfg);
        assert_eq!(out.status.exit_code(), 2);
        assert_eq!(out.report["status"], "hypothesis-unmet");
    }
}
