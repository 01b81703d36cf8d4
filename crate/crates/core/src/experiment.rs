//! Experiment configuration, single runs, sweeps and reference optima.
//!
//! Config files are flat `key = value` text:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key ws* '=' ws* value
//! ```
//!
//! Keys are case-sensitive and match the CLI flag names with `-` replaced by
//! `_`. Later entries override earlier ones. List values are comma separated;
//! seed lists also accept `a..b` (exclusive) and `a..=b`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::base::SignMatrix;
use crate::harness::{
    run, Ellipsoid, FixedQuery, HarnessError, MemAlgorithm, NullSpaceDescent, Retention, RunConfig, RunRecord,
    StepSchedule, SubgradientDescent,
};
use crate::instance::{gamma_at_cap, optimal_witness, HardInstance, InstanceError, InstanceParams};
use crate::linalg::{axpy, norm};
use crate::ovg::{play, GameParams, GameTranscript, OracleVariant, QueryAllRows, ReductionAdapter, ReturnRows, StoreNullBasis};
use crate::tape::RandomTape;

/// First line of every sweep CSV.
pub const CSV_VERSION_LINE: &str = "# memlb sweep v1";
pub const CSV_COLUMNS: [&str; 9] = [
    "d",
    "M",
    "algorithm",
    "seed",
    "queries_to_eps",
    "best_gap",
    "informative_count",
    "win",
    "status",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Process outcome: 0 success or win, 1 benign negative result, 2 contract violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Success,
    Negative,
    Violation,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::Negative => 1,
            Status::Violation => 2,
        }
    }
}

macro_rules! keyword_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
        pub enum $name { $($var),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok($name::$var),)+
                    _ => Err(format!(
                        "expected one of {}",
                        [$($s),+].join(", ")
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

keyword_enum!(Mode {
    Gen => "gen",
    Run => "run",
    Ovg => "ovg",
    Sweep => "sweep",
    Verify => "verify",
});

keyword_enum!(
    /// Optimizers for `run` and `sweep`. `nullspace` reads `A` and is a
    /// diagnostic only; `reduction` plays the game with it instead of optimizing.
    AlgorithmId {
        Subgradient => "sd",
        Ellipsoid => "ellipsoid",
        NullSpace => "nullspace",
        Origin => "origin",
        Reduction => "reduction",
    }
);

keyword_enum!(StrategyId {
    StoreNull => "store-null",
    QueryRows => "query-rows",
    ReturnRows => "return-rows",
    Reduction => "reduction",
});

keyword_enum!(
    /// How `eta`, `rho` and the global scale are set.
    /// `native`: d^5, 1, d^-6. `unit`: d^5, 1, 1. `lipschitz`: d^-1/2, 1, 1.
    Scaling {
        Native => "native",
        Unit => "unit",
        Lipschitz => "lipschitz",
    }
);

/// Where `gamma` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GammaRule {
    /// `sqrt(400 k ln d / d)`
    Asymptotic,
    /// Largest gamma that admits depth `N`.
    Cap,
    Fixed(f64),
}

/// Memory budget as a function of `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BudgetRule {
    /// The algorithm's own state size.
    State,
    Bits(usize),
    /// `c * d^p`, rounded down.
    Power { c: f64, p: f64 },
}

impl BudgetRule {
    pub fn bits(&self, d: usize, state_bits: usize) -> usize {
        match *self {
            BudgetRule::State => state_bits,
            BudgetRule::Bits(b) => b,
            BudgetRule::Power { c, p } => (c * (d as f64).powf(p)).floor() as usize,
        }
    }
}

impl FromStr for BudgetRule {
    type Err = String;

    /// `state`, an integer, `c*d`, `c*d^p`.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == "state" {
            return Ok(BudgetRule::State);
        }
        if let Ok(b) = s.parse::<usize>() {
            return Ok(BudgetRule::Bits(b));
        }
        let (c, rest) = match s.split_once('*') {
            Some((c, r)) => (c.trim().parse::<f64>().map_err(|e| e.to_string())?, r.trim()),
            None => (1.0, s),
        };
        let p = match rest.strip_prefix('d') {
            Some("") => 1.0,
            Some(e) => e
                .strip_prefix('^')
                .ok_or("expected `^` after d")?
                .parse::<f64>()
                .map_err(|e| e.to_string())?,
            None => return Err(format!("cannot read budget `{s}`")),
        };
        Ok(BudgetRule::Power { c, p })
    }
}

impl fmt::Display for BudgetRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BudgetRule::State => f.write_str("state"),
            BudgetRule::Bits(b) => write!(f, "{b}"),
            BudgetRule::Power { c, p } => write!(f, "{c}*d^{p}"),
        }
    }
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|e| format!("{part}: {e}"))?;
            let (b, inclusive) = match b.strip_prefix('=') {
                Some(b) => (b, true),
                None => (b, false),
            };
            let b: u64 = b.trim().parse().map_err(|e| format!("{part}: {e}"))?;
            if inclusive {
                out.extend(a..=b);
            } else {
                out.extend(a..b);
            }
        } else {
            out.push(part.parse().map_err(|e| format!("{part}: {e}"))?);
        }
    }
    Ok(out)
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| format!("{p}: {e}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub d: usize,
    /// Depth `N`.
    pub depth: usize,
    /// Round length `k`.
    pub k: usize,
    pub budget: BudgetRule,
    /// Game query budget.
    pub m: usize,
    pub seeds: Vec<u64>,
    pub algorithm: AlgorithmId,
    pub strategy: StrategyId,
    pub variant: OracleVariant,
    pub output: Option<PathBuf>,
    pub gamma_rule: GammaRule,
    pub scaling: Scaling,
    pub allow_over_cap: bool,
    /// Overrides the derived `1/(20 sqrt N)`.
    pub epsilon: Option<f64>,
    pub max_queries: Option<usize>,
    /// Initial step for the descent baselines.
    pub step: f64,
    /// Fixed-point bits per coordinate for `sd`; derived from the budget if unset.
    pub sd_bits: Option<u32>,
    pub tolerance: f64,
    pub dims: Vec<usize>,
    pub budgets: Vec<BudgetRule>,
    pub algorithms: Vec<AlgorithmId>,
    pub workers: usize,
    pub verbose: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Run,
            d: 16,
            depth: 3,
            k: 1,
            budget: BudgetRule::State,
            m: 0,
            seeds: vec![0],
            algorithm: AlgorithmId::Subgradient,
            strategy: StrategyId::StoreNull,
            variant: OracleVariant::Subgradient,
            output: None,
            gamma_rule: GammaRule::Cap,
            scaling: Scaling::Unit,
            allow_over_cap: false,
            epsilon: None,
            max_queries: None,
            step: 0.5,
            sd_bits: None,
            tolerance: 1e-9,
            dims: vec![16, 24, 32],
            budgets: vec![BudgetRule::Power { c: 64.0, p: 1.0 }, BudgetRule::Power { c: 64.0, p: 2.0 }],
            algorithms: vec![AlgorithmId::Subgradient, AlgorithmId::Ellipsoid],
            workers: 4,
            verbose: false,
        }
    }
}

impl ExperimentConfig {
    /// Parses `key = value` text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                msg: "expected key = value".into(),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            v.parse().map_err(|e: T::Err| ConfigError::Value {
                key: key.into(),
                msg: e.to_string(),
            })
        }
        let bad = |msg: String| ConfigError::Value { key: key.into(), msg };
        match key {
            "mode" => self.mode = value.parse().map_err(bad)?,
            "d" => self.d = num(key, value)?,
            "N" | "depth" => self.depth = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "M" | "budget" => self.budget = value.parse().map_err(bad)?,
            "m" => self.m = num(key, value)?,
            "seeds" | "seed" => self.seeds = parse_seeds(value).map_err(bad)?,
            "algorithm" => self.algorithm = value.parse().map_err(bad)?,
            "strategy" => self.strategy = value.parse().map_err(bad)?,
            "variant" => self.variant = value.parse().map_err(bad)?,
            "output" => self.output = (!value.is_empty()).then(|| PathBuf::from(value)),
            "gamma_rule" => {
                self.gamma_rule = match value {
                    "asymptotic" => GammaRule::Asymptotic,
                    "cap" => GammaRule::Cap,
                    _ => return Err(bad("expected asymptotic or cap".into())),
                }
            }
            "gamma" => self.gamma_rule = GammaRule::Fixed(num(key, value)?),
            "scaling" => self.scaling = value.parse().map_err(bad)?,
            "allow_over_cap" => self.allow_over_cap = num(key, value)?,
            "epsilon" => self.epsilon = Some(num(key, value)?),
            "max_queries" => self.max_queries = Some(num(key, value)?),
            "step" => self.step = num(key, value)?,
            "sd_bits" => self.sd_bits = Some(num(key, value)?),
            "tolerance" => self.tolerance = num(key, value)?,
            "dims" => self.dims = parse_list(value).map_err(bad)?,
            "budgets" => self.budgets = parse_list(value).map_err(bad)?,
            "algorithms" => self.algorithms = parse_list(value).map_err(bad)?,
            "workers" => self.workers = num(key, value)?,
            "verbose" => self.verbose = num(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Replaces the seed list with a single seed when `value` is set.
    pub fn with_seed_override(mut self, value: Option<&str>) -> Result<Self, ConfigError> {
        if let Some(v) = value {
            let s = v.trim().parse::<u64>().map_err(|e| ConfigError::Value {
                key: "MEMLB_SEED".into(),
                msg: e.to_string(),
            })?;
            self.seeds = vec![s];
        }
        Ok(self)
    }

    /// Instance parameters at dimension `d`, refusing depths over the cap
    /// unless `allow_over_cap` is set.
    pub fn instance_params(&self, d: usize) -> Result<InstanceParams, ConfigError> {
        let mut p = InstanceParams::standard_unchecked(d, self.k, self.depth)?;
        p = match self.gamma_rule {
            GammaRule::Asymptotic => p,
            GammaRule::Cap => p.with_gamma(gamma_at_cap(self.depth)),
            GammaRule::Fixed(g) => p.with_gamma(g),
        };
        p = match self.scaling {
            Scaling::Native => p,
            Scaling::Unit => p.with_global_scale(1.0),
            Scaling::Lipschitz => p.unit_lipschitz(),
        };
        p.validate()?;
        if !self.allow_over_cap {
            p.check_depth()?;
        }
        Ok(p)
    }

    /// Target accuracy in units of the scaled function.
    pub fn epsilon_for(&self, p: &InstanceParams) -> f64 {
        self.epsilon.unwrap_or_else(|| p.epsilon()) * p.global_scale
    }

    pub fn default_max_queries(&self, d: usize, eps_unscaled: f64) -> usize {
        self.max_queries
            .unwrap_or_else(|| (10.0 * (d * d) as f64 * (1.0 / eps_unscaled).ln()).ceil() as usize)
    }
}

/// Tape for the algorithm's own randomness: the spare third of the seed's tape.
pub fn algorithm_tape(seed: u64) -> RandomTape {
    let [_, _, r] = RandomTape::new(seed).split3();
    r
}

/// Bits per coordinate that fit `sd` into `budget`, capped at 52.
pub fn sd_bits_for_budget(d: usize, budget: usize) -> u32 {
    let per = budget.saturating_sub(32) / d.max(1);
    per.clamp(8, 52) as u32
}

pub fn build_algorithm(
    id: AlgorithmId,
    cfg: &ExperimentConfig,
    d: usize,
    budget: usize,
    matrix: &SignMatrix,
) -> Result<Box<dyn MemAlgorithm>, ExperimentError> {
    let schedule = StepSchedule::InverseSqrt(cfg.step);
    Ok(match id {
        AlgorithmId::Subgradient => {
            let bits = cfg.sd_bits.unwrap_or_else(|| sd_bits_for_budget(d, budget));
            Box::new(SubgradientDescent::new(d, schedule, bits)?)
        }
        AlgorithmId::Ellipsoid => Box::new(Ellipsoid::new(d)),
        AlgorithmId::NullSpace | AlgorithmId::Reduction => Box::new(NullSpaceDescent::new(matrix, schedule)),
        AlgorithmId::Origin => Box::new(FixedQuery::origin(d)),
    })
}

/// State size of an algorithm before any budget is applied.
pub fn natural_state_bits(id: AlgorithmId, cfg: &ExperimentConfig, d: usize) -> usize {
    match id {
        AlgorithmId::Subgradient => d * cfg.sd_bits.unwrap_or(32) as usize + 32,
        AlgorithmId::Ellipsoid => Ellipsoid::state_bits_for(d),
        AlgorithmId::NullSpace | AlgorithmId::Reduction => NullSpaceDescent::state_bits_for(d),
        AlgorithmId::Origin => 0,
    }
}

/// Best known value of `F` over the unit ball and how it was found.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceOptimum {
    pub value: f64,
    pub witness: f64,
    /// Best primal value from the dual ascent.
    pub dual_primal: Option<f64>,
    /// Dual lower bound. For large `eta` it bounds `min F` over `null(A)`
    /// only; elsewhere it is certified over the whole ball.
    pub dual_lower: Option<f64>,
    /// Best value of an unconstrained-memory ellipsoid run, if requested.
    pub ellipsoid: Option<f64>,
}

/// Reference optimum: the best of the witness, the primal points of a dual
/// ascent and, if `ellipsoid_queries > 0`, a plain ellipsoid run.
///
/// Over `null(A)` the A-term is the constant `-rho`, so for large `eta` the
/// problem reduces to the Nemirovski terms with `v_i` replaced by `P v_i`.
/// For small `eta` every affine piece of `F` enters the dual.
pub fn reference_optimum(inst: &HardInstance, ellipsoid_queries: usize) -> Result<ReferenceOptimum, ExperimentError> {
    let p = *inst.params();
    let witness = optimal_witness(inst)?.value;
    let mut best = witness;
    let mut dual_primal = None;
    let mut dual_lower = None;
    if let Some((x, lower)) = null_space_dual(inst) {
        let v = inst.value(&x);
        dual_primal = Some(v);
        if p.eta >= 1e3 {
            // Off null(A) the A-term exceeds -rho by more than eta |Ax|_inf,
            // so the null-space value is optimal up to O(1/eta).
            dual_lower = Some(p.global_scale * lower.max(-p.rho));
        }
        best = best.min(v);
    }
    if p.eta < 1e3 {
        if let Some((x, lower)) = full_dual(inst) {
            let v = inst.value(&x);
            dual_primal = Some(dual_primal.map_or(v, |d: f64| d.min(v)));
            dual_lower = Some(p.global_scale * lower);
            best = best.min(v);
        }
    }
    let mut ellipsoid = None;
    if ellipsoid_queries > 0 {
        let e = Ellipsoid::new(p.d);
        let cfg = RunConfig::new(e.state_bits(), ellipsoid_queries).retaining(Retention::None);
        let rec = run(&e, &mut inst.session(), &cfg, RandomTape::new(0))?;
        if let Some(v) = rec.best_value() {
            ellipsoid = Some(v);
            best = best.min(v);
        }
    }
    Ok(ReferenceOptimum {
        value: best,
        witness,
        dual_primal,
        dual_lower,
        ellipsoid,
    })
}

/// Null-space dual: pieces `(P v_i, -(i+1) gamma)`. Returns the best primal
/// point and dual value, unscaled.
fn null_space_dual(inst: &HardInstance) -> Option<(Vec<f64>, f64)> {
    let p = inst.params();
    let rows = inst.matrix().row_basis();
    if rows.rank() < p.n {
        return None;
    }
    let pieces: Vec<(Vec<f64>, f64)> = inst
        .vectors()
        .iter()
        .enumerate()
        .map(|(i, v)| (rows.project_complement(&v.entries()), -((i + 1) as f64) * p.gamma))
        .collect();
    max_affine_dual(&pieces, p.d, 4000)
}

/// Full dual over every affine piece of `F`: `+-eta a_j - rho` and the `N`
/// Nemirovski terms. A certified lower bound whatever `eta` is, but slow to
/// converge when `eta` is large.
fn full_dual(inst: &HardInstance) -> Option<(Vec<f64>, f64)> {
    let p = inst.params();
    let mut pieces: Vec<(Vec<f64>, f64)> = Vec::new();
    for r in inst.matrix().rows() {
        let a = r.entries_times(p.eta);
        pieces.push((a.iter().map(|v| -v).collect(), -p.rho));
        pieces.push((a, -p.rho));
    }
    for (i, v) in inst.vectors().iter().enumerate() {
        pieces.push((v.entries(), -((i + 1) as f64) * p.gamma));
    }
    max_affine_dual(&pieces, p.d, 20000)
}

/// `min_{|x|<=1} max_p (c_p^T x + b_p) = max_{l in simplex} -|sum l_p c_p| + sum l_p b_p`,
/// by exponentiated gradient ascent. Returns the best primal point seen and
/// the best dual value.
fn max_affine_dual(pieces: &[(Vec<f64>, f64)], d: usize, iters: usize) -> Option<(Vec<f64>, f64)> {
    let n = pieces.len();
    if n == 0 {
        return None;
    }
    let scale = pieces.iter().map(|(c, _)| norm(c)).fold(1.0f64, f64::max);
    let mut lam = vec![1.0 / n as f64; n];
    let mut best_lower = f64::NEG_INFINITY;
    let mut best_x: Option<(Vec<f64>, f64)> = None;
    for t in 0..iters {
        let mut w = vec![0.0; d];
        for (l, (c, _)) in lam.iter().zip(pieces) {
            axpy(*l, c, &mut w);
        }
        let nw = norm(&w);
        let lower = -nw + lam.iter().zip(pieces).map(|(l, (_, b))| l * b).sum::<f64>();
        best_lower = best_lower.max(lower);
        if nw == 0.0 {
            break;
        }
        let x: Vec<f64> = w.iter().map(|v| -v / nw).collect();
        // Supergradient of the dual at lam: c_p^T x + b_p.
        let grad: Vec<f64> = pieces.iter().map(|(c, b)| crate::linalg::dot(c, &x) + b).collect();
        let fx = grad.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if best_x.as_ref().is_none_or(|(_, b)| fx < *b) {
            best_x = Some((x, fx));
        }
        let step = 0.5 / (scale * ((t + 1) as f64).sqrt());
        let mut z = 0.0;
        for (l, g) in lam.iter_mut().zip(&grad) {
            *l *= (step * (g - fx)).exp();
            z += *l;
        }
        lam.iter_mut().for_each(|l| *l /= z);
    }
    best_x.map(|(x, _)| (x, best_lower))
}

/// Summary of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub algorithm: AlgorithmId,
    pub d: usize,
    pub budget_bits: usize,
    pub seed: u64,
    pub queries: usize,
    pub queries_to_eps: Option<usize>,
    pub best_value: Option<f64>,
    pub reference: f64,
    pub best_gap: Option<f64>,
    pub epsilon: f64,
    pub informative_count: usize,
    pub max_state_bits: usize,
    pub status: Status,
    pub violation: Option<String>,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |q| q.to_string());
        write!(
            f,
            "algorithm={} d={} M={} seed={} queries={} queries_to_eps={} best_gap={} eps={:.6} informative={} max_state_bits={} status={}",
            self.algorithm,
            self.d,
            self.budget_bits,
            self.seed,
            self.queries,
            opt(self.queries_to_eps),
            self.best_gap.map_or("none".to_string(), |g| format!("{g:.6e}")),
            self.epsilon,
            self.informative_count,
            self.max_state_bits,
            self.status.as_str()
        )?;
        if let Some(v) = &self.violation {
            write!(f, " violation=\"{v}\"")?;
        }
        Ok(())
    }
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Success => "ok",
            Status::Negative => "not_reached",
            Status::Violation => "violation",
        }
    }
}

/// One optimization run on the static instance for `seed`. Budget violations
/// end the run and are reported in the summary, not as errors.
pub fn run_once(
    cfg: &ExperimentConfig,
    id: AlgorithmId,
    d: usize,
    budget: &BudgetRule,
    seed: u64,
) -> Result<(RunSummary, Option<RunRecord>), ExperimentError> {
    let p = cfg.instance_params(d)?;
    let inst = HardInstance::sample(p, seed)?;
    let eps = cfg.epsilon_for(&p);
    let max_q = cfg.default_max_queries(d, eps / p.global_scale);
    let reference = reference_optimum(&inst, 0)?.value;
    let state = natural_state_bits(id, cfg, d);
    let budget_bits = budget.bits(d, state);
    let alg = build_algorithm(id, cfg, d, budget_bits, inst.matrix())?;
    let rc = RunConfig::new(budget_bits, max_q)
        .retaining(Retention::None)
        .stopping_at(reference + eps);
    let mut summary = RunSummary {
        algorithm: id,
        d,
        budget_bits,
        seed,
        queries: 0,
        queries_to_eps: None,
        best_value: None,
        reference,
        best_gap: None,
        epsilon: eps,
        informative_count: 0,
        max_state_bits: 0,
        status: Status::Negative,
        violation: None,
    };
    match run(alg.as_ref(), &mut inst.session(), &rc, algorithm_tape(seed)) {
        Ok(rec) => {
            summary.queries = rec.queries();
            summary.queries_to_eps = rec.queries_to(reference + eps);
            summary.best_value = rec.best_value();
            summary.best_gap = rec.best_value().map(|b| b - reference);
            summary.informative_count = rec.informative_count();
            summary.max_state_bits = rec.max_state_bits();
            summary.status = if summary.queries_to_eps.is_some() {
                Status::Success
            } else {
                Status::Negative
            };
            Ok((summary, Some(rec)))
        }
        Err(e @ HarnessError::BudgetViolation { .. }) => {
            summary.status = Status::Violation;
            summary.violation = Some(e.to_string());
            Ok((summary, None))
        }
        Err(e) => Err(e.into()),
    }
}

/// One game of the configured strategy.
pub fn play_once(cfg: &ExperimentConfig, strategy: StrategyId, d: usize, seed: u64) -> Result<GameTranscript, ExperimentError> {
    let state = NullSpaceDescent::state_bits_for(d);
    let budget = match strategy {
        StrategyId::Reduction => cfg.budget.bits(d, state),
        _ => cfg.budget.bits(d, 64 * d * cfg.k),
    };
    let gp = GameParams::new(d, cfg.k, cfg.m, budget, cfg.variant);
    Ok(match strategy {
        StrategyId::StoreNull => play(&gp, &StoreNullBasis, seed),
        StrategyId::QueryRows => play(&gp, &QueryAllRows, seed),
        StrategyId::ReturnRows => play(&gp, &ReturnRows, seed),
        StrategyId::Reduction => {
            let p = cfg.instance_params(d)?;
            // The diagnostic optimizer is built from the hidden matrix.
            let a = crate::ovg::game_matrix(&gp, seed);
            let opt = NullSpaceDescent::new(&a, StepSchedule::InverseSqrt(cfg.step));
            play(&gp, &ReductionAdapter::new(&opt, p), seed)
        }
    })
}

pub fn transcript_status(t: &GameTranscript) -> Status {
    match &t.outcome {
        crate::ovg::Outcome::Win => Status::Success,
        crate::ovg::Outcome::Loss(r) if r.is_violation() => Status::Violation,
        crate::ovg::Outcome::Loss(_) => Status::Negative,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub d: usize,
    #[serde(rename = "M")]
    pub budget_bits: usize,
    pub algorithm: AlgorithmId,
    pub seed: u64,
    pub queries_to_eps: Option<usize>,
    pub best_gap: Option<f64>,
    pub informative_count: usize,
    pub win: Option<bool>,
    pub status: &'static str,
}

/// Every `(d, budget, algorithm, seed)` trial, run on up to `cfg.workers`
/// threads and sorted by `(seed, d, M, algorithm)`.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>, ExperimentError> {
    let mut trials = Vec::new();
    for &seed in &cfg.seeds {
        for &d in &cfg.dims {
            for b in &cfg.budgets {
                for &a in &cfg.algorithms {
                    trials.push((seed, d, *b, a));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| ConfigError::Value {
            key: "workers".into(),
            msg: e.to_string(),
        })?;
    let rows: Result<Vec<SweepRow>, ExperimentError> = pool.install(|| {
        trials
            .par_iter()
            .map(|&(seed, d, b, a)| sweep_trial(cfg, seed, d, &b, a))
            .collect()
    });
    let mut rows = rows?;
    rows.sort_by(|x, y| {
        (x.seed, x.d, x.budget_bits, x.algorithm).cmp(&(y.seed, y.d, y.budget_bits, y.algorithm))
    });
    Ok(rows)
}

fn sweep_trial(cfg: &ExperimentConfig, seed: u64, d: usize, b: &BudgetRule, a: AlgorithmId) -> Result<SweepRow, ExperimentError> {
    if a == AlgorithmId::Reduction {
        let t = play_once(cfg, StrategyId::Reduction, d, seed)?;
        let status = transcript_status(&t);
        return Ok(SweepRow {
            d,
            budget_bits: t.params.message_bits,
            algorithm: a,
            seed,
            queries_to_eps: None,
            best_gap: None,
            informative_count: 0,
            win: Some(t.won()),
            status: status.as_str(),
        });
    }
    let (s, _) = run_once(cfg, a, d, b, seed)?;
    Ok(SweepRow {
        d,
        budget_bits: s.budget_bits,
        algorithm: a,
        seed,
        queries_to_eps: s.queries_to_eps,
        best_gap: s.best_gap,
        informative_count: s.informative_count,
        win: None,
        status: s.status.as_str(),
    })
}

/// Versioned header comment, column header, then one record per row.
pub fn write_csv<W: std::io::Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_VERSION_LINE}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.d.to_string(),
            r.budget_bits.to_string(),
            r.algorithm.to_string(),
            r.seed.to_string(),
            r.queries_to_eps.map(|q| q.to_string()).unwrap_or_default(),
            r.best_gap.map(|g| format!("{g:.9e}")).unwrap_or_default(),
            r.informative_count.to_string(),
            r.win.map(|w| w.to_string()).unwrap_or_default(),
            r.status.to_string(),
        ])?;
    }
    w.flush()
}

pub fn csv_string(rows: &[SweepRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("csv output is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_config_text() {
        let cfg = ExperimentConfig::from_text(
            "# comment\nmode = sweep\nd=32\nN = 4\nseeds = 0..3, 7\nbudgets = 64*d, 64*d^2, 1000, state\nalgorithms=sd,ellipsoid\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::Sweep);
        assert_eq!(cfg.d, 32);
        assert_eq!(cfg.depth, 4);
        assert_eq!(cfg.seeds, vec![0, 1, 2, 7]);
        assert_eq!(cfg.budgets[1].bits(16, 0), 64 * 256);
        assert_eq!(cfg.budgets[2], BudgetRule::Bits(1000));
        assert_eq!(cfg.budgets[3].bits(16, 77), 77);
        assert!(ExperimentConfig::from_text("nope = 1").is_err());
        assert!(ExperimentConfig::from_text("d 3").is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("").unwrap(), Vec::<u64>::new());
        assert_eq!(parse_seeds("2..=4").unwrap(), vec![2, 3, 4]);
        assert!(parse_seeds("a").is_err());
        let cfg = ExperimentConfig::default().with_seed_override(Some("9")).unwrap();
        assert_eq!(cfg.seeds, vec![9]);
    }

    #[test]
    fn over_cap_is_refused() {
        let cfg = ExperimentConfig {
            gamma_rule: GammaRule::Asymptotic,
            d: 64,
            depth: 3,
            ..Default::default()
        };
        assert!(matches!(cfg.instance_params(64), Err(ConfigError::Instance(InstanceError::DepthOverCap { .. }))));
        let ok = ExperimentConfig { allow_over_cap: true, ..cfg };
        assert!(ok.instance_params(64).is_ok());
    }

    #[test]
    fn dual_bracket_is_tight_on_hard_instance() {
        let p = InstanceParams::at_depth_cap(16, 1, 3).unwrap().with_global_scale(1.0);
        let inst = HardInstance::sample(p, 2).unwrap();
        let r = reference_optimum(&inst, 0).unwrap();
        let lo = r.dual_lower.unwrap();
        assert!(r.value >= lo - 1e-9, "{r:?}");
        assert!(r.value - lo < 1e-3, "{r:?}");
        assert!(r.value <= r.witness);
    }

    #[test]
    fn full_dual_brackets_lipschitz_instance() {
        let p = InstanceParams::at_depth_cap(16, 1, 3).unwrap().unit_lipschitz();
        let inst = HardInstance::sample(p, 3).unwrap();
        let r = reference_optimum(&inst, 0).unwrap();
        let lo = r.dual_lower.unwrap();
        assert!(r.value >= lo - 1e-9, "{r:?}");
        assert!(r.value - lo < 1e-2, "{r:?}");
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let cfg = ExperimentConfig {
            seeds: vec![],
            ..Default::default()
        };
        let rows = sweep(&cfg).unwrap();
        assert!(rows.is_empty());
        let text = csv_string(&rows);
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(CSV_VERSION_LINE));
    }
}
