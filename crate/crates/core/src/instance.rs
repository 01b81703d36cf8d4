//! The hard function `F(x) = scale * max(eta * |Ax|_inf - rho, f(x))` with
//! `f(x) = max_i v_i^T x - i * gamma`, its static and phased oracles, the
//! informative-subgradient log, the event-E monitor and the optimal witness.
//!
//! Nemirovski terms and matrix rows are indexed from 0 in this API; term `i`
//! carries the shift `(i + 1) * gamma`. Phases are counted from 1.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base::{line_to_signs, sample_base_vector, sample_sign_matrix, signs_to_line, BaseError, BaseVector, SignMatrix};
use crate::linalg::{norm, norm_inf, OrthoBasis};
use crate::tape::RandomTape;

/// Relative band used to resolve branch and argmin ties.
pub const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error(transparent)]
    Base(#[from] BaseError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("depth N = {depth} exceeds the cap (1/(32 gamma))^(2/3) = {cap:.6}")]
    DepthOverCap { depth: usize, cap: f64 },
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("row space of A has rank {rank} < {n}")]
    RankDeficient { rank: usize, n: usize },
    #[error("adaptive instance has {have} of {need} vectors; finalize first")]
    NotFinalized { have: usize, need: usize },
    #[error("malformed instance file: {0}")]
    Parse(String),
}

/// `sqrt(400 k ln d / d)`
pub fn asymptotic_gamma(d: usize, k: usize) -> f64 {
    (400.0 * k as f64 * (d as f64).ln() / d as f64).sqrt()
}

/// Depth allowed by `gamma`: `(1 / (32 gamma))^(2/3)`.
pub fn depth_cap(gamma: f64) -> f64 {
    (1.0 / (32.0 * gamma)).powf(2.0 / 3.0)
}

/// Shift step that puts `depth` exactly at the cap.
pub fn gamma_at_cap(depth: usize) -> f64 {
    1.0 / (32.0 * (depth as f64).powf(1.5))
}

/// Target accuracy `1 / (20 sqrt(N))`.
pub fn epsilon_for_depth(depth: usize) -> f64 {
    1.0 / (20.0 * (depth as f64).sqrt())
}

/// Event-E thresholds `(sqrt(10 ln d / d), sqrt(30 k ln d / d))`.
pub fn event_thresholds(d: usize, k: usize) -> (f64, f64) {
    let l = (d as f64).ln() / d as f64;
    ((10.0 * l).sqrt(), (30.0 * k as f64 * l).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub d: usize,
    pub n: usize,
    /// Number of Nemirovski terms `N`.
    pub depth: usize,
    /// Round length `k`.
    pub round_len: usize,
    pub gamma: f64,
    pub eta: f64,
    pub rho: f64,
    pub global_scale: f64,
}

impl InstanceParams {
    /// Default family: `gamma = sqrt(400 k ln d / d)`, `eta = d^5`, `rho = 1`,
    /// `scale = d^-6`. Refuses depths over the cap.
    pub fn standard(d: usize, k: usize, depth: usize) -> Result<Self, InstanceError> {
        let p = Self::standard_unchecked(d, k, depth)?;
        p.check_depth()?;
        Ok(p)
    }

    /// As [`InstanceParams::standard`] without the depth cap.
    pub fn standard_unchecked(d: usize, k: usize, depth: usize) -> Result<Self, InstanceError> {
        if d < 2 || k == 0 || depth == 0 {
            return Err(InstanceError::Invalid(format!(
                "need d >= 2, k >= 1, N >= 1 (got d = {d}, k = {k}, N = {depth})"
            )));
        }
        let df = d as f64;
        Ok(Self {
            d,
            n: d / 2,
            depth,
            round_len: k,
            gamma: asymptotic_gamma(d, k),
            eta: df.powi(5),
            rho: 1.0,
            global_scale: df.powi(-6),
        })
    }

    /// Default family with `gamma` chosen so that `depth` sits exactly at the cap.
    pub fn at_depth_cap(d: usize, k: usize, depth: usize) -> Result<Self, InstanceError> {
        Ok(Self::standard_unchecked(d, k, depth)?.with_gamma(gamma_at_cap(depth)))
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_global_scale(mut self, scale: f64) -> Self {
        self.global_scale = scale;
        self
    }

    pub fn with_eta_rho(mut self, eta: f64, rho: f64) -> Self {
        self.eta = eta;
        self.rho = rho;
        self
    }

    /// `eta = 1/sqrt(d)`, `rho = 1`, scale 1: every piece is 1-Lipschitz.
    pub fn unit_lipschitz(self) -> Self {
        let eta = 1.0 / (self.d as f64).sqrt();
        self.with_eta_rho(eta, 1.0).with_global_scale(1.0)
    }

    pub fn depth_cap(&self) -> f64 {
        depth_cap(self.gamma)
    }

    pub fn check_depth(&self) -> Result<(), InstanceError> {
        let cap = self.depth_cap();
        if self.depth as f64 > cap * (1.0 + 1e-9) {
            return Err(InstanceError::DepthOverCap { depth: self.depth, cap });
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_for_depth(self.depth)
    }

    /// Lipschitz constant of `F` on all of `R^d`.
    pub fn lipschitz(&self) -> f64 {
        self.global_scale * (self.eta * (self.d as f64).sqrt()).max(1.0)
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        let finite = [self.gamma, self.eta, self.rho, self.global_scale]
            .iter()
            .all(|v| v.is_finite());
        if self.d < 2 || self.n == 0 || self.n > self.d || self.depth == 0 || self.round_len == 0 {
            return Err(InstanceError::Invalid("sizes out of range".into()));
        }
        if !finite || self.gamma <= 0.0 || self.eta <= 0.0 || self.global_scale <= 0.0 {
            return Err(InstanceError::Invalid("gamma, eta and scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// The `eta |Ax|_inf - rho` term is active.
    Matrix,
    /// The Nemirovski term `f` is strictly active.
    Nemirovski,
    /// Oracles for functions without the two-term structure.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderResponse {
    pub value: f64,
    pub subgradient: Vec<f64>,
    pub branch: Branch,
    /// Row index on the matrix branch, Nemirovski index on the other.
    pub attained_index: usize,
    pub informative: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("query has dimension {got}, oracle expects {expected}")]
    Dimension { expected: usize, got: usize },
}

pub trait FirstOrderOracle {
    fn dim(&self) -> usize;
    fn query(&mut self, x: &[f64]) -> Result<FirstOrderResponse, OracleError>;
}

/// Oracle backed by a closure returning `(value, subgradient)`.
pub struct FnOracle<F> {
    d: usize,
    f: F,
    queries: u64,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> FnOracle<F> {
    pub fn new(d: usize, f: F) -> Self {
        Self { d, f, queries: 0 }
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> FirstOrderOracle for FnOracle<F> {
    fn dim(&self) -> usize {
        self.d
    }

    fn query(&mut self, x: &[f64]) -> Result<FirstOrderResponse, OracleError> {
        check_dim(self.d, x)?;
        self.queries += 1;
        let (value, subgradient) = (self.f)(x);
        Ok(FirstOrderResponse {
            value,
            subgradient,
            branch: Branch::Plain,
            attained_index: 0,
            informative: false,
        })
    }
}

fn check_dim(expected: usize, x: &[f64]) -> Result<(), OracleError> {
    if x.len() != expected {
        return Err(OracleError::Dimension { expected, got: x.len() });
    }
    Ok(())
}

fn within_band(a: f64, b: f64) -> f64 {
    TIE_RTOL * a.abs().max(b.abs()).max(1.0)
}

/// `(max_i v_i^T x - (i+1) gamma, least index within the tie band of the max)`.
/// An empty list evaluates to `-inf`.
pub fn eval_f(vectors: &[BaseVector], gamma: f64, x: &[f64]) -> (f64, usize) {
    let values: Vec<f64> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| v.dot(x) - (i + 1) as f64 * gamma)
        .collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let idx = values
        .iter()
        .position(|v| *v >= best - within_band(*v, best))
        .unwrap_or(0);
    (best, idx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AInf {
    pub value: f64,
    pub row: usize,
    /// `+1.0` or `-1.0`; `+1.0` when the product is zero.
    pub sign: f64,
}

/// `|Ax|_inf` with the least attaining row under exact comparison.
pub fn eval_ainf(matrix: &SignMatrix, x: &[f64]) -> AInf {
    let mut out = AInf { value: -1.0, row: 0, sign: 1.0 };
    for (i, r) in matrix.rows().iter().enumerate() {
        let p = r.dot(x);
        if p.abs() > out.value {
            out = AInf {
                value: p.abs(),
                row: i,
                sign: if p < 0.0 { -1.0 } else { 1.0 },
            };
        }
    }
    out
}

/// The induced oracle over a given list of Nemirovski vectors.
pub fn respond(params: &InstanceParams, matrix: &SignMatrix, vectors: &[BaseVector], x: &[f64]) -> FirstOrderResponse {
    let a = eval_ainf(matrix, x);
    let a_term = params.eta * a.value - params.rho;
    let (f_val, i) = eval_f(vectors, params.gamma, x);
    if a_term >= f_val - within_band(a_term, f_val) {
        FirstOrderResponse {
            value: params.global_scale * a_term.max(f_val),
            subgradient: matrix.row(a.row).entries_times(params.global_scale * params.eta * a.sign),
            branch: Branch::Matrix,
            attained_index: a.row,
            informative: false,
        }
    } else {
        FirstOrderResponse {
            value: params.global_scale * f_val,
            subgradient: vectors[i].entries_times(params.global_scale),
            branch: Branch::Nemirovski,
            attained_index: i,
            informative: false,
        }
    }
}

fn bits_key(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Fixed instance with all `N` Nemirovski vectors present.
#[derive(Debug, Clone, PartialEq)]
pub struct HardInstance {
    params: InstanceParams,
    seed: Option<u64>,
    matrix: SignMatrix,
    vectors: Vec<BaseVector>,
}

/// Tapes for `(A, v_1..v_N)` derived from a seed.
fn instance_tapes(seed: u64) -> (RandomTape, RandomTape) {
    let [a, v, _] = RandomTape::new(seed).split3();
    (a, v)
}

impl HardInstance {
    pub fn sample(params: InstanceParams, seed: u64) -> Result<Self, InstanceError> {
        params.validate()?;
        let (mut at, mut vt) = instance_tapes(seed);
        let matrix = sample_sign_matrix(params.d, params.n, &mut at)?;
        let scale = 1.0 / (params.d as f64).sqrt();
        let vectors = (0..params.depth)
            .map(|_| sample_base_vector(params.d, scale, &mut vt))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_parts(params, matrix, vectors, Some(seed))
    }

    pub fn from_parts(
        params: InstanceParams,
        matrix: SignMatrix,
        vectors: Vec<BaseVector>,
        seed: Option<u64>,
    ) -> Result<Self, InstanceError> {
        params.validate()?;
        if matrix.d() != params.d || matrix.n() != params.n {
            return Err(InstanceError::Invalid("matrix shape does not match parameters".into()));
        }
        if vectors.len() != params.depth || vectors.iter().any(|v| v.dim() != params.d) {
            return Err(InstanceError::Invalid("need exactly N Nemirovski vectors of length d".into()));
        }
        Ok(Self { params, seed, matrix, vectors })
    }

    pub fn params(&self) -> &InstanceParams {
        &self.params
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn matrix(&self) -> &SignMatrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut SignMatrix {
        &mut self.matrix
    }

    pub fn vectors(&self) -> &[BaseVector] {
        &self.vectors
    }

    pub fn eval_f(&self, x: &[f64]) -> Result<(f64, usize), InstanceError> {
        self.check(x)?;
        Ok(eval_f(&self.vectors, self.params.gamma, x))
    }

    pub fn eval_ainf(&self, x: &[f64]) -> Result<AInf, InstanceError> {
        self.check(x)?;
        Ok(eval_ainf(&self.matrix, x))
    }

    pub fn respond(&self, x: &[f64]) -> Result<FirstOrderResponse, InstanceError> {
        self.check(x)?;
        Ok(respond(&self.params, &self.matrix, &self.vectors, x))
    }

    /// `F(x)` including the global scale.
    pub fn value(&self, x: &[f64]) -> f64 {
        let a = eval_ainf(&self.matrix, x);
        let (f, _) = eval_f(&self.vectors, self.params.gamma, x);
        self.params.global_scale * (self.params.eta * a.value - self.params.rho).max(f)
    }

    /// Oracle session that marks informative responses.
    pub fn session(&self) -> StaticOracle<'_> {
        StaticOracle {
            inst: self,
            seen: HashSet::new(),
            queries: 0,
        }
    }

    fn check(&self, x: &[f64]) -> Result<(), InstanceError> {
        if x.len() != self.params.d {
            return Err(InstanceError::Dimension {
                expected: self.params.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::from("# memlb instance v1\n");
        out.push_str(&format!("d {}\nn {}\nN {}\nk {}\n", p.d, p.n, p.depth, p.round_len));
        out.push_str(&format!(
            "gamma {}\neta {}\nrho {}\nscale {}\n",
            p.gamma, p.eta, p.rho, p.global_scale
        ));
        match self.seed {
            Some(s) => out.push_str(&format!("seed {s}\n")),
            None => out.push_str("seed none\n"),
        }
        out.push_str("A\n");
        out.push_str(&self.matrix.to_text());
        out.push_str("V\n");
        for v in &self.vectors {
            out.push_str(&signs_to_line(v.signs()));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, InstanceError> {
        let bad = |m: &str| InstanceError::Parse(m.to_string());
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut field = |name: &str| -> Result<String, InstanceError> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing field {name}")))?;
            let (key, value) = line.split_once(' ').ok_or_else(|| bad(&format!("bad line {line:?}")))?;
            if key != name {
                return Err(bad(&format!("expected field {name}, found {key}")));
            }
            Ok(value.trim().to_string())
        };
        let int = |s: String| s.parse::<usize>().map_err(|_| bad(&format!("bad integer {s:?}")));
        let real = |s: String| s.parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}")));
        let d = int(field("d")?)?;
        let n = int(field("n")?)?;
        let depth = int(field("N")?)?;
        let round_len = int(field("k")?)?;
        let gamma = real(field("gamma")?)?;
        let eta = real(field("eta")?)?;
        let rho = real(field("rho")?)?;
        let global_scale = real(field("scale")?)?;
        let seed = match field("seed")?.as_str() {
            "none" => None,
            s => Some(s.parse::<u64>().map_err(|_| bad("bad seed"))?),
        };
        let rest: Vec<&str> = lines.collect();
        let a_at = rest.iter().position(|l| *l == "A").ok_or_else(|| bad("missing A section"))?;
        let v_at = rest.iter().position(|l| *l == "V").ok_or_else(|| bad("missing V section"))?;
        if a_at != 0 || v_at < a_at {
            return Err(bad("sections out of order"));
        }
        let matrix = SignMatrix::from_text(&rest[a_at + 1..v_at].join("\n"))?;
        let scale = 1.0 / (d as f64).sqrt();
        let vectors = rest[v_at + 1..]
            .iter()
            .map(|l| Ok(BaseVector::from_signs(line_to_signs(l, d)?, scale)))
            .collect::<Result<Vec<_>, BaseError>>()?;
        let params = InstanceParams {
            d,
            n,
            depth,
            round_len,
            gamma,
            eta,
            rho,
            global_scale,
        };
        Self::from_parts(params, matrix, vectors, seed)
    }
}

/// Static oracle session over a borrowed instance.
#[derive(Debug, Clone)]
pub struct StaticOracle<'a> {
    inst: &'a HardInstance,
    seen: HashSet<Vec<u64>>,
    queries: u64,
}

impl StaticOracle<'_> {
    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn instance(&self) -> &HardInstance {
        self.inst
    }
}

impl FirstOrderOracle for StaticOracle<'_> {
    fn dim(&self) -> usize {
        self.inst.params.d
    }

    fn query(&mut self, x: &[f64]) -> Result<FirstOrderResponse, OracleError> {
        check_dim(self.dim(), x)?;
        self.queries += 1;
        let mut r = respond(&self.inst.params, &self.inst.matrix, &self.inst.vectors, x);
        r.informative = r.branch == Branch::Nemirovski && self.seen.insert(bits_key(&r.subgradient));
        Ok(r)
    }
}

/// One query seen by the phased oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasedQuery {
    pub x: Vec<f64>,
    /// Phase (from 1) in which the query was answered.
    pub phase: usize,
    pub response: FirstOrderResponse,
}

/// Oracle that materializes `v_{j+1}` only once `v_j` has been returned.
#[derive(Debug, Clone)]
pub struct AdaptiveOracle {
    params: InstanceParams,
    seed: u64,
    matrix: SignMatrix,
    vector_tape: RandomTape,
    vectors: Vec<BaseVector>,
    seen: HashSet<Vec<u64>>,
    exhausted: bool,
    history: Vec<PhasedQuery>,
}

impl AdaptiveOracle {
    pub fn new(params: InstanceParams, seed: u64) -> Result<Self, InstanceError> {
        params.validate()?;
        let (mut at, vector_tape) = instance_tapes(seed);
        let matrix = sample_sign_matrix(params.d, params.n, &mut at)?;
        let mut o = Self {
            params,
            seed,
            matrix,
            vector_tape,
            vectors: Vec::new(),
            seen: HashSet::new(),
            exhausted: false,
            history: Vec::new(),
        };
        o.materialize_next()?;
        Ok(o)
    }

    fn materialize_next(&mut self) -> Result<(), InstanceError> {
        let scale = 1.0 / (self.params.d as f64).sqrt();
        let v = sample_base_vector(self.params.d, scale, &mut self.vector_tape)?;
        self.vectors.push(v);
        Ok(())
    }

    pub fn params(&self) -> &InstanceParams {
        &self.params
    }

    pub fn matrix(&self) -> &SignMatrix {
        &self.matrix
    }

    pub fn phase(&self) -> usize {
        self.vectors.len()
    }

    /// The newest vector `v_N` has been returned; no further phase exists.
    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    pub fn vectors(&self) -> &[BaseVector] {
        &self.vectors
    }

    pub fn history(&self) -> &[PhasedQuery] {
        &self.history
    }

    /// Draws every remaining vector and returns the static instance they define.
    pub fn finalize(&mut self) -> Result<HardInstance, InstanceError> {
        while self.vectors.len() < self.params.depth {
            self.materialize_next()?;
        }
        HardInstance::from_parts(self.params, self.matrix.clone(), self.vectors.clone(), Some(self.seed))
    }

    /// Checks event E against the retained history. Needs all `N` vectors.
    pub fn check_event_e(&self, log: &InformativeLog) -> Result<EventReport, InstanceError> {
        if self.vectors.len() < self.params.depth {
            return Err(InstanceError::NotFinalized {
                have: self.vectors.len(),
                need: self.params.depth,
            });
        }
        Ok(check_event_e(&self.params, &self.vectors, &self.history, log))
    }
}

impl FirstOrderOracle for AdaptiveOracle {
    fn dim(&self) -> usize {
        self.params.d
    }

    fn query(&mut self, x: &[f64]) -> Result<FirstOrderResponse, OracleError> {
        check_dim(self.dim(), x)?;
        let phase = self.phase();
        let mut r = respond(&self.params, &self.matrix, &self.vectors[..phase], x);
        r.informative = r.branch == Branch::Nemirovski && self.seen.insert(bits_key(&r.subgradient));
        if r.branch == Branch::Nemirovski && r.attained_index + 1 == phase && !self.exhausted {
            if phase < self.params.depth {
                self.materialize_next()
                    .expect("vector tape holds 2^56 bits, far beyond any depth");
            } else {
                self.exhausted = true;
            }
        }
        self.history.push(PhasedQuery {
            x: x.to_vec(),
            phase,
            response: r.clone(),
        });
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InformativeEntry {
    /// Position of the query in the full query sequence (from 0).
    pub step: usize,
    pub x: Vec<f64>,
    pub subgradient: Vec<f64>,
}

/// Informative subgradients in arrival order, with windowed spans.
#[derive(Debug, Clone, PartialEq)]
pub struct InformativeLog {
    round_len: usize,
    entries: Vec<InformativeEntry>,
    seen: HashSet<Vec<u64>>,
}

impl InformativeLog {
    pub fn new(round_len: usize) -> Self {
        Self {
            round_len,
            entries: Vec::new(),
            seen: HashSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[InformativeEntry] {
        &self.entries
    }

    /// Appends the pair if the Nemirovski term was strictly active and the
    /// subgradient is new. Returns whether it was appended.
    pub fn track(&mut self, step: usize, x: &[f64], response: &FirstOrderResponse) -> bool {
        if response.branch != Branch::Nemirovski {
            return false;
        }
        if !self.seen.insert(bits_key(&response.subgradient)) {
            return false;
        }
        self.entries.push(InformativeEntry {
            step,
            x: x.to_vec(),
            subgradient: response.subgradient.clone(),
        });
        true
    }

    /// Basis of `S_j`, the span of `x_{t_i}` for `max(1, j - k) <= i <= j` (`j` from 1).
    /// `S_0` is the zero subspace.
    pub fn span(&self, j: usize) -> OrthoBasis {
        let d = self.entries.first().map_or(0, |e| e.x.len());
        let mut b = OrthoBasis::new(d);
        if j == 0 {
            return b;
        }
        let lo = j.saturating_sub(self.round_len).max(1);
        for e in &self.entries[lo - 1..j] {
            b.push(&e.x, 1e-12);
        }
        b
    }

    /// `|proj_{S_{j-1}}(x_{t_j})| / |x_{t_j}|`, with 0 for a zero query.
    pub fn projection_ratio(&self, j: usize) -> f64 {
        let x = &self.entries[j - 1].x;
        let nx = norm(x);
        if nx == 0.0 {
            return 0.0;
        }
        self.span(j - 1).projection_norm(x) / nx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventViolation {
    /// `|x^T v_j|` above the first threshold for a query answered in phase `<= j`.
    Correlation { query: usize, vector: usize, value: f64 },
    /// `|proj_{S_j}(v_j)|` above the second threshold.
    Projection { vector: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventReport {
    pub holds: bool,
    pub first_violation: Option<EventViolation>,
    pub thresholds: (f64, f64),
}

/// Event E over a phased query history and the full list of `N` vectors.
/// `vector` indices in violations are phase numbers (from 1).
pub fn check_event_e(
    params: &InstanceParams,
    vectors: &[BaseVector],
    history: &[PhasedQuery],
    log: &InformativeLog,
) -> EventReport {
    let (t1, t2) = event_thresholds(params.d, params.round_len);
    let mut report = EventReport {
        holds: true,
        first_violation: None,
        thresholds: (t1, t2),
    };
    for (q, h) in history.iter().enumerate() {
        for (j, v) in vectors.iter().enumerate().skip(h.phase - 1) {
            let c = v.dot(&h.x).abs();
            if c > t1 {
                report.holds = false;
                report.first_violation = Some(EventViolation::Correlation {
                    query: q,
                    vector: j + 1,
                    value: c,
                });
                return report;
            }
        }
    }
    for j in 1..=log.len().min(vectors.len()) {
        let p = log.span(j).projection_norm(&vectors[j - 1].entries());
        if p > t2 {
            report.holds = false;
            report.first_violation = Some(EventViolation::Projection { vector: j, value: p });
            return report;
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub x: Vec<f64>,
    /// `F(x)` including the global scale.
    pub value: f64,
    pub norm: f64,
    pub in_ball: bool,
    /// `|A x|_inf`.
    pub null_residual: f64,
}

/// `x = -(1/(2 sqrt N)) sum_i P v_i` with `P` the projector onto `null(A)`.
pub fn optimal_witness(inst: &HardInstance) -> Result<Witness, InstanceError> {
    let p = inst.params();
    let rows = inst.matrix().row_basis();
    if rows.rank() < p.n {
        return Err(InstanceError::RankDeficient { rank: rows.rank(), n: p.n });
    }
    let mut sum = vec![0.0; p.d];
    for v in inst.vectors() {
        crate::linalg::axpy(1.0, &rows.project_complement(&v.entries()), &mut sum);
    }
    let c = -1.0 / (2.0 * (p.depth as f64).sqrt());
    let x: Vec<f64> = sum.iter().map(|s| s * c).collect();
    let nx = norm(&x);
    Ok(Witness {
        value: inst.value(&x),
        null_residual: norm_inf(&inst.matrix().mul(&x)),
        norm: nx,
        in_ball: nx <= 1.0,
        x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HardInstance {
        let p = InstanceParams::at_depth_cap(16, 2, 3).unwrap();
        HardInstance::sample(p, 5).unwrap()
    }

    #[test]
    fn origin_attains_first_term() {
        let inst = small();
        let (v, i) = inst.eval_f(&[0.0; 16]).unwrap();
        assert_eq!(i, 0);
        assert_eq!(v, -inst.params().gamma);
    }

    #[test]
    fn single_term_arithmetic() {
        let v = BaseVector::from_signs(vec![1; 4], 0.5);
        let (val, i) = eval_f(&[v], 0.3, &[1.0, 0.0, 0.0, 0.0]);
        assert!((val - 0.2).abs() < 1e-15);
        assert_eq!(i, 0);
    }

    #[test]
    fn ainf_at_zero_and_first_row() {
        let inst = small();
        let a = inst.eval_ainf(&[0.0; 16]).unwrap();
        assert_eq!((a.value, a.row, a.sign), (0.0, 0, 1.0));
        let a1 = inst.matrix().row(0).entries();
        let a = inst.eval_ainf(&a1).unwrap();
        assert!(a.value >= 16.0);
        assert_eq!((a.row, a.sign), (0, 1.0));
    }

    #[test]
    fn origin_is_on_nemirovski_branch() {
        let p = InstanceParams::standard_unchecked(16, 1, 2).unwrap().with_gamma(0.5);
        let inst = HardInstance::sample(p, 1).unwrap();
        let r = inst.respond(&[0.0; 16]).unwrap();
        assert_eq!(r.branch, Branch::Nemirovski);
        assert_eq!(r.attained_index, 0);
        assert_eq!(r.subgradient, inst.vectors()[0].entries_times(p.global_scale));
    }

    #[test]
    fn dominant_matrix_term() {
        let a = SignMatrix::from_rows(2, vec![BaseVector::from_signs(vec![1, 1], 1.0)]).unwrap();
        let v = BaseVector::from_signs(vec![1, -1], 1.0 / 2f64.sqrt());
        let p = InstanceParams {
            d: 2,
            n: 1,
            depth: 1,
            round_len: 1,
            gamma: 0.1,
            eta: 32.0,
            rho: 1.0,
            global_scale: 1.0,
        };
        let r = respond(&p, &a, &[v], &[1.0, 1.0]);
        assert_eq!(r.branch, Branch::Matrix);
        assert_eq!(r.value, 63.0);
        assert_eq!(r.subgradient, vec![32.0, 32.0]);
    }

    #[test]
    fn negative_products_give_signed_rows() {
        let inst = small();
        let x: Vec<f64> = inst.matrix().row(2).entries().iter().map(|v| -v).collect();
        let r = inst.respond(&x).unwrap();
        assert_eq!(r.branch, Branch::Matrix);
        let g_row: Vec<f64> = r.subgradient.iter().map(|g| g / (inst.params().global_scale * inst.params().eta)).collect();
        assert!((crate::linalg::dot(&g_row, &x) - norm_inf(&inst.matrix().mul(&x))).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let inst = small();
        let back = HardInstance::from_text(&inst.to_text()).unwrap();
        assert_eq!(back, inst);
        assert_eq!(back.to_text(), inst.to_text());
    }

    #[test]
    fn standard_constructor_enforces_cap() {
        assert!(matches!(
            InstanceParams::standard(64, 1, 3),
            Err(InstanceError::DepthOverCap { depth: 3, .. })
        ));
        assert!(InstanceParams::at_depth_cap(64, 1, 3).unwrap().check_depth().is_ok());
    }

    #[test]
    fn adaptive_first_query_advances() {
        let p = InstanceParams::at_depth_cap(16, 2, 3).unwrap();
        let mut o = AdaptiveOracle::new(p, 9).unwrap();
        let r = o.query(&[0.0; 16]).unwrap();
        assert!(r.informative);
        assert_eq!(o.phase(), 2);
        let a1 = o.matrix().row(0).entries();
        let r = o.query(&a1).unwrap();
        assert_eq!(r.branch, Branch::Matrix);
        assert_eq!(o.phase(), 2);
        let fin = o.finalize().unwrap();
        assert_eq!(fin, HardInstance::sample(p, 9).unwrap());
    }

    #[test]
    fn log_ignores_duplicates_and_matrix_branch() {
        let inst = small();
        let mut log = InformativeLog::new(2);
        let x0 = vec![0.0; 16];
        let r0 = inst.respond(&x0).unwrap();
        assert!(log.track(0, &x0, &r0));
        assert!(!log.track(1, &x0, &r0));
        let a1 = inst.matrix().row(0).entries();
        assert!(!log.track(2, &a1, &inst.respond(&a1).unwrap()));
        assert_eq!(log.len(), 1);
        assert_eq!(log.projection_ratio(1), 0.0);
    }

    #[test]
    fn witness_single_vector_in_null_space() {
        // A = [(1,1,1,1), (1,1,-1,-1)], v = (1,-1,1,-1)/2 lies in null(A).
        let a = SignMatrix::from_rows(
            4,
            vec![
                BaseVector::from_signs(vec![1, 1, 1, 1], 1.0),
                BaseVector::from_signs(vec![1, 1, -1, -1], 1.0),
            ],
        )
        .unwrap();
        let v = BaseVector::from_signs(vec![1, -1, 1, -1], 0.5);
        let p = InstanceParams {
            d: 4,
            n: 2,
            depth: 1,
            round_len: 1,
            gamma: 0.1,
            eta: 1024.0,
            rho: 1.0,
            global_scale: 1.0,
        };
        let inst = HardInstance::from_parts(p, a, vec![v.clone()], None).unwrap();
        let w = optimal_witness(&inst).unwrap();
        for (xi, vi) in w.x.iter().zip(v.entries()) {
            assert!((xi + vi / 2.0).abs() < 1e-15);
        }
        assert!((w.value - (-0.5 - 0.1)).abs() < 1e-12);
        assert!(w.null_residual < 1e-12);
    }
}
