//! The orthogonal vector game.
//!
//! A hidden `n x d` sign matrix `A` (`n = d/2`) is shown to the player once.
//! The player writes an `M`-bit message, then loses access to `A` and may ask
//! up to `m` oracle queries before returning `k` vectors. A returned vector
//! `y_i` succeeds if `|A y_i|_inf / |y_i| <= 1/d^4` and its projection ratio
//! onto `span(y_1..y_{i-1})` is at most `1 - 1/d^2`.

mod reduction;

pub use reduction::{reduction_vectors, simulate_response, ReductionAdapter};

use std::fmt::Write as _;

use crate::base::{sample_sign_matrix, SignMatrix};
use crate::geometry::validate_robust_set;
use crate::harness::MemoryState;
use crate::instance::eval_ainf;
use crate::linalg::{dot, norm};
use crate::tape::RandomTape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleVariant {
    /// A vector query is answered with the signed least-index row attaining `|Ax|_inf`.
    Subgradient,
    /// A row index is answered with that row.
    Index,
}

impl OracleVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            OracleVariant::Subgradient => "subgradient",
            OracleVariant::Index => "index",
        }
    }
}

impl std::str::FromStr for OracleVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "subgradient" => Ok(OracleVariant::Subgradient),
            "index" => Ok(OracleVariant::Index),
            other => Err(format!("unknown oracle variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameParams {
    pub d: usize,
    pub k: usize,
    /// Query allowance.
    pub m: usize,
    /// Message budget in bits.
    pub message_bits: usize,
    pub variant: OracleVariant,
}

impl GameParams {
    pub fn new(d: usize, k: usize, m: usize, message_bits: usize, variant: OracleVariant) -> Self {
        Self {
            d,
            k,
            m,
            message_bits,
            variant,
        }
    }

    pub fn n(&self) -> usize {
        self.d / 2
    }

    /// `1/d^4`
    pub fn theta(&self) -> f64 {
        (self.d as f64).powi(-4)
    }

    /// `1/d^2`
    pub fn slack(&self) -> f64 {
        (self.d as f64).powi(-2)
    }

    /// `ceil(60 M / (c d))` vectors for a message of `M` bits and base constant `c`.
    pub fn k_for_budget(message_bits: usize, d: usize, c: f64) -> usize {
        (60.0 * message_bits as f64 / (c * d as f64)).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlayerQuery {
    Vector(Vec<f64>),
    Row(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query: PlayerQuery,
    /// The returned row, signed in the subgradient variant.
    pub response: Vec<f64>,
}

/// The player gives up; recorded as a loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure(pub String);

/// A player. Only `store` sees the matrix; the later stages get the message,
/// the query history and the shared random string.
pub trait PlayerStrategy {
    fn name(&self) -> &str;
    fn store(&self, params: &GameParams, a: &SignMatrix, tape: &RandomTape) -> Result<MemoryState, Failure>;
    /// Next query, or `None` to stop querying.
    fn next_query(
        &self,
        params: &GameParams,
        message: &MemoryState,
        history: &[QueryRecord],
        tape: &RandomTape,
    ) -> Result<Option<PlayerQuery>, Failure>;
    fn answer(
        &self,
        params: &GameParams,
        message: &MemoryState,
        history: &[QueryRecord],
        tape: &RandomTape,
    ) -> Result<Vec<Vec<f64>>, Failure>;
}

/// Signed least-index row attaining `|Ax|_inf`, so that `g^T x = |Ax|_inf`.
pub fn subgradient_response(a: &SignMatrix, x: &[f64]) -> Vec<f64> {
    let r = eval_ainf(a, x);
    a.row(r.row).entries_times(r.sign)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    /// `|A y|_inf / |y|`
    pub orthogonality: f64,
    /// `|proj_{S_{i-1}}(y)| / |y|`
    pub projection: f64,
    pub orthogonal: bool,
    pub independent: bool,
    pub zero: bool,
}

impl Verdict {
    pub fn success(&self) -> bool {
        self.orthogonal && self.independent && !self.zero
    }
}

pub fn check_success(a: &SignMatrix, ys: &[Vec<f64>], theta: f64, slack: f64) -> Vec<Verdict> {
    let ratios = validate_robust_set(ys, slack).ratios;
    ys.iter()
        .zip(ratios)
        .map(|(y, projection)| {
            let n = norm(y);
            if n == 0.0 {
                return Verdict {
                    orthogonality: f64::INFINITY,
                    projection,
                    orthogonal: false,
                    independent: false,
                    zero: true,
                };
            }
            let orthogonality = eval_ainf(a, y).value / n;
            Verdict {
                orthogonality,
                projection,
                orthogonal: orthogonality <= theta,
                independent: projection <= 1.0 - slack,
                zero: false,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossReason {
    Failure(String),
    MessageOverBudget { bits: usize, budget: usize },
    QueryBudget,
    InvalidQuery(String),
    WrongCount { returned: usize, k: usize },
    Verdicts,
}

impl LossReason {
    /// Breaks of the protocol itself, as opposed to an honest loss.
    pub fn is_violation(&self) -> bool {
        matches!(
            self,
            LossReason::MessageOverBudget { .. } | LossReason::QueryBudget | LossReason::InvalidQuery(_)
        )
    }
}

impl std::fmt::Display for LossReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossReason::Failure(m) => write!(f, "player failure: {m}"),
            LossReason::MessageOverBudget { bits, budget } => write!(f, "message of {bits} bits exceeds {budget}"),
            LossReason::QueryBudget => write!(f, "query allowance exceeded"),
            LossReason::InvalidQuery(m) => write!(f, "invalid query: {m}"),
            LossReason::WrongCount { returned, k } => write!(f, "returned {returned} vectors, expected {k}"),
            LossReason::Verdicts => write!(f, "some returned vector failed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Win,
    Loss(LossReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameTranscript {
    pub params: GameParams,
    pub seed: u64,
    pub strategy: String,
    pub matrix: SignMatrix,
    pub message: Option<MemoryState>,
    pub queries: Vec<QueryRecord>,
    pub returned: Vec<Vec<f64>>,
    pub verdicts: Vec<Verdict>,
    pub outcome: Outcome,
}

impl GameTranscript {
    pub fn won(&self) -> bool {
        self.outcome == Outcome::Win
    }

    pub fn to_text(&self) -> String {
        let fmt_vec = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let p = &self.params;
        let mut out = String::from("# memlb game transcript v1\n");
        let _ = writeln!(out, "d {}\nk {}\nm {}\nM {}", p.d, p.k, p.m, p.message_bits);
        let _ = writeln!(out, "variant {}\nseed {}\nstrategy {}", p.variant.as_str(), self.seed, self.strategy);
        match &self.message {
            Some(msg) => {
                let _ = writeln!(out, "message_bits {}\nmessage {}", msg.len(), msg.to_hex());
            }
            None => out.push_str("message_bits none\n"),
        }
        for (i, q) in self.queries.iter().enumerate() {
            match &q.query {
                PlayerQuery::Vector(x) => {
                    let _ = writeln!(out, "query {i} vector {}", fmt_vec(x));
                }
                PlayerQuery::Row(r) => {
                    let _ = writeln!(out, "query {i} row {r}");
                }
            }
            let _ = writeln!(out, "response {i} {}", fmt_vec(&q.response));
        }
        for (i, y) in self.returned.iter().enumerate() {
            let _ = writeln!(out, "returned {i} {}", fmt_vec(y));
        }
        for (i, v) in self.verdicts.iter().enumerate() {
            let _ = writeln!(
                out,
                "verdict {i} {} orthogonality={} projection={}",
                if v.success() { "pass" } else { "fail" },
                v.orthogonality,
                v.projection
            );
        }
        match &self.outcome {
            Outcome::Win => out.push_str("outcome win\n"),
            Outcome::Loss(r) => {
                let _ = writeln!(out, "outcome loss {r}");
            }
        }
        out
    }
}

/// `(matrix tape, player random string)` for a game seed.
pub fn game_tapes(seed: u64) -> (RandomTape, RandomTape) {
    let [a, r, _] = RandomTape::new(seed).split3();
    (a, r)
}

/// The hidden matrix a game with this seed will use.
pub fn game_matrix(params: &GameParams, seed: u64) -> SignMatrix {
    let (mut at, _) = game_tapes(seed);
    sample_sign_matrix(params.d, params.n(), &mut at).expect("tape holds 2^56 bits")
}

pub fn play(params: &GameParams, strategy: &dyn PlayerStrategy, seed: u64) -> GameTranscript {
    let a = game_matrix(params, seed);
    let (_, r) = game_tapes(seed);
    let mut t = GameTranscript {
        params: *params,
        seed,
        strategy: strategy.name().to_string(),
        matrix: a.clone(),
        message: None,
        queries: Vec::new(),
        returned: Vec::new(),
        verdicts: Vec::new(),
        outcome: Outcome::Win,
    };
    let lose = |mut t: GameTranscript, r: LossReason| {
        t.outcome = Outcome::Loss(r);
        t
    };
    let message = match strategy.store(params, &a, &r) {
        Ok(m) => m,
        Err(Failure(m)) => return lose(t, LossReason::Failure(m)),
    };
    t.message = Some(message.clone());
    if message.len() > params.message_bits {
        let reason = LossReason::MessageOverBudget {
            bits: message.len(),
            budget: params.message_bits,
        };
        return lose(t, reason);
    }
    loop {
        let q = match strategy.next_query(params, &message, &t.queries, &r) {
            Ok(Some(q)) => q,
            Ok(None) => break,
            Err(Failure(m)) => return lose(t, LossReason::Failure(m)),
        };
        if t.queries.len() >= params.m {
            return lose(t, LossReason::QueryBudget);
        }
        let response = match (&q, params.variant) {
            (PlayerQuery::Vector(x), OracleVariant::Subgradient) if x.len() == params.d => subgradient_response(&a, x),
            (PlayerQuery::Row(i), OracleVariant::Index) if *i < a.n() => a.row(*i).entries(),
            _ => return lose(t, LossReason::InvalidQuery(format!("{q:?} under {:?}", params.variant))),
        };
        t.queries.push(QueryRecord { query: q, response });
    }
    let ys = match strategy.answer(params, &message, &t.queries, &r) {
        Ok(ys) => ys,
        Err(Failure(m)) => return lose(t, LossReason::Failure(m)),
    };
    if ys.iter().any(|y| y.len() != params.d) {
        return lose(t, LossReason::InvalidQuery("returned vector of wrong length".into()));
    }
    t.verdicts = check_success(&a, &ys, params.theta(), params.slack());
    t.returned = ys;
    if t.returned.len() != params.k {
        let reason = LossReason::WrongCount {
            returned: t.returned.len(),
            k: params.k,
        };
        return lose(t, reason);
    }
    if !t.verdicts.iter().all(Verdict::success) {
        return lose(t, LossReason::Verdicts);
    }
    t
}

fn push_vectors(vs: &[Vec<f64>]) -> MemoryState {
    let mut w = MemoryState::writer();
    for v in vs {
        for x in v {
            w.push_f64(*x);
        }
    }
    w.finish()
}

fn read_vectors(msg: &MemoryState, count: usize, d: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let mut r = msg.reader();
    (0..count)
        .map(|_| (0..d).map(|_| r.read_f64()).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure(e.to_string()))
}

/// Stores `k` orthonormal vectors of `null(A)` at 64 bits per entry; no queries.
#[derive(Debug, Clone, Copy, Default)]
pub struct StoreNullBasis;

impl PlayerStrategy for StoreNullBasis {
    fn name(&self) -> &str {
        "store-null-basis"
    }

    fn store(&self, params: &GameParams, a: &SignMatrix, _tape: &RandomTape) -> Result<MemoryState, Failure> {
        let null = a.row_basis().complement_basis();
        if null.len() < params.k {
            return Err(Failure(format!("null space has dimension {} < k", null.len())));
        }
        Ok(push_vectors(&null[..params.k]))
    }

    fn next_query(
        &self,
        _: &GameParams,
        _: &MemoryState,
        _: &[QueryRecord],
        _: &RandomTape,
    ) -> Result<Option<PlayerQuery>, Failure> {
        Ok(None)
    }

    fn answer(
        &self,
        params: &GameParams,
        message: &MemoryState,
        _: &[QueryRecord],
        _: &RandomTape,
    ) -> Result<Vec<Vec<f64>>, Failure> {
        read_vectors(message, params.k, params.d)
    }
}

/// Stores nothing, asks for every row, returns null-space basis vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct QueryAllRows;

impl PlayerStrategy for QueryAllRows {
    fn name(&self) -> &str {
        "query-all-rows"
    }

    fn store(&self, _: &GameParams, _: &SignMatrix, _: &RandomTape) -> Result<MemoryState, Failure> {
        Ok(MemoryState::empty())
    }

    fn next_query(
        &self,
        params: &GameParams,
        _: &MemoryState,
        history: &[QueryRecord],
        _: &RandomTape,
    ) -> Result<Option<PlayerQuery>, Failure> {
        Ok((history.len() < params.n()).then_some(PlayerQuery::Row(history.len())))
    }

    fn answer(
        &self,
        params: &GameParams,
        _: &MemoryState,
        history: &[QueryRecord],
        _: &RandomTape,
    ) -> Result<Vec<Vec<f64>>, Failure> {
        let mut basis = crate::linalg::OrthoBasis::new(params.d);
        for q in history {
            basis.push(&q.response, 1e-10);
        }
        let null = basis.complement_basis();
        Ok(null.into_iter().take(params.k).collect())
    }
}

/// Returns the first `k` rows of `A`, stored as sign bits.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReturnRows;

impl PlayerStrategy for ReturnRows {
    fn name(&self) -> &str {
        "return-rows"
    }

    fn store(&self, params: &GameParams, a: &SignMatrix, _: &RandomTape) -> Result<MemoryState, Failure> {
        let mut w = MemoryState::writer();
        for r in a.rows().iter().take(params.k) {
            for s in r.signs() {
                w.push_bool(*s > 0);
            }
        }
        Ok(w.finish())
    }

    fn next_query(
        &self,
        _: &GameParams,
        _: &MemoryState,
        _: &[QueryRecord],
        _: &RandomTape,
    ) -> Result<Option<PlayerQuery>, Failure> {
        Ok(None)
    }

    fn answer(
        &self,
        params: &GameParams,
        message: &MemoryState,
        _: &[QueryRecord],
        _: &RandomTape,
    ) -> Result<Vec<Vec<f64>>, Failure> {
        let mut r = message.reader();
        let rows = message.len() / params.d;
        (0..rows)
            .map(|_| {
                (0..params.d)
                    .map(|_| Ok(if r.read_bool()? { 1.0 } else { -1.0 }))
                    .collect::<Result<Vec<_>, crate::harness::HarnessError>>()
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure(e.to_string()))
    }
}

/// `|g^T x| / |x|` for a recorded vector query, the player's view of the orthogonality condition.
pub fn observed_orthogonality(q: &QueryRecord) -> Option<f64> {
    match &q.query {
        PlayerQuery::Vector(x) => {
            let n = norm(x);
            Some(if n == 0.0 { f64::INFINITY } else { dot(&q.response, x).abs() / n })
        }
        PlayerQuery::Row(_) => None,
    }
}
