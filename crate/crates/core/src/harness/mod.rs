//! Bit-budgeted algorithm runner.
//!
//! An algorithm keeps nothing between oracle calls except a [`MemoryState`].
//! The runner checks the state length against the budget at every checkpoint
//! (before the first query and after every update) and records the full query
//! sequence so that any checkpoint can be replayed bit-exactly.

mod baselines;

pub use baselines::{Ellipsoid, FixedQuery, NullSpaceDescent, StepSchedule, SubgradientDescent};

use serde::Serialize;
use thiserror::Error;

use crate::instance::{Branch, FirstOrderOracle, FirstOrderResponse, OracleError};
use crate::linalg::norm;
use crate::tape::{RandomTape, TapeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("memory budget exceeded at checkpoint {checkpoint}: {bits} bits > {budget}")]
    BudgetViolation { checkpoint: usize, bits: usize, budget: usize },
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("cannot decode memory state: {0}")]
    StateDecode(String),
    #[error("no state retained for checkpoint {0}")]
    MissingCheckpoint(usize),
    #[error("invalid run configuration: {0}")]
    Invalid(String),
}

/// Opaque bit string; the only data an algorithm keeps between queries.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct MemoryState {
    bytes: Vec<u8>,
    len: usize,
}

impl MemoryState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len);
        self.bytes[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn writer() -> StateWriter {
        StateWriter { state: Self::default() }
    }

    pub fn reader(&self) -> StateReader<'_> {
        StateReader { state: self, pos: 0 }
    }

    /// Lowercase hex of the packed bytes (least significant bit first in each byte).
    pub fn to_hex(&self) -> String {
        self.bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(hex: &str, len: usize) -> Result<Self, HarnessError> {
        if !hex.len().is_multiple_of(2) || hex.len() / 2 != len.div_ceil(8) {
            return Err(HarnessError::StateDecode(format!("hex length does not match {len} bits")));
        }
        let bytes = (0..hex.len() / 2)
            .map(|i| u8::from_str_radix(&hex[2 * i..2 * i + 2], 16))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| HarnessError::StateDecode(e.to_string()))?;
        Ok(Self { bytes, len })
    }
}

#[derive(Debug, Clone)]
pub struct StateWriter {
    state: MemoryState,
}

impl StateWriter {
    /// Appends the low `count` bits of `value`, least significant first.
    pub fn push_bits(&mut self, value: u64, count: u32) -> &mut Self {
        assert!(count <= 64);
        let mut done = 0;
        while done < count {
            let pos = self.state.len;
            let off = (pos % 8) as u32;
            if off == 0 {
                self.state.bytes.push(0);
            }
            let take = (8 - off).min(count - done);
            let chunk = (value >> done) & ((1u64 << take) - 1);
            self.state.bytes[pos / 8] |= (chunk as u8) << off;
            self.state.len += take as usize;
            done += take;
        }
        self
    }

    pub fn push_bool(&mut self, b: bool) -> &mut Self {
        self.push_bits(u64::from(b), 1)
    }

    pub fn push_u32(&mut self, v: u32) -> &mut Self {
        self.push_bits(u64::from(v), 32)
    }

    pub fn push_f64(&mut self, v: f64) -> &mut Self {
        self.push_bits(v.to_bits(), 64)
    }

    /// Two's complement in `count` bits.
    pub fn push_signed(&mut self, v: i64, count: u32) -> &mut Self {
        self.push_bits(v as u64, count)
    }

    pub fn finish(&mut self) -> MemoryState {
        std::mem::take(&mut self.state)
    }
}

#[derive(Debug, Clone)]
pub struct StateReader<'a> {
    state: &'a MemoryState,
    pos: usize,
}

impl StateReader<'_> {
    pub fn read_bits(&mut self, count: u32) -> Result<u64, HarnessError> {
        if self.pos + count as usize > self.state.len {
            return Err(HarnessError::StateDecode(format!(
                "read of {count} bits at {} past end {}",
                self.pos, self.state.len
            )));
        }
        let mut v = 0u64;
        let mut done = 0;
        while done < count {
            let off = (self.pos % 8) as u32;
            let take = (8 - off).min(count - done);
            let chunk = (u64::from(self.state.bytes[self.pos / 8]) >> off) & ((1u64 << take) - 1);
            v |= chunk << done;
            self.pos += take as usize;
            done += take;
        }
        Ok(v)
    }

    pub fn read_bool(&mut self) -> Result<bool, HarnessError> {
        Ok(self.read_bits(1)? == 1)
    }

    pub fn read_u32(&mut self) -> Result<u32, HarnessError> {
        Ok(self.read_bits(32)? as u32)
    }

    pub fn read_f64(&mut self) -> Result<f64, HarnessError> {
        Ok(f64::from_bits(self.read_bits(64)?))
    }

    pub fn read_signed(&mut self, count: u32) -> Result<i64, HarnessError> {
        let raw = self.read_bits(count)?;
        let shift = 64 - count;
        Ok(((raw << shift) as i64) >> shift)
    }
}

/// A memory-constrained algorithm: two deterministic maps over the state,
/// with randomness drawn only from the tape.
pub trait MemAlgorithm {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn initial_state(&self, tape: &mut RandomTape) -> Result<MemoryState, HarnessError>;
    /// Next query, or `None` when the algorithm declares itself done.
    fn propose(&self, state: &MemoryState, tape: &mut RandomTape) -> Result<Option<Vec<f64>>, HarnessError>;
    fn absorb(
        &self,
        state: &MemoryState,
        x: &[f64],
        value: f64,
        subgradient: &[f64],
        tape: &mut RandomTape,
    ) -> Result<MemoryState, HarnessError>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub x: Vec<f64>,
    /// The proposed point left the unit ball and was scaled back onto it.
    pub clamped: bool,
    pub response: FirstOrderResponse,
    /// State length after absorbing this response.
    pub state_bits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: MemoryState,
    pub tape_cursor: u64,
}

/// Which checkpoint states a run keeps for later snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retention {
    All,
    Every(usize),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub budget_bits: usize,
    pub max_queries: usize,
    pub retention: Retention,
    /// Stop after the first query whose value is at or below this.
    pub stop_at: Option<f64>,
}

impl RunConfig {
    pub fn new(budget_bits: usize, max_queries: usize) -> Self {
        Self {
            budget_bits,
            max_queries,
            retention: Retention::All,
            stop_at: None,
        }
    }

    pub fn retaining(mut self, retention: Retention) -> Self {
        self.retention = retention;
        self
    }

    pub fn stopping_at(mut self, target: f64) -> Self {
        self.stop_at = Some(target);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algorithm: String,
    pub budget_bits: usize,
    /// Index of the first checkpoint covered (0 unless this is a replay).
    pub first_checkpoint: usize,
    pub initial_state_bits: usize,
    pub steps: Vec<StepRecord>,
    /// `checkpoints[c]` is the state before query `first_checkpoint + c`, if retained.
    pub checkpoints: Vec<Option<Checkpoint>>,
    /// The algorithm stopped on its own before `max_queries`.
    pub completed: bool,
}

impl RunRecord {
    pub fn queries(&self) -> usize {
        self.steps.len()
    }

    pub fn best_value(&self) -> Option<f64> {
        self.steps.iter().map(|s| s.response.value).reduce(f64::min)
    }

    /// Number of queries until a value `<= target` was first seen.
    pub fn queries_to(&self, target: f64) -> Option<usize> {
        self.steps.iter().position(|s| s.response.value <= target).map(|i| i + 1)
    }

    pub fn informative_count(&self) -> usize {
        self.steps.iter().filter(|s| s.response.informative).count()
    }

    pub fn max_state_bits(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.state_bits)
            .fold(self.initial_state_bits, usize::max)
    }

    pub fn any_clamped(&self) -> bool {
        self.steps.iter().any(|s| s.clamped)
    }

    /// One JSON object per query.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            step: usize,
            x: &'a [f64],
            value: f64,
            branch: Branch,
            informative: bool,
            state_bits: usize,
        }
        let mut out = String::new();
        for s in &self.steps {
            let line = Line {
                step: s.step,
                x: &s.x,
                value: s.response.value,
                branch: s.response.branch,
                informative: s.response.informative,
                state_bits: s.state_bits,
            };
            out.push_str(&serde_json::to_string(&line).expect("plain data serializes"));
            out.push('\n');
        }
        out
    }
}

/// Drives one algorithm query by query while enforcing the budget.
pub struct Stepper<'a> {
    alg: &'a dyn MemAlgorithm,
    state: MemoryState,
    tape: RandomTape,
    budget_bits: usize,
    checkpoint: usize,
}

impl<'a> Stepper<'a> {
    /// Builds the initial state and checks checkpoint 0.
    pub fn start(alg: &'a dyn MemAlgorithm, mut tape: RandomTape, budget_bits: usize) -> Result<Self, HarnessError> {
        let state = alg.initial_state(&mut tape)?;
        check_budget(0, &state, budget_bits)?;
        Ok(Self {
            alg,
            state,
            tape,
            budget_bits,
            checkpoint: 0,
        })
    }

    /// Resumes from a stored state with the tape cursor already positioned.
    pub fn resume(
        alg: &'a dyn MemAlgorithm,
        state: MemoryState,
        tape: RandomTape,
        budget_bits: usize,
        checkpoint: usize,
    ) -> Result<Self, HarnessError> {
        check_budget(checkpoint, &state, budget_bits)?;
        Ok(Self {
            alg,
            state,
            tape,
            budget_bits,
            checkpoint,
        })
    }

    pub fn state(&self) -> &MemoryState {
        &self.state
    }

    pub fn tape(&self) -> &RandomTape {
        &self.tape
    }

    pub fn checkpoint(&self) -> usize {
        self.checkpoint
    }

    pub fn snapshot(&self) -> Checkpoint {
        Checkpoint {
            state: self.state.clone(),
            tape_cursor: self.tape.cursor(),
        }
    }

    /// The query the next step would submit, without advancing.
    pub fn peek(&self) -> Result<Option<Vec<f64>>, HarnessError> {
        let mut tape = self.tape.clone();
        Ok(self.alg.propose(&self.state, &mut tape)?.map(|mut x| {
            clamp_in_place(&mut x);
            x
        }))
    }

    /// Runs one propose/query/absorb round; `None` if the algorithm is done.
    pub fn step(&mut self, oracle: &mut dyn FirstOrderOracle) -> Result<Option<StepRecord>, HarnessError> {
        let Some(mut x) = self.alg.propose(&self.state, &mut self.tape)? else {
            return Ok(None);
        };
        let clamped = clamp_in_place(&mut x);
        let response = oracle.query(&x)?;
        let next = self
            .alg
            .absorb(&self.state, &x, response.value, &response.subgradient, &mut self.tape)?;
        check_budget(self.checkpoint + 1, &next, self.budget_bits)?;
        let step = self.checkpoint;
        self.state = next;
        self.checkpoint += 1;
        Ok(Some(StepRecord {
            step,
            x,
            clamped,
            response,
            state_bits: self.state.len(),
        }))
    }
}

fn clamp_in_place(x: &mut [f64]) -> bool {
    let nx = norm(x);
    if nx > 1.0 {
        x.iter_mut().for_each(|v| *v /= nx);
        true
    } else {
        false
    }
}

fn check_budget(checkpoint: usize, state: &MemoryState, budget: usize) -> Result<(), HarnessError> {
    if state.len() > budget {
        return Err(HarnessError::BudgetViolation {
            checkpoint,
            bits: state.len(),
            budget,
        });
    }
    Ok(())
}

fn drive(mut stepper: Stepper<'_>, oracle: &mut dyn FirstOrderOracle, cfg: &RunConfig) -> Result<RunRecord, HarnessError> {
    let first = stepper.checkpoint();
    if cfg.max_queries < first {
        return Err(HarnessError::Invalid("max_queries precedes the starting checkpoint".into()));
    }
    let keep = |c: usize| match cfg.retention {
        Retention::All => true,
        Retention::Every(n) => n > 0 && c.is_multiple_of(n),
        Retention::None => false,
    };
    let mut record = RunRecord {
        algorithm: stepper.alg.name().to_string(),
        budget_bits: cfg.budget_bits,
        first_checkpoint: first,
        initial_state_bits: stepper.state().len(),
        steps: Vec::new(),
        checkpoints: vec![keep(first).then(|| stepper.snapshot())],
        completed: false,
    };
    while stepper.checkpoint() < cfg.max_queries {
        match stepper.step(oracle)? {
            Some(s) => {
                let hit = cfg.stop_at.is_some_and(|t| s.response.value <= t);
                record.steps.push(s);
                let c = stepper.checkpoint();
                record.checkpoints.push(keep(c).then(|| stepper.snapshot()));
                if hit {
                    break;
                }
            }
            None => {
                record.completed = true;
                break;
            }
        }
    }
    Ok(record)
}

/// Runs `alg` against `oracle` for at most `cfg.max_queries` queries.
pub fn run(
    alg: &dyn MemAlgorithm,
    oracle: &mut dyn FirstOrderOracle,
    cfg: &RunConfig,
    tape: RandomTape,
) -> Result<RunRecord, HarnessError> {
    if cfg.budget_bits == 0 && alg.dim() == 0 {
        return Err(HarnessError::Invalid("empty algorithm".into()));
    }
    drive(Stepper::start(alg, tape, cfg.budget_bits)?, oracle, cfg)
}

/// State and tape position at a checkpoint, enough to replay from there.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub checkpoint: usize,
    pub state: MemoryState,
    pub tape_cursor: u64,
}

pub fn snapshot(record: &RunRecord, checkpoint: usize) -> Result<Snapshot, HarnessError> {
    let c = checkpoint
        .checked_sub(record.first_checkpoint)
        .and_then(|i| record.checkpoints.get(i))
        .and_then(|c| c.as_ref())
        .ok_or(HarnessError::MissingCheckpoint(checkpoint))?;
    Ok(Snapshot {
        checkpoint,
        state: c.state.clone(),
        tape_cursor: c.tape_cursor,
    })
}

/// Continues from a snapshot. `tape` must be the tape of the original run; its
/// cursor is moved to the snapshot position. The oracle must answer as it did
/// in the original run from that point on.
pub fn replay(
    alg: &dyn MemAlgorithm,
    oracle: &mut dyn FirstOrderOracle,
    snap: &Snapshot,
    cfg: &RunConfig,
    mut tape: RandomTape,
) -> Result<RunRecord, HarnessError> {
    tape.seek(snap.tape_cursor)?;
    let stepper = Stepper::resume(alg, snap.state.clone(), tape, cfg.budget_bits, snap.checkpoint)?;
    drive(stepper, oracle, cfg)
}

/// Whether `suffix` reproduces `original` from its first checkpoint on:
/// queries, values, subgradients, branches and state lengths, compared by bits.
pub fn replay_equals(original: &RunRecord, suffix: &RunRecord) -> bool {
    let start = suffix.first_checkpoint - original.first_checkpoint;
    let Some(tail) = original.steps.get(start..) else {
        return false;
    };
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    tail.len() == suffix.steps.len()
        && tail.iter().zip(&suffix.steps).all(|(a, b)| {
            a.step == b.step
                && bits(&a.x) == bits(&b.x)
                && a.response.value.to_bits() == b.response.value.to_bits()
                && bits(&a.response.subgradient) == bits(&b.response.subgradient)
                && a.response.branch == b.response.branch
                && a.state_bits == b.state_bits
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{HardInstance, InstanceParams};

    #[test]
    fn writer_reader_round_trip() {
        let s = MemoryState::writer()
            .push_bits(0b101, 3)
            .push_f64(-0.3)
            .push_signed(-5, 7)
            .push_u32(77)
            .finish();
        assert_eq!(s.len(), 3 + 64 + 7 + 32);
        let mut r = s.reader();
        assert_eq!(r.read_bits(3).unwrap(), 0b101);
        assert_eq!(r.read_f64().unwrap(), -0.3);
        assert_eq!(r.read_signed(7).unwrap(), -5);
        assert_eq!(r.read_u32().unwrap(), 77);
        assert!(r.read_bool().is_err());
        assert_eq!(MemoryState::from_hex(&s.to_hex(), s.len()).unwrap(), s);
    }

    #[test]
    fn zero_bit_algorithm_queries_origin() {
        let p = InstanceParams::at_depth_cap(16, 1, 3).unwrap();
        let inst = HardInstance::sample(p, 2).unwrap();
        let alg = FixedQuery::origin(16);
        let rec = run(&alg, &mut inst.session(), &RunConfig::new(1, 5), RandomTape::new(0)).unwrap();
        assert_eq!(rec.queries(), 5);
        assert!(rec.steps.iter().all(|s| s.x == vec![0.0; 16] && s.response.branch == Branch::Nemirovski));
        assert_eq!(rec.informative_count(), 1);
        assert_eq!(rec.max_state_bits(), 0);
    }

    #[test]
    fn jsonl_has_one_line_per_query() {
        let p = InstanceParams::at_depth_cap(8, 1, 2).unwrap();
        let inst = HardInstance::sample(p, 2).unwrap();
        let rec = run(&FixedQuery::origin(8), &mut inst.session(), &RunConfig::new(1, 3), RandomTape::new(0)).unwrap();
        let text = rec.to_jsonl();
        assert_eq!(text.lines().count(), 3);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["branch"], "nemirovski");
        assert_eq!(v["state_bits"], 0);
        assert_eq!(v["informative"], true);
    }

    #[test]
    fn missing_checkpoint_is_reported() {
        let p = InstanceParams::at_depth_cap(8, 1, 2).unwrap();
        let inst = HardInstance::sample(p, 2).unwrap();
        let cfg = RunConfig::new(1, 3).retaining(Retention::None);
        let rec = run(&FixedQuery::origin(8), &mut inst.session(), &cfg, RandomTape::new(0)).unwrap();
        assert_eq!(snapshot(&rec, 1), Err(HarnessError::MissingCheckpoint(1)));
    }
}
