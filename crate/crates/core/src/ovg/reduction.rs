//! Game player built from a memory-constrained optimizer.
//!
//! The player's random string is split into `R1` (the Nemirovski vectors),
//! `R2` (optimizer randomness before the stored state) and `R3` (optimizer
//! randomness after it).
//!
//! * Store: run the optimizer on the real function. Informative subgradients
//!   are grouped in blocks of `k + 1`. Block `i` starts at the state reached
//!   after `i (k + 1)` of them. Store the first block-start state from which
//!   `k + 1` further informative subgradients arrive within `m` queries.
//! * Query: rerun the optimizer from the stored state, answering each query
//!   from the game's row `g` with `max(eta |g^T x| - rho, f(x))`.
//! * Answer: search `k`-subsets of the queries for a successful set.

use std::collections::VecDeque;

use super::{observed_orthogonality, Failure, GameParams, PlayerQuery, PlayerStrategy, QueryRecord};
use crate::base::{sample_base_vector, signed_sum, BaseVector, SignMatrix};
use crate::geometry::validate_robust_set;
use crate::harness::{MemAlgorithm, MemoryState, Stepper};
use crate::instance::{
    eval_f, Branch, FirstOrderOracle, FirstOrderResponse, HardInstance, InstanceParams, OracleError, TIE_RTOL,
};
use crate::linalg::norm;
use crate::tape::RandomTape;

/// Default bound on the number of `k`-subsets searched.
pub const SUBSET_CAP: u64 = 1_000_000;

/// Nemirovski vectors the player draws from `R1`.
pub fn reduction_vectors(params: &InstanceParams, r: &RandomTape) -> Vec<BaseVector> {
    let [mut r1, _, _] = r.split3();
    let scale = 1.0 / (params.d as f64).sqrt();
    (0..params.depth)
        .map(|_| sample_base_vector(params.d, scale, &mut r1).expect("R1 holds far more than N d bits"))
        .collect()
}

/// The oracle response rebuilt from a game row `g` (signed) at query `x`.
pub fn simulate_response(params: &InstanceParams, vectors: &[BaseVector], g: &[f64], x: &[f64]) -> FirstOrderResponse {
    let signs: Vec<i8> = g.iter().map(|v| if *v > 0.0 { 1 } else { -1 }).collect();
    let a_term = params.eta * signed_sum(&signs, x).abs() - params.rho;
    let (f_val, i) = eval_f(vectors, params.gamma, x);
    let band = TIE_RTOL * a_term.abs().max(f_val.abs()).max(1.0);
    if a_term >= f_val - band {
        let c = params.global_scale * params.eta;
        FirstOrderResponse {
            value: params.global_scale * a_term.max(f_val),
            subgradient: signs.iter().map(|s| f64::from(*s) * c).collect(),
            branch: Branch::Matrix,
            attained_index: usize::MAX,
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

/// Answers the optimizer's queries from recorded game rows, in order.
struct SimulatedOracle<'a> {
    params: &'a InstanceParams,
    vectors: &'a [BaseVector],
    rows: VecDeque<&'a [f64]>,
}

impl FirstOrderOracle for SimulatedOracle<'_> {
    fn dim(&self) -> usize {
        self.params.d
    }

    fn query(&mut self, x: &[f64]) -> Result<FirstOrderResponse, OracleError> {
        let g = self.rows.pop_front().expect("one recorded row per replayed query");
        Ok(simulate_response(self.params, self.vectors, g, x))
    }
}

pub struct ReductionAdapter<'a> {
    optimizer: &'a dyn MemAlgorithm,
    instance: InstanceParams,
    subset_cap: u64,
    greedy_fallback: bool,
    prefix_limit: usize,
}

impl<'a> ReductionAdapter<'a> {
    /// `instance.round_len` must equal the game's `k`.
    pub fn new(optimizer: &'a dyn MemAlgorithm, instance: InstanceParams) -> Self {
        Self {
            optimizer,
            instance,
            subset_cap: SUBSET_CAP,
            greedy_fallback: false,
            prefix_limit: 100 * instance.depth * instance.d,
        }
    }

    pub fn with_subset_cap(mut self, cap: u64) -> Self {
        self.subset_cap = cap;
        self
    }

    pub fn with_greedy_fallback(mut self, on: bool) -> Self {
        self.greedy_fallback = on;
        self
    }

    /// Most optimizer queries spent before the stored state.
    pub fn with_prefix_limit(mut self, limit: usize) -> Self {
        self.prefix_limit = limit;
        self
    }

    fn check(&self, params: &GameParams) -> Result<(), Failure> {
        if params.k != self.instance.round_len || params.d != self.instance.d {
            return Err(Failure("game and instance parameters disagree".into()));
        }
        if params.m == 0 {
            return Err(Failure("no queries allowed".into()));
        }
        Ok(())
    }

    /// Replays the optimizer from `message` over `history`, returning the stepper.
    fn replay<'s>(
        &'s self,
        params: &GameParams,
        message: &MemoryState,
        history: &'s [QueryRecord],
        vectors: &'s [BaseVector],
        r3: RandomTape,
    ) -> Result<Stepper<'s>, Failure> {
        let mut stepper = Stepper::resume(self.optimizer, message.clone(), r3, params.message_bits, 0)
            .map_err(|e| Failure(e.to_string()))?;
        let mut oracle = SimulatedOracle {
            params: &self.instance,
            vectors,
            rows: history.iter().map(|q| q.response.as_slice()).collect(),
        };
        for q in history {
            let rec = stepper
                .step(&mut oracle)
                .map_err(|e| Failure(e.to_string()))?
                .ok_or_else(|| Failure("optimizer stopped during replay".into()))?;
            if PlayerQuery::Vector(rec.x) != q.query {
                return Err(Failure("replay diverged from recorded queries".into()));
            }
        }
        Ok(stepper)
    }

    fn search(&self, params: &GameParams, history: &[QueryRecord]) -> Result<Vec<Vec<f64>>, Failure> {
        let k = params.k;
        let xs: Vec<&[f64]> = history
            .iter()
            .map(|q| match &q.query {
                PlayerQuery::Vector(x) => x.as_slice(),
                PlayerQuery::Row(_) => &[],
            })
            .collect();
        let ok1: Vec<bool> = history
            .iter()
            .map(|q| observed_orthogonality(q).is_some_and(|r| r <= params.theta()))
            .collect();
        let robust = |set: &[usize]| {
            let ys: Vec<Vec<f64>> = set.iter().map(|i| xs[*i].to_vec()).collect();
            validate_robust_set(&ys, params.slack()).robust
        };
        if binomial(history.len() as u64, k as u64) <= self.subset_cap {
            let mut idx: Vec<usize> = (0..k).collect();
            if k <= history.len() {
                loop {
                    if idx.iter().all(|i| ok1[*i]) && robust(&idx) {
                        return Ok(idx.iter().map(|i| xs[*i].to_vec()).collect());
                    }
                    if !next_combination(&mut idx, history.len()) {
                        break;
                    }
                }
            }
            return Err(Failure("no successful subset among the queries".into()));
        }
        if !self.greedy_fallback {
            return Err(Failure("subset search space exceeds the cap".into()));
        }
        let mut chosen: Vec<usize> = Vec::new();
        for i in 0..history.len() {
            if chosen.len() == k {
                break;
            }
            if !ok1[i] || norm(xs[i]) == 0.0 {
                continue;
            }
            chosen.push(i);
            if !robust(&chosen) {
                chosen.pop();
            }
        }
        if chosen.len() < k {
            return Err(Failure("greedy search found too few vectors".into()));
        }
        Ok(chosen.iter().map(|i| xs[*i].to_vec()).collect())
    }
}

impl PlayerStrategy for ReductionAdapter<'_> {
    fn name(&self) -> &str {
        "reduction"
    }

    fn store(&self, params: &GameParams, a: &SignMatrix, tape: &RandomTape) -> Result<MemoryState, Failure> {
        self.check(params)?;
        let [_, r2, r3] = tape.split3();
        let vectors = reduction_vectors(&self.instance, tape);
        let inst = HardInstance::from_parts(self.instance, a.clone(), vectors, None).map_err(|e| Failure(e.to_string()))?;
        let block = params.k + 1;
        let blocks = self.instance.depth / block;
        let mut oracle = inst.session();
        let mut prefix = Stepper::start(self.optimizer, r2, params.message_bits).map_err(|e| Failure(e.to_string()))?;
        let mut seen = 0;
        for i in 0..blocks {
            while seen < i * block {
                if prefix.checkpoint() >= self.prefix_limit {
                    return Err(Failure("prefix query limit reached".into()));
                }
                let rec = prefix
                    .step(&mut oracle)
                    .map_err(|e| Failure(e.to_string()))?
                    .ok_or_else(|| Failure("optimizer stopped".into()))?;
                seen += usize::from(rec.response.informative);
            }
            let mut o2 = oracle.clone();
            let mut cont = Stepper::resume(self.optimizer, prefix.state().clone(), r3.clone(), params.message_bits, 0)
                .map_err(|e| Failure(e.to_string()))?;
            let mut found = 0;
            for _ in 0..params.m {
                match cont.step(&mut o2).map_err(|e| Failure(e.to_string()))? {
                    Some(rec) => found += usize::from(rec.response.informative),
                    None => break,
                }
                if found == block {
                    return Ok(prefix.state().clone());
                }
            }
        }
        Err(Failure("no block completed within the query allowance".into()))
    }

    fn next_query(
        &self,
        params: &GameParams,
        message: &MemoryState,
        history: &[QueryRecord],
        tape: &RandomTape,
    ) -> Result<Option<PlayerQuery>, Failure> {
        self.check(params)?;
        if history.len() >= params.m {
            return Ok(None);
        }
        let [_, _, r3] = tape.split3();
        let vectors = reduction_vectors(&self.instance, tape);
        let stepper = self.replay(params, message, history, &vectors, r3)?;
        let next = stepper.peek().map_err(|e| Failure(e.to_string()))?;
        Ok(next.map(PlayerQuery::Vector))
    }

    fn answer(
        &self,
        params: &GameParams,
        _message: &MemoryState,
        history: &[QueryRecord],
        _tape: &RandomTape,
    ) -> Result<Vec<Vec<f64>>, Failure> {
        self.check(params)?;
        self.search(params, history)
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Advances `idx` to the next `k`-subset of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{NullSpaceDescent, StepSchedule};
    use crate::ovg::{game_matrix, play, LossReason, OracleVariant, Outcome};

    #[test]
    fn combinations_enumerate_all() {
        let mut idx = vec![0, 1];
        let mut count = 1;
        while next_combination(&mut idx, 5) {
            count += 1;
        }
        assert_eq!(count, 10);
        assert_eq!(binomial(24, 2), 276);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn zero_queries_fail_immediately() {
        let inst = InstanceParams::at_depth_cap(24, 2, 9).unwrap();
        let p = GameParams::new(24, 2, 0, 4096, OracleVariant::Subgradient);
        let a = game_matrix(&p, 1);
        let opt = NullSpaceDescent::new(&a, StepSchedule::InverseSqrt(0.5));
        let t = play(&p, &ReductionAdapter::new(&opt, inst), 1);
        assert!(matches!(t.outcome, Outcome::Loss(LossReason::Failure(_))));
    }

    #[test]
    fn simulation_matches_real_oracle() {
        let inst = InstanceParams::at_depth_cap(16, 1, 3).unwrap();
        let p = GameParams::new(16, 1, 4, 0, OracleVariant::Subgradient);
        let a = game_matrix(&p, 5);
        let (_, r) = crate::ovg::game_tapes(5);
        let vectors = reduction_vectors(&inst, &r);
        let real = HardInstance::from_parts(inst, a.clone(), vectors.clone(), None).unwrap();
        for t in 0..50 {
            let x: Vec<f64> = (0..16).map(|i| ((i * 7 + t * 3) as f64).sin() * 1e-3).collect();
            let g = crate::ovg::subgradient_response(&a, &x);
            let sim = simulate_response(&inst, &vectors, &g, &x);
            let truth = real.respond(&x).unwrap();
            assert_eq!(sim.value.to_bits(), truth.value.to_bits());
            assert_eq!(sim.subgradient, truth.subgradient);
        }
    }
}
