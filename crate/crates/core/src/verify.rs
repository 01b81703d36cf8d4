//! Property suites over instances, runs and games.
//!
//! Every suite is deterministic in its profile. [`Profile::desk`] is the full
//! desk-scale configuration, [`Profile::quick`] a reduced one for smoke tests.

use std::time::Instant;

use serde::Serialize;

use crate::base::{concentration_profile, random_orthonormal_columns, sample_base_vector, ConcentrationMode};
use crate::experiment::{algorithm_tape, run_once, AlgorithmId, BudgetRule, ExperimentConfig, Scaling};
use crate::geometry::{clamp_to_ball, construct_m, LiftedFunction, RobustSet};
use crate::harness::{
    replay, replay_equals, run, snapshot, Ellipsoid, HarnessError, MemAlgorithm, NullSpaceDescent, Retention,
    RunConfig, StepRecord, StepSchedule, SubgradientDescent,
};
use crate::instance::{
    eval_f, gamma_at_cap, optimal_witness, respond, AdaptiveOracle, EventReport, FirstOrderOracle, FnOracle,
    HardInstance, InformativeLog, InstanceParams, PhasedQuery,
};
use crate::linalg::{dot, norm, norm_inf, sub};
use crate::ovg::{
    game_matrix, game_tapes, play, reduction_vectors, simulate_response, subgradient_response, GameParams,
    OracleVariant, QueryAllRows, ReductionAdapter, ReturnRows, StoreNullBasis,
};
use crate::tape::RandomTape;

/// Sizes for every suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Profile {
    pub regularity_dims: Vec<usize>,
    pub regularity_seeds: u64,
    pub regularity_pairs: usize,
    pub validity_dim: usize,
    pub validity_seeds: u64,
    pub validity_points: usize,
    pub driver_dims: Vec<usize>,
    pub driver_seeds: u64,
    pub driver_queries: usize,
    pub event_dim: usize,
    pub event_k: usize,
    pub event_depth: usize,
    pub event_seeds: u64,
    pub subopt_seeds: u64,
    pub witness_seeds: u64,
    pub consistency_seeds: u64,
    pub consistency_dim: usize,
    pub base_dim: usize,
    pub base_ks: Vec<usize>,
    pub algebra_sets: usize,
    pub algebra_samples: usize,
    pub lift_points: usize,
    pub lift_pairs: usize,
    pub game_seeds: u64,
    pub reduction_seeds: u64,
    pub replay_trials: u64,
    pub tradeoff_dims: Vec<usize>,
    pub tradeoff_seeds: u64,
    pub tolerance: f64,
}

impl Profile {
    pub fn desk() -> Self {
        Self {
            regularity_dims: vec![16, 32, 64],
            regularity_seeds: 20,
            regularity_pairs: 10_000,
            validity_dim: 32,
            validity_seeds: 5,
            validity_points: 2_000,
            driver_dims: vec![16, 32, 64],
            driver_seeds: 20,
            driver_queries: 1_000,
            event_dim: 100,
            event_k: 4,
            event_depth: 6,
            event_seeds: 20,
            subopt_seeds: 20,
            witness_seeds: 50,
            consistency_seeds: 20,
            consistency_dim: 256,
            base_dim: 16,
            base_ks: vec![2, 4, 8],
            algebra_sets: 100,
            algebra_samples: 10_000,
            lift_points: 1_000,
            lift_pairs: 10_000,
            game_seeds: 50,
            reduction_seeds: 10,
            replay_trials: 100,
            tradeoff_dims: vec![16, 24, 32],
            tradeoff_seeds: 3,
            tolerance: 1e-9,
        }
    }

    pub fn quick() -> Self {
        Self {
            regularity_dims: vec![16],
            regularity_seeds: 2,
            regularity_pairs: 500,
            validity_dim: 16,
            validity_seeds: 2,
            validity_points: 500,
            driver_dims: vec![16],
            driver_seeds: 3,
            driver_queries: 200,
            event_dim: 32,
            event_k: 2,
            event_depth: 3,
            event_seeds: 5,
            subopt_seeds: 3,
            witness_seeds: 5,
            consistency_seeds: 3,
            consistency_dim: 64,
            base_dim: 12,
            base_ks: vec![2, 4],
            algebra_sets: 5,
            algebra_samples: 200,
            lift_points: 100,
            lift_pairs: 500,
            game_seeds: 3,
            reduction_seeds: 2,
            replay_trials: 5,
            tradeoff_dims: vec![16],
            tradeoff_seeds: 1,
            tolerance: 1e-9,
        }
    }
}

/// A deliberate corruption for mutation tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flip one sign of `A` in the stored copy of each instance.
    FlipSign { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub checks: u64,
    pub violations: u64,
    pub passed: bool,
    pub notes: Vec<String>,
    pub seconds: f64,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checks: 0,
            violations: 0,
            passed: true,
            notes: Vec::new(),
            seconds: 0.0,
        }
    }

    fn check(&mut self, ok: bool) {
        self.checks += 1;
        if !ok {
            self.violations += 1;
        }
    }

    fn require(&mut self, ok: bool, note: impl Into<String>) {
        if !ok {
            self.passed = false;
            self.notes.push(note.into());
        }
    }

    fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    fn finish(mut self, start: Instant) -> Self {
        if self.violations > 0 {
            self.passed = false;
        }
        self.seconds = start.elapsed().as_secs_f64();
        self
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: checks={} violations={} time={:.1}s{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.checks,
            self.violations,
            self.seconds,
            if self.notes.is_empty() {
                String::new()
            } else {
                format!(" [{}]", self.notes.join("; "))
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn to_text(&self, verbose: bool) -> String {
        let mut out = String::new();
        for s in &self.suites {
            if verbose || !s.passed {
                out.push_str(&s.line());
            } else {
                out.push_str(&format!("{} {}", if s.passed { "PASS" } else { "FAIL" }, s.name));
            }
            out.push('\n');
        }
        let failed = self.suites.iter().filter(|s| !s.passed).count();
        out.push_str(&format!("{} suites, {} failed\n", self.suites.len(), failed));
        out
    }
}

/// Standard normal vector from the tape (Box-Muller).
pub fn gaussian_vector(d: usize, tape: &mut RandomTape) -> Vec<f64> {
    let mut out = Vec::with_capacity(d + 1);
    while out.len() < d {
        let u1 = 1.0 - tape.read_unit().expect("tape holds 2^56 bits");
        let u2 = tape.read_unit().expect("tape holds 2^56 bits");
        let r = (-2.0 * u1.ln()).sqrt();
        let a = std::f64::consts::TAU * u2;
        out.push(r * a.cos());
        out.push(r * a.sin());
    }
    out.truncate(d);
    out
}

/// Uniform point of the unit ball.
pub fn ball_point(d: usize, tape: &mut RandomTape) -> Vec<f64> {
    let g = gaussian_vector(d, tape);
    let n = norm(&g);
    let r = tape.read_unit().expect("tape holds 2^56 bits").powf(1.0 / d as f64);
    g.iter().map(|v| v * r / n).collect()
}

fn suite_tape(tag: u64, seed: u64) -> RandomTape {
    RandomTape::new(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ seed)
}

/// Hard instance at the native scaling with `gamma = max(cap(N), 2/(d-1))`.
/// The second term makes every informative `v_j` with `j >= 2` come from a
/// query of norm at least `1/(d-1)`.
pub fn driver_params(d: usize, k: usize, depth: usize) -> InstanceParams {
    let gamma = gamma_at_cap(depth).max(2.0 / (d as f64 - 1.0));
    InstanceParams::standard_unchecked(d, k, depth)
        .expect("valid dimension")
        .with_gamma(gamma)
        .with_global_scale(1.0)
}

/// An algorithm run against the adaptive oracle, with everything the suites need.
#[derive(Debug, Clone)]
pub struct DriverRun {
    pub driver: AlgorithmId,
    pub seed: u64,
    pub params: InstanceParams,
    pub budget_bits: usize,
    pub phase: usize,
    pub exhausted: bool,
    pub steps: Vec<StepRecord>,
    pub history: Vec<PhasedQuery>,
    pub log: InformativeLog,
    pub event: EventReport,
    pub instance: HardInstance,
}

impl DriverRun {
    pub fn best_value(&self) -> f64 {
        self.steps.iter().map(|s| s.response.value).fold(f64::INFINITY, f64::min)
    }
}

pub fn drive_adaptive(
    driver: AlgorithmId,
    params: InstanceParams,
    seed: u64,
    max_queries: usize,
) -> Result<DriverRun, HarnessError> {
    let mut oracle = AdaptiveOracle::new(params, seed).expect("valid parameters");
    let d = params.d;
    let sched = StepSchedule::InverseSqrt(0.5);
    let alg: Box<dyn MemAlgorithm> = match driver {
        AlgorithmId::NullSpace => Box::new(NullSpaceDescent::new(oracle.matrix(), sched)),
        AlgorithmId::Ellipsoid => Box::new(Ellipsoid::new(d)),
        _ => Box::new(SubgradientDescent::new(d, sched, 52)?),
    };
    let budget_bits = match driver {
        AlgorithmId::NullSpace => NullSpaceDescent::state_bits_for(d),
        AlgorithmId::Ellipsoid => Ellipsoid::state_bits_for(d),
        _ => 64 * d,
    };
    let rc = RunConfig::new(budget_bits, max_queries).retaining(Retention::None);
    let rec = run(alg.as_ref(), &mut oracle, &rc, algorithm_tape(seed))?;
    let mut log = InformativeLog::new(params.round_len);
    for (i, s) in rec.steps.iter().enumerate() {
        log.track(i, &s.x, &s.response);
    }
    let phase = oracle.phase();
    let exhausted = oracle.is_exhausted();
    let instance = oracle.finalize().expect("tape holds every vector");
    let event = oracle.check_event_e(&log).expect("finalized");
    Ok(DriverRun {
        driver,
        seed,
        params,
        budget_bits,
        phase,
        exhausted,
        steps: rec.steps,
        history: oracle.history().to_vec(),
        log,
        event,
        instance,
    })
}

/// Driver runs at the profile's dimensions plus the event-rate batch.
pub fn driver_runs(p: &Profile) -> Result<Vec<DriverRun>, HarnessError> {
    let mut out = Vec::new();
    for &d in &p.driver_dims {
        let params = driver_params(d, 1, 3);
        for seed in 0..p.driver_seeds {
            for driver in [AlgorithmId::Subgradient, AlgorithmId::NullSpace] {
                out.push(drive_adaptive(driver, params, seed, p.driver_queries)?);
            }
        }
    }
    out.extend(event_runs(p)?);
    Ok(out)
}

fn event_runs(p: &Profile) -> Result<Vec<DriverRun>, HarnessError> {
    let params = driver_params(p.event_dim, p.event_k, p.event_depth);
    let mut out = Vec::new();
    for seed in 0..p.event_seeds {
        for driver in [AlgorithmId::Subgradient, AlgorithmId::NullSpace] {
            out.push(drive_adaptive(driver, params, seed, p.driver_queries)?);
        }
    }
    Ok(out)
}

/// Convexity along midpoints and 1-Lipschitz continuity at the native scaling.
pub fn regularity(p: &Profile) -> SuiteReport {
    let start = Instant::now();
    let mut r = SuiteReport::new("regularity");
    for &d in &p.regularity_dims {
        let params = InstanceParams::standard_unchecked(d, 1, 3)
            .expect("valid dimension")
            .with_gamma(gamma_at_cap(3));
        for seed in 0..p.regularity_seeds {
            let inst = HardInstance::sample(params, seed).expect("valid parameters");
            let basis = inst.matrix().row_basis();
            let mut tape = suite_tape(1, seed ^ (d as u64) << 32);
            for i in 0..p.regularity_pairs {
                let mut x = ball_point(d, &mut tape);
                let mut y = ball_point(d, &mut tape);
                if i % 2 == 1 {
                    // Near null(A), where the Nemirovski terms are active.
                    x = basis.project_complement(&x);
                    y = basis.project_complement(&y);
                }
                let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
                let (fx, fy, fm) = (inst.value(&x), inst.value(&y), inst.value(&mid));
                r.check(fm <= 0.5 * (fx + fy) + p.tolerance);
                r.check((fx - fy).abs() <= norm(&sub(&x, &y)) + p.tolerance);
            }
        }
    }
    r.finish(start)
}

/// Stored instances answer like their provenance: values agree bit for bit
/// and every returned subgradient satisfies the subgradient inequality for
/// the regenerated function.
pub fn subgradient_validity(p: &Profile, fault: Option<Fault>) -> SuiteReport {
    let start = Instant::now();
    let mut r = SuiteReport::new("subgradient-validity");
    let d = p.validity_dim;
    let params = driver_params(d, 1, 3);
    for seed in 0..p.validity_seeds {
        let truth = HardInstance::sample(params, seed).expect("valid parameters");
        let mut stored = HardInstance::from_text(&truth.to_text()).expect("round trip");
        if let Some(Fault::FlipSign { row, col }) = fault {
            stored.matrix_mut().flip(row % params.n, col % d);
        }
        let basis = truth.matrix().row_basis();
        let mut tape = suite_tape(2, seed);
        for i in 0..p.validity_points {
            let mut x = ball_point(d, &mut tape);
            if i % 2 == 1 {
                x = basis.project_complement(&x);
            }
            let y = ball_point(d, &mut tape);
            let resp = stored.respond(&x).expect("dimension");
            r.check(resp.value.to_bits() == truth.value(&x).to_bits());
            let lin = resp.value + dot(&resp.subgradient, &sub(&y, &x));
            r.check(truth.value(&y) >= lin - p.tolerance * (1.0 + lin.abs()));
        }
    }
    if fault.is_some() {
        r.note("fault injected");
    }
    r.finish(start)
}

/// Every informative query whose subgradient is not `v_1` has
/// `|Ax|_inf / |x| <= 1/d^4`.
pub fn orthogonality(runs: &[DriverRun]) -> SuiteReport {
    let start = Instant::now();
    let mut r = SuiteReport::new("approximate-orthogonality");
    let mut considered = 0;
    for run in runs {
        let d = run.params.d as f64;
        let v1 = run.instance.vectors()[0].entries();
        for e in run.log.entries() {
            if e.subgradient == v1 {
                continue;
            }
            considered += 1;
            let ratio = norm_inf(&run.instance.matrix().mul(&e.x)) / norm(&e.x);
            r.check(ratio <= d.powi(-4));
        }
    }
    r.note(format!("{considered} informative queries beyond v1 over {} runs", runs.len()));
    r.require(considered > 0, "no informative query beyond v1");
    r.finish(start)
}

/// Projection ratios under event E, and the event rate at the event dimension.
pub fn independence(runs: &[DriverRun], p: &Profile) -> SuiteReport {
    let start = Instant::now();
    let mut r = SuiteReport::new("robust-independence");
    for run in runs.iter().filter(|run| run.event.holds) {
        let d = run.params.d as f64;
        for j in 1..=run.log.len() {
            r.check(run.log.projection_ratio(j) <= 1.0 - 1.0 / (d * d));
        }
    }
    for driver in [AlgorithmId::Subgradient, AlgorithmId::NullSpace] {
        let batch: Vec<&DriverRun> = runs
            .iter()
            .filter(|run| run.params.d == p.event_dim && run.params.round_len == p.event_k && run.driver == driver)
            .collect();
        let holds = batch.iter().filter(|run| run.event.holds).count();
        let rate = holds as f64 / batch.len().max(1) as f64;
        r.note(format!(
            "E rate {driver} d={} k={}: {holds}/{} (reference 1-1/d = {:.2})",
            p.event_dim,
            p.event_k,
            batch.len(),
            1.0 - 1.0 / p.event_dim as f64
        ));
        r.require(!batch.is_empty() && rate >= 0.9, format!("E rate {rate:.2} below 0.90 for {driver}"));
    }
    r.finish(start)
}

/// Runs stopped before the last phase stay above `-(r+1) gamma` and at least
/// `1/(16 sqrt N)` above the witness, whenever E holds. Depth 3 at `d = 64`,
/// unit scale, gamma at the cap; both drivers, truncated at several lengths.
pub fn suboptimality(p: &Profile) -> Result<SuiteReport, HarnessError> {
    let start = Instant::now();
    let mut r = SuiteReport::new("suboptimality");
    let d = 64;
    let params = InstanceParams::at_depth_cap(d, 1, 3)
        .expect("depth 3 fits its own cap")
        .with_global_scale(1.0);
    let floor = 1.0 / (16.0 * (params.depth as f64).sqrt()) - 1e-6;
    let mut considered = 0;
    let mut min_gap = f64::INFINITY;
    for seed in 0..p.subopt_seeds {
        for (driver, lens) in [
            (AlgorithmId::Subgradient, &[10usize, 100, 1000][..]),
            (AlgorithmId::NullSpace, &[1usize, 2, 3, 5, 8][..]),
        ] {
            for &len in lens {
                let run = drive_adaptive(driver, params, seed, len)?;
                if run.exhausted || run.phase >= params.depth || !run.event.holds {
                    continue;
                }
                considered += 1;
                let best = run.best_value();
                let witness = optimal_witness(&run.instance).expect("full rank").value;
                min_gap = min_gap.min(best - witness);
                r.check(best >= -((run.phase + 1) as f64) * params.gamma);
                r.check(best - witness >= floor);
            }
        }
    }
    r.note(format!("{considered} truncated runs, min gap {min_gap:.4} vs floor {floor:.4}"));
    r.require(considered > 0, "no run stopped early");
    Ok(r.finish(start))
}

/// `F(xbar) <= -1/(8 sqrt N)` in at least 90% of seeds; `xbar` in the ball and `null(A)`.
pub fn witness(p: &Profile) -> SuiteReport {
    let start = Instant::now();
    let mut r = SuiteReport::new("optimal-witness");
    let params = InstanceParams::at_depth_cap(64, 1, 3)
        .expect("depth 3 fits its own cap")
        .with_global_scale(1.0);
    let bound = -1.0 / (8.0 * 3f64.sqrt());
    let mut good = 0;
    for seed in 0..p.witness_seeds {
        let inst = HardInstance::sample(params, seed).expect("valid parameters");
        let w = optimal_witness(&inst).expect("full rank");
        r.check(w.norm <= 1.0 + p.tolerance);
        r.check(w.null_residual <= p.tolerance);
        if w.value <= bound {
            good += 1;
        }
    }
    let need = (p.witness_seeds * 9).div_ceil(10);
    r.note(format!("F(xbar) <= {bound:.4} in {good}/{}", p.witness_seeds));
    r.require(good >= need, format!("only {good} of {} witnesses reach the bound", p.witness_seeds));
    r.finish(start)
}

/// `sqrt(c k ln d / d)` with `c = 45`. The consistency argument bounds
/// `x^T (v_j - v_j')` by twice the event threshold `sqrt(10 ln d / d)`, so it
/// needs `c > 40`.
pub fn consistency_gamma(d: usize, k: usize) -> f64 {
    (45.0 * k as f64 * (d as f64).ln() / d as f64).sqrt()
}

/// Per query: does the static instance answer exactly as the adaptive oracle did?
fn replay_matches(run: &DriverRun) -> Vec<bool> {
    run.history
        .iter()
        .map(|h| {
            let s = run.instance.respond(&h.x).expect("dimension");
            s.value.to_bits() == h.response.value.to_bits()
                && s.subgradient.len() == h.response.subgradient.len()
                && s.subgradient
                    .iter()
                    .zip(&h.response.subgradient)
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        })
        .collect()
}

/// Replaying an adaptive run against the static instance reproduces every
/// value and subgradient bit for bit. Asserted at `gamma = consistency_gamma`
/// on E-passing seeds; for the orthogonality-regime `runs`, where gamma is
/// below twice the event threshold, mismatches are only counted.
pub fn consistency(runs: &[DriverRun], p: &Profile) -> Result<SuiteReport, HarnessError> {
    let start = Instant::now();
    let mut r = SuiteReport::new("adaptive-static-consistency");
    let d = p.consistency_dim;
    let params = InstanceParams::standard_unchecked(d, 1, 3)
        .expect("valid dimension")
        .with_gamma(consistency_gamma(d, 1))
        .with_global_scale(1.0);
    let mut passing = 0;
    let mut seed = 0;
    while passing < p.consistency_seeds && seed < 3 * p.consistency_seeds {
        let driver = if seed % 2 == 0 {
            AlgorithmId::NullSpace
        } else {
            AlgorithmId::Subgradient
        };
        let run = drive_adaptive(driver, params, seed, p.driver_queries.min(200))?;
        seed += 1;
        if !run.event.holds {
            continue;
        }
        passing += 1;
        for ok in replay_matches(&run) {
            r.check(ok);
        }
    }
    r.note(format!("{passing} E-passing seeds at d={d}, gamma={:.3}", params.gamma));
    r.require(passing >= p.consistency_seeds, "not enough E-passing seeds");
    let passing_runs: Vec<&DriverRun> = runs.iter().filter(|run| run.event.holds).collect();
    let inconsistent = passing_runs.iter().filter(|run| replay_matches(run).contains(&false)).count();
    r.note(format!(
        "gamma=2/(d-1) runs: {inconsistent}/{} E-passing runs differ (not asserted)",
        passing_runs.len()
    ));
    Ok(r.finish(start))
}

/// Exhaustive concentration over the hypercube: strictly decreasing in `k`,
/// fitted exponent above 0.05.
pub fn hypercube_base(p: &Profile) -> SuiteReport {
    let start = Instant::now();
    let mut r = SuiteReport::new("hypercube-base");
    let mut tape = suite_tape(7, 0);
    match concentration_profile(p.base_dim, &p.base_ks, 0.5, ConcentrationMode::Exhaustive, &mut tape) {
        Ok(est) => {
            for w in est.windows(2) {
                r.check(w[1].probability() < w[0].probability());
            }
            for e in &est {
                r.check(e.fitted_exponent() > 0.05);
                r.note(format!(
                    "k={} p={:.3e} c={:.3}",
                    e.k,
                    e.probability(),
                    e.fitted_exponent()
                ));
            }
        }
        Err(e) => r.require(false, e.to_string()),
    }
    r.finish(start)
}

/// `construct_m` on perturbed orthonormal frames: orthonormal output and
/// `|M^T a|_inf <= (d/delta) |Y^T a|_inf` on sampled `a`.
pub fn algebra_helper(p: &Profile) -> SuiteReport {
    let start = Instant::now();
    let mut r = SuiteReport::new("algebra-helper");
    let (d, q) = (40usize, 8usize);
    let delta = 1.0 / (d * d) as f64;
    for set_idx in 0..p.algebra_sets {
        let mut tape = suite_tape(8, set_idx as u64);
        let frame = random_orthonormal_columns(d, q, &mut tape).expect("tape holds 2^56 bits");
        let ys: Vec<Vec<f64>> = frame
            .iter()
            .map(|f| {
                let g = gaussian_vector(d, &mut tape);
                f.iter().zip(&g).map(|(a, b)| a + 0.05 * b / (d as f64).sqrt()).collect()
            })
            .collect();
        let set = match RobustSet::new(ys, delta) {
            Ok(s) => s,
            Err(e) => {
                r.require(false, format!("set {set_idx}: {e}"));
                continue;
            }
        };
        let m = match construct_m(&set) {
            Ok(m) => m,
            Err(e) => {
                r.require(false, format!("set {set_idx}: {e}"));
                continue;
            }
        };
        for (i, a) in m.columns.iter().enumerate() {
            for (j, b) in m.columns.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                r.check((dot(a, b) - target).abs() <= 1e-9);
            }
        }
        for _ in 0..p.algebra_samples {
            let a = gaussian_vector(d, &mut tape);
            let lhs = m.max_inner(&a);
            let rhs = (d as f64 / delta) * crate::geometry::max_inner(&set, &a);
            r.check(lhs <= rhs * (1.0 + 1e-12));
        }
    }
    r.finish(start)
}

/// Lifting a random Nemirovski function at `d = 16`.
pub fn lifting(p: &Profile) -> SuiteReport {
    let start = Instant::now();
    let mut r = SuiteReport::new("lifting");
    let d = 16;
    let (radius, lip) = (0.5, 1.0);
    let mut tape = suite_tape(9, 0);
    let vectors: Vec<_> = (0..4)
        .map(|_| sample_base_vector(d, 1.0 / (d as f64).sqrt(), &mut tape).expect("tape holds 2^56 bits"))
        .collect();
    let gamma = 0.05;
    let f = |x: &[f64]| {
        let (v, i) = eval_f(&vectors, gamma, x);
        (v, vectors[i].entries())
    };
    let mut g = LiftedFunction::new(FnOracle::new(d, f), radius, lip).expect("radius in (0, 1)");
    let mut plain = FnOracle::new(d, f);
    let bound = g.lipschitz() * (1.0 + 1e-9);
    for _ in 0..p.lift_points {
        let x: Vec<f64> = ball_point(d, &mut tape).iter().map(|v| v * radius).collect();
        let gv = g.eval(&x).expect("inside the ball").value;
        let fv = plain.query(&x).expect("dimension").value;
        r.check(gv.to_bits() == fv.to_bits());
    }
    for _ in 0..p.lift_pairs {
        let s = 1.0 + 2.0 * tape.read_unit().expect("tape holds 2^56 bits");
        let x: Vec<f64> = ball_point(d, &mut tape).iter().map(|v| v * s).collect();
        let y: Vec<f64> = ball_point(d, &mut tape).iter().map(|v| v * s).collect();
        let dist = norm(&sub(&x, &y));
        if dist == 0.0 {
            continue;
        }
        let (gx, gy) = (g.eval(&x), g.eval(&y));
        let (Ok(gx), Ok(gy)) = (gx, gy) else {
            r.require(false, "cone vertex hit");
            continue;
        };
        r.check((gx.value - gy.value).abs() / dist <= bound);
        for (z, gz) in [(&x, &gx), (&y, &gy)] {
            if norm(z) > 1.0 {
                let c = clamp_to_ball(z);
                let gc = g.eval(&c).expect("on the sphere").value;
                let fc = plain.query(&c).expect("dimension").value;
                r.check(gz.value >= gc && gz.value >= fc);
            }
        }
    }
    r.finish(start)
}

/// Reference strategies at `d = 32, k = 4`.
pub fn game_protocol(p: &Profile) -> SuiteReport {
    let start = Instant::now();
    let mut r = SuiteReport::new("game-protocol");
    let (d, k) = (32usize, 4usize);
    let store = GameParams::new(d, k, 0, 64 * d * k, OracleVariant::Subgradient);
    let rows = GameParams::new(d, k, d / 2, 0, OracleVariant::Index);
    let ret = GameParams::new(d, k, 0, d * k, OracleVariant::Subgradient);
    let (mut w1, mut w2, mut f3) = (0, 0, 0);
    for seed in 0..p.game_seeds {
        let a = play(&store, &StoreNullBasis, seed);
        r.check(a.won());
        w1 += usize::from(a.won());
        let b = play(&rows, &QueryAllRows, seed);
        r.check(b.won());
        w2 += usize::from(b.won());
        let c = play(&ret, &ReturnRows, seed);
        let fails = !c.verdicts.is_empty() && c.verdicts.iter().all(|v| !v.orthogonal);
        r.check(fails);
        f3 += usize::from(fails);
    }
    r.note(format!(
        "store-null {w1}/{n}, query-rows {w2}/{n}, return-rows fails orthogonality {f3}/{n}",
        n = p.game_seeds
    ));
    r.finish(start)
}

/// Reduction adapter around the null-space optimizer at `d = 24, k = 2, N = 9`,
/// and bit-identical simulated responses.
pub fn reduction(p: &Profile) -> SuiteReport {
    let start = Instant::now();
    let mut r = SuiteReport::new("reduction");
    let (d, k, depth) = (24usize, 2usize, 9usize);
    let inst = InstanceParams::at_depth_cap(d, k, depth).expect("depth fits its own cap");
    let gp = GameParams::new(d, k, d, NullSpaceDescent::state_bits_for(d), OracleVariant::Subgradient);
    let mut wins = 0;
    for seed in 0..p.reduction_seeds {
        let a = game_matrix(&gp, seed);
        let opt = NullSpaceDescent::new(&a, StepSchedule::InverseSqrt(0.5));
        let t = play(&gp, &ReductionAdapter::new(&opt, inst), seed);
        wins += usize::from(t.won());
        let (_, tape) = game_tapes(seed);
        let vectors = reduction_vectors(&inst, &tape);
        let mut points = Vec::new();
        let mut pt = suite_tape(11, seed);
        for q in &t.queries {
            if let crate::ovg::PlayerQuery::Vector(x) = &q.query {
                points.push(x.clone());
            }
        }
        for i in 0..200 {
            let x = ball_point(d, &mut pt);
            points.push(if i % 2 == 0 { a.row_basis().project_complement(&x) } else { x });
        }
        for x in &points {
            let g = subgradient_response(&a, x);
            let sim = simulate_response(&inst, &vectors, &g, x);
            let truth = respond(&inst, &a, &vectors, x);
            let same = sim.value.to_bits() == truth.value.to_bits()
                && sim
                    .subgradient
                    .iter()
                    .zip(&truth.subgradient)
                    .all(|(u, v)| u.to_bits() == v.to_bits());
            r.check(same);
        }
    }
    let need = (p.reduction_seeds * 9).div_ceil(10) as usize;
    r.note(format!("wins {wins}/{}", p.reduction_seeds));
    r.require(wins >= need, format!("wins {wins} below {need}"));
    r.finish(start)
}

/// Budgets hold at every checkpoint, snapshot replay is exact, and the
/// ellipsoid does not fit `d^1.25` bits for `d >= 33`.
pub fn memory_and_replay(runs: &[DriverRun], p: &Profile) -> Result<SuiteReport, HarnessError> {
    let start = Instant::now();
    let mut r = SuiteReport::new("memory-and-replay");
    for run in runs {
        for s in &run.steps {
            r.check(s.state_bits <= run.budget_bits);
        }
    }
    let mut exact = 0;
    for trial in 0..p.replay_trials {
        let d = [8usize, 12, 16][trial as usize % 3];
        let params = driver_params(d, 1, 3);
        let inst = HardInstance::sample(params, trial).expect("valid parameters");
        let sched = StepSchedule::InverseSqrt(0.5);
        let alg: Box<dyn MemAlgorithm> = match trial % 3 {
            0 => Box::new(SubgradientDescent::new(d, sched, 24)?),
            1 => Box::new(Ellipsoid::new(d)),
            _ => Box::new(NullSpaceDescent::new(inst.matrix(), sched)),
        };
        let budget = Ellipsoid::state_bits_for(d);
        let len = 60;
        let rc = RunConfig::new(budget, len);
        let original = run(alg.as_ref(), &mut inst.session(), &rc, algorithm_tape(trial))?;
        let c = (trial as usize * 7) % original.queries().max(1);
        let snap = snapshot(&original, c)?;
        let suffix = replay(alg.as_ref(), &mut inst.session(), &snap, &rc, algorithm_tape(trial))?;
        let ok = replay_equals(&original, &suffix);
        exact += usize::from(ok);
        r.check(ok);
    }
    r.note(format!("replay exact {exact}/{}", p.replay_trials));
    for d in 33..=128usize {
        r.check(Ellipsoid::state_bits_for(d) as f64 > (d as f64).powf(1.25));
    }
    let d = 33;
    let budget = (d as f64).powf(1.25).floor() as usize;
    let inst = HardInstance::sample(driver_params(d, 1, 3), 0).expect("valid parameters");
    let e = Ellipsoid::new(d);
    let rejected = matches!(
        run(&e, &mut inst.session(), &RunConfig::new(budget, 10), RandomTape::new(0)),
        Err(HarnessError::BudgetViolation { checkpoint: 0, .. })
    );
    r.check(rejected);
    Ok(r.finish(start))
}

/// The ellipsoid reaches `eps = 1/(20 sqrt N)` in fewer queries than
/// subgradient descent with `64 d` bits, at depth 3 with gamma at the cap.
pub fn tradeoff(p: &Profile) -> Result<SuiteReport, crate::experiment::ExperimentError> {
    let start = Instant::now();
    let mut r = SuiteReport::new("tradeoff");
    let cfg = ExperimentConfig {
        depth: 3,
        scaling: Scaling::Unit,
        ..Default::default()
    };
    for &d in &p.tradeoff_dims {
        for seed in 0..p.tradeoff_seeds {
            let (e, _) = run_once(&cfg, AlgorithmId::Ellipsoid, d, &BudgetRule::State, seed)?;
            let (s, _) = run_once(&cfg, AlgorithmId::Subgradient, d, &BudgetRule::Power { c: 64.0, p: 1.0 }, seed)?;
            let ok = match (e.queries_to_eps, s.queries_to_eps) {
                (Some(a), Some(b)) => a < b,
                (Some(_), None) => true,
                _ => false,
            };
            r.check(ok);
            let show = |q: Option<usize>, total: usize| q.map_or(format!(">{total}"), |q| q.to_string());
            r.note(format!(
                "d={d} seed={seed} ellipsoid {} sd {}",
                show(e.queries_to_eps, e.queries),
                show(s.queries_to_eps, s.queries)
            ));
        }
    }
    Ok(r.finish(start))
}

/// Every suite in order. Runs that fail to execute count as failed suites.
pub fn verify_all(p: &Profile, fault: Option<Fault>) -> VerifyReport {
    let mut suites = vec![regularity(p), subgradient_validity(p, fault)];
    let failed = |name: &'static str, e: String| {
        let mut s = SuiteReport::new(name);
        s.require(false, e);
        s
    };
    match driver_runs(p) {
        Ok(runs) => {
            suites.push(orthogonality(&runs));
            suites.push(independence(&runs, p));
            suites.push(suboptimality(p).unwrap_or_else(|e| failed("suboptimality", e.to_string())));
            suites.push(witness(p));
            suites.push(consistency(&runs, p).unwrap_or_else(|e| failed("adaptive-static-consistency", e.to_string())));
            suites.push(hypercube_base(p));
            suites.push(algebra_helper(p));
            suites.push(lifting(p));
            suites.push(game_protocol(p));
            suites.push(reduction(p));
            suites.push(memory_and_replay(&runs, p).unwrap_or_else(|e| failed("memory-and-replay", e.to_string())));
        }
        Err(e) => suites.push(failed("driver-runs", e.to_string())),
    }
    suites.push(tradeoff(p).unwrap_or_else(|e| failed("tradeoff", e.to_string())));
    VerifyReport { suites }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_points_are_inside() {
        let mut t = RandomTape::new(3);
        for _ in 0..100 {
            assert!(norm(&ball_point(7, &mut t)) <= 1.0);
        }
    }

    #[test]
    fn flipped_sign_breaks_validity() {
        let p = Profile::quick();
        assert!(subgradient_validity(&p, None).passed);
        assert!(!subgradient_validity(&p, Some(Fault::FlipSign { row: 0, col: 0 })).passed);
    }
}
