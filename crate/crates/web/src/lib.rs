//! Browser bindings. Each export takes plain numbers and returns a JSON string.

use memlb_core::base::{concentration_profile, ConcentrationMode};
use memlb_core::experiment::{self, AlgorithmId, BudgetRule, ExperimentConfig, StrategyId};
use memlb_core::ovg::OracleVariant;
use memlb_core::tape::RandomTape;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest dimension enumerated exactly; above it the demo samples.
const EXACT_MAX_DIM: usize = 18;
const CURVE_POINTS: usize = 300;

fn to_js<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Serialize)]
struct ConcentrationRow {
    k: usize,
    probability: f64,
    exponent: f64,
    exhaustive: bool,
}

/// `P(|Z_k^T h|_inf <= t)` over `h` in `{-1, +1}^d` for `k = 1..=kmax`.
#[wasm_bindgen]
pub fn concentration(d: usize, kmax: usize, t: f64, seed: u64) -> Result<String, JsError> {
    if kmax == 0 || kmax > d {
        return Err(JsError::new("need 1 <= k <= d"));
    }
    let mode = if d <= EXACT_MAX_DIM {
        ConcentrationMode::Exhaustive
    } else {
        ConcentrationMode::MonteCarlo { trials: 200_000 }
    };
    let ks: Vec<usize> = (1..=kmax).collect();
    let est = concentration_profile(d, &ks, t, mode, &mut RandomTape::new(seed)).map_err(js_err)?;
    let rows: Vec<ConcentrationRow> = est
        .iter()
        .map(|e| ConcentrationRow {
            k: e.k,
            probability: e.probability(),
            exponent: e.fitted_exponent(),
            exhaustive: e.exhaustive,
        })
        .collect();
    to_js(&rows)
}

#[derive(Serialize)]
struct Curve {
    algorithm: String,
    budget_bits: usize,
    status: &'static str,
    queries_to_eps: Option<usize>,
    /// `(query, best gap so far)`, thinned to at most a few hundred points.
    points: Vec<(usize, f64)>,
}

#[derive(Serialize)]
struct Race {
    d: usize,
    epsilon: f64,
    reference: f64,
    curves: Vec<Curve>,
}

/// Best-gap curves of the quadratic-memory ellipsoid and `64 d`-bit subgradient
/// descent on the same instance.
#[wasm_bindgen]
pub fn race(d: usize, depth: usize, seed: u64) -> Result<String, JsError> {
    let cfg = ExperimentConfig {
        d,
        depth,
        ..Default::default()
    };
    let mut out = Race {
        d,
        epsilon: 0.0,
        reference: 0.0,
        curves: Vec::new(),
    };
    let runs = [
        (AlgorithmId::Ellipsoid, BudgetRule::State),
        (AlgorithmId::Subgradient, BudgetRule::Power { c: 64.0, p: 1.0 }),
    ];
    for (id, budget) in runs {
        let (s, rec) = experiment::run_once(&cfg, id, d, &budget, seed).map_err(js_err)?;
        out.epsilon = s.epsilon;
        out.reference = s.reference;
        let mut points = Vec::new();
        if let Some(rec) = rec {
            let n = rec.steps.len();
            let every = n.div_ceil(CURVE_POINTS).max(1);
            let mut best = f64::INFINITY;
            for (i, step) in rec.steps.iter().enumerate() {
                best = best.min(step.response.value);
                if i % every == 0 || i + 1 == n {
                    points.push((i + 1, best - s.reference));
                }
            }
        }
        out.curves.push(Curve {
            algorithm: id.to_string(),
            budget_bits: s.budget_bits,
            status: s.status.as_str(),
            queries_to_eps: s.queries_to_eps,
            points,
        });
    }
    to_js(&out)
}

#[derive(Serialize)]
struct GameResult {
    won: bool,
    status: &'static str,
    message_bits: usize,
    verdicts: Vec<(f64, f64, bool)>,
    transcript: String,
}

/// One orthogonal vector game. `strategy` is `store-null`, `query-rows`,
/// `return-rows` or `reduction`; `variant` is `subgradient` or `index`. `depth`
/// is only used by the reduction.
#[wasm_bindgen]
pub fn play_game(
    d: usize,
    k: usize,
    m: usize,
    depth: usize,
    strategy: &str,
    variant: &str,
    seed: u64,
) -> Result<String, JsError> {
    let strategy: StrategyId = strategy.parse().map_err(js_err)?;
    let variant: OracleVariant = variant.parse().map_err(js_err)?;
    let cfg = ExperimentConfig {
        d,
        k,
        m,
        depth,
        variant,
        ..Default::default()
    };
    let t = experiment::play_once(&cfg, strategy, d, seed).map_err(js_err)?;
    to_js(&GameResult {
        won: t.won(),
        status: experiment::transcript_status(&t).as_str(),
        message_bits: t.params.message_bits,
        verdicts: t.verdicts.iter().map(|v| (v.orthogonality, v.projection, v.success())).collect(),
        transcript: t.to_text(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concentration_is_decreasing() {
        let v: serde_json::Value = serde_json::from_str(&concentration(12, 4, 0.5, 1).unwrap()).unwrap();
        let p: Vec<f64> = v.as_array().unwrap().iter().map(|r| r["probability"].as_f64().unwrap()).collect();
        assert!(p.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn race_has_both_curves() {
        let v: serde_json::Value = serde_json::from_str(&race(16, 3, 0).unwrap()).unwrap();
        let curves = v["curves"].as_array().unwrap();
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0]["status"], "ok");
        assert!(curves[1]["points"].as_array().unwrap().len() <= CURVE_POINTS + 1);
    }

    #[test]
    fn store_null_wins() {
        let v: serde_json::Value = serde_json::from_str(&play_game(32, 4, 0, 3, "store-null", "subgradient", 2).unwrap()).unwrap();
        assert_eq!(v["won"], true);
    }

    #[test]
    fn reduction_game_runs() {
        let v: serde_json::Value = serde_json::from_str(&play_game(24, 2, 24, 9, "reduction", "subgradient", 0).unwrap()).unwrap();
        assert_eq!(v["won"], true, "{}", v["transcript"]);
    }
}
