//! Browser bindings for three small experiments. Each export returns a JSON
//! string; the `*_json` functions hold the logic and run natively too.

use ntd_core::algorithms::{train, Algorithm, EvalTarget, Problem, Schedule, TrainConfig};
use ntd_core::diagnostics::{estimate_sigma, spectrum_sweep, SpectrumSweepConfig};
use ntd_core::env::{fit_geometric, mixing_profile, random_mdp, stationary_distribution, TabularMdp, TabularPolicy};
use ntd_core::features::{one_hot_features, random_unit_features, DEFAULT_MIN_ANGLE};
use ntd_core::network::{init_params, Activation, Architecture};
use ntd_core::oracles::{exact_q_pi, MinimaxOrder};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_WIDTH: usize = 4096;

#[derive(Serialize)]
struct CurvePoint {
    t: usize,
    td_error: f64,
    eval_error: Option<f64>,
}

#[derive(Serialize)]
struct TdCurve {
    lambda0: f64,
    points: Vec<CurvePoint>,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Mean and spread of the condition ratio of `Sigma` per width on a random
/// MDP under the uniform policy, random unit features of dimension `dim`.
pub fn spectrum_ratio_json(widths: &[usize], depth: usize, dim: usize, trials: usize, seed: u64) -> Result<String, String> {
    if widths.iter().any(|&m| m > MAX_WIDTH) {
        return Err(format!("widths are capped at {MAX_WIDTH} in the browser"));
    }
    let mdp = random_mdp(5, 2, 0.9, 1.0, seed).map_err(err)?;
    let pi = TabularPolicy::uniform(5, 2).map_err(err)?;
    let weights = stationary_distribution(&mdp, &pi).map_err(err)?;
    let features = random_unit_features(mdp.n_pairs(), dim, seed, DEFAULT_MIN_ANGLE).map_err(err)?;
    let config = SpectrumSweepConfig {
        widths: widths.to_vec(),
        trials,
        depth,
        activation: Activation::Elu,
        seed,
    };
    let summary = spectrum_sweep(&config, &features, &weights).map_err(err)?;
    serde_json::to_string(&summary).map_err(err)
}

/// Neural TD on a random 5-state, 2-action MDP with one-hot features and the
/// theorem step sizes; error is the stationary-weighted distance to `Q^pi`.
pub fn td_curve_json(width: usize, iterations: usize, eval_every: usize, omega: f64, seed: u64) -> Result<String, String> {
    if width > MAX_WIDTH {
        return Err(format!("width is capped at {MAX_WIDTH} in the browser"));
    }
    let mdp: TabularMdp = random_mdp(5, 2, 0.9, 1.0, 3).map_err(err)?;
    let pi = TabularPolicy::uniform(5, 2).map_err(err)?;
    let features = one_hot_features(5, 2).map_err(err)?;
    let weights = stationary_distribution(&mdp, &pi).map_err(err)?;
    let (params, _) = init_params(Architecture::new(2, width, features.dim(), Activation::Elu), seed).map_err(err)?;
    let lambda0 = estimate_sigma(&params, &features, &weights).map_err(err)?.lambda0();
    let eval = EvalTarget {
        values: exact_q_pi(&mdp, &pi).map_err(err)?.flat(),
        weights,
    };
    let config = TrainConfig {
        algorithm: Algorithm::Td,
        gamma: None,
        omega,
        iterations,
        schedule: Schedule::Theorem { lambda0, nu: None },
        seed: seed.wrapping_add(1),
        burn_in: None,
        eval_every,
        minimax_order: MinimaxOrder::MaxMin,
    };
    let (_, record) = train(Problem::Mdp { mdp: &mdp, policy: &pi }, &features, &params, &config, Some(&eval)).map_err(err)?;
    let points = record
        .rows
        .iter()
        .map(|r| CurvePoint {
            t: r.t,
            td_error: r.td_error,
            eval_error: r.q_eval_error,
        })
        .collect();
    serde_json::to_string(&TdCurve { lambda0, points }).map_err(err)
}

/// Worst-case total-variation distance to stationarity of the symmetric
/// two-state chain with stay probability `stay`, plus its geometric fit.
pub fn mixing_json(stay: f64, horizon: usize) -> Result<String, String> {
    let mdp = TabularMdp::symmetric_chain(stay, [1.0, -1.0], 0.9).map_err(err)?;
    let pi = TabularPolicy::uniform(2, 1).map_err(err)?;
    let profile = mixing_profile(&mdp, &pi, horizon).map_err(err)?;
    let fit = fit_geometric(&profile);
    serde_json::to_string(&serde_json::json!({ "profile": profile, "fit": fit })).map_err(err)
}

#[wasm_bindgen]
pub fn spectrum_ratio(widths: Vec<u32>, depth: u32, dim: u32, trials: u32, seed: u32) -> Result<String, JsValue> {
    let widths: Vec<usize> = widths.into_iter().map(|m| m as usize).collect();
    spectrum_ratio_json(&widths, depth as usize, dim as usize, trials as usize, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn td_curve(width: u32, iterations: u32, eval_every: u32, omega: f64, seed: u32) -> Result<String, JsValue> {
    td_curve_json(width as usize, iterations as usize, eval_every as usize, omega, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn mixing(stay: f64, horizon: u32) -> Result<String, JsValue> {
    mixing_json(stay, horizon as usize).map_err(|e| JsValue::from_str(&e))
}
