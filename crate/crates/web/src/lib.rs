//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations are exported: a full simulation driven by a JSON config,
//! a single meta-step on importance weights, and robust aggregation of 2-D
//! points. Each binding is a thin wrapper over a plain Rust function so the
//! logic can be tested natively.

use fedaot_core::aggregators::{fedavg, geomed, krum, trimmed_mean, AggregatorChoice, GeoMedParams};
use fedaot_core::client::ClientUpdate;
use fedaot_core::engine::{run_experiment, FederationConfig};
use fedaot_core::meta::{stabilize, update_weights, ImportanceWeights, MetaConfig, MetaGradient, StabilizationMode};
use fedaot_core::tensor::ParamVector;
use wasm_bindgen::prelude::*;

/// Runs one experiment from a JSON config and returns the result as JSON.
pub fn simulate_json(config: &str) -> Result<String, String> {
    let config: FederationConfig = serde_json::from_str(config).map_err(|e| format!("config: {e}"))?;
    let result = run_experiment(&config).map_err(|e| e.to_string())?;
    serde_json::to_string(&result).map_err(|e| e.to_string())
}

/// One meta-gradient step followed by stabilisation. A positive
/// `temperature` selects softmax mode, anything else renormalisation.
pub fn meta_step(k: &[f64], g: &[f64], eta: f64, temperature: f64) -> Result<Vec<f64>, String> {
    if k.len() != g.len() {
        return Err(format!("{} weights but {} gradient entries", k.len(), g.len()));
    }
    let mode = if temperature > 0.0 {
        StabilizationMode::Softmax { temperature }
    } else {
        StabilizationMode::Renormalize
    };
    let config = MetaConfig {
        eta,
        ..MetaConfig::default()
    };
    config.validate().map_err(|e| e.to_string())?;
    let weights = ImportanceWeights::from_k(k.to_vec(), mode).map_err(|e| e.to_string())?;
    let grad = MetaGradient { g: g.to_vec() };
    let (next, _) = stabilize(update_weights(&weights, &grad, &config));
    Ok(next.k().to_vec())
}

/// Aggregates 2-D points given as `[x0, y0, x1, y1, ...]` with a stateless
/// rule (`fedavg`, `geomed`, `trimmed_mean:<t>` or `krum:<f>`).
pub fn aggregate_points(xy: &[f64], aggregator: &str) -> Result<Vec<f64>, String> {
    if xy.is_empty() || xy.len() % 2 != 0 {
        return Err("expected a non-empty list of x, y pairs".into());
    }
    let updates: Vec<ClientUpdate> = xy
        .chunks(2)
        .enumerate()
        .map(|(i, p)| ClientUpdate::new(i, ParamVector::new(p.to_vec()), 1))
        .collect();
    let choice: AggregatorChoice = aggregator.parse().map_err(|e: fedaot_core::FlError| e.to_string())?;
    choice.validate_for(updates.len()).map_err(|e| e.to_string())?;
    let out = match choice {
        AggregatorChoice::FedAvg => fedavg(&updates),
        AggregatorChoice::GeoMed => geomed(&updates, GeoMedParams::default()),
        AggregatorChoice::TrimmedMean { trim_count } => trimmed_mean(&updates, trim_count),
        AggregatorChoice::Krum { assumed_attackers } => krum(&updates, assumed_attackers),
        other => return Err(format!("{other} needs round history and cannot aggregate static points")),
    };
    out.map(ParamVector::into_inner).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn simulate(config: &str) -> Result<String, JsError> {
    simulate_json(config).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = metaStep)]
pub fn meta_step_js(k: Vec<f64>, g: Vec<f64>, eta: f64, temperature: f64) -> Result<Vec<f64>, JsError> {
    meta_step(&k, &g, eta, temperature).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = aggregatePoints)]
pub fn aggregate_points_js(xy: Vec<f64>, aggregator: &str) -> Result<Vec<f64>, JsError> {
    aggregate_points(&xy, aggregator).map_err(|e| JsError::new(&e))
}
