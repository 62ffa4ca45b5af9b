use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::check_round;
use crate::client::ClientUpdate;
use crate::tensor::{dot, norm, weighted_sum, ParamVector};
use crate::{FlError, Result};

/// Constants of the logit re-scaling step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FoolsGoldParams {
    /// Multiplier on `ln(w / (1 − w)) + offset`.
    pub confidence: f64,
    pub logit_offset: f64,
}

impl Default for FoolsGoldParams {
    fn default() -> Self {
        Self {
            confidence: 1.0,
            logit_offset: 0.5,
        }
    }
}

/// Running sum of each client's update direction `ω_i − W`, keyed by client id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FoolsGoldState {
    pub history: BTreeMap<usize, Vec<f64>>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Per-client weights from accumulated histories (same order as `histories`).
pub(crate) fn foolsgold_weights(histories: &[&[f64]], params: FoolsGoldParams) -> Vec<f64> {
    let n = histories.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut cs = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = cosine(histories[i], histories[j]);
            cs[i][j] = c;
            cs[j][i] = c;
        }
    }
    let max_cs: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| cs[i][j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    // pardoning: damp similarity to clients that look more sybil-like than i
    for i in 0..n {
        for j in 0..n {
            if i != j && max_cs[i] < max_cs[j] && max_cs[j] != 0.0 {
                cs[i][j] *= max_cs[i] / max_cs[j];
            }
        }
    }
    let mut w: Vec<f64> = (0..n)
        .map(|i| {
            let m = (0..n)
                .filter(|&j| j != i)
                .map(|j| cs[i][j])
                .fold(f64::NEG_INFINITY, f64::max);
            (1.0 - m).clamp(0.0, 1.0)
        })
        .collect();
    let top = w.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return w;
    }
    for v in &mut w {
        *v /= top;
        if *v >= 1.0 {
            *v = 0.99;
        }
        let logit = params.confidence * ((*v / (1.0 - *v)).ln() + params.logit_offset);
        *v = if logit.is_nan() { 0.0 } else { logit.clamp(0.0, 1.0) };
    }
    w
}

/// FoolsGold: accumulate update directions, down-weight clients whose
/// histories are mutually similar, and return the weighted average.
/// Falls back to the unweighted mean when every weight is zero.
pub fn foolsgold(
    updates: &[ClientUpdate],
    global: &ParamVector,
    state: &mut FoolsGoldState,
    params: FoolsGoldParams,
) -> Result<(ParamVector, Vec<f64>)> {
    let len = check_round(updates)?;
    if global.len() != len {
        return Err(FlError::Protocol(format!(
            "global model has {} parameters, updates have {len}",
            global.len()
        )));
    }
    for u in updates {
        let h = state.history.entry(u.client_id).or_insert_with(|| vec![0.0; len]);
        for ((h, w), g) in h.iter_mut().zip(u.params.iter()).zip(global.iter()) {
            *h += w - g;
        }
    }
    let histories: Vec<&[f64]> = updates
        .iter()
        .map(|u| state.history[&u.client_id].as_slice())
        .collect();
    let w = foolsgold_weights(&histories, params);
    let total: f64 = w.iter().sum();
    let coeffs: Vec<f64> = if total > 0.0 {
        w.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / updates.len() as f64; updates.len()]
    };
    Ok((
        weighted_sum(updates.iter().map(|u| u.params.as_slice()), &coeffs, len),
        w,
    ))
}
