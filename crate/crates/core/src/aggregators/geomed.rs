use serde::{Deserialize, Serialize};

use super::check_round;
use crate::client::ClientUpdate;
use crate::tensor::{norm, squared_distance, ParamVector};
use crate::Result;

/// Smoothing added to every distance so iterates on a data point stay finite.
const DISTANCE_SMOOTHING: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeoMedParams {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for GeoMedParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-8,
        }
    }
}

/// `Σ ‖z − ω_i‖₂`.
pub fn geomed_objective(z: &[f64], updates: &[ClientUpdate]) -> f64 {
    updates
        .iter()
        .map(|u| squared_distance(z, &u.params).sqrt())
        .sum()
}

/// Unweighted geometric median by Weiszfeld iteration, started at the mean.
pub fn geomed(updates: &[ClientUpdate], params: GeoMedParams) -> Result<ParamVector> {
    geomed_trace(updates, params, |_| {})
}

/// Same as [`geomed`], calling `observe` with every iterate (including the start).
pub(crate) fn geomed_trace(
    updates: &[ClientUpdate],
    params: GeoMedParams,
    mut observe: impl FnMut(&[f64]),
) -> Result<ParamVector> {
    let len = check_round(updates)?;
    let mut z = super::mean(updates)?.into_inner();
    observe(&z);
    let mut next = vec![0.0; len];
    for _ in 0..params.max_iters {
        next.iter_mut().for_each(|v| *v = 0.0);
        let mut weight_sum = 0.0;
        for u in updates {
            let w = 1.0 / (squared_distance(&z, &u.params).sqrt() + DISTANCE_SMOOTHING);
            weight_sum += w;
            for (n, x) in next.iter_mut().zip(u.params.iter()) {
                *n += w * x;
            }
        }
        next.iter_mut().for_each(|v| *v /= weight_sum);
        let step: Vec<f64> = next.iter().zip(&z).map(|(a, b)| a - b).collect();
        std::mem::swap(&mut z, &mut next);
        observe(&z);
        if norm(&step) < params.tol {
            break;
        }
    }
    Ok(ParamVector::new(z))
}

/// Normalised Weiszfeld weights `1/‖z − ω_i‖` at `z`.
pub(crate) fn geomed_weights(z: &[f64], updates: &[ClientUpdate]) -> Vec<f64> {
    let w: Vec<f64> = updates
        .iter()
        .map(|u| 1.0 / (squared_distance(z, &u.params).sqrt() + DISTANCE_SMOOTHING))
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}
