//! Server-side meta-layer: per-client importance weights `k` that form the
//! global model as the convex combination `W = Σ k_i ω_i`, tuned every round
//! by gradient descent on a held-out validation loss.
//!
//! Because `W` is linear in `k`, the meta-gradient is exact and cheap:
//! `∂L/∂k_i = ⟨∇_W L, ω_i⟩`, one backward pass for all clients.
//!
//! After each step the raw weights are projected back onto the probability
//! simplex, either by clamping at zero and dividing by the sum, or through a
//! temperature softmax over internal logits.

use serde::{Deserialize, Serialize};

use crate::client::ClientUpdate;
use crate::data::LabeledDataset;
use crate::nn::{backward, MlpArchitecture};
use crate::tensor::{dot, weighted_sum, ParamVector};
use crate::{FlError, Result};

/// Tolerance on `Σ k = 1` accepted by [`aggregate_weighted`].
pub const AGGREGATE_SUM_TOLERANCE: f64 = 1e-6;

/// Sums this close to one are left untouched by renormalisation, which keeps
/// stabilisation idempotent (uniform `1/N` weights stay bitwise `1/N`).
const RENORMALIZE_SKIP: f64 = 1e-12;

/// Largest spread of scaled logits `s_i / τ` below the maximum. Keeps every
/// softmax weight strictly inside `(0, 1)` in `f64`.
pub const MAX_LOGIT_GAP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StabilizationMode {
    /// Clamp at zero, then divide by the sum.
    #[default]
    Renormalize,
    /// `k = softmax(s / τ)` over internal logits `s`.
    Softmax { temperature: f64 },
}

/// Importance weights plus the optional smoothing coefficient α and floor ε.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    k: Vec<f64>,
    logits: Option<Vec<f64>>,
    mode: StabilizationMode,
    smoothing: Option<f64>,
    floor: Option<f64>,
}

impl ImportanceWeights {
    /// `k_i = 1/N` for every client.
    pub fn uniform(n: usize, mode: StabilizationMode) -> Result<Self> {
        if n == 0 {
            return Err(FlError::config("importance weights need at least one client"));
        }
        if let StabilizationMode::Softmax { temperature } = mode {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(FlError::config(format!(
                    "meta.temperature = {temperature} is out of range; accepted (0, inf)"
                )));
            }
        }
        let logits = matches!(mode, StabilizationMode::Softmax { .. }).then(|| vec![0.0; n]);
        Ok(Self {
            k: vec![1.0 / n as f64; n],
            logits,
            mode,
            smoothing: None,
            floor: None,
        })
    }

    /// Weights with an explicit `k`; softmax logits are set to `τ ln k`.
    pub fn from_k(k: Vec<f64>, mode: StabilizationMode) -> Result<Self> {
        let mut w = Self::uniform(k.len(), mode)?;
        if k.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(FlError::config("importance weights must be finite and non-negative"));
        }
        w.k = k;
        w.sync_logits();
        Ok(w)
    }

    /// Enables exponential smoothing with coefficient α and/or a floor ε.
    pub fn with_smoothing(mut self, alpha: Option<f64>, floor: Option<f64>) -> Result<Self> {
        if let Some(a) = alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(FlError::config(format!(
                    "meta.smoothing = {a} is out of range; accepted [0, 1]"
                )));
            }
        }
        if let Some(e) = floor {
            check_floor(e, self.k.len())?;
        }
        self.smoothing = alpha;
        self.floor = floor;
        Ok(self)
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn logits(&self) -> Option<&[f64]> {
        self.logits.as_deref()
    }

    pub fn mode(&self) -> StabilizationMode {
        self.mode
    }

    pub fn smoothing(&self) -> Option<f64> {
        self.smoothing
    }

    pub fn floor(&self) -> Option<f64> {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    /// Every `k_i ∈ [0, 1]` and `|Σ k − 1| ≤ tol`.
    pub fn on_simplex(&self, tol: f64) -> bool {
        self.k.iter().all(|v| (0.0..=1.0).contains(v)) && (self.k.iter().sum::<f64>() - 1.0).abs() <= tol
    }

    fn sync_logits(&mut self) {
        if let StabilizationMode::Softmax { temperature } = self.mode {
            self.logits = Some(self.k.iter().map(|v| temperature * v.ln()).collect());
            self.k = softmax_k(self.logits.as_mut().unwrap(), temperature);
        }
    }

    /// Weights of the clients at `positions`, renormalised over that subset.
    pub fn restricted(&self, positions: &[usize]) -> ImportanceWeights {
        let mut sub = ImportanceWeights {
            k: positions.iter().map(|&p| self.k[p]).collect(),
            logits: self.logits.as_ref().map(|s| positions.iter().map(|&p| s[p]).collect()),
            mode: self.mode,
            smoothing: self.smoothing,
            floor: self.floor,
        };
        if positions.len() == self.k.len() && positions.iter().enumerate().all(|(i, &p)| i == p) {
            return sub;
        }
        // the floor only makes sense relative to the subset size
        if let Some(e) = sub.floor {
            if e * positions.len() as f64 >= 1.0 {
                sub.floor = None;
            }
        }
        stabilize(sub).0
    }

    /// Writes subset weights back, keeping absent clients' weights and the
    /// subset's total mass.
    pub fn merge_subset(&mut self, positions: &[usize], sub: &ImportanceWeights) {
        if positions.len() == self.k.len() && positions.iter().enumerate().all(|(i, &p)| i == p) {
            self.k = sub.k.clone();
            self.logits = sub.logits.clone();
            return;
        }
        let mass: f64 = positions.iter().map(|&p| self.k[p]).sum();
        let mass = if mass > 0.0 {
            mass
        } else {
            positions.len() as f64 / self.k.len() as f64
        };
        for (&p, &v) in positions.iter().zip(&sub.k) {
            self.k[p] = v * mass;
        }
        let total: f64 = self.k.iter().sum();
        self.k.iter_mut().for_each(|v| *v /= total);
        self.sync_logits();
    }
}

fn check_floor(eps: f64, n: usize) -> Result<()> {
    if !(eps >= 0.0 && eps * (n as f64) < 1.0) {
        return Err(FlError::config(format!(
            "meta.floor = {eps} is out of range; accepted [0, 1/N) with N = {n}"
        )));
    }
    Ok(())
}

/// Clamps the logit spread, then `softmax(s / τ)` with max subtraction.
fn softmax_k(logits: &mut [f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lowest = max - MAX_LOGIT_GAP * temperature;
    for s in logits.iter_mut() {
        *s = s.max(lowest);
    }
    let exps: Vec<f64> = logits.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    /// Meta learning rate η.
    pub eta: f64,
    pub meta_steps: usize,
    /// Re-form the round's global model with the updated weights.
    pub re_aggregate_after_update: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            meta_steps: 1,
            re_aggregate_after_update: false,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(FlError::config(format!(
                "meta.eta = {} is out of range; accepted [0, inf)",
                self.eta
            )));
        }
        if self.meta_steps == 0 {
            return Err(FlError::config("meta.steps = 0 is out of range; accepted [1, inf)"));
        }
        Ok(())
    }
}

/// `g_i = ∂L/∂k_i`, one entry per client in update order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGradient {
    pub g: Vec<f64>,
}

/// `Σ k_i ω_i`.
pub fn aggregate_weighted(updates: &[ClientUpdate], weights: &ImportanceWeights) -> Result<ParamVector> {
    let len = crate::aggregators::check_round(updates)?;
    if updates.len() != weights.len() {
        return Err(FlError::Invariant(format!(
            "{} updates but {} importance weights",
            updates.len(),
            weights.len()
        )));
    }
    let sum: f64 = weights.k.iter().sum();
    if (sum - 1.0).abs() > AGGREGATE_SUM_TOLERANCE {
        return Err(FlError::Invariant(format!(
            "importance weights sum to {sum}, not 1; stabilize before aggregating"
        )));
    }
    Ok(weighted_sum(updates.iter().map(|u| u.params.as_slice()), &weights.k, len))
}

/// Validation loss of `aggregated` and its gradient with respect to every
/// client's importance weight. `aggregated` must equal `Σ k_i ω_i`.
pub fn meta_gradient(
    updates: &[ClientUpdate],
    aggregated: &ParamVector,
    arch: &MlpArchitecture,
    metaval: &LabeledDataset,
) -> Result<(f64, MetaGradient)> {
    if metaval.is_empty() {
        return Err(FlError::config("meta-validation set is empty"));
    }
    let (loss, grad) = backward(aggregated, arch, metaval.features(), metaval.labels())?;
    let g: Vec<f64> = updates.iter().map(|u| dot(&grad, &u.params)).collect();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(FlError::Numeric("non-finite meta-gradient".into()));
    }
    Ok((loss, MetaGradient { g }))
}

/// One raw meta-gradient step (before stabilisation).
///
/// Renormalize mode: `k_i ← max(0, k_i − η g_i)`. Softmax mode: the gradient
/// is pulled back through the softmax Jacobian,
/// `g'_i = k_i (g_i − Σ_j k_j g_j) / τ`, and `s_i ← s_i − η g'_i`.
pub fn update_weights(weights: &ImportanceWeights, grad: &MetaGradient, config: &MetaConfig) -> ImportanceWeights {
    let mut out = weights.clone();
    let eta = config.eta;
    if eta == 0.0 {
        return out;
    }
    match weights.mode {
        StabilizationMode::Renormalize => {
            for (k, g) in out.k.iter_mut().zip(&grad.g) {
                *k = (*k - eta * g).max(0.0);
            }
        }
        StabilizationMode::Softmax { temperature } => {
            let mean_g = dot(&weights.k, &grad.g);
            let logits = out.logits.get_or_insert_with(|| vec![0.0; weights.k.len()]);
            for ((s, k), g) in logits.iter_mut().zip(&weights.k).zip(&grad.g) {
                *s -= eta * k * (g - mean_g) / temperature;
            }
        }
    }
    out
}

/// Emitted when every weight was clamped to zero and the round fell back to uniform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegenerateReset;

/// Projects raw weights back onto the simplex.
pub fn stabilize(mut raw: ImportanceWeights) -> (ImportanceWeights, Option<DegenerateReset>) {
    let n = raw.k.len();
    match raw.mode {
        StabilizationMode::Renormalize => {
            raw.k.iter_mut().for_each(|v| {
                if !v.is_finite() || *v < 0.0 {
                    *v = 0.0;
                }
            });
            let sum: f64 = raw.k.iter().sum();
            if !(sum > 0.0) {
                log::warn!("all {n} importance weights reached zero; resetting to uniform");
                raw.k = vec![1.0 / n as f64; n];
                return (raw, Some(DegenerateReset));
            }
            if (sum - 1.0).abs() > RENORMALIZE_SKIP {
                raw.k.iter_mut().for_each(|v| *v = (*v / sum).min(1.0));
            }
        }
        StabilizationMode::Softmax { temperature } => {
            let logits = raw.logits.get_or_insert_with(|| vec![0.0; n]);
            raw.k = softmax_k(logits, temperature);
        }
    }
    (raw, None)
}

/// Clips to `[eps, 1]` and rescales the unclipped entries until the vector
/// sums to one with every entry at least `eps`.
fn floor_project(k: &mut [f64], eps: f64) {
    let n = k.len();
    let mut pinned = vec![false; n];
    for v in k.iter_mut() {
        *v = v.clamp(eps, 1.0);
    }
    for _ in 0..=n {
        let pinned_count = pinned.iter().filter(|&&p| p).count();
        let free_sum: f64 = k.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(v, _)| v).sum();
        let target = 1.0 - eps * pinned_count as f64;
        if (free_sum - target).abs() <= RENORMALIZE_SKIP {
            break;
        }
        let scale = target / free_sum;
        let mut changed = false;
        for (v, p) in k.iter_mut().zip(pinned.iter_mut()) {
            if *p {
                continue;
            }
            *v *= scale;
            if *v < eps {
                *v = eps;
                *p = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Blends `α · previous + (1 − α) · new`, clips to `[ε, 1]` and renormalises.
pub fn smooth_and_clip(
    previous: &ImportanceWeights,
    new: ImportanceWeights,
    alpha: f64,
    eps: f64,
) -> Result<ImportanceWeights> {
    if previous.len() != new.len() {
        return Err(FlError::Invariant("smoothing across different client sets".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(FlError::config(format!(
            "meta.smoothing = {alpha} is out of range; accepted [0, 1]"
        )));
    }
    check_floor(eps, new.len())?;
    let mut out = new;
    for (k, p) in out.k.iter_mut().zip(&previous.k) {
        *k = alpha * p + (1.0 - alpha) * *k;
    }
    floor_project(&mut out.k, eps);
    out.sync_logits();
    Ok(out)
}

/// Result of one server-side meta round.
#[derive(Debug, Clone)]
pub struct MetaRound {
    /// The round's global model.
    pub model: ParamVector,
    /// Weights for the next round, in update order.
    pub weights: ImportanceWeights,
    /// Validation loss of the aggregate formed with the incoming weights.
    pub meta_loss: f64,
    pub gradient: MetaGradient,
    pub resets: usize,
}

/// Aggregates with the incoming weights, then runs `meta_steps` meta-gradient
/// steps with stabilisation (and optional smoothing/floor). The returned model
/// is the first aggregate unless `re_aggregate_after_update` is set.
pub fn meta_round(
    updates: &[ClientUpdate],
    weights: &ImportanceWeights,
    config: &MetaConfig,
    arch: &MlpArchitecture,
    metaval: &LabeledDataset,
) -> Result<MetaRound> {
    config.validate()?;
    let first = aggregate_weighted(updates, weights)?;
    let mut k = weights.clone();
    let mut aggregated = first.clone();
    let mut meta_loss = None;
    let mut gradient = None;
    let mut resets = 0;
    for step in 0..config.meta_steps {
        if step > 0 {
            aggregated = aggregate_weighted(updates, &k)?;
        }
        let (loss, g) = meta_gradient(updates, &aggregated, arch, metaval)?;
        meta_loss.get_or_insert(loss);
        let (mut next, reset) = stabilize(update_weights(&k, &g, config));
        resets += usize::from(reset.is_some());
        if next.smoothing.is_some() || next.floor.is_some() {
            let alpha = next.smoothing.unwrap_or(0.0);
            let eps = next.floor.unwrap_or(0.0);
            next = smooth_and_clip(&k, next, alpha, eps)?;
        }
        k = next;
        gradient = Some(g);
    }
    let model = if config.re_aggregate_after_update {
        aggregate_weighted(updates, &k)?
    } else {
        first
    };
    Ok(MetaRound {
        model,
        weights: k,
        meta_loss: meta_loss.expect("meta_steps >= 1"),
        gradient: gradient.expect("meta_steps >= 1"),
        resets,
    })
}
