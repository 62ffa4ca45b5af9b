//! Local training on one client's shard.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{noise_update, AttackKind, AttackSpec, LabeledDataset};
use crate::nn::{backward, MlpArchitecture};
use crate::seed::{derived_rng, stream};
use crate::tensor::ParamVector;
use crate::{FlError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

/// Adam first/second moments and step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    /// Already poisoned for label-flip attackers.
    pub shard: LabeledDataset,
    pub is_malicious: bool,
    pub attack: AttackSpec,
    pub optimizer: AdamState,
}

impl ClientState {
    pub fn new(client_id: usize, shard: LabeledDataset, is_malicious: bool, attack: AttackSpec) -> Self {
        Self {
            client_id,
            shard,
            is_malicious,
            attack,
            optimizer: AdamState::default(),
        }
    }
}

/// What a client sends to the server: its full locally trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ParamVector,
    pub num_samples: usize,
    /// Mean training loss of each local epoch.
    pub epoch_losses: Vec<f64>,
}

impl ClientUpdate {
    pub fn new(client_id: usize, params: ParamVector, num_samples: usize) -> Self {
        Self {
            client_id,
            params,
            num_samples,
            epoch_losses: Vec::new(),
        }
    }
}

/// Runs Adam from `global` over the client's shard. The optimizer state is
/// reset on entry, so the result depends only on `(global, shard, seed)`.
/// Gaussian-noise attackers perturb their trained parameters before returning.
pub fn local_train(
    global: &ParamVector,
    state: &mut ClientState,
    arch: &MlpArchitecture,
    cfg: &LocalTrainConfig,
    seed: u64,
) -> Result<ClientUpdate> {
    if global.len() != arch.param_count() {
        return Err(FlError::config(format!(
            "global model has {} parameters, architecture needs {}",
            global.len(),
            arch.param_count()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(FlError::config("local.batch_size must be at least 1"));
    }
    let mut params = global.clone();
    state.optimizer = AdamState::new(params.len());
    let n = state.shard.len();
    let mut rng = derived_rng(seed, &[stream::CLIENT]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if n == 0 {
            break;
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = state.shard.features().select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| state.shard.labels()[i]).collect();
            let (loss, grad) = backward(&params, arch, &x, &y).map_err(|e| {
                FlError::Numeric(format!("client {} epoch {epoch}: {e}", state.client_id))
            })?;
            loss_sum += loss * batch.len() as f64;
            state.optimizer.apply(params.as_mut_slice(), &grad, cfg.lr);
        }
        let mean = loss_sum / n as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(FlError::Numeric(format!(
                "client {} epoch {epoch}: non-finite training loss",
                state.client_id
            )));
        }
        epoch_losses.push(mean);
    }

    if state.is_malicious {
        if let AttackKind::GaussianNoise { sigma } = state.attack.kind {
            let mut noise_rng = derived_rng(seed, &[stream::NOISE]);
            params = noise_update(&params, sigma, &mut noise_rng)?;
        }
    }

    Ok(ClientUpdate {
        client_id: state.client_id,
        params,
        num_samples: n,
        epoch_losses,
    })
}
