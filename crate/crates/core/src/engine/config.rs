use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::aggregators::{AggregatorChoice, FoolsGoldParams, GeoMedParams};
use crate::client::LocalTrainConfig;
use crate::data::{AttackKind, AttackSpec, PartitionScheme};
use crate::meta::{MetaConfig, StabilizationMode};
use crate::{FlError, Result};

/// Complete declarative description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::num_clients")]
    pub num_clients: usize,
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    /// Fraction of clients sampled each round, in (0, 1].
    #[serde(default = "defaults::clients_per_round")]
    pub clients_per_round: f64,
    pub aggregator: AggregatorChoice,
    pub dataset: DatasetSource,
    /// Size of the server's held-out meta-validation set (stratified).
    #[serde(default = "defaults::metaval_size")]
    pub metaval_size: usize,
    /// Draw a fresh meta-validation sample every round from a held-out
    /// reserve twice `metaval_size`.
    #[serde(default)]
    pub resample_metaval: bool,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub local: LocalTrainConfig,
    #[serde(default)]
    pub meta: MetaSettings,
    #[serde(default)]
    pub foolsgold: FoolsGoldParams,
    #[serde(default)]
    pub geomed: GeoMedParams,
    #[serde(default)]
    pub sweep: SweepSettings,
}

pub mod defaults {
    pub fn seed() -> u64 {
        42
    }
    pub fn num_clients() -> usize {
        20
    }
    pub fn rounds() -> usize {
        30
    }
    pub fn clients_per_round() -> f64 {
        1.0
    }
    pub fn metaval_size() -> usize {
        500
    }
    pub fn hidden_layers() -> Vec<usize> {
        vec![128, 64]
    }
    pub fn beta() -> f64 {
        0.5
    }
    pub fn sigma() -> f64 {
        1.0
    }
    pub fn temperature() -> f64 {
        1.0
    }
    pub fn test_fraction() -> f64 {
        0.2
    }
    pub fn num_classes() -> usize {
        10
    }
    pub fn samples_per_class() -> usize {
        200
    }
    pub fn feature_dim() -> usize {
        20
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// IDX image/label files (plain or gzip). Without test files, a
    /// stratified `test_fraction` of the training file is held out.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        /// Cap on the client training pool after the meta-validation draw.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_train_samples: Option<usize>,
        #[serde(default = "defaults::test_fraction")]
        test_fraction: f64,
    },
    /// Gaussian blobs; a stratified `test_fraction` is held out for testing.
    Synthetic {
        #[serde(default = "defaults::num_classes")]
        num_classes: usize,
        #[serde(default = "defaults::samples_per_class")]
        samples_per_class: usize,
        #[serde(default = "defaults::feature_dim")]
        feature_dim: usize,
        #[serde(default = "defaults::test_fraction")]
        test_fraction: f64,
    },
}

impl DatasetSource {
    /// Resolves relative IDX paths against `base`.
    pub fn resolve_paths(&mut self, base: &std::path::Path) {
        if let DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = self
        {
            for p in [train_images, train_labels].into_iter().chain(test_images.iter_mut()).chain(test_labels.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden widths; input and output sizes come from the dataset.
    pub hidden_layers: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_layers: defaults::hidden_layers(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    #[default]
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub scheme: PartitionKind,
    /// Dirichlet concentration; ignored for IID.
    pub beta: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            scheme: PartitionKind::Iid,
            beta: defaults::beta(),
        }
    }
}

impl PartitionConfig {
    pub fn scheme(&self) -> PartitionScheme {
        match self.scheme {
            PartitionKind::Iid => PartitionScheme::Iid,
            PartitionKind::Dirichlet => PartitionScheme::Dirichlet { beta: self.beta },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttackName {
    #[default]
    None,
    LabelFlip,
    GaussianNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub kind: AttackName,
    /// Fraction ρ of Byzantine clients.
    pub fraction: f64,
    /// Noise standard deviation for `gaussian_noise`.
    pub sigma: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackName::None,
            fraction: 0.0,
            sigma: defaults::sigma(),
        }
    }
}

impl AttackConfig {
    pub fn spec(&self) -> AttackSpec {
        let kind = match self.kind {
            AttackName::None => AttackKind::None,
            AttackName::LabelFlip => AttackKind::LabelFlip,
            AttackName::GaussianNoise => AttackKind::GaussianNoise { sigma: self.sigma },
        };
        AttackSpec {
            kind,
            attacker_fraction: self.fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Renormalize,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaSettings {
    pub eta: f64,
    pub steps: usize,
    pub mode: ModeName,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    pub re_aggregate: bool,
}

impl Default for MetaSettings {
    fn default() -> Self {
        let m = MetaConfig::default();
        Self {
            eta: m.eta,
            steps: m.meta_steps,
            mode: ModeName::Renormalize,
            temperature: defaults::temperature(),
            smoothing: None,
            floor: None,
            re_aggregate: m.re_aggregate_after_update,
        }
    }
}

impl MetaSettings {
    pub fn meta_config(&self) -> MetaConfig {
        MetaConfig {
            eta: self.eta,
            meta_steps: self.steps,
            re_aggregate_after_update: self.re_aggregate,
        }
    }

    pub fn mode(&self) -> StabilizationMode {
        match self.mode {
            ModeName::Renormalize => StabilizationMode::Renormalize,
            ModeName::Softmax => StabilizationMode::Softmax {
                temperature: self.temperature,
            },
        }
    }
}

/// Defaults for the `sweep` command; the CLI may override both lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub fractions: Vec<f64>,
    pub aggregators: Vec<AggregatorChoice>,
}

fn range_error(key: &str, value: impl std::fmt::Display, accepted: &str) -> FlError {
    FlError::Config(format!("{key} = {value} is out of range; accepted {accepted}"))
}

impl FederationConfig {
    /// A config with every default applied.
    pub fn new(aggregator: AggregatorChoice, dataset: DatasetSource) -> Self {
        Self {
            seed: defaults::seed(),
            num_clients: defaults::num_clients(),
            rounds: defaults::rounds(),
            clients_per_round: defaults::clients_per_round(),
            aggregator,
            dataset,
            metaval_size: defaults::metaval_size(),
            resample_metaval: false,
            model: ModelConfig::default(),
            partition: PartitionConfig::default(),
            attack: AttackConfig::default(),
            local: LocalTrainConfig::default(),
            meta: MetaSettings::default(),
            foolsgold: FoolsGoldParams::default(),
            geomed: GeoMedParams::default(),
            sweep: SweepSettings::default(),
        }
    }

    /// Number of clients that train in each round.
    pub fn participants_per_round(&self) -> usize {
        ((self.clients_per_round * self.num_clients as f64).round() as usize).clamp(1, self.num_clients.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(range_error("num_clients", 0, "[1, inf)"));
        }
        if !(self.clients_per_round > 0.0 && self.clients_per_round <= 1.0) {
            return Err(range_error("clients_per_round", self.clients_per_round, "(0, 1]"));
        }
        if self.metaval_size == 0 {
            return Err(range_error("metaval_size", 0, "[1, inf)"));
        }
        if self.model.hidden_layers.contains(&0) {
            return Err(FlError::Config(format!(
                "model.hidden_layers = {:?} contains a zero width; accepted widths [1, inf)",
                self.model.hidden_layers
            )));
        }
        if self.partition.scheme == PartitionKind::Dirichlet && !(self.partition.beta > 0.0 && self.partition.beta.is_finite()) {
            return Err(range_error("partition.beta", self.partition.beta, "(0, inf)"));
        }
        if !(0.0..=1.0).contains(&self.attack.fraction) {
            return Err(range_error("attack.fraction", self.attack.fraction, "[0, 1]"));
        }
        if self.attack.kind == AttackName::GaussianNoise && !(self.attack.sigma > 0.0 && self.attack.sigma.is_finite()) {
            return Err(range_error("attack.sigma", self.attack.sigma, "(0, inf)"));
        }
        if self.local.batch_size == 0 {
            return Err(range_error("local.batch_size", 0, "[1, inf)"));
        }
        if !(self.local.lr > 0.0 && self.local.lr.is_finite()) {
            return Err(range_error("local.lr", self.local.lr, "(0, inf)"));
        }
        if !(self.meta.eta >= 0.0 && self.meta.eta.is_finite()) {
            return Err(range_error("meta.eta", self.meta.eta, "[0, inf)"));
        }
        if self.meta.steps == 0 {
            return Err(range_error("meta.steps", 0, "[1, inf)"));
        }
        if !(self.meta.temperature > 0.0 && self.meta.temperature.is_finite()) {
            return Err(range_error("meta.temperature", self.meta.temperature, "(0, inf)"));
        }
        if let Some(a) = self.meta.smoothing {
            if !(0.0..=1.0).contains(&a) {
                return Err(range_error("meta.smoothing", a, "[0, 1]"));
            }
        }
        if let Some(e) = self.meta.floor {
            let n = self.participants_per_round() as f64;
            if !(e >= 0.0 && e * n < 1.0) {
                return Err(range_error("meta.floor", e, &format!("[0, 1/{n})")));
            }
        }
        if self.geomed.max_iters == 0 {
            return Err(range_error("geomed.max_iters", 0, "[1, inf)"));
        }
        if !(self.geomed.tol > 0.0) {
            return Err(range_error("geomed.tol", self.geomed.tol, "(0, inf)"));
        }
        if !self.foolsgold.confidence.is_finite() || !self.foolsgold.logit_offset.is_finite() {
            return Err(FlError::config("foolsgold constants must be finite"));
        }
        match &self.dataset {
            DatasetSource::Idx {
                test_images,
                test_labels,
                test_fraction,
                max_train_samples,
                ..
            } => {
                if test_images.is_some() != test_labels.is_some() {
                    return Err(FlError::config(
                        "dataset.test_images and dataset.test_labels must be given together",
                    ));
                }
                if test_images.is_none() && !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(range_error("dataset.test_fraction", test_fraction, "(0, 1)"));
                }
                if *max_train_samples == Some(0) {
                    return Err(range_error("dataset.max_train_samples", 0, "[1, inf)"));
                }
            }
            DatasetSource::Synthetic {
                num_classes,
                samples_per_class,
                feature_dim,
                test_fraction,
            } => {
                if *num_classes < 2 {
                    return Err(range_error("dataset.num_classes", num_classes, "[2, inf)"));
                }
                if *samples_per_class == 0 {
                    return Err(range_error("dataset.samples_per_class", 0, "[1, inf)"));
                }
                if *feature_dim == 0 {
                    return Err(range_error("dataset.feature_dim", 0, "[1, inf)"));
                }
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(range_error("dataset.test_fraction", test_fraction, "(0, 1)"));
                }
            }
        }
        for &f in &self.sweep.fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err(range_error("sweep.fractions", f, "[0, 1]"));
            }
        }
        self.aggregator.validate_for(self.participants_per_round())
    }
}
