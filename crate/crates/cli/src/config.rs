//! Strict TOML experiment configs and the frozen defaults reference.

use std::path::Path;

use fedaot_core::engine::FederationConfig;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Every key with its default. Printed by `fedaot defaults`; parsing it yields
/// `FederationConfig::new(fedaot, synthetic)`.
pub const DEFAULTS_REFERENCE: &str = r#"# fedaot experiment config reference. Every key except `aggregator` and
# `[dataset]` is optional; the values below are the defaults.

seed = 42                   # base seed for every random stream
num_clients = 20            # N
rounds = 30                 # T
clients_per_round = 1.0     # participation fraction in (0, 1]
metaval_size = 500          # stratified meta-validation samples (server side)
resample_metaval = false    # redraw the meta-validation set every round

# required: fedavg | geomed | trimmed_mean:<trim> | krum:<f> | foolsgold | fedaot
aggregator = "fedaot"

# required. kind = "idx" takes train_images, train_labels and optionally
# test_images, test_labels, max_train_samples, test_fraction (default 0.2);
# relative paths are resolved against the config file's directory.
[dataset]
kind = "synthetic"
num_classes = 10
samples_per_class = 200
feature_dim = 20
test_fraction = 0.2

[model]
hidden_layers = [128, 64]   # input/output widths come from the dataset

[partition]
scheme = "iid"              # iid | dirichlet
beta = 0.5                  # Dirichlet concentration

[attack]
kind = "none"               # none | label_flip | gaussian_noise
fraction = 0.0              # attacker fraction in [0, 1]
sigma = 1.0                 # gaussian_noise standard deviation

[local]
epochs = 1
batch_size = 32
lr = 0.001                  # Adam; moments reset every round

[meta]
eta = 0.0001                # meta learning rate
steps = 1                   # meta steps per round
mode = "renormalize"        # renormalize | softmax
temperature = 1.0           # softmax temperature
re_aggregate = false        # rebuild the round's model with the updated weights
# smoothing = 0.5           # optional exponential smoothing coefficient in [0, 1]
# floor = 0.01              # optional weight floor in [0, 1/N)

[foolsgold]
confidence = 1.0
logit_offset = 0.5

[geomed]
max_iters = 100
tol = 1e-8

[sweep]
fractions = []              # default for `fedaot sweep` without --fractions
aggregators = []            # default for `fedaot sweep` without --aggregators
"#;

/// Parses and validates a config from TOML text. Errors name the offending key.
pub fn parse_config_str(text: &str) -> Result<FederationConfig, CliError> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(e.to_string().trim().to_string()))?;
    let config: FederationConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        let inner = inner.trim();
        if path == "." || path.is_empty() {
            CliError::Config(inner.to_string())
        } else {
            CliError::Config(format!("{path}: {inner}"))
        }
    })?;
    config.validate()?;
    Ok(config)
}

/// Reads, parses and validates a config file; relative dataset paths are
/// resolved against the file's directory.
pub fn parse_config(path: &Path) -> Result<FederationConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = parse_config_str(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    config.dataset.resolve_paths(base);
    Ok(config)
}

/// TOML form of a config.
pub fn to_toml(config: &FederationConfig) -> Result<String, CliError> {
    toml::to_string(config).map_err(|e| CliError::Config(format!("cannot serialise config: {e}")))
}

/// First 12 hex digits of SHA-256 over the config's canonical JSON.
pub fn config_hash(config: &FederationConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serialises to JSON");
    let digest = Sha256::digest(&json);
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedaot_core::aggregators::AggregatorChoice;
    use fedaot_core::engine::DatasetSource;

    fn synthetic() -> DatasetSource {
        DatasetSource::Synthetic {
            num_classes: 10,
            samples_per_class: 200,
            feature_dim: 20,
            test_fraction: 0.2,
        }
    }

    #[test]
    fn reference_matches_code_defaults() {
        let parsed = parse_config_str(DEFAULTS_REFERENCE).unwrap();
        assert_eq!(parsed, FederationConfig::new(AggregatorChoice::FedAot, synthetic()));
    }

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let c = parse_config_str("aggregator = \"fedavg\"\n[dataset]\nkind = \"synthetic\"\n").unwrap();
        assert_eq!(c.num_clients, 20);
        assert_eq!(c.rounds, 30);
        assert_eq!(c.attack.fraction, 0.0);
        assert_eq!(c.metaval_size, 500);
        assert_eq!(c.model.hidden_layers, vec![128, 64]);
        assert_eq!(c.meta.eta, 1e-4);
        assert_eq!(c.local.lr, 1e-3);
        assert_eq!(c, FederationConfig::new(AggregatorChoice::FedAvg, synthetic()));
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = parse_config_str("aggregator = \"fedavg\"\n[dataset]\nkind = \"synthetic\"\n[meta]\netaa = 1.0\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("meta") && err.contains("etaa"), "{err}");
    }

    #[test]
    fn missing_required_key() {
        let err = parse_config_str("[dataset]\nkind = \"synthetic\"\n").unwrap_err().to_string();
        assert!(err.contains("aggregator"), "{err}");
    }

    #[test]
    fn out_of_range_fraction_names_key_and_range() {
        let err = parse_config_str("aggregator = \"fedavg\"\n[dataset]\nkind = \"synthetic\"\n[attack]\nfraction = 1.5\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("attack.fraction") && err.contains("[0, 1]"), "{err}");
    }

    #[test]
    fn bad_aggregator_string() {
        let err = parse_config_str("aggregator = \"median\"\n[dataset]\nkind = \"synthetic\"\n").unwrap_err().to_string();
        assert!(err.contains("aggregator"), "{err}");
    }

    #[test]
    fn round_trip() {
        let mut c = parse_config_str(DEFAULTS_REFERENCE).unwrap();
        c.aggregator = AggregatorChoice::Krum { assumed_attackers: 3 };
        c.meta.smoothing = Some(0.25);
        c.sweep.fractions = vec![0.2, 0.5];
        let text = to_toml(&c).unwrap();
        assert_eq!(parse_config_str(&text).unwrap(), c);
    }

    #[test]
    fn hash_tracks_semantic_changes() {
        let c = parse_config_str(DEFAULTS_REFERENCE).unwrap();
        let mut d = c.clone();
        assert_eq!(config_hash(&c), config_hash(&d));
        d.meta.eta = 2e-4;
        assert_ne!(config_hash(&c), config_hash(&d));
        assert_eq!(config_hash(&c).len(), 12);
    }
}
