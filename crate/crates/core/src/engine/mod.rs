//! Round-based orchestration of one experiment: broadcast, local training,
//! attacks, aggregation (with the meta-layer for `fedaot`), evaluation and
//! per-round records.

mod config;

use std::collections::BTreeSet;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::Serialize;

pub use config::{
    defaults, AttackConfig, AttackName, DatasetSource, FederationConfig, MetaSettings, ModeName, ModelConfig,
    PartitionConfig, PartitionKind, SweepSettings,
};

use crate::aggregators::{
    fedavg, foolsgold, geomed, geomed_weights, krum_select, trimmed_mean_with_usage, AggregatorChoice, FoolsGoldState,
};
use crate::client::{local_train, ClientState, ClientUpdate};
use crate::data::{flip_labels, load_idx, partition, select_attackers, stratified_split, synth_blobs, AttackKind, LabeledDataset};
use crate::meta::{meta_round, ImportanceWeights};
use crate::nn::{backward, evaluate, MlpArchitecture};
use crate::seed::{derive_seed, derived_rng, stream};
use crate::tensor::ParamVector;
use crate::{FlError, Result};

/// Metrics of one communication round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Validation loss on the meta-validation set of the model that was aggregated.
    pub meta_loss: f64,
    /// Per-client weights after the round (all clients, simplex).
    pub k: Vec<f64>,
    pub malicious: Vec<bool>,
    pub participants: Vec<usize>,
    pub wall_time_secs: f64,
    /// Bitwise fingerprint of the round's global model.
    pub model_digest: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub config: FederationConfig,
    pub attackers: Vec<usize>,
    pub records: Vec<RoundRecord>,
    pub final_accuracy: f64,
    pub final_f1: f64,
    /// Per round: (mean k over honest clients, mean k over malicious clients).
    /// A side with no clients reports `NaN`.
    pub mean_k_trajectory: Vec<(f64, f64)>,
    pub degenerate_resets: usize,
    #[serde(skip)]
    pub final_params: ParamVector,
}

/// Datasets and model shape prepared from a config.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub pool: LabeledDataset,
    pub metaval: LabeledDataset,
    /// Held-out candidates for per-round metaval resampling.
    pub metaval_reserve: Option<LabeledDataset>,
    pub test: LabeledDataset,
    pub arch: MlpArchitecture,
}

fn split_off(dataset: &LabeledDataset, fraction: f64, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let per_class = dataset
        .class_histogram()
        .iter()
        .map(|&c| (c as f64 * fraction).round() as usize)
        .max()
        .unwrap_or(0);
    let (held, rest) = stratified_split(dataset, per_class, seed);
    (dataset.subset(&rest), dataset.subset(&held))
}

/// Loads or generates the data and carves out the meta-validation, test and
/// client-training splits.
pub fn prepare_data(config: &FederationConfig) -> Result<PreparedData> {
    let seed = config.seed;
    let (train, test) = match &config.dataset {
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            test_fraction,
            ..
        } => {
            let train = load_idx(train_images, train_labels)?;
            match (test_images, test_labels) {
                (Some(ti), Some(tl)) => (train, load_idx(ti, tl)?),
                _ => split_off(&train, *test_fraction, derive_seed(seed, &[stream::SPLIT, 0])),
            }
        }
        DatasetSource::Synthetic {
            num_classes,
            samples_per_class,
            feature_dim,
            test_fraction,
        } => {
            let all = synth_blobs(*num_classes, *samples_per_class, *feature_dim, derive_seed(seed, &[stream::SYNTH]));
            split_off(&all, *test_fraction, derive_seed(seed, &[stream::SPLIT, 0]))
        }
    };
    if train.feature_dim() != test.feature_dim() {
        return Err(FlError::Input(format!(
            "train has {} features, test has {}",
            train.feature_dim(),
            test.feature_dim()
        )));
    }
    let classes = train.num_classes().max(test.num_classes());
    let train = train.with_num_classes(classes)?;
    let test = test.with_num_classes(classes)?;

    let per_class = (config.metaval_size / classes).max(1);
    let (metaval_idx, rest) = stratified_split(&train, per_class, derive_seed(seed, &[stream::METAVAL]));
    let metaval = train.subset(&metaval_idx);
    let (metaval_reserve, rest) = if config.resample_metaval {
        let rest_ds = train.subset(&rest);
        let (extra, remaining) = stratified_split(&rest_ds, per_class, derive_seed(seed, &[stream::METAVAL, 1]));
        let reserve_idx: Vec<usize> = metaval_idx.iter().copied().chain(extra.iter().map(|&i| rest[i])).collect();
        (Some(train.subset(&reserve_idx)), remaining.iter().map(|&i| rest[i]).collect())
    } else {
        (None, rest)
    };
    let mut pool_idx = rest;
    if let DatasetSource::Idx {
        max_train_samples: Some(cap),
        ..
    } = &config.dataset
    {
        if pool_idx.len() > *cap {
            use rand::seq::SliceRandom;
            pool_idx.shuffle(&mut derived_rng(seed, &[stream::SPLIT, 1]));
            pool_idx.truncate(*cap);
            pool_idx.sort_unstable();
        }
    }
    let pool = train.subset(&pool_idx);

    let mut sizes = vec![train.feature_dim()];
    sizes.extend_from_slice(&config.model.hidden_layers);
    sizes.push(classes);
    Ok(PreparedData {
        pool,
        metaval,
        metaval_reserve,
        test,
        arch: MlpArchitecture::new(sizes)?,
    })
}

/// Runs the experiment on the ambient thread pool.
pub fn run_experiment(config: &FederationConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let data = prepare_data(config)?;
    run_prepared(config, &data)
}

/// Runs the experiment on a dedicated pool of `threads` workers. Results are
/// identical for every thread count.
#[cfg(feature = "parallel")]
pub fn run_experiment_with_threads(config: &FederationConfig, threads: usize) -> Result<ExperimentResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| FlError::config(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(config))
}

struct Timer {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Timer {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn secs(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

fn train_round(
    states: &mut [ClientState],
    participants: &BTreeSet<usize>,
    global: &ParamVector,
    arch: &MlpArchitecture,
    config: &FederationConfig,
    round: usize,
) -> Result<Vec<ClientUpdate>> {
    let job = |state: &mut ClientState| {
        let seed = derive_seed(config.seed, &[stream::CLIENT, state.client_id as u64, round as u64]);
        local_train(global, state, arch, &config.local, seed)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<ClientUpdate>> = states
        .par_iter_mut()
        .filter(|s| participants.contains(&s.client_id))
        .map(job)
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<ClientUpdate>> = states
        .iter_mut()
        .filter(|s| participants.contains(&s.client_id))
        .map(job)
        .collect();
    results.into_iter().collect()
}

fn select_participants(config: &FederationConfig, round: usize) -> BTreeSet<usize> {
    let n = config.num_clients;
    let m = config.participants_per_round();
    if m >= n {
        return (0..n).collect();
    }
    let mut rng = derived_rng(config.seed, &[stream::PARTICIPATION, round as u64]);
    rand::seq::index::sample(&mut rng, n, m).into_iter().collect()
}

fn mean_or_nan(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Runs an experiment on already prepared data.
pub fn run_prepared(config: &FederationConfig, data: &PreparedData) -> Result<ExperimentResult> {
    config.validate()?;
    let n = config.num_clients;
    let arch = &data.arch;
    let attack = config.attack.spec();
    let attackers = if attack.kind == AttackKind::None {
        BTreeSet::new()
    } else {
        select_attackers(n, attack.attacker_fraction, derive_seed(config.seed, &[stream::ATTACKERS]))
    };
    let malicious: Vec<bool> = (0..n).map(|i| attackers.contains(&i)).collect();
    let plan = partition(&data.pool, n, config.partition.scheme(), derive_seed(config.seed, &[stream::PARTITION]))?;
    let mut states: Vec<ClientState> = plan
        .assignments
        .iter()
        .enumerate()
        .map(|(i, idx)| {
            let shard = data.pool.subset(idx);
            let shard = if malicious[i] && attack.kind == AttackKind::LabelFlip {
                flip_labels(&shard)
            } else {
                shard
            };
            ClientState::new(i, shard, malicious[i], attack)
        })
        .collect();

    let mut global = arch.init_params(derive_seed(config.seed, &[stream::INIT]));
    let mut weights = ImportanceWeights::uniform(n, config.meta.mode())?.with_smoothing(config.meta.smoothing, config.meta.floor)?;
    let mut fools_state = FoolsGoldState::default();
    let meta_cfg = config.meta.meta_config();
    let mut records = Vec::with_capacity(config.rounds);
    let mut trajectory = Vec::with_capacity(config.rounds);
    let mut resets = 0;

    for round in 1..=config.rounds {
        let timer = Timer::start();
        let mut step = || -> Result<(ParamVector, f64, Vec<f64>, Vec<usize>)> {
            let participants = select_participants(config, round);
            let positions: Vec<usize> = participants.iter().copied().collect();
            let updates = train_round(&mut states, &participants, &global, arch, config, round)?;
            let metaval = match &data.metaval_reserve {
                Some(reserve) => {
                    let per_class = (config.metaval_size / reserve.num_classes()).max(1);
                    let (idx, _) = stratified_split(
                        reserve,
                        per_class,
                        derive_seed(config.seed, &[stream::METAVAL, 2, round as u64]),
                    );
                    std::borrow::Cow::Owned(reserve.subset(&idx))
                }
                None => std::borrow::Cow::Borrowed(&data.metaval),
            };

            let mut snapshot = vec![0.0; n];
            let (model, meta_loss) = match config.aggregator {
                AggregatorChoice::FedAot => {
                    let sub = weights.restricted(&positions);
                    let out = meta_round(&updates, &sub, &meta_cfg, arch, &metaval)?;
                    weights.merge_subset(&positions, &out.weights);
                    resets += out.resets;
                    snapshot.copy_from_slice(weights.k());
                    (out.model, out.meta_loss)
                }
                other => {
                    let (model, coeffs) = match other {
                        AggregatorChoice::FedAvg => {
                            let total: usize = updates.iter().map(|u| u.num_samples).sum();
                            let c = updates
                                .iter()
                                .map(|u| u.num_samples as f64 / total.max(1) as f64)
                                .collect();
                            (fedavg(&updates)?, c)
                        }
                        AggregatorChoice::GeoMed => {
                            let z = geomed(&updates, config.geomed)?;
                            let c = geomed_weights(&z, &updates);
                            (z, c)
                        }
                        AggregatorChoice::TrimmedMean { trim_count } => trimmed_mean_with_usage(&updates, trim_count)?,
                        AggregatorChoice::Krum { assumed_attackers } => {
                            let i = krum_select(&updates, assumed_attackers)?;
                            let mut c = vec![0.0; updates.len()];
                            c[i] = 1.0;
                            (updates[i].params.clone(), c)
                        }
                        AggregatorChoice::FoolsGold => {
                            let (m, w) = foolsgold(&updates, &global, &mut fools_state, config.foolsgold)?;
                            let total: f64 = w.iter().sum();
                            let c = if total > 0.0 {
                                w.iter().map(|v| v / total).collect()
                            } else {
                                vec![1.0 / w.len() as f64; w.len()]
                            };
                            (m, c)
                        }
                        AggregatorChoice::FedAot => unreachable!(),
                    };
                    for (&p, c) in positions.iter().zip(coeffs) {
                        snapshot[p] = c;
                    }
                    let (loss, _) = backward(&model, arch, metaval.features(), metaval.labels())?;
                    (model, loss)
                }
            };
            if !model.is_finite() {
                return Err(FlError::Numeric("aggregated model is not finite".into()));
            }
            Ok((model, meta_loss, snapshot, positions))
        };
        let (model, meta_loss, snapshot, positions) = step().map_err(|e| e.in_round(round))?;
        global = model;
        let eval = evaluate(&global, arch, &data.test).map_err(|e| e.in_round(round))?;
        trajectory.push((
            mean_or_nan(snapshot.iter().zip(&malicious).filter(|(_, &m)| !m).map(|(k, _)| *k)),
            mean_or_nan(snapshot.iter().zip(&malicious).filter(|(_, &m)| m).map(|(k, _)| *k)),
        ));
        records.push(RoundRecord {
            round,
            accuracy: eval.accuracy,
            macro_f1: eval.macro_f1,
            meta_loss,
            k: snapshot,
            malicious: malicious.clone(),
            participants: positions,
            wall_time_secs: timer.secs(),
            model_digest: global.digest(),
        });
        log::debug!(
            "round {round}: accuracy {:.4} f1 {:.4} meta-loss {:.4}",
            eval.accuracy,
            eval.macro_f1,
            meta_loss
        );
    }

    let (final_accuracy, final_f1) = match records.last() {
        Some(r) => (r.accuracy, r.macro_f1),
        None => {
            let eval = evaluate(&global, arch, &data.test)?;
            (eval.accuracy, eval.macro_f1)
        }
    };
    Ok(ExperimentResult {
        config: config.clone(),
        attackers: attackers.into_iter().collect(),
        records,
        final_accuracy,
        final_f1,
        mean_k_trajectory: trajectory,
        degenerate_resets: resets,
        final_params: global,
    })
}

/// One experiment of a sweep.
#[derive(Debug)]
pub struct SweepOutcome {
    pub fraction: f64,
    /// Attack intensity label such as `A50`.
    pub label: String,
    pub seed: u64,
    pub result: Result<ExperimentResult>,
}

pub fn intensity_label(fraction: f64) -> String {
    format!("A{}", (fraction * 100.0).round() as i64)
}

/// The config used for sweep entry `index` at attack fraction `fraction`.
pub fn sweep_config(base: &FederationConfig, index: usize, fraction: f64) -> FederationConfig {
    let mut cfg = base.clone();
    cfg.attack.fraction = fraction;
    cfg.seed = derive_seed(base.seed, &[stream::SWEEP, index as u64]);
    cfg
}

/// One experiment per attack fraction, in input order. A failing entry is
/// reported in its outcome and the sweep continues.
pub fn run_sweep(base: &FederationConfig, fractions: &[f64]) -> Vec<SweepOutcome> {
    fractions
        .iter()
        .enumerate()
        .map(|(i, &fraction)| {
            let cfg = sweep_config(base, i, fraction);
            let result = run_experiment(&cfg);
            if let Err(e) = &result {
                log::error!("{} at {} failed: {e}", base.aggregator, intensity_label(fraction));
            }
            SweepOutcome {
                fraction,
                label: intensity_label(fraction),
                seed: cfg.seed,
                result,
            }
        })
        .collect()
}
