use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::seed::rng_from;
use crate::{FlError, Result};

const MAX_DIRICHLET_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PartitionScheme {
    Iid,
    Dirichlet { beta: f64 },
}

/// Disjoint per-client sample indices into the partitioned pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
    pub scheme: PartitionScheme,
}

impl PartitionPlan {
    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }
}

/// Splits `dataset` across `num_clients` clients.
///
/// IID shuffles and deals equal shares (the first `n % N` clients get one
/// extra sample). Dirichlet(β) splits every class across clients with
/// proportions drawn from a symmetric Dirichlet, redrawing until no client
/// is empty.
pub fn partition(
    dataset: &LabeledDataset,
    num_clients: usize,
    scheme: PartitionScheme,
    seed: u64,
) -> Result<PartitionPlan> {
    let n = dataset.len();
    if num_clients == 0 || num_clients > n {
        return Err(FlError::config(format!(
            "cannot partition {n} samples across {num_clients} clients"
        )));
    }
    let mut rng = rng_from(seed);
    let assignments = match scheme {
        PartitionScheme::Iid => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let base = n / num_clients;
            let extra = n % num_clients;
            let mut out = Vec::with_capacity(num_clients);
            let mut start = 0;
            for c in 0..num_clients {
                let len = base + usize::from(c < extra);
                let mut shard = idx[start..start + len].to_vec();
                shard.sort_unstable();
                out.push(shard);
                start += len;
            }
            out
        }
        PartitionScheme::Dirichlet { beta } => {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(FlError::config(format!(
                    "partition.beta = {beta} is out of range; accepted (0, inf)"
                )));
            }
            let gamma = Gamma::new(beta, 1.0).map_err(|e| FlError::config(e.to_string()))?;
            let mut by_class = dataset.indices_by_class();
            for class in &mut by_class {
                class.shuffle(&mut rng);
            }
            let mut attempt = 0;
            loop {
                attempt += 1;
                if attempt > MAX_DIRICHLET_ATTEMPTS {
                    return Err(FlError::config(format!(
                        "Dirichlet(beta={beta}) left a client empty in {MAX_DIRICHLET_ATTEMPTS} draws"
                    )));
                }
                let mut out = vec![Vec::new(); num_clients];
                for class in &by_class {
                    let draws: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
                    let total: f64 = draws.iter().sum();
                    if !(total > 0.0) {
                        continue;
                    }
                    // cumulative cut points keep every sample assigned exactly once
                    let mut acc = 0.0;
                    let mut start = 0;
                    for (c, d) in draws.iter().enumerate() {
                        acc += d / total;
                        let end = if c + 1 == num_clients {
                            class.len()
                        } else {
                            ((acc * class.len() as f64).round() as usize).clamp(start, class.len())
                        };
                        out[c].extend_from_slice(&class[start..end]);
                        start = end;
                    }
                }
                if out.iter().all(|s| !s.is_empty()) {
                    for s in &mut out {
                        s.sort_unstable();
                    }
                    break out;
                }
            }
        }
    };
    Ok(PartitionPlan { assignments, scheme })
}

/// Draws `per_class` samples of every class (fewer when a class is short)
/// and returns `(selected, rest)`, both sorted.
pub fn stratified_split(dataset: &LabeledDataset, per_class: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng_from(seed);
    let mut selected = Vec::new();
    let mut rest = Vec::new();
    for mut class in dataset.indices_by_class() {
        class.shuffle(&mut rng);
        let take = per_class.min(class.len());
        selected.extend_from_slice(&class[..take]);
        rest.extend_from_slice(&class[take..]);
    }
    selected.sort_unstable();
    rest.sort_unstable();
    (selected, rest)
}
