use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::seed::rng_from;
use crate::tensor::ParamVector;
use crate::{FlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    /// Malicious shards are relabelled `(y + 1) mod C` before local training.
    LabelFlip,
    /// Malicious clients add `N(0, sigma²)` noise to their trained parameters.
    GaussianNoise { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub attacker_fraction: f64,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.attacker_fraction) {
            return Err(FlError::config(format!(
                "attack.fraction = {} is out of range; accepted [0, 1]",
                self.attacker_fraction
            )));
        }
        if let AttackKind::GaussianNoise { sigma } = self.kind {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(FlError::config(format!(
                    "attack.sigma = {sigma} is out of range; accepted (0, inf)"
                )));
            }
        }
        Ok(())
    }
}

/// Advances every label by one, modulo the class count.
pub fn flip_labels(dataset: &LabeledDataset) -> LabeledDataset {
    let c = dataset.num_classes();
    dataset.map_labels(|y| (y + 1) % c)
}

/// `honest + ε` with `ε ~ N(0, sigma²)` elementwise.
pub fn noise_update<R: Rng + ?Sized>(honest: &ParamVector, sigma: f64, rng: &mut R) -> Result<ParamVector> {
    let normal = Normal::new(0.0, sigma)
        .ok()
        .filter(|_| sigma > 0.0)
        .ok_or_else(|| FlError::config(format!("noise sigma must be positive, got {sigma}")))?;
    Ok(ParamVector::new(
        honest.iter().map(|&v| v + normal.sample(rng)).collect(),
    ))
}

/// `round(fraction · num_clients)` distinct client indices, uniform under `seed`.
pub fn select_attackers(num_clients: usize, fraction: f64, seed: u64) -> BTreeSet<usize> {
    let fraction = fraction.clamp(0.0, 1.0);
    let count = ((fraction * num_clients as f64).round() as usize).min(num_clients);
    let mut rng = rng_from(seed);
    rand::seq::index::sample(&mut rng, num_clients, count)
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    #[test]
    fn flip_follows_the_cyclic_rule() {
        let ds = synth_blobs(10, 2, 2, 1);
        let flipped = flip_labels(&ds);
        for (a, b) in ds.labels().iter().zip(flipped.labels()) {
            assert_eq!(*b, (a + 1) % 10);
        }
        assert!(flipped.labels().contains(&0));
        assert_eq!(flipped.features(), ds.features());
        let back = (0..10).fold(ds.clone(), |d, _| flip_labels(&d));
        assert_eq!(back, ds);
    }

    #[test]
    fn specific_labels() {
        let ds = LabeledDataset::new(crate::tensor::Matrix::zeros(2, 1), vec![9, 3], 10).unwrap();
        assert_eq!(flip_labels(&ds).labels(), &[0, 4]);
    }

    #[test]
    fn attacker_counts() {
        assert_eq!(select_attackers(20, 0.5, 1).len(), 10);
        assert!(select_attackers(20, 0.0, 1).is_empty());
        assert_eq!(select_attackers(20, 0.9, 1).len(), 18);
        assert_eq!(select_attackers(20, 0.7, 3), select_attackers(20, 0.7, 3));
        assert!(select_attackers(20, 1.0, 3).iter().all(|&i| i < 20));
    }

    #[test]
    fn tiny_noise_is_negligible() {
        let v = ParamVector::new(vec![0.5; 100]);
        let out = noise_update(&v, 1e-12, &mut rng_from(1)).unwrap();
        assert!(out.iter().zip(v.iter()).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(noise_update(&v, 0.0, &mut rng_from(1)).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let v = ParamVector::zeros(50);
        assert_eq!(
            noise_update(&v, 0.3, &mut rng_from(4)).unwrap(),
            noise_update(&v, 0.3, &mut rng_from(4)).unwrap()
        );
    }

    #[test]
    fn unit_noise_moments() {
        let out = noise_update(&ParamVector::zeros(100_000), 1.0, &mut rng_from(2)).unwrap();
        let n = out.len() as f64;
        let mean = out.iter().sum::<f64>() / n;
        let std = (out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((std - 1.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn spec_validation() {
        let bad = AttackSpec { kind: AttackKind::LabelFlip, attacker_fraction: 1.5 };
        assert!(bad.validate().unwrap_err().to_string().contains("attack.fraction"));
        let bad = AttackSpec { kind: AttackKind::GaussianNoise { sigma: 0.0 }, attacker_fraction: 0.2 };
        assert!(bad.validate().is_err());
    }
}
