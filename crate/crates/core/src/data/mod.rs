//! Datasets, client partitioning and the poisoning attacks.

mod attack;
mod idx;
mod partition;
mod synth;

pub use attack::{flip_labels, noise_update, select_attackers, AttackKind, AttackSpec};
pub use idx::{load_idx, write_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use partition::{partition, stratified_split, PartitionPlan, PartitionScheme};
pub use synth::synth_blobs;

use crate::tensor::Matrix;
use crate::{FlError, Result};

/// Feature rows in `[0, 1]` with one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(FlError::Input(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(FlError::Input(format!(
                "label {bad} outside class range 0..{num_classes}"
            )));
        }
        if features.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(FlError::Input("features must lie in [0, 1]".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Widens the class alphabet, e.g. when a test split lacks the top class.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if self.labels.iter().any(|&y| y >= num_classes) {
            return Err(FlError::Input(format!(
                "cannot shrink class count to {num_classes}"
            )));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Indices of every sample, grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by[y].push(i);
        }
        by
    }

    pub(crate) fn map_labels(&self, f: impl Fn(usize) -> usize) -> LabeledDataset {
        LabeledDataset {
            features: self.features.clone(),
            labels: self.labels.iter().map(|&y| f(y)).collect(),
            num_classes: self.num_classes,
        }
    }
}
