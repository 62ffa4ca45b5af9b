use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LabeledDataset;
use crate::seed::rng_from;
use crate::tensor::Matrix;

/// Minimum Euclidean distance between class means, in noise standard deviations.
const MIN_MEAN_SEPARATION: f64 = 6.0;

/// Gaussian blobs with unit variance around well-separated class means,
/// min-max rescaled into `[0, 1]`. Samples are ordered class by class.
pub fn synth_blobs(num_classes: usize, samples_per_class: usize, feature_dim: usize, seed: u64) -> LabeledDataset {
    let num_classes = num_classes.max(1);
    let feature_dim = feature_dim.max(1);
    let mut rng = rng_from(seed);

    // Rejection-sample means in a box that grows until they fit.
    let mut half_width = 5.0;
    let means = 'outer: loop {
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
        let mut attempts = 0;
        while means.len() < num_classes {
            attempts += 1;
            if attempts > 1000 {
                half_width *= 1.5;
                continue 'outer;
            }
            let candidate: Vec<f64> = (0..feature_dim)
                .map(|_| rng.random_range(-half_width..half_width))
                .collect();
            let far = means.iter().all(|m| {
                crate::tensor::squared_distance(m, &candidate).sqrt() >= MIN_MEAN_SEPARATION
            });
            if far {
                means.push(candidate);
            }
        }
        break means;
    };

    let n = num_classes * samples_per_class;
    let mut raw = Vec::with_capacity(n * feature_dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..samples_per_class {
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                raw.push(m + z);
            }
            labels.push(c);
        }
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let features = raw.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect();
    LabeledDataset::new(
        Matrix::new(n, feature_dim, features).expect("shape by construction"),
        labels,
        num_classes,
    )
    .expect("valid by construction")
}
