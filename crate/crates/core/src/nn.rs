//! ReLU multilayer perceptron with softmax output and exact manual
//! backpropagation. Parameters live in one flat [`ParamVector`]; for each
//! layer the `fan_in × fan_out` weight block (row-major) is followed by the
//! `fan_out` bias block.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::seed::rng_from;
use crate::tensor::{gemm, GradientVector, Matrix, ParamVector, View};
use crate::{FlError, Result};

/// Lower clamp on log-probabilities so cross-entropy stays finite.
pub const LOG_PROB_FLOOR: f64 = -50.0;

const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

#[derive(Debug, Clone)]
struct LayerSlice {
    fan_in: usize,
    fan_out: usize,
    weights: Range<usize>,
    bias: Range<usize>,
}

impl MlpArchitecture {
    /// `layer_sizes` lists input, hidden... and output widths.
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(FlError::config("an MLP needs at least an input and an output layer"));
        }
        if layer_sizes.contains(&0) {
            return Err(FlError::config(format!("zero-width layer in {layer_sizes:?}")));
        }
        Ok(Self {
            layer_sizes,
            activation: Activation::Relu,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> Vec<LayerSlice> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = offset..offset + fan_in * fan_out;
                let bias = weights.end..weights.end + fan_out;
                offset = bias.end;
                LayerSlice {
                    fan_in,
                    fan_out,
                    weights,
                    bias,
                }
            })
            .collect()
    }

    /// Glorot-uniform weights and zero biases, deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = rng_from(seed);
        let mut params = vec![0.0; self.param_count()];
        for layer in self.layers() {
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut params[layer.weights] {
                *w = rng.random_range(-bound..bound);
            }
        }
        ParamVector::new(params)
    }

    fn check(&self, params: &ParamVector, inputs: &Matrix) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(FlError::config(format!(
                "parameter vector has {} entries, architecture {:?} needs {}",
                params.len(),
                self.layer_sizes,
                self.param_count()
            )));
        }
        if inputs.cols() != self.input_size() {
            return Err(FlError::config(format!(
                "input has {} features, architecture expects {}",
                inputs.cols(),
                self.input_size()
            )));
        }
        Ok(())
    }
}

/// Post-activation outputs of every layer (index 0 is the input) plus the
/// final pre-softmax logits.
struct ForwardCache {
    activations: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn forward_cache(params: &[f64], arch: &MlpArchitecture, inputs: &Matrix) -> ForwardCache {
    let batch = inputs.rows();
    let layers = arch.layers();
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    activations.push(inputs.data().to_vec());
    let last = layers.len() - 1;
    let mut logits = Vec::new();
    for (l, layer) in layers.iter().enumerate() {
        let mut z = Vec::with_capacity(batch * layer.fan_out);
        let bias = &params[layer.bias.clone()];
        for _ in 0..batch {
            z.extend_from_slice(bias);
        }
        gemm(
            batch,
            layer.fan_in,
            layer.fan_out,
            View::row_major(&activations[l], layer.fan_in),
            View::row_major(&params[layer.weights.clone()], layer.fan_out),
            1.0,
            &mut z,
        );
        if l == last {
            logits = z;
        } else {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            activations.push(z);
        }
    }
    ForwardCache { activations, logits }
}

/// Row-wise log-softmax with max subtraction.
fn log_softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, out_row) in logits.chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (o, v) in out_row.iter_mut().zip(row) {
            *o = v - max - lse;
        }
    }
    out
}

/// Class probabilities for every input row.
pub fn forward(params: &ParamVector, arch: &MlpArchitecture, inputs: &Matrix) -> Result<Matrix> {
    arch.check(params, inputs)?;
    let cache = forward_cache(params, arch, inputs);
    let classes = arch.output_size();
    let probs = log_softmax_rows(&cache.logits, classes)
        .into_iter()
        .map(f64::exp)
        .collect();
    Matrix::new(inputs.rows(), classes, probs)
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(FlError::Input(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(FlError::Input(format!(
            "label {bad} outside class range 0..{classes}"
        )));
    }
    Ok(())
}

/// Mean negative log-probability of the true classes.
pub fn cross_entropy_loss(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, probs.rows(), probs.cols())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.get(i, y).ln().max(LOG_PROB_FLOOR))
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean cross-entropy and its exact gradient with respect to `params`.
pub fn backward(
    params: &ParamVector,
    arch: &MlpArchitecture,
    inputs: &Matrix,
    labels: &[usize],
) -> Result<(f64, GradientVector)> {
    arch.check(params, inputs)?;
    let classes = arch.output_size();
    check_labels(labels, inputs.rows(), classes)?;
    let batch = inputs.rows();
    if batch == 0 {
        return Err(FlError::Input("empty batch".into()));
    }
    let scale = 1.0 / batch as f64;

    let cache = forward_cache(params, arch, inputs);
    let log_probs = log_softmax_rows(&cache.logits, classes);

    let mut loss = 0.0;
    // dL/dlogits: (softmax - onehot) / batch, zero where the log-prob clamp is active.
    let mut delta = vec![0.0; batch * classes];
    for (i, &y) in labels.iter().enumerate() {
        let row = &log_probs[i * classes..(i + 1) * classes];
        let lp = row[y];
        if lp < LOG_PROB_FLOOR {
            loss -= LOG_PROB_FLOOR;
            continue;
        }
        loss -= lp;
        let d = &mut delta[i * classes..(i + 1) * classes];
        for (dv, &l) in d.iter_mut().zip(row) {
            *dv = l.exp() * scale;
        }
        d[y] -= scale;
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(FlError::Numeric(format!("non-finite loss {loss} on batch of {batch}")));
    }

    let layers = arch.layers();
    let mut grad = vec![0.0; params.len()];
    for (l, layer) in layers.iter().enumerate().rev() {
        let act = &cache.activations[l];
        gemm(
            layer.fan_in,
            batch,
            layer.fan_out,
            View::transposed(act, layer.fan_in),
            View::row_major(&delta, layer.fan_out),
            0.0,
            &mut grad[layer.weights.clone()],
        );
        let gb = &mut grad[layer.bias.clone()];
        for row in delta.chunks_exact(layer.fan_out) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if l > 0 {
            let mut prev = vec![0.0; batch * layer.fan_in];
            gemm(
                batch,
                layer.fan_out,
                layer.fan_in,
                View::row_major(&delta, layer.fan_out),
                View::transposed(&params[layer.weights.clone()], layer.fan_out),
                0.0,
                &mut prev,
            );
            for (p, a) in prev.iter_mut().zip(act) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(FlError::Numeric(format!("non-finite gradient on batch of {batch}")));
    }
    Ok((loss, GradientVector::new(grad)))
}

/// Index of the largest entry; ties resolve to the lowest index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &ParamVector, arch: &MlpArchitecture, inputs: &Matrix) -> Result<Vec<usize>> {
    arch.check(params, inputs)?;
    let classes = arch.output_size();
    let mut out = Vec::with_capacity(inputs.rows());
    let all: Vec<usize> = (0..inputs.rows()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch = inputs.select_rows(chunk);
        let cache = forward_cache(params, arch, &batch);
        out.extend(cache.logits.chunks_exact(classes).map(argmax));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and macro-F1 of `predictions` against `truth` over `num_classes`
/// classes. A class with no true and no predicted samples scores F1 = 0.
pub fn classification_scores(predictions: &[usize], truth: &[usize], num_classes: usize) -> Evaluation {
    let n = truth.len();
    let mut tp = vec![0usize; num_classes];
    let mut pred_count = vec![0usize; num_classes];
    let mut true_count = vec![0usize; num_classes];
    let mut correct = 0;
    for (&p, &t) in predictions.iter().zip(truth) {
        pred_count[p] += 1;
        true_count[t] += 1;
        if p == t {
            tp[t] += 1;
            correct += 1;
        }
    }
    let f1_sum: f64 = (0..num_classes)
        .map(|c| {
            let denom = pred_count[c] + true_count[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Evaluation {
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        macro_f1: f1_sum / num_classes as f64,
    }
}

pub fn evaluate(params: &ParamVector, arch: &MlpArchitecture, dataset: &LabeledDataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(FlError::Input("cannot evaluate on an empty dataset".into()));
    }
    let predictions = predict(params, arch, dataset.features())?;
    Ok(classification_scores(&predictions, dataset.labels(), arch.output_size()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng;

    fn random_params(arch: &MlpArchitecture, seed: u64, scale: f64) -> ParamVector {
        let mut rng = rng_from(seed);
        ParamVector::new(
            (0..arch.param_count())
                .map(|_| rng.random_range(-scale..scale))
                .collect(),
        )
    }

    fn random_inputs(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_from(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Loss computed independently of `backward`: forward probabilities then cross-entropy.
    fn loss_at(params: &[f64], arch: &MlpArchitecture, x: &Matrix, y: &[usize]) -> f64 {
        let p = forward(&ParamVector::new(params.to_vec()), arch, x).unwrap();
        cross_entropy_loss(&p, y).unwrap()
    }

    fn finite_difference_check(sizes: Vec<usize>, seed: u64, tol: f64) {
        let arch = MlpArchitecture::new(sizes).unwrap();
        let params = random_params(&arch, seed, 1.0);
        let x = random_inputs(3, arch.input_size(), seed + 1);
        let y: Vec<usize> = (0..3).map(|i| i % arch.output_size()).collect();
        let (_, grad) = backward(&params, &arch, &x, &y).unwrap();
        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        for i in 0..params.len() {
            let mut plus = params.to_vec();
            plus[i] += h;
            let mut minus = params.to_vec();
            minus[i] -= h;
            let fd = (loss_at(&plus, &arch, &x, &y) - loss_at(&minus, &arch, &x, &y)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-7);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel <= tol, "max relative error {max_rel} for {:?}", arch.layer_sizes());
    }

    #[test]
    fn zero_params_give_uniform_distribution() {
        let arch = MlpArchitecture::new(vec![5, 4, 10]).unwrap();
        let params = ParamVector::zeros(arch.param_count());
        let probs = forward(&params, &arch, &random_inputs(3, 5, 1)).unwrap();
        for v in probs.data() {
            assert!((v - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_single_layer_picks_hot_index() {
        // 3-3 net with identity weights: logits equal the one-hot input.
        let arch = MlpArchitecture::new(vec![3, 3]).unwrap();
        let mut p = vec![0.0; arch.param_count()];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let params = ParamVector::new(p);
        for hot in 0..3 {
            let mut x = vec![0.0; 3];
            x[hot] = 1.0;
            let probs = forward(&params, &arch, &Matrix::new(1, 3, x).unwrap()).unwrap();
            assert_eq!(argmax(probs.row(0)), hot);
            // direct multiply: e/(e+2) on the hot entry
            let e = std::f64::consts::E;
            assert!((probs.get(0, hot) - e / (e + 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let arch = MlpArchitecture::new(vec![6, 8, 4]).unwrap();
        let probs = forward(&random_params(&arch, 3, 3.0), &arch, &random_inputs(2, 6, 4)).unwrap();
        for r in 0..2 {
            let row = probs.row(r);
            assert!(row.iter().all(|&v| v > 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let arch = MlpArchitecture::new(vec![4, 2]).unwrap();
        let params = ParamVector::zeros(arch.param_count());
        assert!(matches!(
            forward(&params, &arch, &Matrix::zeros(1, 3)),
            Err(FlError::Config(_))
        ));
        assert!(matches!(
            forward(&ParamVector::zeros(3), &arch, &Matrix::zeros(1, 4)),
            Err(FlError::Config(_))
        ));
        assert!(MlpArchitecture::new(vec![4]).is_err());
    }

    #[test]
    fn cross_entropy_reference_values() {
        let uniform = Matrix::new(1, 10, vec![0.1; 10]).unwrap();
        assert!((cross_entropy_loss(&uniform, &[3]).unwrap() - 10f64.ln()).abs() < 1e-12);
        let half = Matrix::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert!((cross_entropy_loss(&half, &[0]).unwrap() - 0.693147).abs() < 1e-6);
        let onehot = Matrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(cross_entropy_loss(&onehot, &[0]).unwrap().abs() < 1e-12);
        // clamped rather than infinite
        assert!((cross_entropy_loss(&onehot, &[1]).unwrap() - 50.0).abs() < 1e-12);
        assert!(matches!(cross_entropy_loss(&half, &[2]), Err(FlError::Input(_))));
    }

    #[test]
    fn gradient_matches_finite_differences_4_2_2() {
        finite_difference_check(vec![4, 2, 2], 11, 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences_deeper() {
        for (i, sizes) in [vec![3, 4], vec![5, 4, 3, 3], vec![3, 5, 4, 4, 3]].into_iter().enumerate() {
            finite_difference_check(sizes, 100 + i as u64, 1e-5);
        }
    }

    #[test]
    fn zero_input_zero_params_gradient() {
        let arch = MlpArchitecture::new(vec![3, 4, 2]).unwrap();
        let params = ParamVector::zeros(arch.param_count());
        let x = Matrix::zeros(2, 3);
        let (_, grad) = backward(&params, &arch, &x, &[0, 0]).unwrap();
        let layers = arch.layers();
        // hidden activations are all zero, so every weight gradient vanishes
        for layer in &layers {
            assert!(grad[layer.weights.clone()].iter().all(|&g| g == 0.0));
        }
        // output bias gradient = mean(softmax - onehot) = [0.5 - 1, 0.5]
        let out_bias = &grad[layers[1].bias.clone()];
        assert!((out_bias[0] + 0.5).abs() < 1e-15);
        assert!((out_bias[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn duplicated_sample_matches_single() {
        let arch = MlpArchitecture::new(vec![4, 3, 2]).unwrap();
        let params = random_params(&arch, 5, 1.0);
        let single = random_inputs(1, 4, 6);
        let double = Matrix::new(2, 4, [single.data(), single.data()].concat()).unwrap();
        let (l1, g1) = backward(&params, &arch, &single, &[1]).unwrap();
        let (l2, g2) = backward(&params, &arch, &double, &[1, 1]).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn batch_loss_is_mean_of_sample_losses() {
        let arch = MlpArchitecture::new(vec![4, 5, 3]).unwrap();
        let params = random_params(&arch, 8, 1.0);
        let x = random_inputs(4, 4, 9);
        let y = [0, 1, 2, 1];
        let (batch_loss, _) = backward(&params, &arch, &x, &y).unwrap();
        let mean: f64 = (0..4)
            .map(|i| backward(&params, &arch, &x.select_rows(&[i]), &y[i..=i]).unwrap().0)
            .sum::<f64>()
            / 4.0;
        assert!((batch_loss - mean).abs() < 1e-12);
    }

    #[test]
    fn forward_and_backward_are_pure() {
        let arch = MlpArchitecture::new(vec![4, 3, 2]).unwrap();
        let params = random_params(&arch, 1, 1.0);
        let x = random_inputs(5, 4, 2);
        let y = [0, 1, 0, 1, 1];
        assert_eq!(forward(&params, &arch, &x).unwrap(), forward(&params, &arch, &x).unwrap());
        assert_eq!(
            backward(&params, &arch, &x, &y).unwrap().1,
            backward(&params, &arch, &x, &y).unwrap().1
        );
    }

    #[test]
    fn macro_f1_binary_example() {
        // (A→A), (B→A): class A P=1/2 R=1 F1=2/3; class B F1=0
        let s = classification_scores(&[0, 0], &[0, 1], 2);
        assert_eq!(s.accuracy, 0.5);
        assert!((s.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
        let perfect = classification_scores(&[0, 1, 2], &[0, 1, 2], 3);
        assert_eq!((perfect.accuracy, perfect.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn random_params_are_near_chance() {
        // labels independent of features: any fixed predictor scores 1/10 in expectation
        let x = random_inputs(1000, 8, 21);
        let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let data = LabeledDataset::new(x, labels, 10).unwrap();
        let arch = MlpArchitecture::new(vec![8, 16, 10]).unwrap();
        let eval = evaluate(&random_params(&arch, 99, 1.0), &arch, &data).unwrap();
        assert!((eval.accuracy - 0.1).abs() <= 0.05, "{eval:?}");
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = MlpArchitecture::new(vec![10, 6, 3]).unwrap();
        let a = arch.init_params(4);
        assert_eq!(a, arch.init_params(4));
        assert_ne!(a, arch.init_params(5));
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(a[..60].iter().all(|w| w.abs() < bound));
        assert!(a[60..66].iter().all(|&b| b == 0.0));
    }
}
