//! Four-layer ReLU speaker classifier.
//!
//! `logits = W4·relu(W3·relu(W2·relu(W1·x + b1) + b2) + b3) + b4`, trained with
//! softmax cross-entropy and plain mini-batch gradient descent until it fits the
//! training set. Weight matrices are stored `[out × in]`. Parameters are kept
//! float32-representable throughout training so the checkpoint is lossless.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::store::FusedDataset;

pub const N_LAYERS: usize = 4;
pub const CHECKPOINT_MAGIC: &[u8; 6] = b"TPMLP1";

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// `[d_in, h1, h2, h3, n_speakers]`
    pub layer_dims: [usize; 5],
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub target_accuracy: f64,
    pub seed: u64,
    pub hidden_dims: [usize; 3],
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            max_epochs: 500,
            target_accuracy: 1.0,
            seed: 0,
            hidden_dims: [512, 256, 128],
            batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "max_epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return Err(Error::InvalidConfig("target_accuracy must lie in (0, 1]".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("hidden dims must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_accuracy: f64,
    pub epochs_run: usize,
    pub final_loss: f64,
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn relu_mask(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// He-normal weights (variance `2 / fan_in`), zero biases.
pub fn init_mlp(layer_dims: [usize; 5], seed: u64) -> Result<MlpParams> {
    if layer_dims.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "layer dims must be positive, got {layer_dims:?}"
        )));
    }
    let mut rng = rng::stream(seed, streams::INIT);
    let mut weights = Vec::with_capacity(N_LAYERS);
    let mut biases = Vec::with_capacity(N_LAYERS);
    for l in 0..N_LAYERS {
        let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
            round_f32(normal.sample(&mut rng))
        }));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpParams {
        layer_dims,
        weights,
        biases,
    })
}

struct Trace {
    /// Layer inputs: x, a1, a2, a3.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations z1..z4 (z4 are the logits).
    pre: Vec<Array2<f64>>,
}

impl MlpParams {
    pub fn d_in(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_classes(&self) -> usize {
        self.layer_dims[4]
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != N_LAYERS || self.biases.len() != N_LAYERS {
            return Err(Error::InvalidConfig("classifier must have four layers".into()));
        }
        for l in 0..N_LAYERS {
            let shape = (self.layer_dims[l + 1], self.layer_dims[l]);
            if self.weights[l].dim() != shape || self.biases[l].len() != shape.0 {
                return Err(Error::mismatch(
                    format!("layer {} parameters", l + 1),
                    format!("{shape:?}"),
                    format!("{:?}", self.weights[l].dim()),
                ));
            }
        }
        let finite = self
            .weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("classifier parameters".into()));
        }
        Ok(())
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.d_in() {
            return Err(Error::mismatch("classifier input", self.d_in(), width));
        }
        Ok(())
    }

    fn trace(&self, x: ArrayView2<'_, f64>) -> Trace {
        let mut inputs = Vec::with_capacity(N_LAYERS);
        let mut pre = Vec::with_capacity(N_LAYERS);
        let mut a = x.to_owned();
        for l in 0..N_LAYERS {
            let z = a.dot(&self.weights[l].t()) + &self.biases[l];
            inputs.push(a);
            a = z.mapv(|v| v.max(0.0));
            pre.push(z);
        }
        Trace { inputs, pre }
    }

    /// Logits for a batch of rows, `[n × n_classes]`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        for l in 0..N_LAYERS {
            let z = a.dot(&self.weights[l].t()) + &self.biases[l];
            a = if l + 1 < N_LAYERS { z.mapv(|v| v.max(0.0)) } else { z };
        }
        Ok(a)
    }

    /// Gradients of `logits[class_index]` with respect to each input row.
    ///
    /// ReLU subgradient at exactly zero is taken as zero.
    pub fn input_gradient_batch(
        &self,
        x: ArrayView2<'_, f64>,
        class_index: usize,
    ) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        if class_index >= self.n_classes() {
            return Err(Error::mismatch(
                "class index",
                format!("< {}", self.n_classes()),
                class_index,
            ));
        }
        let trace = self.trace(x);
        let top = self.weights[N_LAYERS - 1].row(class_index);
        let mut delta = Array2::from_shape_fn((x.nrows(), top.len()), |(_, j)| top[j]);
        for l in (0..N_LAYERS - 1).rev() {
            delta *= &relu_mask(&trace.pre[l]);
            delta = delta.dot(&self.weights[l]);
        }
        Ok(delta)
    }

    /// Rounds every parameter to the nearest float32.
    fn quantize(&mut self) {
        for w in &mut self.weights {
            w.mapv_inplace(round_f32);
        }
        for b in &mut self.biases {
            b.mapv_inplace(round_f32);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for d in self.layer_dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for l in 0..N_LAYERS {
            for v in self.weights[l].iter().chain(self.biases[l].iter()) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidConfig(format!("malformed checkpoint: {msg}"));
        if bytes.len() < 26 || &bytes[..6] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut layer_dims = [0usize; 5];
        for (i, d) in layer_dims.iter_mut().enumerate() {
            let o = 6 + 4 * i;
            *d = u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
        }
        let mut floats = bytes[26..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..N_LAYERS {
            let (rows, cols) = (layer_dims[l + 1], layer_dims[l]);
            let w: Vec<f64> = floats.by_ref().take(rows * cols).collect();
            let b: Vec<f64> = floats.by_ref().take(rows).collect();
            if w.len() != rows * cols || b.len() != rows {
                return Err(bad("truncated payload"));
            }
            weights.push(Array2::from_shape_vec((rows, cols), w).map_err(|e| bad(&e.to_string()))?);
            biases.push(Array1::from_vec(b));
        }
        if floats.next().is_some() || (bytes.len() - 26) % 4 != 0 {
            return Err(bad("trailing bytes"));
        }
        let params = MlpParams {
            layer_dims,
            weights,
            biases,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn forward(params: &MlpParams, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let logits = params.forward_batch(x.insert_axis(Axis(0)))?;
    Ok(logits.row(0).to_owned())
}

pub fn input_gradient(
    params: &MlpParams,
    x: ArrayView1<'_, f64>,
    class_index: usize,
) -> Result<Array1<f64>> {
    let g = params.input_gradient_batch(x.insert_axis(Axis(0)), class_index)?;
    Ok(g.row(0).to_owned())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate_accuracy(params: &MlpParams, dataset: &FusedDataset) -> Result<f64> {
    if dataset.n_samples() == 0 {
        return Err(Error::Empty("dataset"));
    }
    let logits = params.forward_batch(dataset.features.view())?;
    let correct = logits
        .rows()
        .into_iter()
        .zip(&dataset.labels)
        .filter(|(row, &label)| argmax(row.view()) == label)
        .count();
    Ok(correct as f64 / dataset.n_samples() as f64)
}

/// Softmax probabilities, row-wise, computed stably.
fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

/// Mean softmax cross-entropy over the dataset.
pub fn cross_entropy(params: &MlpParams, dataset: &FusedDataset) -> Result<f64> {
    let logits = params.forward_batch(dataset.features.view())?;
    let mut total = 0.0;
    for (row, &label) in logits.rows().into_iter().zip(&dataset.labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / dataset.n_samples() as f64)
}

fn sgd_step(params: &mut MlpParams, x: ArrayView2<'_, f64>, labels: &[usize], lr: f64) {
    let trace = params.trace(x);
    let n = x.nrows() as f64;
    let mut delta = softmax(&trace.pre[N_LAYERS - 1]);
    for (mut row, &label) in delta.rows_mut().into_iter().zip(labels) {
        row[label] -= 1.0;
    }
    delta /= n;
    for l in (0..N_LAYERS).rev() {
        let grad_w = delta.t().dot(&trace.inputs[l]);
        let grad_b = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut next = delta.dot(&params.weights[l]);
            next *= &relu_mask(&trace.pre[l - 1]);
            delta = next;
        }
        Zip::from(&mut params.weights[l])
            .and(&grad_w)
            .for_each(|w, &g| *w = round_f32(*w - lr * g));
        Zip::from(&mut params.biases[l])
            .and(&grad_b)
            .for_each(|b, &g| *b = round_f32(*b - lr * g));
    }
}

/// Trains until training accuracy reaches `config.target_accuracy`.
///
/// Fails with [`Error::AccuracyNotReached`] (carrying the final report) when
/// `max_epochs` pass without reaching the target.
pub fn train_overfit(
    dataset: &FusedDataset,
    config: &TrainConfig,
) -> Result<(MlpParams, TrainReport)> {
    config.validate()?;
    if dataset.n_samples() == 0 {
        return Err(Error::Empty("training dataset"));
    }
    let [h1, h2, h3] = config.hidden_dims;
    let dims = [dataset.d_in(), h1, h2, h3, dataset.n_classes()];
    let mut params = init_mlp(dims, config.seed)?;
    params.quantize();

    let mut rng = rng::stream(config.seed, streams::SHUFFLE);
    let mut order: Vec<usize> = (0..dataset.n_samples()).collect();
    let mut accuracy = 0.0;
    let mut epochs_run = 0;
    while epochs_run < config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let x = dataset.features.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();
            sgd_step(&mut params, x.view(), &labels, config.learning_rate);
        }
        epochs_run += 1;
        accuracy = evaluate_accuracy(&params, dataset)?;
        if accuracy >= config.target_accuracy {
            break;
        }
    }
    let report = TrainReport {
        final_accuracy: accuracy,
        epochs_run,
        final_loss: cross_entropy(&params, dataset)?,
    };
    if accuracy < config.target_accuracy {
        return Err(Error::AccuracyNotReached {
            report,
            target: config.target_accuracy,
        });
    }
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn zero_net(dims: [usize; 5]) -> MlpParams {
        let mut p = init_mlp(dims, 0).unwrap();
        for w in &mut p.weights {
            w.fill(0.0);
        }
        p
    }

    /// d_in=2, hidden 2/2/2, 2 classes with hand-picked weights.
    fn hand_net() -> MlpParams {
        MlpParams {
            layer_dims: [2, 2, 2, 2, 2],
            weights: vec![
                array![[1.0, -1.0], [0.5, 2.0]],
                array![[1.0, 1.0], [-1.0, 1.0]],
                array![[2.0, 0.0], [1.0, -3.0]],
                array![[1.0, 1.0], [0.0, -1.0]],
            ],
            biases: vec![
                array![0.0, 0.5],
                array![-1.0, 0.0],
                array![0.0, 1.0],
                array![0.25, 0.0],
            ],
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_mlp([5, 8, 8, 8, 3], 7).unwrap();
        let b = init_mlp([5, 8, 8, 8, 3], 7).unwrap();
        assert_eq!(a, b);
        let shapes: Vec<_> = a.weights.iter().map(|w| w.dim()).collect();
        assert_eq!(shapes, vec![(8, 5), (8, 8), (8, 8), (3, 8)]);
        assert!(a.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert_ne!(a, init_mlp([5, 8, 8, 8, 3], 8).unwrap());
        assert!(init_mlp([5, 0, 8, 8, 3], 7).is_err());
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let p = zero_net([3, 4, 4, 4, 5]);
        let logits = forward(&p, array![1.0, -2.0, 3.0].view()).unwrap();
        assert_eq!(logits, Array1::<f64>::zeros(5));
    }

    #[test]
    fn hand_sized_network_matches_manual_arithmetic() {
        // x = (1, 2)
        // z1 = [1-2, 0.5+4+0.5] = [-1, 5]     a1 = [0, 5]
        // z2 = [0+5-1, 0+5] = [4, 5]          a2 = [4, 5]
        // z3 = [8, 4-15+1] = [8, -10]         a3 = [8, 0]
        // z4 = [8+0.25, 0] = [8.25, 0]
        let logits = forward(&hand_net(), array![1.0, 2.0].view()).unwrap();
        assert_eq!(logits, array![8.25, 0.0]);
        // d logit0 / dx: only unit a3[0] <- a2[0] (weight 2) <- a1[1] path.
        // dz3 = [1, 0]; da2 = [2, 0]; dz2 = [2, 0]; da1 = [2, 2]; dz1 = [0, 2];
        // dx = 2 * [0.5, 2] = [1, 4]
        let g = input_gradient(&hand_net(), array![1.0, 2.0].view(), 0).unwrap();
        assert_eq!(g, array![1.0, 4.0]);
    }

    #[test]
    fn last_layer_scaling_scales_logits() {
        let p = init_mlp([4, 6, 6, 6, 3], 3).unwrap();
        let x = array![0.3, -1.2, 0.8, 2.0];
        let base = forward(&p, x.view()).unwrap();
        let mut scaled = p.clone();
        scaled.weights[3] *= 2.5;
        let out = forward(&scaled, x.view()).unwrap();
        for (a, b) in base.iter().zip(out.iter()) {
            assert!((a * 2.5 - b).abs() < 1e-12);
        }
        assert_eq!(argmax(base.view()), argmax(out.view()));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(array![1.0, 3.0, 3.0].view()), 1);
        assert_eq!(argmax(array![0.0, 0.0, 0.0].view()), 0);
    }

    #[test]
    fn zero_network_accuracy_follows_tie_rule() {
        let p = zero_net([2, 3, 3, 3, 3]);
        let x = Array2::from_elem((4, 2), 1.0);
        let ds = FusedDataset::new(x.clone(), vec![0; 4], 1, 1).unwrap();
        assert_eq!(evaluate_accuracy(&p, &ds).unwrap(), 1.0);
        let ds = FusedDataset::new(x, vec![2; 4], 1, 1).unwrap();
        assert_eq!(evaluate_accuracy(&p, &ds).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = init_mlp([6, 16, 12, 8, 4], 11).unwrap();
        let mut rng = rng::stream(5, 0);
        let h = 1e-4;
        let mut checked = 0;
        while checked < 20 {
            let x: Array1<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            // Skip points within reach of a ReLU kink.
            let trace = p.trace(x.view().insert_axis(Axis(0)));
            let min_pre = trace.pre[..3]
                .iter()
                .flat_map(|z| z.iter())
                .fold(f64::INFINITY, |m, v| m.min(v.abs()));
            if min_pre < 1e-2 {
                continue;
            }
            let class = checked % 4;
            let g = input_gradient(&p, x.view(), class).unwrap();
            for j in 0..6 {
                let mut plus = x.clone();
                let mut minus = x.clone();
                plus[j] += h;
                minus[j] -= h;
                let fd = (forward(&p, plus.view()).unwrap()[class]
                    - forward(&p, minus.view()).unwrap()[class])
                    / (2.0 * h);
                let rel = (g[j] - fd).abs() / g[j].abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "component {j}: analytic {} vs fd {fd}", g[j]);
            }
            checked += 1;
        }
    }

    #[test]
    fn dead_output_row_has_zero_gradient() {
        let mut p = init_mlp([5, 8, 8, 8, 3], 2).unwrap();
        p.weights[3].row_mut(1).fill(0.0);
        let g = input_gradient(&p, array![1.0, 2.0, -1.0, 0.5, 0.0].view(), 1).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positive_regime_gradient_is_the_weight_product() {
        let mut p = init_mlp([3, 4, 4, 4, 2], 9).unwrap();
        for w in &mut p.weights {
            w.mapv_inplace(f64::abs);
        }
        for b in &mut p.biases {
            b.fill(0.1);
        }
        let x = array![0.5, 1.0, 2.0];
        let g = input_gradient(&p, x.view(), 1).unwrap();
        let product = p.weights[3]
            .row(1)
            .dot(&p.weights[2])
            .dot(&p.weights[1])
            .dot(&p.weights[0]);
        for (a, b) in g.iter().zip(product.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_fits_quickly_with_decreasing_loss() {
        let ds = FusedDataset::new(array![[0.5, -0.3, 1.0]], vec![0], 1, 2).unwrap();
        let config = TrainConfig {
            hidden_dims: [8, 8, 8],
            ..TrainConfig::default()
        };
        let (_, report) = train_overfit(&ds, &config).unwrap();
        assert_eq!(report.final_accuracy, 1.0);
        assert!(report.epochs_run <= 3);

        // Loss is monotone over epochs for a 2-class single sample at a small rate.
        let ds = FusedDataset::new(array![[0.5, -0.3, 1.0]], vec![1], 1, 2).unwrap();
        let mut params = init_mlp([3, 8, 8, 8, 2], 4).unwrap();
        let mut prev = cross_entropy(&params, &ds).unwrap();
        for _ in 0..50 {
            sgd_step(&mut params, ds.features.view(), &ds.labels, 1e-3);
            let loss = cross_entropy(&params, &ds).unwrap();
            assert!(loss <= prev, "loss rose from {prev} to {loss}");
            prev = loss;
        }
    }

    #[test]
    fn training_is_deterministic() {
        let x = Array2::from_shape_fn((12, 4), |(i, j)| ((i * 7 + j * 3) % 13) as f64 / 6.0 - 1.0);
        let labels = (0..12).map(|i| i % 3).collect();
        let ds = FusedDataset::new(x, labels, 2, 2).unwrap();
        let config = TrainConfig {
            hidden_dims: [16, 16, 8],
            learning_rate: 0.05,
            max_epochs: 2000,
            batch_size: 5,
            ..TrainConfig::default()
        };
        let a = train_overfit(&ds, &config).unwrap();
        let b = train_overfit(&ds, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.final_accuracy, evaluate_accuracy(&a.0, &ds).unwrap());
    }

    #[test]
    fn unreachable_target_is_a_distinct_error() {
        // Identical rows with different labels cannot be separated.
        let ds = FusedDataset::new(Array2::ones((2, 2)), vec![0, 1], 1, 1).unwrap();
        let config = TrainConfig {
            hidden_dims: [4, 4, 4],
            max_epochs: 5,
            ..TrainConfig::default()
        };
        match train_overfit(&ds, &config) {
            Err(e @ Error::AccuracyNotReached { .. }) => assert!(e.is_precondition()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = init_mlp([5, 8, 7, 6, 3], 1).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..6], b"TPMLP1");
        assert_eq!(MlpParams::from_bytes(&bytes).unwrap(), p);
        assert!(MlpParams::from_bytes(&bytes[..bytes.len() - 4]).is_err());
    }
}
