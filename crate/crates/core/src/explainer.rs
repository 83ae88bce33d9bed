//! Gradient-SHAP attribution and an exact Shapley enumerator.
//!
//! For a sample `x` explained against class `y`, each path draw picks a
//! baseline `b` uniformly from the baseline set, a position `α ~ U(0, 1)`, and
//! (when smoothing is on) perturbs the sample to `x̃ = x + ε`. The draw
//! contributes `∇f_y(b + α(x̃ − b)) ⊙ (x̃ − b)`; the attribution is the mean over
//! draws. Each explained row owns the random stream `(seed, row index)`, so
//! the parallel and serial paths agree bit for bit.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate_accuracy, MlpParams};
use crate::error::{Error, Result};
use crate::npy;
use crate::rng::{self, streams};
use crate::store::FusedDataset;

/// Largest feature count [`exact_shapley`] will enumerate.
pub const EXACT_SHAPLEY_MAX_FEATURES: usize = 14;

/// Path draws evaluated per gradient batch.
const PATH_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub n_baselines: usize,
    pub batch_size: usize,
    pub local_smoothing_sigma: f64,
    pub n_path_samples: usize,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            n_baselines: 256,
            batch_size: 256,
            local_smoothing_sigma: 0.1,
            n_path_samples: 200,
            seed: 0,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_path_samples == 0 || self.n_baselines == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "n_path_samples, n_baselines and batch_size must be positive".into(),
            ));
        }
        if !(self.local_smoothing_sigma >= 0.0 && self.local_smoothing_sigma.is_finite()) {
            return Err(Error::InvalidConfig(
                "local_smoothing_sigma must be a nonnegative number".into(),
            ));
        }
        Ok(())
    }
}

/// Signed per-sample, per-feature attributions over fused features.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    pub values: Array2<f64>,
    /// Class explained for each row (the sample's true speaker label).
    pub target_class: Vec<usize>,
    pub d_s: usize,
    pub d_c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AttributionSidecar {
    d_s: usize,
    d_c: usize,
    n_samples: usize,
    config: Option<ExplainConfig>,
    target_class: Vec<usize>,
}

impl AttributionMatrix {
    pub fn new(values: Array2<f64>, target_class: Vec<usize>, d_s: usize, d_c: usize) -> Result<Self> {
        if values.ncols() != d_s + d_c {
            return Err(Error::mismatch("attribution width", d_s + d_c, values.ncols()));
        }
        if values.nrows() != target_class.len() {
            return Err(Error::mismatch(
                "attribution target classes",
                values.nrows(),
                target_class.len(),
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("attribution matrix".into()));
        }
        Ok(Self {
            values,
            target_class,
            d_s,
            d_c,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn speaker_segment(&self) -> ArrayView2<'_, f64> {
        self.values.slice(ndarray::s![.., ..self.d_s])
    }

    pub fn content_segment(&self) -> ArrayView2<'_, f64> {
        self.values.slice(ndarray::s![.., self.d_s..])
    }

    /// Writes `<stem>.npy` (float32) and the `<stem>.json` sidecar.
    pub fn save(&self, dir: &Path, stem: &str, config: Option<&ExplainConfig>) -> Result<()> {
        npy::write_matrix_f64(&dir.join(format!("{stem}.npy")), self.values.view())?;
        let sidecar = AttributionSidecar {
            d_s: self.d_s,
            d_c: self.d_c,
            n_samples: self.n_samples(),
            config: config.cloned(),
            target_class: self.target_class.clone(),
        };
        let path = dir.join(format!("{stem}.json"));
        fs::write(&path, serde_json::to_string_pretty(&sidecar)? + "\n")
            .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let path = dir.join(format!("{stem}.json"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: AttributionSidecar = serde_json::from_str(&text)?;
        let values = npy::read_matrix(&dir.join(format!("{stem}.npy")))?.mapv(|v| v as f64);
        if values.nrows() != sidecar.n_samples {
            return Err(Error::mismatch("attribution rows", sidecar.n_samples, values.nrows()));
        }
        Self::new(values, sidecar.target_class, sidecar.d_s, sidecar.d_c)
    }
}

/// A differentiable scalar-per-class model the explainer can query.
pub trait Explainable: Sync {
    fn d_in(&self) -> usize;

    /// Output for `class` on every row.
    fn output_batch(&self, x: ArrayView2<'_, f64>, class: usize) -> Result<Array1<f64>>;

    /// Gradient of the class output with respect to every row.
    fn gradient_batch(&self, x: ArrayView2<'_, f64>, class: usize) -> Result<Array2<f64>>;
}

impl Explainable for MlpParams {
    fn d_in(&self) -> usize {
        MlpParams::d_in(self)
    }

    fn output_batch(&self, x: ArrayView2<'_, f64>, class: usize) -> Result<Array1<f64>> {
        if class >= self.n_classes() {
            return Err(Error::mismatch("class index", format!("< {}", self.n_classes()), class));
        }
        Ok(self.forward_batch(x)?.column(class).to_owned())
    }

    fn gradient_batch(&self, x: ArrayView2<'_, f64>, class: usize) -> Result<Array2<f64>> {
        self.input_gradient_batch(x, class)
    }
}

/// `f(x) = w·x + bias`, identical for every class.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn eval(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.weights.dot(&x) + self.bias
    }
}

impl Explainable for LinearModel {
    fn d_in(&self) -> usize {
        self.weights.len()
    }

    fn output_batch(&self, x: ArrayView2<'_, f64>, _class: usize) -> Result<Array1<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::mismatch("linear model input", self.weights.len(), x.ncols()));
        }
        Ok(x.dot(&self.weights) + self.bias)
    }

    fn gradient_batch(&self, x: ArrayView2<'_, f64>, _class: usize) -> Result<Array2<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::mismatch("linear model input", self.weights.len(), x.ncols()));
        }
        Ok(Array2::from_shape_fn(x.dim(), |(_, j)| self.weights[j]))
    }
}

/// One row's estimate plus the Monte-Carlo standard error of its sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RowEstimate {
    pub attribution: Array1<f64>,
    /// Standard error of `Σ_j attribution_j` across path draws.
    pub sum_std_error: f64,
}

/// Gradient-SHAP estimate for a single row, drawing from `rng`.
pub fn gradient_shap_row<M: Explainable + ?Sized, R: Rng>(
    model: &M,
    x: ArrayView1<'_, f64>,
    class: usize,
    baselines: ArrayView2<'_, f64>,
    smoothing_sigma: f64,
    n_path_samples: usize,
    rng: &mut R,
) -> Result<RowEstimate> {
    let d = x.len();
    if baselines.nrows() == 0 {
        return Err(Error::Empty("baselines"));
    }
    if baselines.ncols() != d || model.d_in() != d {
        return Err(Error::mismatch("explained input width", model.d_in(), d));
    }
    if n_path_samples == 0 {
        return Err(Error::InvalidConfig("n_path_samples must be positive".into()));
    }
    let noise = if smoothing_sigma > 0.0 {
        Some(Normal::new(0.0, smoothing_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };

    let mut total = Array1::<f64>::zeros(d);
    let mut draw_sums = Vec::with_capacity(n_path_samples);
    let mut remaining = n_path_samples;
    while remaining > 0 {
        let t = remaining.min(PATH_CHUNK);
        remaining -= t;
        let mut points = Array2::<f64>::zeros((t, d));
        let mut deltas = Array2::<f64>::zeros((t, d));
        for i in 0..t {
            let b = baselines.row(rng.random_range(0..baselines.nrows()));
            let alpha: f64 = rng.random();
            let mut point = points.row_mut(i);
            let mut delta = deltas.row_mut(i);
            for j in 0..d {
                let eps = noise.as_ref().map_or(0.0, |n| n.sample(rng));
                let diff = x[j] + eps - b[j];
                delta[j] = diff;
                point[j] = b[j] + alpha * diff;
            }
        }
        let grads = model.gradient_batch(points.view(), class)?;
        let contrib = grads * &deltas;
        for row in contrib.rows() {
            draw_sums.push(row.sum());
        }
        total += &contrib.sum_axis(Axis(0));
    }
    let n = n_path_samples as f64;
    let sum_std_error = if n_path_samples > 1 {
        let mean = draw_sums.iter().sum::<f64>() / n;
        let var = draw_sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(RowEstimate {
        attribution: total / n,
        sum_std_error,
    })
}

/// Gradient-SHAP over every row of `samples`, parallel across rows.
pub fn gradient_shap<M: Explainable + ?Sized>(
    model: &M,
    samples: ArrayView2<'_, f64>,
    classes: &[usize],
    baselines: ArrayView2<'_, f64>,
    config: &ExplainConfig,
) -> Result<Vec<RowEstimate>> {
    config.validate()?;
    if classes.len() != samples.nrows() {
        return Err(Error::mismatch("explained classes", samples.nrows(), classes.len()));
    }
    (0..samples.nrows())
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(config.seed, k as u64);
            gradient_shap_row(
                model,
                samples.row(k),
                classes[k],
                baselines,
                config.local_smoothing_sigma,
                config.n_path_samples,
                &mut rng,
            )
        })
        .collect()
}

/// First `n` rows of the dataset after a seeded shuffle.
pub fn select_baselines(dataset: &FusedDataset, n: usize, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::Empty("baselines"));
    }
    if n > dataset.n_samples() {
        return Err(Error::InvalidConfig(format!(
            "n_baselines {n} exceeds dataset size {}",
            dataset.n_samples()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.n_samples()).collect();
    order.shuffle(&mut rng::stream(seed, streams::BASELINES));
    Ok(dataset.features.select(Axis(0), &order[..n]))
}

/// Explains every sample against its true speaker label.
///
/// The classifier must classify every explained sample correctly; otherwise
/// the residual score is undefined and this fails with
/// [`Error::ExplainPrecondition`].
pub fn gradient_shap_explain(
    params: &MlpParams,
    samples: &FusedDataset,
    baselines: ArrayView2<'_, f64>,
    config: &ExplainConfig,
) -> Result<AttributionMatrix> {
    if baselines.nrows() == 0 {
        return Err(Error::Empty("baselines"));
    }
    let accuracy = evaluate_accuracy(params, samples)?;
    if accuracy < 1.0 {
        return Err(Error::ExplainPrecondition(accuracy));
    }
    let rows = gradient_shap(params, samples.features.view(), &samples.labels, baselines, config)?;
    let mut values = Array2::zeros((samples.n_samples(), samples.d_in()));
    for (mut out, row) in values.rows_mut().into_iter().zip(rows) {
        out.assign(&row.attribution);
    }
    AttributionMatrix::new(values, samples.labels.clone(), samples.d_s, samples.d_c)
}

/// Exact Shapley values by enumerating all `2^p` coalitions.
///
/// `model_fn` is evaluated on composite inputs taking `x_j` for features in
/// the coalition and `baseline_j` elsewhere.
pub fn exact_shapley<F>(model_fn: F, x: &[f64], baseline: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let p = x.len();
    if baseline.len() != p {
        return Err(Error::mismatch("baseline width", p, baseline.len()));
    }
    if p == 0 {
        return Err(Error::Empty("feature vector"));
    }
    if p > EXACT_SHAPLEY_MAX_FEATURES {
        return Err(Error::InvalidConfig(format!(
            "exact Shapley enumeration limited to {EXACT_SHAPLEY_MAX_FEATURES} features, got {p}"
        )));
    }
    let n_sets = 1usize << p;
    let mut input = vec![0.0; p];
    let values: Vec<f64> = (0..n_sets)
        .map(|mask| {
            for j in 0..p {
                input[j] = if mask & (1 << j) != 0 { x[j] } else { baseline[j] };
            }
            model_fn(&input)
        })
        .collect();

    let mut factorial = vec![1.0f64; p + 1];
    for i in 1..=p {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    // weight[s] = s! (p - s - 1)! / p!
    let weight: Vec<f64> = (0..p)
        .map(|s| factorial[s] * factorial[p - s - 1] / factorial[p])
        .collect();

    let mut phi = vec![0.0; p];
    for (j, phi_j) in phi.iter_mut().enumerate() {
        let bit = 1 << j;
        for mask in (0..n_sets).filter(|m| m & bit == 0) {
            let size = mask.count_ones() as usize;
            *phi_j += weight[size] * (values[mask | bit] - values[mask]);
        }
    }
    Ok(phi)
}

/// `|Σ_j attr_j − (f_x − mean_f_baselines)|`
pub fn completeness_residual(attr_row: ArrayView1<'_, f64>, f_x: f64, mean_f_baselines: f64) -> f64 {
    (attr_row.sum() - (f_x - mean_f_baselines)).abs()
}
