//! Timbre residual scores computed from an attribution matrix.
//!
//! `mean_score` is the ratio of per-dimension mean |φ| in the content segment to
//! that in the speaker segment; `sum_score` is the content share of total |φ|
//! mass, which equals `m·d_c / (m·d_c + d_s)` for `m = mean_score`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainer::AttributionMatrix;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrqReport {
    pub schema_version: u32,
    pub n_samples: usize,
    pub d_s: usize,
    pub d_c: usize,
    pub mean_score: f64,
    pub sum_score: f64,
    pub per_dim_mean_abs: Vec<f64>,
    pub batch_size: usize,
    pub batch_scores: Vec<f64>,
    pub batch_std: f64,
    pub batch_cv: f64,
    /// False when fewer than two batches exist; `batch_std` is then 0 by convention.
    pub batch_std_defined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStability {
    pub batch_scores: Vec<f64>,
    pub batch_std: f64,
    pub batch_cv: f64,
    pub std_defined: bool,
}

/// Mean |φ| per column.
pub fn per_dim_mean_abs(values: ArrayView2<'_, f64>) -> Array1<f64> {
    let n = values.nrows() as f64;
    values.mapv(f64::abs).sum_axis(Axis(0)) / n
}

/// (content mean-|φ| averaged over dims, speaker mean-|φ| averaged over dims)
fn segment_means(values: ArrayView2<'_, f64>, d_s: usize, d_c: usize) -> Result<(f64, f64)> {
    if d_s == 0 || d_c == 0 {
        return Err(Error::DegenerateAttribution(
            "both speaker and content segments must be nonempty".into(),
        ));
    }
    if values.nrows() == 0 {
        return Err(Error::Empty("attribution matrix"));
    }
    let per_dim = per_dim_mean_abs(values);
    let speaker = per_dim.slice(s![..d_s]).sum() / d_s as f64;
    let content = per_dim.slice(s![d_s..]).sum() / d_c as f64;
    if !(speaker > 0.0) {
        return Err(Error::DegenerateAttribution(
            "speaker segment carries no attribution mass".into(),
        ));
    }
    Ok((content, speaker))
}

pub fn mean_score(attr: &AttributionMatrix) -> Result<f64> {
    let (content, speaker) = segment_means(attr.values.view(), attr.d_s, attr.d_c)?;
    Ok(content / speaker)
}

pub fn sum_score(attr: &AttributionMatrix) -> Result<f64> {
    let (content, speaker) = segment_means(attr.values.view(), attr.d_s, attr.d_c)?;
    let content_mass = content * attr.d_c as f64;
    let speaker_mass = speaker * attr.d_s as f64;
    Ok(content_mass / (content_mass + speaker_mass))
}

/// `m·d_c / (m·d_c + d_s)`
pub fn sum_score_from_mean(mean_score: f64, d_c: usize, d_s: usize) -> f64 {
    let content = mean_score * d_c as f64;
    content / (content + d_s as f64)
}

/// Per-batch mean scores over consecutive batches (the last may be partial).
pub fn batch_stability(attr: &AttributionMatrix, batch_size: usize) -> Result<BatchStability> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let n = attr.n_samples();
    if n == 0 {
        return Err(Error::Empty("attribution matrix"));
    }
    let mut batch_scores = Vec::with_capacity(n.div_ceil(batch_size));
    for start in (0..n).step_by(batch_size) {
        let end = (start + batch_size).min(n);
        let (content, speaker) =
            segment_means(attr.values.slice(s![start..end, ..]), attr.d_s, attr.d_c)?;
        batch_scores.push(content / speaker);
    }
    let k = batch_scores.len() as f64;
    let mean = batch_scores.iter().sum::<f64>() / k;
    let (batch_std, std_defined) = if batch_scores.len() < 2 {
        (0.0, false)
    } else {
        let var = batch_scores.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / k;
        (var.sqrt(), true)
    };
    let batch_cv = if mean > 0.0 { batch_std / mean } else { 0.0 };
    Ok(BatchStability {
        batch_scores,
        batch_std,
        batch_cv,
        std_defined,
    })
}

pub fn compute_report(attr: &AttributionMatrix, batch_size: usize) -> Result<TrqReport> {
    let stability = batch_stability(attr, batch_size)?;
    Ok(TrqReport {
        schema_version: REPORT_SCHEMA_VERSION,
        n_samples: attr.n_samples(),
        d_s: attr.d_s,
        d_c: attr.d_c,
        mean_score: mean_score(attr)?,
        sum_score: sum_score(attr)?,
        per_dim_mean_abs: per_dim_mean_abs(attr.values.view()).to_vec(),
        batch_size,
        batch_scores: stability.batch_scores,
        batch_std: stability.batch_std,
        batch_cv: stability.batch_cv,
        batch_std_defined: stability.std_defined,
    })
}

/// Mean |φ| per (speaker label, dimension); rows indexed by label.
pub fn per_label_importance(attr: &AttributionMatrix) -> Array2<f64> {
    let n_labels = attr.target_class.iter().map(|l| l + 1).max().unwrap_or(0);
    let mut sums = Array2::<f64>::zeros((n_labels, attr.values.ncols()));
    let mut counts = vec![0usize; n_labels];
    for (row, &label) in attr.values.rows().into_iter().zip(&attr.target_class) {
        let mut acc = sums.row_mut(label);
        acc.zip_mut_with(&row, |a, v| *a += v.abs());
        counts[label] += 1;
    }
    for (mut row, &c) in sums.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    sums
}
