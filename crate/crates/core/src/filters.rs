//! Attribution-driven timbre filters for frame-level content embeddings.
//!
//! Both filters start from a run-level [`GlobalShapVector`], the signed mean of
//! the content-segment attributions over all explained samples.
//!
//! * SHAP Noise standardizes that vector and adds
//!   `sigma_scale · standardized + mu_offset` to every frame.
//! * SHAP Cropping keeps the entries above the `(1 − r)` quantile, rescales them
//!   to `[0, w_cut]` by the maximum, and multiplies every frame by `1 − W`.
//!   With `w_cut > 1` high-attribution dims change sign.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainer::AttributionMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma_scale: f64,
    #[serde(default)]
    pub mu_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropConfig {
    pub ratio_r: f64,
    pub w_cut: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "parameters", rename_all = "snake_case")]
pub enum FilterConfig {
    ShapNoise(NoiseConfig),
    ShapCrop(CropConfig),
}

/// Provenance block recorded in the manifest of a filtered corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBlock {
    #[serde(flatten)]
    pub filter: FilterConfig,
    pub source_run: String,
}

/// Crop ratio used by the named crop presets.
pub const PRESET_CROP_RATIO: f64 = 0.2;

impl FilterConfig {
    /// Named parameter presets: `noise-1`, `noise-0.6`, `noise-0.3`,
    /// `crop-10`, `crop-17`. Noise presets use negative `sigma_scale`.
    pub fn preset(name: &str) -> Option<Self> {
        let noise = |sigma_scale| {
            Some(FilterConfig::ShapNoise(NoiseConfig {
                sigma_scale,
                mu_offset: 0.0,
            }))
        };
        let crop = |w_cut| {
            Some(FilterConfig::ShapCrop(CropConfig {
                ratio_r: PRESET_CROP_RATIO,
                w_cut,
            }))
        };
        match name {
            "noise-1" => noise(-1.0),
            "noise-0.6" => noise(-0.6),
            "noise-0.3" => noise(-0.3),
            "crop-10" => crop(10.0),
            "crop-17" => crop(17.0),
            _ => None,
        }
    }

    pub const PRESET_NAMES: [&'static str; 5] =
        ["noise-1", "noise-0.6", "noise-0.3", "crop-10", "crop-17"];

    pub fn validate(&self) -> Result<()> {
        match self {
            FilterConfig::ShapNoise(n) => {
                if !(n.sigma_scale.is_finite() && n.mu_offset.is_finite()) {
                    return Err(Error::InvalidConfig("noise parameters must be finite".into()));
                }
            }
            FilterConfig::ShapCrop(c) => {
                if !(0.0..=1.0).contains(&c.ratio_r) {
                    return Err(Error::InvalidConfig("ratio_r must lie in [0, 1]".into()));
                }
                if !(c.w_cut >= 0.0 && c.w_cut.is_finite()) {
                    return Err(Error::InvalidConfig("w_cut must be nonnegative".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalShapVector {
    /// Signed per-dimension content attribution, length `d_c`.
    pub values: Array1<f64>,
    /// Run the attributions came from.
    pub source: String,
}

/// Signed mean over samples of the content-segment columns.
pub fn aggregate_global_shap(attr: &AttributionMatrix, source: &str) -> Result<GlobalShapVector> {
    if attr.n_samples() == 0 {
        return Err(Error::Empty("attribution matrix"));
    }
    let values = attr
        .content_segment()
        .mean_axis(Axis(0))
        .ok_or(Error::Empty("attribution matrix"))?;
    Ok(GlobalShapVector {
        values,
        source: source.to_owned(),
    })
}

/// `(v − mean) / std` with the population standard deviation.
pub fn standardize_shap(shap_c: &GlobalShapVector) -> Result<Array1<f64>> {
    let v = &shap_c.values;
    if v.is_empty() {
        return Err(Error::Empty("SHAP vector"));
    }
    let mean = v.sum() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::DegenerateShap);
    }
    Ok(v.mapv(|x| (x - mean) / std))
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile_linear(values: ArrayView1<'_, f64>, q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn check_width(content: ArrayView2<'_, f32>, d: usize) -> Result<()> {
    if content.ncols() != d {
        return Err(Error::mismatch("filter width vs content", d, content.ncols()));
    }
    Ok(())
}

pub fn apply_shap_noise(
    content: ArrayView2<'_, f32>,
    n_shap: ArrayView1<'_, f64>,
    config: &NoiseConfig,
) -> Result<Array2<f32>> {
    check_width(content, n_shap.len())?;
    let offsets = n_shap.mapv(|n| config.sigma_scale * n + config.mu_offset);
    let mut out = content.to_owned();
    for mut frame in out.rows_mut() {
        for (v, &o) in frame.iter_mut().zip(offsets.iter()) {
            // A zero offset leaves the stored value (including -0.0) untouched.
            if o != 0.0 {
                *v = (*v as f64 + o) as f32;
            }
        }
    }
    Ok(out)
}

/// Per-dimension crop weights `W` in `[0, w_cut]` (before any sign effects).
pub fn crop_weights(shap_c: &GlobalShapVector, config: &CropConfig) -> Array1<f64> {
    let v = &shap_c.values;
    if v.is_empty() {
        return Array1::zeros(0);
    }
    let threshold = quantile_linear(v.view(), 1.0 - config.ratio_r);
    let cropped = v.mapv(|x| if x > threshold { x } else { 0.0 });
    let max = cropped.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    if max > 0.0 {
        cropped.mapv(|x| config.w_cut * x / max)
    } else {
        Array1::zeros(v.len())
    }
}

pub fn apply_shap_crop(
    content: ArrayView2<'_, f32>,
    shap_c: &GlobalShapVector,
    config: &CropConfig,
) -> Result<Array2<f32>> {
    check_width(content, shap_c.values.len())?;
    let factors = crop_weights(shap_c, config).mapv(|w| 1.0 - w);
    let mut out = content.to_owned();
    for mut frame in out.rows_mut() {
        for (v, &f) in frame.iter_mut().zip(factors.iter()) {
            *v = (*v as f64 * f) as f32;
        }
    }
    Ok(out)
}

/// A filter with its run-level vector resolved, ready to apply per utterance.
#[derive(Debug, Clone)]
pub enum PreparedFilter {
    Noise { n_shap: Array1<f64>, config: NoiseConfig },
    Crop { shap: GlobalShapVector, config: CropConfig },
}

impl PreparedFilter {
    pub fn new(config: &FilterConfig, global: GlobalShapVector) -> Result<Self> {
        config.validate()?;
        Ok(match *config {
            FilterConfig::ShapNoise(config) => PreparedFilter::Noise {
                n_shap: standardize_shap(&global)?,
                config,
            },
            FilterConfig::ShapCrop(config) => PreparedFilter::Crop {
                shap: global,
                config,
            },
        })
    }

    pub fn apply(&self, content: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        match self {
            PreparedFilter::Noise { n_shap, config } => {
                apply_shap_noise(content, n_shap.view(), config)
            }
            PreparedFilter::Crop { shap, config } => apply_shap_crop(content, shap, config),
        }
    }
}
