//! Synthetic embedding corpora with a controllable speaker-leakage coefficient.
//!
//! Per speaker a factor `z_s ~ N(0, I)` is drawn; per utterance a content factor
//! `z_c ~ N(0, I)`. Every frame is `A·z_c + λ·B·z_s + ε` with
//! `ε ~ N(0, noise_sigma²)`, and the speaker embedding is `C·z_s` (noise free).
//! `A`, `B` and `C` are fixed Gaussian maps scaled to unit output variance.
//! The generating factors are written next to the corpus under `factors/`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy;
use crate::rng;
use crate::store::{Manifest, UtteranceEntry};

pub const CONTENT_FACTORS_FILE: &str = "factors/content_factors.npy";
pub const SPEAKER_FACTORS_FILE: &str = "factors/speaker_factors.npy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub n_frames: usize,
    pub d_c: usize,
    pub d_s: usize,
    pub d_content_factor: usize,
    pub d_speaker_factor: usize,
    pub leakage_lambda: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            utterances_per_speaker: 40,
            n_frames: 20,
            d_c: 64,
            d_s: 16,
            d_content_factor: 16,
            d_speaker_factor: 12,
            leakage_lambda: 1.0,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_owned()));
        if self.n_speakers < 2 {
            return fail("n_speakers must be at least 2");
        }
        if self.utterances_per_speaker == 0 || self.n_frames == 0 {
            return fail("utterances_per_speaker and n_frames must be positive");
        }
        if self.d_c == 0 || self.d_s == 0 || self.d_content_factor == 0 || self.d_speaker_factor == 0 {
            return fail("dimensions must be positive");
        }
        if self.d_content_factor > self.d_c {
            return fail("d_content_factor must not exceed d_c");
        }
        if self.d_speaker_factor > self.d_s.min(self.d_c) {
            return fail("d_speaker_factor must not exceed min(d_s, d_c)");
        }
        if !(0.0..=1.0).contains(&self.leakage_lambda) {
            return fail("leakage_lambda must lie in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be nonnegative");
        }
        Ok(())
    }

    pub fn n_utterances(&self) -> usize {
        self.n_speakers * self.utterances_per_speaker
    }
}

/// Generating factors of a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// `[n_utterances × d_content_factor]`, manifest order.
    pub content_factors: Array2<f64>,
    /// `[n_speakers × d_speaker_factor]`
    pub speaker_factors: Array2<f64>,
}

fn gaussian<R: rand::Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// Writes a corpus to `dir` and returns its manifest (rooted at `dir`).
pub fn generate_synthetic_corpus(config: &SynthConfig, dir: &Path) -> Result<(Manifest, SynthTruth)> {
    config.validate()?;
    for sub in ["content", "speaker", "factors"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut rng = rng::stream(config.seed, 0);
    let (kc, ks) = (config.d_content_factor, config.d_speaker_factor);
    let content_map = gaussian(&mut rng, config.d_c, kc, (1.0 / kc as f64).sqrt());
    let leak_map = gaussian(&mut rng, config.d_c, ks, (1.0 / ks as f64).sqrt());
    let speaker_map = gaussian(&mut rng, config.d_s, ks, (1.0 / ks as f64).sqrt());
    let speaker_factors = gaussian(&mut rng, config.n_speakers, ks, 1.0);
    let mut content_factors = Array2::zeros((config.n_utterances(), kc));

    let mut utterances = Vec::with_capacity(config.n_utterances());
    for s in 0..config.n_speakers {
        let z_s = speaker_factors.row(s);
        let leak = leak_map.dot(&z_s) * config.leakage_lambda;
        let speaker: Vec<f32> = speaker_map.dot(&z_s).iter().map(|&v| v as f32).collect();
        for u in 0..config.utterances_per_speaker {
            let idx = s * config.utterances_per_speaker + u;
            let z_c: Array1<f64> = (0..kc).map(|_| StandardNormal.sample(&mut rng)).collect();
            let base = content_map.dot(&z_c) + &leak;
            content_factors.row_mut(idx).assign(&z_c);
            let content = Array2::from_shape_fn((config.n_frames, config.d_c), |(_, j)| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                (base[j] + config.noise_sigma * eps) as f32
            });

            let id = format!("spk{s:03}_utt{u:03}");
            let content_path = PathBuf::from(format!("content/{id}.npy"));
            let speaker_path = PathBuf::from(format!("speaker/{id}.npy"));
            npy::write_matrix(&dir.join(&content_path), content.view())?;
            npy::write_vector(&dir.join(&speaker_path), &speaker)?;
            utterances.push(UtteranceEntry {
                utterance_id: id,
                speaker_label: s,
                content_path,
                speaker_path,
            });
        }
    }
    npy::write_matrix_f64(&dir.join(CONTENT_FACTORS_FILE), content_factors.view())?;
    npy::write_matrix_f64(&dir.join(SPEAKER_FACTORS_FILE), speaker_factors.view())?;

    let manifest = Manifest {
        corpus_name: format!(
            "synthetic-lambda{}-seed{}",
            config.leakage_lambda, config.seed
        ),
        model_id: "synthetic".into(),
        layer: 0,
        d_c: config.d_c,
        d_s: config.d_s,
        utterances,
        filter: None,
        root: dir.to_path_buf(),
    };
    manifest.save(dir)?;
    Ok((
        manifest,
        SynthTruth {
            content_factors,
            speaker_factors,
        },
    ))
}

/// Reads the content factors written beside a synthetic corpus.
pub fn load_content_factors(corpus_dir: &Path) -> Result<Array2<f64>> {
    Ok(npy::read_matrix(&corpus_dir.join(CONTENT_FACTORS_FILE))?.mapv(|v| v as f64))
}
