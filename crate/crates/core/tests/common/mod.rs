//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use trq_core::pipeline::PipelineConfig;
use trq_core::{ExplainConfig, SynthConfig, TrainConfig};

/// A corpus small enough for sub-second benchmarks.
pub fn small_synth(lambda: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        n_speakers: 8,
        utterances_per_speaker: 10,
        n_frames: 6,
        d_c: 32,
        d_s: 8,
        d_content_factor: 8,
        d_speaker_factor: 4,
        leakage_lambda: lambda,
        noise_sigma: 0.1,
        seed,
    }
}

pub fn fast_config(output_dir: &Path) -> PipelineConfig {
    PipelineConfig {
        train: TrainConfig::default(),
        explain: ExplainConfig {
            n_baselines: 40,
            n_path_samples: 100,
            batch_size: 32,
            ..ExplainConfig::default()
        },
        ..PipelineConfig::new(output_dir)
    }
}

/// Every regular file under `root`, keyed by relative path.
pub fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
