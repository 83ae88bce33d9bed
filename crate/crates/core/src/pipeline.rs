//! Run orchestration: benchmark, filter, and the end-to-end pipeline.
//!
//! Everything that can fail on bad input or an unmet precondition (manifest
//! validation, array loading, training, explanation) happens in memory before
//! the run directory is touched. Artifacts are then written to a staging
//! directory and renamed into place, so a failed run leaves nothing behind.
//!
//! Run directories are content-addressed: `runs/<id>` where `id` is a digest of
//! the train/explain configuration and of every input byte (manifest and
//! arrays). No artifact embeds absolute paths or timestamps.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{train_overfit, MlpParams, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::explainer::{gradient_shap_explain, select_baselines, AttributionMatrix, ExplainConfig};
use crate::filters::{aggregate_global_shap, FilterBlock, FilterConfig, PreparedFilter};
use crate::npy;
use crate::report::{emit_report, read_report, ReportFormat, REPORT_JSON};
use crate::store::{build_fused_dataset, load_manifest, Manifest, MANIFEST_FILE};
use crate::synth::{generate_synthetic_corpus, SynthConfig};
use crate::trq::{compute_report, TrqReport};

pub const RUNS_DIR: &str = "runs";
pub const FILTERED_DIR: &str = "filtered";
pub const CORPUS_DIR: &str = "corpus";
pub const ATTRIBUTIONS_STEM: &str = "attributions";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const SUMMARY_FILE: &str = "pipeline_summary.json";
pub const DEFAULT_FILTER_PRESET: &str = "noise-1";
const RUN_ID_HEX_LEN: usize = 16;

fn default_formats() -> Vec<ReportFormat> {
    ReportFormat::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Input corpus. Unused by `pipeline` when `synth` is set.
    #[serde(default)]
    pub manifest_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub explain: ExplainConfig,
    #[serde(default)]
    pub filter: Option<FilterConfig>,
    #[serde(default = "default_formats")]
    pub report_formats: Vec<ReportFormat>,
    /// Synthetic corpus generated first by `pipeline`.
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

impl PipelineConfig {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest_path: None,
            output_dir: output_dir.into(),
            train: TrainConfig::default(),
            explain: ExplainConfig::default(),
            filter: None,
            report_formats: default_formats(),
            synth: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.explain.validate()?;
        if let Some(filter) = &self.filter {
            filter.validate()?;
        }
        if let Some(synth) = &self.synth {
            synth.validate()?;
        }
        Ok(())
    }

    fn manifest(&self) -> Result<&Path> {
        self.manifest_path
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("manifest_path is required".into()))
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.output_dir.join(RUNS_DIR).join(run_id)
    }
}

/// Everything needed to reproduce a run, minus the input bytes themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub run_id: String,
    pub tool_version: String,
    pub corpus_name: String,
    pub model_id: String,
    pub layer: i64,
    pub n_utterances: usize,
    pub d_s: usize,
    pub d_c: usize,
    /// SHA-256 over the manifest and every referenced array, in manifest order.
    pub input_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterBlock>,
    pub train: TrainConfig,
    pub explain: ExplainConfig,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub report: TrqReport,
    pub train_report: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub source_run: String,
    pub filtered_run: String,
    pub filter: FilterConfig,
    pub mean_score_before: f64,
    pub mean_score_after: f64,
    pub sum_score_before: f64,
    pub sum_score_after: f64,
    /// `before − after` of the mean score, in score units.
    pub score_drop: f64,
    /// `score_drop / before`.
    pub relative_drop: f64,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub corpus_dir: PathBuf,
    pub benchmark: BenchmarkOutcome,
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub corpus_name: String,
    pub benchmark_run: String,
    pub filtered_run: String,
    pub comparison: Comparison,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Digest of the manifest document and all array bytes it references.
pub fn input_digest(manifest: &Manifest) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(manifest)?);
    for i in 0..manifest.utterances.len() {
        for path in [manifest.content_path(i), manifest.speaker_path(i)] {
            let bytes = read_bytes(&path)?;
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

fn run_id(train: &TrainConfig, explain: &ExplainConfig, input_digest: &str) -> Result<String> {
    let key = serde_json::json!({
        "train": train,
        "explain": explain,
        "input_digest": input_digest,
    });
    let mut hex = hex::encode(Sha256::digest(serde_json::to_vec(&key)?));
    hex.truncate(RUN_ID_HEX_LEN);
    Ok(hex)
}

/// Writes into a sibling staging directory, then swaps it into `dir`.
fn publish_dir(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = dir
        .parent()
        .ok_or_else(|| Error::InvalidConfig(format!("{} has no parent", dir.display())))?;
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let staging = parent.join(format!(".staging-{name}"));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    if let Err(e) = fill(&staging) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))
}

/// Builds the fused dataset, trains, explains and scores `config.manifest_path`.
pub fn run_benchmark(config: &PipelineConfig) -> Result<BenchmarkOutcome> {
    config.validate()?;
    let manifest = load_manifest(config.manifest()?)?;
    benchmark_manifest(config, &manifest)
}

fn benchmark_manifest(config: &PipelineConfig, manifest: &Manifest) -> Result<BenchmarkOutcome> {
    let dataset = build_fused_dataset(manifest)?;
    let baselines = select_baselines(&dataset, config.explain.n_baselines, config.explain.seed)?;
    let digest = input_digest(manifest)?;
    let run_id = run_id(&config.train, &config.explain, &digest)?;

    let (params, train_report) = train_overfit(&dataset, &config.train)?;
    let mut attr = gradient_shap_explain(&params, &dataset, baselines.view(), &config.explain)?;
    // Score exactly what is persisted, so `report` on the run reproduces it.
    attr.values.mapv_inplace(|v| v as f32 as f64);
    let report = compute_report(&attr, config.explain.batch_size)?;

    let provenance = Provenance {
        run_id: run_id.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        corpus_name: manifest.corpus_name.clone(),
        model_id: manifest.model_id.clone(),
        layer: manifest.layer,
        n_utterances: manifest.utterances.len(),
        d_s: manifest.d_s,
        d_c: manifest.d_c,
        input_digest: digest,
        filter: manifest.filter.clone(),
        train: config.train.clone(),
        explain: config.explain.clone(),
    };
    let run_dir = config.run_dir(&run_id);
    publish_dir(&run_dir, |dir| {
        npy::write_matrix_f64(&dir.join("fused.npy"), dataset.features.view())?;
        write_json(&dir.join("labels.json"), &dataset.labels)?;
        params.save(&dir.join("model.tpmlp"))?;
        write_json(&dir.join("train_report.json"), &train_report)?;
        npy::write_matrix_f64(&dir.join("baselines.npy"), baselines.view())?;
        attr.save(dir, ATTRIBUTIONS_STEM, Some(&config.explain))?;
        let mut formats = config.report_formats.clone();
        if !formats.contains(&ReportFormat::Json) {
            formats.push(ReportFormat::Json);
        }
        emit_report(&report, Some(&attr), &formats, dir)?;
        let per_dim: Vec<f32> = report.per_dim_mean_abs.iter().map(|&v| v as f32).collect();
        npy::write_vector(&dir.join("per_dim_mean_abs.npy"), &per_dim)?;
        write_json(&dir.join(PROVENANCE_FILE), &provenance)
    })?;
    Ok(BenchmarkOutcome {
        run_id,
        run_dir,
        report,
        train_report,
    })
}

pub fn load_run_attributions(run_dir: &Path) -> Result<AttributionMatrix> {
    if !run_dir.join(format!("{ATTRIBUTIONS_STEM}.json")).is_file() {
        return Err(Error::MissingRun(run_dir.to_path_buf()));
    }
    AttributionMatrix::load(run_dir, ATTRIBUTIONS_STEM)
}

pub fn load_run_report(run_dir: &Path) -> Result<TrqReport> {
    let path = run_dir.join(REPORT_JSON);
    if !path.is_file() {
        return Err(Error::MissingRun(run_dir.to_path_buf()));
    }
    read_report(&path)
}

pub fn load_run_model(run_dir: &Path) -> Result<MlpParams> {
    MlpParams::load(&run_dir.join("model.tpmlp"))
}

fn filter_digest(filter: &FilterConfig) -> Result<String> {
    let mut hex = hex::encode(Sha256::digest(serde_json::to_vec(filter)?));
    hex.truncate(8);
    Ok(hex)
}

/// Writes `source` with every content matrix passed through `filter`.
///
/// Speaker arrays and any `factors/` directory are copied verbatim.
pub fn write_filtered_corpus(
    source: &Manifest,
    filter: &PreparedFilter,
    block: FilterBlock,
    out_dir: &Path,
) -> Result<Manifest> {
    if out_dir.join(MANIFEST_FILE) == source.root.join(MANIFEST_FILE) {
        return Err(Error::InvalidConfig("filtered corpus would overwrite its source".into()));
    }
    let mut manifest = source.clone();
    manifest.filter = Some(block);
    manifest.root = out_dir.to_path_buf();
    publish_dir(out_dir, |dir| {
        (0..source.utterances.len()).into_par_iter().try_for_each(|i| {
            let record = source.load_record(i)?;
            let filtered = filter.apply(record.content.view())?;
            let entry = &source.utterances[i];
            let content_out = dir.join(&entry.content_path);
            let speaker_out = dir.join(&entry.speaker_path);
            for p in [&content_out, &speaker_out] {
                if let Some(parent) = p.parent() {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
            }
            npy::write_matrix(&content_out, filtered.view())?;
            fs::copy(source.speaker_path(i), &speaker_out).map_err(|e| Error::io(&speaker_out, e))?;
            Ok::<_, Error>(())
        })?;
        copy_dir_if_present(&source.root.join("factors"), &dir.join("factors"))?;
        manifest.save(dir)?;
        Ok(())
    })?;
    Ok(manifest)
}

fn copy_dir_if_present(from: &Path, to: &Path) -> Result<()> {
    if !from.is_dir() {
        return Ok(());
    }
    fs::create_dir_all(to).map_err(|e| Error::io(to, e))?;
    let mut entries: Vec<_> = fs::read_dir(from)
        .map_err(|e| Error::io(from, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(from, e))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let target = to.join(entry.file_name());
        if entry.path().is_file() {
            fs::copy(entry.path(), &target).map_err(|e| Error::io(&target, e))?;
        }
    }
    Ok(())
}

/// Filters the corpus at `config.manifest_path` using the attributions of
/// benchmark run `source_run`, reruns the benchmark, and compares.
pub fn run_filter(config: &PipelineConfig, source_run: &str) -> Result<FilterOutcome> {
    config.validate()?;
    let filter = config
        .filter
        .ok_or_else(|| Error::InvalidConfig("no filter configured".into()))?;
    let source_dir = config.run_dir(source_run);
    let attr = load_run_attributions(&source_dir)?;
    let before = load_run_report(&source_dir)?;
    let manifest = load_manifest(config.manifest()?)?;
    if attr.d_c != manifest.d_c {
        return Err(Error::mismatch("filter vs manifest d_c", manifest.d_c, attr.d_c));
    }
    let prepared = PreparedFilter::new(&filter, aggregate_global_shap(&attr, source_run)?)?;
    let corpus_dir = config
        .output_dir
        .join(FILTERED_DIR)
        .join(format!("{source_run}-{}", filter_digest(&filter)?));
    let block = FilterBlock {
        filter,
        source_run: source_run.to_owned(),
    };
    let filtered = write_filtered_corpus(&manifest, &prepared, block, &corpus_dir)?;
    let benchmark = benchmark_manifest(config, &filtered)?;

    let after = &benchmark.report;
    let score_drop = before.mean_score - after.mean_score;
    let comparison = Comparison {
        source_run: source_run.to_owned(),
        filtered_run: benchmark.run_id.clone(),
        filter,
        mean_score_before: before.mean_score,
        mean_score_after: after.mean_score,
        sum_score_before: before.sum_score,
        sum_score_after: after.sum_score,
        score_drop,
        relative_drop: score_drop / before.mean_score,
    };
    write_json(&benchmark.run_dir.join(COMPARISON_FILE), &comparison)?;
    Ok(FilterOutcome {
        corpus_dir,
        benchmark,
        comparison,
    })
}

/// synth (optional) → benchmark → filter → benchmark → reports.
///
/// Without a configured filter the `noise-1` preset is used.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineSummary> {
    config.validate()?;
    let mut config = config.clone();
    if let Some(synth) = &config.synth {
        let corpus_dir = config.output_dir.join(CORPUS_DIR);
        generate_synthetic_corpus(synth, &corpus_dir)?;
        config.manifest_path = Some(corpus_dir.join(MANIFEST_FILE));
    }
    if config.filter.is_none() {
        config.filter = FilterConfig::preset(DEFAULT_FILTER_PRESET);
    }
    let manifest = load_manifest(config.manifest()?)?;
    let source = benchmark_manifest(&config, &manifest)?;
    let filtered = run_filter(&config, &source.run_id)?;
    let summary = PipelineSummary {
        corpus_name: manifest.corpus_name,
        benchmark_run: source.run_id,
        filtered_run: filtered.benchmark.run_id,
        comparison: filtered.comparison,
    };
    write_json(&config.output_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Re-emits the report of an existing run in the requested formats.
pub fn rerender_report(run_dir: &Path, formats: &[ReportFormat], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let report = load_run_report(run_dir)?;
    let attr = load_run_attributions(run_dir).ok();
    emit_report(&report, attr.as_ref(), formats, out_dir)
}
