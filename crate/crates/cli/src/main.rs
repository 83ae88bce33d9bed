//! `trq`: command-line driver for the timbre residual benchmark and filters.
//!
//! Exit codes: 0 success, 1 unmet benchmark precondition (the classifier did
//! not reach the target accuracy, or the attributions are degenerate), 2 any
//! input or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use trq_core::filters::{CropConfig, FilterConfig, NoiseConfig};
use trq_core::pipeline::{self, PipelineConfig};
use trq_core::report::ReportFormat;
use trq_core::synth::generate_synthetic_corpus;
use trq_core::SynthConfig;

const DEFAULT_OUTPUT_ROOT: &str = "trq-output";

#[derive(Parser)]
#[command(name = "trq", version, about = "Timbre residual quantification and SHAP-driven timbre filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a controllable leakage coefficient.
    Synth(SynthArgs),
    /// Train, explain and score one corpus.
    Benchmark(RunArgs),
    /// Filter a corpus with the attributions of a benchmark run, then rerun.
    Filter {
        #[command(flatten)]
        run: RunArgs,
        /// Benchmark run whose attributions drive the filter.
        #[arg(long)]
        run_id: String,
    },
    /// Re-emit the report of an existing run.
    Report {
        /// Run directory (or use --output-dir with --run-id).
        #[arg(long, conflicts_with = "run_id")]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long, env = "TRQ_OUTPUT_ROOT")]
        output_dir: Option<PathBuf>,
        /// Destination directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        formats: Option<Vec<ReportFormat>>,
    },
    /// synth → benchmark → filter → benchmark → report.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        synth: SynthOverrides,
        /// Skip corpus generation and use --manifest instead.
        #[arg(long)]
        no_synth: bool,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus directory to create.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with a SynthConfig; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: SynthOverrides,
}

#[derive(Args, Default)]
struct SynthOverrides {
    #[arg(long)]
    n_speakers: Option<usize>,
    #[arg(long)]
    utterances_per_speaker: Option<usize>,
    #[arg(long)]
    n_frames: Option<usize>,
    #[arg(long)]
    d_c: Option<usize>,
    #[arg(long)]
    d_s: Option<usize>,
    #[arg(long)]
    d_content_factor: Option<usize>,
    #[arg(long)]
    d_speaker_factor: Option<usize>,
    #[arg(long)]
    leakage_lambda: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    synth_seed: Option<u64>,
}

impl SynthOverrides {
    fn apply(&self, c: &mut SynthConfig) {
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field { c.$target = v; })*
            };
        }
        set!(n_speakers => n_speakers, utterances_per_speaker => utterances_per_speaker,
             n_frames => n_frames, d_c => d_c, d_s => d_s,
             d_content_factor => d_content_factor, d_speaker_factor => d_speaker_factor,
             leakage_lambda => leakage_lambda,
             noise_sigma => noise_sigma, synth_seed => seed);
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON file with a PipelineConfig; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output root holding runs/ and filtered/.
    #[arg(long, env = "TRQ_OUTPUT_ROOT")]
    output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    formats: Option<Vec<ReportFormat>>,

    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    train_seed: Option<u64>,
    /// Three comma-separated hidden widths.
    #[arg(long, value_delimiter = ',', overrides_with = "hidden_dims")]
    hidden_dims: Option<Vec<usize>>,
    #[arg(long)]
    train_batch_size: Option<usize>,

    #[arg(long)]
    n_baselines: Option<usize>,
    #[arg(long)]
    explain_batch_size: Option<usize>,
    #[arg(long)]
    local_smoothing_sigma: Option<f64>,
    #[arg(long)]
    n_path_samples: Option<usize>,
    #[arg(long)]
    explain_seed: Option<u64>,

    /// Named filter preset: noise-1, noise-0.6, noise-0.3, crop-10, crop-17.
    #[arg(long, conflicts_with_all = ["sigma_scale", "ratio_r"])]
    preset: Option<String>,
    /// SHAP Noise load; negative values subtract the scaled SHAP profile.
    #[arg(long, conflicts_with = "ratio_r")]
    sigma_scale: Option<f64>,
    #[arg(long, requires = "sigma_scale")]
    mu_offset: Option<f64>,
    /// SHAP Cropping ratio.
    #[arg(long, requires = "w_cut")]
    ratio_r: Option<f64>,
    #[arg(long, requires = "ratio_r")]
    w_cut: Option<f64>,
}

impl RunArgs {
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => load_config(path)?,
            None => PipelineConfig::new(DEFAULT_OUTPUT_ROOT),
        };
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        if let Some(m) = &self.manifest {
            config.manifest_path = Some(m.clone());
        }
        if let Some(f) = &self.formats {
            config.report_formats = f.clone();
        }
        let t = &mut config.train;
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = self.max_epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.train_seed {
            t.seed = v;
        }
        if let Some(v) = &self.hidden_dims {
            t.hidden_dims = v.as_slice().try_into().map_err(|_| {
                trq_core::Error::InvalidConfig(format!(
                    "--hidden-dims takes exactly 3 widths, got {}",
                    v.len()
                ))
            })?;
        }
        if let Some(v) = self.train_batch_size {
            t.batch_size = v;
        }
        let e = &mut config.explain;
        if let Some(v) = self.n_baselines {
            e.n_baselines = v;
        }
        if let Some(v) = self.explain_batch_size {
            e.batch_size = v;
        }
        if let Some(v) = self.local_smoothing_sigma {
            e.local_smoothing_sigma = v;
        }
        if let Some(v) = self.n_path_samples {
            e.n_path_samples = v;
        }
        if let Some(v) = self.explain_seed {
            e.seed = v;
        }
        if let Some(name) = &self.preset {
            config.filter = Some(FilterConfig::preset(name).with_context(|| {
                format!(
                    "unknown preset {name}; expected one of {}",
                    FilterConfig::PRESET_NAMES.join(", ")
                )
            })?);
        } else if let Some(sigma_scale) = self.sigma_scale {
            config.filter = Some(FilterConfig::ShapNoise(NoiseConfig {
                sigma_scale,
                mu_offset: self.mu_offset.unwrap_or(0.0),
            }));
        } else if let (Some(ratio_r), Some(w_cut)) = (self.ratio_r, self.w_cut) {
            config.filter = Some(FilterConfig::ShapCrop(CropConfig { ratio_r, w_cut }));
        }
        Ok(config)
    }
}

/// Reads a PipelineConfig whose `output_dir` may be omitted.
fn load_config(path: &Path) -> anyhow::Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    if let Some(obj) = value.as_object_mut() {
        obj.entry("output_dir")
            .or_insert_with(|| DEFAULT_OUTPUT_ROOT.into());
    }
    serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let mut config = match &args.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading config {}", path.display()))?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("parsing config {}", path.display()))?
                }
                None => SynthConfig::default(),
            };
            args.overrides.apply(&mut config);
            let (manifest, _) = generate_synthetic_corpus(&config, &args.out)?;
            eprintln!(
                "wrote {} utterances to {}",
                manifest.utterances.len(),
                args.out.display()
            );
        }
        Command::Benchmark(args) => {
            let config = args.resolve()?;
            let outcome = pipeline::run_benchmark(&config)?;
            eprintln!(
                "run {} ({} epochs): {}",
                outcome.run_id,
                outcome.train_report.epochs_run,
                outcome.run_dir.display()
            );
            print_json(&outcome.report)?;
        }
        Command::Filter { run, run_id } => {
            let config = run.resolve()?;
            let outcome = pipeline::run_filter(&config, &run_id)?;
            eprintln!(
                "filtered corpus {}, run {}",
                outcome.corpus_dir.display(),
                outcome.benchmark.run_id
            );
            print_json(&outcome.comparison)?;
        }
        Command::Report {
            run_dir,
            run_id,
            output_dir,
            out,
            formats,
        } => {
            let dir = match (run_dir, run_id) {
                (Some(dir), _) => dir,
                (None, Some(id)) => {
                    let root = output_dir.unwrap_or_else(|| DEFAULT_OUTPUT_ROOT.into());
                    PipelineConfig::new(root).run_dir(&id)
                }
                (None, None) => bail!(trq_core::Error::InvalidConfig(
                    "report needs --run-dir or --run-id".into()
                )),
            };
            let formats = formats.unwrap_or_else(|| ReportFormat::ALL.to_vec());
            let out = out.unwrap_or_else(|| dir.clone());
            for path in pipeline::rerender_report(&dir, &formats, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Pipeline {
            run,
            synth,
            no_synth,
        } => {
            let mut config = run.resolve()?;
            if no_synth {
                config.synth = None;
            } else {
                let mut s = config.synth.take().unwrap_or_default();
                synth.apply(&mut s);
                config.synth = Some(s);
            }
            let summary = pipeline::run_pipeline(&config)?;
            print_json(&summary)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let precondition = err
                .downcast_ref::<trq_core::Error>()
                .is_some_and(trq_core::Error::is_precondition);
            ExitCode::from(if precondition { 1 } else { 2 })
        }
    }
}
