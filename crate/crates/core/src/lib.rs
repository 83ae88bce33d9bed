//! Timbre residual quantification for speech content embeddings.
//!
//! The crate measures how much speaker (timbre) information survives in the
//! content embeddings of a speech pre-training model, and removes it with two
//! attribution-driven transforms. Everything operates on embedding files, so no
//! deep-learning runtime is needed:
//!
//! * [`store`] loads corpora in the manifest + NPY interchange format and builds
//!   fused `[speaker; content]` feature rows.
//! * [`classifier`] trains the four-layer ReLU speaker classifier and computes
//!   exact input gradients.
//! * [`explainer`] produces Gradient-SHAP attributions, with an exact Shapley
//!   enumerator for validation on small models.
//! * [`trq`] turns attributions into the mean/sum residual scores and batch
//!   stability statistics.
//! * [`filters`] implements the SHAP Noise and SHAP Cropping transforms.
//! * [`synth`] generates corpora with a controllable leakage coefficient.
//! * [`pipeline`] and [`report`] orchestrate runs and write their artifacts.

pub mod classifier;
pub mod error;
pub mod explainer;
pub mod filters;
pub mod npy;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod rng;
pub mod store;
pub mod svg;
pub mod synth;
pub mod trq;

pub use classifier::{MlpParams, TrainConfig, TrainReport};
pub use error::{Error, Result};
pub use explainer::{AttributionMatrix, ExplainConfig};
pub use filters::{CropConfig, FilterConfig, GlobalShapVector, NoiseConfig};
pub use store::{FusedDataset, Manifest, UtteranceRecord};
pub use synth::SynthConfig;
pub use trq::TrqReport;
