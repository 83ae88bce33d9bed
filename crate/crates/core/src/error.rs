use std::path::PathBuf;

use crate::classifier::TrainReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing array: {0}")]
    MissingArray(PathBuf),

    #[error("malformed npy file: {0}")]
    Npy(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(
        "classifier reached accuracy {:.4} after {} epochs, target {:.4}",
        report.final_accuracy, report.epochs_run, target
    )]
    AccuracyNotReached { report: TrainReport, target: f64 },

    #[error("explainer precondition unmet: classifier accuracy {0:.4} on explained samples is not 1.0")]
    ExplainPrecondition(f64),

    #[error("degenerate attribution: {0}")]
    DegenerateAttribution(String),

    #[error("degenerate SHAP vector: population standard deviation is zero")]
    DegenerateShap,

    #[error("missing attribution run: {0}")]
    MissingRun(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(
        context: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True when the error is a failed benchmark precondition rather than bad input.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::AccuracyNotReached { .. }
                | Error::ExplainPrecondition(_)
                | Error::DegenerateAttribution(_)
        )
    }
}
