use std::path::PathBuf;

use crate::snn::NeuronAddress;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which half of a trigger verification failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyStage {
    /// Hard inference of the input trigger does not reproduce the pattern.
    Reproduction,
    /// The pattern occurs somewhere in a clean run of the Trojan neuron.
    CleanOccurrence,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("neuron address {0} out of range: {1}")]
    Address(NeuronAddress, String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("model file error: {0}")]
    Model(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("no refractory-legal pattern up to d = {tightest} avoids every recorded window")]
    PatternExhausted { tightest: usize },

    #[error("no input trigger reached the pattern; best Hamming distance {best_loss}")]
    TriggerExhausted {
        best_loss: usize,
        best: Box<crate::trigger::TriggerArtifact>,
    },

    #[error("trigger verification failed ({stage:?}): {detail}")]
    Verification { stage: VerifyStage, detail: String },

    #[error("simulator invariant violated: {0}")]
    Simulator(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
