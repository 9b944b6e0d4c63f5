use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("heat sources {0} and {1} overlap")]
    Overlap(usize, usize),

    #[error("heat source {0} lies outside the domain")]
    OutOfDomain(usize),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("sink segment endpoints do not land on grid nodes: {0}")]
    MisalignedSink(String),

    #[error("system has {nodes} unknowns, above the dense-oracle cap of {cap}")]
    TooLarge { nodes: usize, cap: usize },

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("pixel error field has a negative entry ({0})")]
    NegativeError(f64),

    #[error("epoch {epoch} outside schedule of {epochs} epochs")]
    Range { epoch: usize, epochs: usize },

    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    Divergence { epoch: usize, step: usize },

    #[error("could not place component {component} after {restarts} restarts")]
    Placement { component: usize, restarts: usize },

    #[error("no node lies under a heat source")]
    EmptyComponentMask,

    #[error("sample {0} has no temperature label")]
    MissingLabel(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
