//! Data-free diversity-based ensemble selection for one-shot federated
//! learning.
//!
//! The crate simulates a model market end to end: parties train small
//! classifiers on partitioned data and upload them once; the server picks an
//! ensemble team without touching any party data, by filtering low-score
//! models, representing each survivor by its classifier-layer parameters,
//! clustering those representations and keeping one representative per
//! cluster. Teams predict by training-set-size weighted plurality voting.
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`numerics`] | dense matrix, scalers, Jacobi eigensolver, PCA / kernel PCA |
//! | [`clustering`] | k-means, spectral and average-linkage clustering |
//! | [`data`] | synthetic blobs, CSV ingestion, party partitioning |
//! | [`training`] | softmax / MLP models, SGD with best-validation checkpoint |
//! | [`market`] | on-disk model store |
//! | [`selection`] | the selection pipeline and baseline selectors |
//! | [`ensemble`] | weighted voting and parameter fusion |
//! | [`analysis`] | diversity metrics, complete inspection, K sweeps, reports |
//! | [`experiment`] | JSON experiment config and the staged pipeline |

pub mod analysis;
pub mod clustering;
pub mod data;
pub mod ensemble;
pub mod experiment;
pub mod market;
pub mod numerics;
pub mod rng;
pub mod selection;
pub mod training;

use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    Convergence { sweeps: usize, residual: f64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("partition error: {0}")]
    Partition(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Training { epoch: usize },
    #[error("record `{0}` already exists")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("integrity error in record `{id}`, layer `{layer}`: {msg}")]
    Integrity { id: String, layer: String, msg: String },
    #[error("storage error at {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Storage {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
