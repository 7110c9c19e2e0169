// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the toolkit.

use std::path::PathBuf;

/// Errors produced while loading, running, or analysing a model.
#[derive(Debug, thiserror::Error)]
pub enum GccError {
    #[error("manifest/blob inconsistency: {0}")]
    ManifestBlob(String),

    #[error("unsupported layer: {0}")]
    UnsupportedLayer(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("bad input shape: expected {expected:?}, got {got:?}")]
    BadInputShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("no successor probe layer after probe {0}")]
    NoSuccessorProbe(usize),

    #[error("no successor layer for neuron {0}")]
    NoSuccessorLayer(String),

    #[error("bad channel {channel} (tensor has {channels} channels)")]
    BadChannel { channel: usize, channels: usize },

    #[error("bad neuron {0}")]
    BadNeuron(String),

    #[error("bad ablation: {0}")]
    BadAblation(String),

    #[error("edge ablation unsupported for this span: {0}")]
    EdgeAblationUnsupported(String),

    #[error("dataset/model mismatch: {0}")]
    DatasetModelMismatch(String),

    #[error("malformed dataset pack: {0}")]
    DatasetPack(String),

    #[error("malformed index file: {0}")]
    IndexFile(String),

    #[error("index/model mismatch: index built for model {index}, current model is {model}")]
    IndexModelMismatch { index: String, model: String },

    #[error("insufficient tail data: {got} exceedances, need {need}")]
    InsufficientTailData { got: usize, need: usize },

    #[error("insufficient tail variation")]
    InsufficientTailVariation,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown {kind} strategy {name:?} (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("cannot merge across queries: {0} vs {1}")]
    MixedQueries(String, String),

    #[error("bad class {class} (model has {classes} classes)")]
    BadClass { class: usize, classes: usize },

    #[error("no spatial map for neuron {0}")]
    NoSpatialMap(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

impl GccError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GccError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bugs rather than bad inputs.
    pub fn is_internal(&self) -> bool {
        matches!(self, GccError::Invariant(_))
    }
}

pub type Result<T> = std::result::Result<T, GccError>;

impl From<serde_json::Error> for GccError {
    fn from(e: serde_json::Error) -> Self {
        GccError::Serde(e.to_string())
    }
}
