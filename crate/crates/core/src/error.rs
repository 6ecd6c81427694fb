use std::path::PathBuf;

use crate::graph::ProtocolId;

/// Errors raised by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("snapshot for week {0} has no holdings")]
    EmptySnapshot(u32),
    #[error("need at least 2 snapshots, got {0}")]
    InsufficientSnapshots(usize),
    #[error("invalid snapshot data: {0}")]
    InvalidSnapshot(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("TF-IDF corpus has no non-empty description")]
    EmptyCorpus,
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(ProtocolId),
    #[error("protocols without a category: {0:?}")]
    MissingCategory(Vec<ProtocolId>),
    #[error("all values are zero")]
    AllZero,
    #[error("graph has {0} node(s); at least 2 required")]
    TooFewNodes(usize),
    #[error("distress threshold {0} is outside (0, 1)")]
    InvalidTau(f64),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario `{0}` selects no protocol")]
    EmptySelection(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("horizon {0} is not configured for this model")]
    UnknownHorizon(u32),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("non-finite loss at epoch {epoch}, anchor {anchor}, horizon {horizon}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        anchor: usize,
        horizon: u32,
        detail: String,
    },
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("no positive labels")]
    NoPositives,
    #[error("empty input")]
    Empty,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
