//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate benchmark record for ({node_id}, {network}, batch {batch_size}) at line {line}")]
    DuplicateRecord {
        node_id: String,
        network: String,
        batch_size: u64,
        line: usize,
    },

    #[error("non-positive value in field `{field}` at line {line}: {value}")]
    NonPositiveValue {
        field: String,
        line: usize,
        value: String,
    },

    #[error("invalid {what}: {message}")]
    InvalidInput { what: String, message: String },

    #[error("curve fit needs at least 2 samples with distinct batch sizes, got {distinct}")]
    TooFewSamples { distinct: usize },

    #[error("model needs {model_bytes} B but node `{node_id}` has {dram_bytes} B of DRAM")]
    ModelDoesNotFit {
        node_id: String,
        model_bytes: u64,
        dram_bytes: u64,
    },

    #[error("model fits on node `{node_id}` but not a single sample does (free {free_bytes} B, sample {sample_bytes} B)")]
    NoSampleFits {
        node_id: String,
        free_bytes: u64,
        sample_bytes: u64,
    },

    #[error("no candidate batch size fits under the memory cap {mem_cap}")]
    NoFeasibleCandidate { mem_cap: u64 },

    #[error("node `{node_id}` has no throughput curve for network `{network}`")]
    MissingCurve { node_id: String, network: String },

    #[error("tuning error on node `{node_id}`: {source}")]
    NodeTuning {
        node_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient data: cannot fill even one step ({detail})")]
    InsufficientData { detail: String },

    #[error("unknown node `{node_id}` in {context}")]
    UnknownNode { node_id: String, context: String },

    #[error("tune result and partition plan disagree: {detail}")]
    InconsistentPlan { detail: String },

    #[error("calibration is under-determined: {targets} target(s) for {free_params} free parameter(s)")]
    UnderDetermined { targets: usize, free_params: usize },

    #[error("aggregate throughput is zero; energy per image undefined")]
    ZeroThroughput,

    #[error("gradient tensors have mismatched lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: {detail}")]
    DimensionMismatch { detail: String },

    #[error("non-finite value produced in layer {layer} during {phase}")]
    NonFinite { layer: usize, phase: String },

    #[error("ring schedule needs at least 2 workers, got {n_workers}")]
    RingTooSmall { n_workers: usize },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidInput {
            what: what.into(),
            message: message.into(),
        }
    }
}
