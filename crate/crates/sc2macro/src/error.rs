//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file {path} (line {line}): {reason}")]
    MalformedFile {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("requested {requested} replays but only {available} available")]
    InsufficientReplays { requested: usize, available: usize },

    #[error("value {value} out of range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("invalid reward {0}: expected 0 or 1")]
    InvalidReward(i64),

    #[error("unknown action id {id} for race {race}")]
    UnknownAction { race: String, id: u32 },

    #[error("unknown action name {name:?} for race {race}")]
    UnknownActionName { race: String, name: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("non-finite value detected in {tensor} at flat index {index} (step {step})")]
    AnomalyDetected {
        tensor: String,
        index: usize,
        step: usize,
    },

    #[error("LoRA rank {r} too large for layer {layer} with min(d, k) = {min_dim}")]
    RankTooLarge {
        r: usize,
        layer: String,
        min_dim: usize,
    },

    #[error("layer selector matched no layers")]
    EmptySelection,

    #[error("layer {0} missing from model parameters")]
    MissingLayer(String),

    #[error("loss mask selects no target positions")]
    EmptyTargetMask,

    #[error("prediction horizon {pred} does not match truth length {truth}")]
    HorizonMismatch { pred: usize, truth: usize },

    #[error("length mismatch: {left} predictions vs {right} outcomes")]
    LengthMismatch { left: usize, right: usize },

    #[error("zero-shot evaluation requires a different match-up (adapter trained on {0})")]
    SameMatchup(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite input to quantization")]
    NonFiniteInput,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
