use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input shapes or value ranges do not match what the operation requires.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("manifest parse error at line {line}: {msg}")]
    ManifestParse { line: usize, msg: String },

    #[error("manifest validation error at line {line}: {msg}")]
    ManifestValidation { line: usize, msg: String },

    #[error("ingestion error for sample `{sample_id}`: {msg}")]
    Ingestion { sample_id: String, msg: String },

    #[error("checkpoint error on `{array}`: {msg}")]
    Checkpoint { array: String, msg: String },

    #[error("unsupported checkpoint version `{found}` (expected `{expected}`)")]
    CheckpointVersion { found: String, expected: String },

    /// A loss component became non-finite.
    #[error("training diverged: {component} = {value}")]
    Divergence { component: String, value: f64 },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("missing parameter group `{0}`")]
    MissingParams(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),
}
