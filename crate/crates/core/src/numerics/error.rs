use thiserror::Error;

/// Errors from tensor construction, graph building/execution, and optimizers.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("shape mismatch at node `{node}`: {details}")]
    ShapeMismatch { node: String, details: String },

    #[error("non-finite value produced at node `{node}`")]
    NonFinite { node: String },

    #[error("leaf `{0}` has no bound value")]
    UnboundLeaf(String),

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("gradient check aborted: node `{node}` is within {limit} of a kink (value {value})")]
    KinkProximity { node: String, value: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("i/o failure: {0}")]
    Io(String),

    #[error("malformed parameter file: {0}")]
    Format(String),
}

impl From<std::io::Error> for NumericsError {
    fn from(e: std::io::Error) -> Self {
        NumericsError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for NumericsError {
    fn from(e: serde_json::Error) -> Self {
        NumericsError::Format(e.to_string())
    }
}
