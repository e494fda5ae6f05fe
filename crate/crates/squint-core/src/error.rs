use thiserror::Error;

/// Everything that can go wrong across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible (matrix products, concatenations, …).
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A caller-supplied configuration value violates a structural rule.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An input satisfies the shapes but violates a mathematical contract
    /// (non-Hermitian matrix where a Hermitian one is required, power
    /// constraint broken beyond tolerance, …).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A matrix factorization failed (e.g. Cholesky on a matrix that is not
    /// positive definite).
    #[error("decomposition failure: {0}")]
    Decomposition(String),

    /// An input is degenerate for the requested operation (zero norm where a
    /// normalization is required, empty collection where one element is
    /// needed, …).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Training diverged or produced a non-finite quantity.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Byte-level problems in the dataset / model file formats.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }
}
