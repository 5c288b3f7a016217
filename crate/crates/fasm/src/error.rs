use thiserror::Error;

/// Errors produced by the library.
///
/// The CLI maps these onto process exit codes: parse errors → 2,
/// dimension mismatches → 3, singular systems → 4, non-finite data → 5,
/// anything else → 1.
#[derive(Error, Debug)]
pub enum FasmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular smoothing system at alpha = {alpha:e} (condition estimate above 1e12)")]
    Singular { alpha: f64 },

    #[error("smoothing system singular for every grid value of alpha ({0} values tried)")]
    SingularGrid(usize),

    #[error("degenerate tuning: {0}")]
    DegenerateTuning(String),

    #[error("non-finite data: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FasmError>;
