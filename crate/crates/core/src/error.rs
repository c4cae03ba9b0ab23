use thiserror::Error;

#[derive(Debug, Error)]
pub enum CbmaError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("mask mismatch: {0}")]
    MaskMismatch(String),

    #[error("method mismatch: {0}")]
    MethodMismatch(String),

    #[error("focus mass underflow: focus at ({0}, {1}, {2}) has no in-mask density")]
    FocusMassUnderflow(f64, f64, f64),

    #[error("focus at ({0}, {1}, {2}) has no t-value; pass --assume-positive to treat it as positive")]
    MissingSign(f64, f64, f64),

    #[error("center too close to mask boundary: rejection sampling exceeded {0} draws")]
    RejectionExhausted(usize),

    #[error("configuration fingerprint mismatch: expected {expected}, cache has {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("bad volume format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CbmaError>;
