use crate::volume::Dims;

/// Which operand of a two-mask metric was empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Reference,
    Prediction,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Reference => f.write_str("reference"),
            Side::Prediction => f.write_str("prediction"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid range: lo ({lo}) must be below hi ({hi})")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("invalid dims: {0}")]
    InvalidDims(String),
    #[error("length mismatch: expected {expected} values, found {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: Dims, right: Dims },
    #[error("class count mismatch: {left} vs {right}")]
    ClassMismatch { left: usize, right: usize },
    #[error("invalid probability map: {0}")]
    InvalidProbMap(String),
    #[error("label {value} out of range for {classes} classes")]
    InvalidLabel { value: u8, classes: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("metric undefined: {0} mask is empty")]
    EmptyMask(Side),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_same_dims(left: Dims, right: Dims) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::DimMismatch { left, right })
    }
}
