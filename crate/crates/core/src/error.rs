use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures reading or writing SPKT tensor files.
#[derive(Debug, Error)]
pub enum SpktError {
    #[error("bad magic {0:02x?}, expected \"SPKT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported SPKT version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("expected dtype {expected}, found {found}")]
    DtypeMismatch { expected: &'static str, found: &'static str },
    #[error("unsupported ndim {0}, only 2-d tensors are stored")]
    UnsupportedNdim(u8),
    #[error("nonzero header padding")]
    BadPadding,
    #[error("dimensions {0:?} overflow the addressable size")]
    DimensionOverflow(Vec<u64>),
    #[error("truncated {section}: expected {expected} bytes, found {found}")]
    Truncated { section: &'static str, expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value at payload index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Spkt {
        path: PathBuf,
        #[source]
        source: SpktError,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in tensor data at index {0}")]
    NonFinite(usize),
    #[error("spike train form mismatch: expected {expected}, found {found}")]
    Form { expected: &'static str, found: &'static str },
    #[error("code {code} at index {index} outside [0, {max}]")]
    CodeOutOfRange { code: i64, index: usize, max: i64 },
    #[error("Cholesky factorization failed at pivot {pivot} (value {value:e}); increase damping")]
    Factorization { pivot: usize, value: f64 },
    #[error("{0}")]
    Json(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerical routines rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Factorization { .. })
    }
}
