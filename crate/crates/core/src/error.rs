use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("index {index:?} out of range for dims {dims:?}")]
    IndexOutOfRange { index: Vec<usize>, dims: Vec<usize> },

    #[error("slice {flat} out of range ({count} frontal slices)")]
    SliceOutOfRange { flat: usize, count: usize },

    #[error("mode {mode} is invalid for a {ndim}-way tensor")]
    InvalidMode { mode: usize, ndim: usize },

    /// The first two modes index the frontal slices and are never transformed.
    #[error("mode {0} cannot be contracted; only modes >= 2 (zero-based) carry transforms")]
    ModeNotContractible(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is {rows}x{cols}, expected a square matrix")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not orthonormal: ||M^T M - I||_F / sqrt(n) = {residual:e}")]
    NotOrthonormal { residual: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite entry in frontal slice {slice}")]
    NonFinite { slice: usize },

    #[error("SVD of frontal slice {slice} did not converge")]
    SvdNoConvergence { slice: usize },

    #[error("invalid rank profile: {0}")]
    InvalidRanks(String),

    #[error("failed to build thread pool: {0}")]
    ThreadPool(String),

    #[error("bad magic {:?}, expected {:?}", String::from_utf8_lossy(found), String::from_utf8_lossy(expected))]
    BadMagic { found: [u8; 8], expected: [u8; 8] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated header")]
    TruncatedHeader,

    #[error("truncated payload")]
    TruncatedPayload,

    #[error("trailing bytes after payload")]
    TrailingData,

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by malformed input files rather than I/O or
    /// numerical failures.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::UnsupportedVersion(_)
                | Error::UnsupportedDtype(_)
                | Error::TruncatedHeader
                | Error::TruncatedPayload
                | Error::TrailingData
                | Error::Corrupt(_)
        )
    }
}
