use std::io;

use thiserror::Error;

/// Failures reading one of the binary file formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated file: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("non-finite value at data index {index}")]
    NonFinite { index: usize },
    #[error("corrupt record: {0}")]
    CorruptRecord(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("trailing bytes after payload ({0} bytes)")]
    TrailingBytes(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polynomial order {0} (need p >= 1)")]
    InvalidOrder(usize),
    #[error("unsupported polynomial order {found} (expected {expected})")]
    UnsupportedOrder { found: usize, expected: usize },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("neighborhood of {requested} needs at least {requested}+1 elements, mesh has {available}")]
    InsufficientElements { requested: usize, available: usize },
    #[error("k-means needs at least k={k} points, got {n}")]
    InsufficientData { n: usize, k: usize },
    #[error("interpolation needs at least {needed} source points, got {available}")]
    InsufficientSources { needed: usize, available: usize },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
