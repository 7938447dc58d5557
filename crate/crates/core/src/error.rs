use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fixed-point format: {0} fractional bits (expected 1..={max})", max = crate::fixed::MAX_FRAC_BITS)]
    InvalidFormat(u32),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate layer {layer}: reduction coefficient is zero")]
    DegenerateLayer { layer: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("bad IDX magic number {0:02x?}")]
    IdxBadMagic([u8; 4]),

    #[error("truncated IDX payload: expected {expected} bytes, found {found}")]
    IdxTruncated { expected: usize, found: usize },

    #[error("IDX dimensions overflow the addressable size")]
    IdxDimensionOverflow,

    #[error("unsupported bundle version {found} (expected {expected})")]
    BundleVersion { found: u32, expected: u32 },

    #[error("checksum mismatch for {blob}")]
    Checksum { blob: String },

    #[error("packed word width {bits} bits exceeds the {max}-bit limit")]
    PackedWidth { bits: u32, max: u32 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
