use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeData { shape: Vec<usize>, len: usize },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("empty tensor")]
    Empty,
    #[error("reference has zero variance")]
    DegenerateReference,
    #[error("invalid quantization config: {0}")]
    QuantConfig(String),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("bit {bit} out of range for {bits}-bit word")]
    BitOutOfRange { bit: u32, bits: u32 },
    #[error("invalid network: {0}")]
    Network(String),
    #[error("invalid fault spec: {0}")]
    FaultSpec(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("fit is ill-posed: {0}")]
    FitIllPosed(String),
    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("checksum mismatch: expected {expected}, computed {actual}")]
    Checksum { expected: String, actual: String },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("campaign error: {0}")]
    Campaign(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn at_layer(self, layer: usize) -> Self {
        match self {
            e @ Error::Layer { .. } => e,
            e => Error::Layer { layer, source: Box::new(e) },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
