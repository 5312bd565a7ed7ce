//! Bit-flip soft-error simulation and statistical error models for quantized
//! neural-network inference.

pub mod campaigns;
pub mod error;
pub mod fixtures;
pub mod inject;
pub mod model_io;
pub mod network;
pub mod quant;
pub mod reduce;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{ActivationTrace, LayerKind, LayerSpec, NetworkGraph};
pub use quant::{QuantConfig, QuantTensor};
pub use scalar::Real;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = NetworkGraph<f32>;
pub type Network64 = NetworkGraph<f64>;
