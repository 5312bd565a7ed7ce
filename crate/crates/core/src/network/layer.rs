use crate::error::{Error, Result};
use crate::quant::QuantConfig;

use super::ops::ConvGeom;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Dense { in_features: usize, out_features: usize },
    Relu,
    MaxPool { window: usize },
    AvgPool { window: usize },
    Flatten,
}

impl LayerKind {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerKind::Dense { in_features, out_features }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Dense { .. })
    }

    /// Short lowercase tag used in files and reports.
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::Flatten => "flatten",
        }
    }

    /// Number of accumulated products per output value.
    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerKind::Conv2d { in_channels, kernel, .. } => Some(kernel * kernel * in_channels),
            LayerKind::Dense { in_features, .. } => Some(in_features),
            _ => None,
        }
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerKind::Conv2d { in_channels, out_channels, kernel, .. } => {
                Some(vec![out_channels, in_channels, kernel, kernel])
            }
            LayerKind::Dense { in_features, out_features } => Some(vec![out_features, in_features]),
            _ => None,
        }
    }

    pub fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerKind::Conv2d { out_channels, .. } => Some(out_channels),
            LayerKind::Dense { out_features, .. } => Some(out_features),
            _ => None,
        }
    }

    /// Output shape for a given input shape, or a description of the incompatibility.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(Error::Network(msg));
        match *self {
            LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return bad("conv dimensions must be positive".into());
                }
                let [c, h, w] = input else {
                    return bad(format!("conv expects [c, h, w] input, got {input:?}"));
                };
                if *c != in_channels {
                    return bad(format!("conv expects {in_channels} input channels, got {c}"));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return bad(format!("kernel {kernel} larger than padded input {input:?}"));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerKind::Dense { in_features, out_features } => {
                if in_features == 0 || out_features == 0 {
                    return bad("dense dimensions must be positive".into());
                }
                if input != [in_features] {
                    return bad(format!("dense expects [{in_features}] input, got {input:?}"));
                }
                Ok(vec![out_features])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::MaxPool { window } | LayerKind::AvgPool { window } => {
                let [c, h, w] = input else {
                    return bad(format!("pool expects [c, h, w] input, got {input:?}"));
                };
                if window == 0 || *h < window || *w < window {
                    return bad(format!("pool window {window} does not fit input {input:?}"));
                }
                Ok(vec![*c, h / window, w / window])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub(crate) fn conv_geom(&self, input: &[usize]) -> Option<ConvGeom> {
        match *self {
            LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                let out = self.output_shape(input).ok()?;
                Some(ConvGeom {
                    ic: in_channels,
                    oc: out_channels,
                    k: kernel,
                    stride,
                    pad: padding,
                    h: input[1],
                    w: input[2],
                    oh: out[1],
                    ow: out[2],
                })
            }
            _ => None,
        }
    }
}

/// One layer of a chain network plus its quantization settings.
///
/// `activation_quant` applies to the layer's output, `weight_quant` to its
/// stored weights. Biases are never quantized.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation_quant: Option<QuantConfig>,
    pub weight_quant: Option<QuantConfig>,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        LayerSpec { kind, activation_quant: None, weight_quant: None }
    }

    pub fn with_activation_quant(mut self, cfg: QuantConfig) -> Self {
        self.activation_quant = Some(cfg);
        self
    }

    pub fn with_weight_quant(mut self, cfg: QuantConfig) -> Self {
        self.weight_quant = Some(cfg);
        self
    }
}

impl From<LayerKind> for LayerSpec {
    fn from(kind: LayerKind) -> Self {
        LayerSpec::new(kind)
    }
}
