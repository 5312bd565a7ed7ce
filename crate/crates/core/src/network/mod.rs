//! Chain networks: layer specs, stored parameters and the forward pass.
//!
//! Convolution and dense layers accumulate in the network scalar; when a pass
//! runs quantized, stored weights are replaced by their quantized values and
//! each layer output is snapped to its activation grid before the next layer
//! consumes it. Partial sums are never quantized.

mod calibrate;
mod init;
mod layer;
pub(crate) mod ops;

use std::sync::OnceLock;

pub use calibrate::{calibrate_quantization, DEFAULT_BOUND_PERCENTILE};
pub use init::{init_random_network, WeightInit};
pub use layer::{LayerKind, LayerSpec};

use crate::error::{Error, Result};
use crate::quant::{quantize, QuantConfig, QuantTensor};
use crate::scalar::Real;
use crate::tensor::{slice_rmse, slice_stats, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug)]
pub struct NetworkGraph<T> {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<Option<LayerParams<T>>>,
    classes: usize,
    shapes: Vec<Vec<usize>>,
    qweights: OnceLock<Vec<Option<QuantTensor>>>,
    qweights_real: OnceLock<Vec<Option<Vec<T>>>>,
}

impl<T: Clone> Clone for NetworkGraph<T> {
    fn clone(&self) -> Self {
        NetworkGraph {
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            params: self.params.clone(),
            classes: self.classes,
            shapes: self.shapes.clone(),
            qweights: self.qweights.clone(),
            qweights_real: self.qweights_real.clone(),
        }
    }
}

impl<T: Real> NetworkGraph<T> {
    /// Validates shapes and parameters. `params` has one entry per layer,
    /// `Some` exactly for convolution and dense layers.
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        params: Vec<Option<LayerParams<T>>>,
        classes: usize,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Network("network has no layers".into()));
        }
        if params.len() != layers.len() {
            return Err(Error::Network(format!(
                "{} parameter slots for {} layers",
                params.len(),
                layers.len()
            )));
        }
        let shapes = infer_shapes(&input_shape, &layers)?;
        for (l, (spec, p)) in layers.iter().zip(&params).enumerate() {
            match (spec.kind.weight_shape(), p) {
                (Some(ws), Some(p)) => {
                    if p.weights.shape() != ws.as_slice() {
                        return Err(Error::ShapeMismatch {
                            expected: ws,
                            actual: p.weights.shape().to_vec(),
                        }
                        .at_layer(l));
                    }
                    let bl = spec.kind.bias_len().unwrap_or(0);
                    if p.bias.shape() != [bl] {
                        return Err(Error::ShapeMismatch {
                            expected: vec![bl],
                            actual: p.bias.shape().to_vec(),
                        }
                        .at_layer(l));
                    }
                }
                (None, None) => {}
                (Some(_), None) => {
                    return Err(Error::Network("missing parameters".into()).at_layer(l))
                }
                (None, Some(_)) => {
                    return Err(Error::Network("unexpected parameters".into()).at_layer(l))
                }
            }
        }
        let out_len: usize = shapes.last().map(|s| s.iter().product()).unwrap_or(0);
        if classes == 0 || out_len != classes {
            return Err(Error::Network(format!(
                "final output has {out_len} values but class count is {classes}"
            )));
        }
        Ok(NetworkGraph {
            input_shape,
            layers,
            params,
            classes,
            shapes,
            qweights: OnceLock::new(),
            qweights_real: OnceLock::new(),
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LayerSpec {
        &self.layers[l]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self, l: usize) -> Option<&LayerParams<T>> {
        self.params[l].as_ref()
    }

    pub fn output_shape(&self, l: usize) -> &[usize] {
        &self.shapes[l]
    }

    /// Shape consumed by layer `l`.
    pub fn layer_input_shape(&self, l: usize) -> &[usize] {
        if l == 0 {
            &self.input_shape
        } else {
            &self.shapes[l - 1]
        }
    }

    /// Indices of convolution and dense layers, in order.
    pub fn parametric_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&l| self.layers[l].kind.is_parametric()).collect()
    }

    /// Quantized weights of layer `l`, if it has weights and a weight quantization config.
    pub fn quantized_weights(&self, l: usize) -> Option<&QuantTensor> {
        self.qweights
            .get_or_init(|| {
                self.layers
                    .iter()
                    .zip(&self.params)
                    .map(|(spec, p)| match (spec.weight_quant, p) {
                        (Some(cfg), Some(p)) => Some(quantize(&p.weights, cfg).expect("weights are finite")),
                        _ => None,
                    })
                    .collect()
            })[l]
            .as_ref()
    }

    /// Weights as seen by the forward pass.
    pub fn effective_weights(&self, l: usize, quantized: bool) -> Option<&[T]> {
        let p = self.params[l].as_ref()?;
        if !quantized || self.layers[l].weight_quant.is_none() {
            return Some(p.weights.data());
        }
        let cache = self.qweights_real.get_or_init(|| {
            (0..self.layers.len())
                .map(|i| {
                    self.quantized_weights(i).map(|q| {
                        let mut v = vec![T::zero(); q.len()];
                        q.dequantize_into(&mut v);
                        v
                    })
                })
                .collect()
        });
        cache[l].as_deref()
    }

    /// Copy of the network with every layer spec rewritten by `f`.
    pub fn map_specs(&self, mut f: impl FnMut(usize, &LayerSpec) -> Result<LayerSpec>) -> Result<Self> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, s)| f(l, s))
            .collect::<Result<Vec<_>>>()?;
        NetworkGraph::new(self.input_shape.clone(), layers, self.params.clone(), self.classes)
    }

    /// Copy of the network with quantization settings replaced on every layer that has them.
    pub fn with_quant(&self, target: QuantTarget, bits: Option<u32>, bound: Option<f64>) -> Result<Self> {
        let adjust = |cfg: Option<QuantConfig>| -> Result<Option<QuantConfig>> {
            cfg.map(|mut c| {
                if let Some(b) = bits {
                    c = c.with_bits(b)?;
                }
                if let Some(b) = bound {
                    c = c.with_bound(b)?;
                }
                Ok(c)
            })
            .transpose()
        };
        self.map_specs(|_, s| {
            let mut s = s.clone();
            match target {
                QuantTarget::Weights => s.weight_quant = adjust(s.weight_quant)?,
                QuantTarget::Activations => s.activation_quant = adjust(s.activation_quant)?,
            }
            Ok(s)
        })
    }

    pub(crate) fn check_input(&self, l: usize, shape: &[usize]) -> Result<()> {
        let expected = self.layer_input_shape(l);
        if shape != expected {
            return Err(Error::ShapeMismatch { expected: expected.to_vec(), actual: shape.to_vec() }.at_layer(l));
        }
        Ok(())
    }

    /// Runs a single layer on an input of the right shape.
    pub(crate) fn apply_layer(&self, l: usize, input: &[T], weights: Option<&[T]>, quantized: bool) -> Tensor<T> {
        let spec = &self.layers[l];
        let in_shape = self.layer_input_shape(l);
        let out_shape = self.shapes[l].clone();
        let n: usize = out_shape.iter().product();
        let mut out = vec![T::zero(); n];
        match spec.kind {
            LayerKind::Conv2d { .. } => {
                let g = spec.kind.conv_geom(in_shape).expect("validated");
                let bias = self.params[l].as_ref().expect("validated").bias.data();
                ops::conv2d(&g, input, weights.expect("conv has weights"), bias, &mut out);
            }
            LayerKind::Dense { in_features, out_features } => {
                let bias = self.params[l].as_ref().expect("validated").bias.data();
                ops::dense(in_features, out_features, input, weights.expect("dense has weights"), bias, &mut out);
            }
            LayerKind::Relu => ops::relu(input, &mut out),
            LayerKind::MaxPool { window } | LayerKind::AvgPool { window } => {
                let max = matches!(spec.kind, LayerKind::MaxPool { .. });
                ops::pool(in_shape[0], in_shape[1], in_shape[2], window, max, input, &mut out);
            }
            LayerKind::Flatten => out.copy_from_slice(input),
        }
        if quantized {
            if let Some(cfg) = spec.activation_quant {
                for v in &mut out {
                    *v = T::of(cfg.round_trip(v.as_f64()));
                }
            }
        }
        Tensor::from_parts(out_shape, out)
    }

    /// Runs layers `start..` on `input`. `weights_for` may substitute the
    /// weights of individual layers; `hook` sees (and may mutate) each output
    /// before the next layer consumes it. When `keep_all` is false only the
    /// final output is returned.
    pub(crate) fn propagate<'w>(
        &self,
        start: usize,
        input: Tensor<T>,
        quantized: bool,
        weights_for: impl Fn(usize) -> Option<&'w [T]>,
        mut hook: impl FnMut(usize, &mut Tensor<T>),
        keep_all: bool,
    ) -> Vec<Tensor<T>>
    where
        T: 'w,
    {
        let mut outputs = Vec::with_capacity(if keep_all { self.len() - start } else { 1 });
        let mut current = input;
        for l in start..self.len() {
            let w = weights_for(l).or_else(|| self.effective_weights(l, quantized));
            let mut out = self.apply_layer(l, current.data(), w, quantized);
            hook(l, &mut out);
            if keep_all {
                outputs.push(out.clone());
            }
            current = out;
        }
        if !keep_all {
            outputs.push(current);
        }
        outputs
    }

    pub fn forward_full(&self, input: &Tensor<T>, quantized: bool) -> Result<ActivationTrace<T>> {
        self.forward_from(0, input, quantized)
    }

    pub fn forward_from(&self, start: usize, activation: &Tensor<T>, quantized: bool) -> Result<ActivationTrace<T>> {
        if start >= self.len() {
            return Err(Error::IndexOutOfRange { index: start, len: self.len() });
        }
        self.check_input(start, activation.shape())?;
        let outputs = self.propagate(start, activation.clone(), quantized, |_| None, |_, _| {}, true);
        Ok(ActivationTrace { start, outputs })
    }

    /// Final output only.
    pub fn logits(&self, input: &Tensor<T>, quantized: bool) -> Result<Tensor<T>> {
        self.check_input(0, input.shape())?;
        let mut out = self.propagate(0, input.clone(), quantized, |_| None, |_, _| {}, false);
        Ok(out.pop().expect("one output"))
    }
}

/// Which stored quantity a quantization override or fault targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuantTarget {
    Weights,
    Activations,
}

impl QuantTarget {
    pub fn tag(&self) -> &'static str {
        match self {
            QuantTarget::Weights => "weights",
            QuantTarget::Activations => "activations",
        }
    }
}

fn infer_shapes(input: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    if input.is_empty() || input.contains(&0) {
        return Err(Error::Network(format!("invalid input shape {input:?}")));
    }
    let mut shapes = Vec::with_capacity(layers.len());
    let mut cur = input.to_vec();
    for (l, spec) in layers.iter().enumerate() {
        cur = spec.kind.output_shape(&cur).map_err(|e| e.at_layer(l))?;
        shapes.push(cur.clone());
    }
    Ok(shapes)
}

/// Outputs of layers `start..N` for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace<T> {
    start: usize,
    outputs: Vec<Tensor<T>>,
}

impl<T: Real> ActivationTrace<T> {
    pub(crate) fn from_outputs(start: usize, outputs: Vec<Tensor<T>>) -> Self {
        ActivationTrace { start, outputs }
    }

    /// First layer covered by the trace.
    pub fn start(&self) -> usize {
        self.start
    }

    /// Output of absolute layer `l`, if covered.
    pub fn layer(&self, l: usize) -> Option<&Tensor<T>> {
        l.checked_sub(self.start).and_then(|i| self.outputs.get(i))
    }

    pub fn outputs(&self) -> &[Tensor<T>] {
        &self.outputs
    }

    pub fn final_output(&self) -> &Tensor<T> {
        self.outputs.last().expect("trace is never empty")
    }

    /// Absolute indices of the covered layers.
    pub fn layer_indices(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.outputs.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerDelta {
    pub layer: usize,
    pub rmse: f64,
    pub rrmse: f64,
}

/// Per-layer RMSE and RRMSE of `faulty - golden`, normalized by the golden
/// output's standard deviation.
pub fn delta_trace<T: Real>(golden: &ActivationTrace<T>, faulty: &ActivationTrace<T>) -> Result<Vec<LayerDelta>> {
    if golden.start != faulty.start || golden.outputs.len() != faulty.outputs.len() {
        return Err(Error::InvalidArgument(format!(
            "traces cover layers {:?} and {:?}",
            golden.layer_indices(),
            faulty.layer_indices()
        )));
    }
    golden
        .outputs
        .iter()
        .zip(&faulty.outputs)
        .enumerate()
        .map(|(i, (g, f))| {
            let layer = golden.start + i;
            let d = f.sub(g).map_err(|e| e.at_layer(layer))?;
            let rmse = slice_rmse(d.data())?;
            let (_, var) = slice_stats(g.data())?;
            if var <= 0.0 {
                return Err(Error::DegenerateReference.at_layer(layer));
            }
            Ok(LayerDelta { layer, rmse, rrmse: rmse / var.sqrt() })
        })
        .collect()
}
