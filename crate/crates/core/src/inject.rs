//! Seeded bit-flip injection into quantized weights or activations.
//!
//! Every (campaign seed, trial, layer) triple owns an independent ChaCha
//! stream, so the flips of a trial never depend on which other trials ran,
//! in which order, or on how many workers ran them.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::network::{ActivationTrace, NetworkGraph, QuantTarget};
use crate::quant::{QuantConfig, QuantTensor};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InjectionMode {
    /// Every bit flips independently with probability `rate`.
    RandomBit,
    /// Every word's most significant bit flips with probability `rate`.
    MsbOnly,
}

impl InjectionMode {
    pub fn tag(&self) -> &'static str {
        match self {
            InjectionMode::RandomBit => "random_bit",
            InjectionMode::MsbOnly => "msb_only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum LayerSelector {
    #[default]
    All,
    Layers(BTreeSet<usize>),
}

impl LayerSelector {
    pub fn only(layers: impl IntoIterator<Item = usize>) -> Self {
        LayerSelector::Layers(layers.into_iter().collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaultSpec {
    pub target: QuantTarget,
    pub mode: InjectionMode,
    /// Per-bit flip probability (random_bit) or per-word MSB flip probability (msb_only).
    pub rate: f64,
    pub layers: LayerSelector,
    pub seed: u64,
}

impl FaultSpec {
    pub fn new(target: QuantTarget, mode: InjectionMode, rate: f64, seed: u64) -> Self {
        FaultSpec { target, mode, rate, layers: LayerSelector::All, seed }
    }

    pub fn with_layers(mut self, layers: LayerSelector) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_rate(mut self, rate: f64) -> Self {
        self.rate = rate;
        self
    }

    /// Validates the spec against `net` and returns the targeted layers in order.
    pub fn resolve<T: Real>(&self, net: &NetworkGraph<T>) -> Result<Vec<usize>> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::FaultSpec(format!("rate {} outside [0, 1]", self.rate)));
        }
        let layers: Vec<usize> = match &self.layers {
            LayerSelector::All => injectable_layers(net, self.target),
            LayerSelector::Layers(set) => set.iter().copied().collect(),
        };
        for &l in &layers {
            if l >= net.len() {
                return Err(Error::FaultSpec(format!("layer {l} does not exist ({} layers)", net.len())));
            }
            match self.target {
                QuantTarget::Weights => {
                    if !net.layer(l).kind.is_parametric() {
                        return Err(Error::FaultSpec(format!("layer {l} has no weights")));
                    }
                    if net.layer(l).weight_quant.is_none() {
                        return Err(Error::FaultSpec(format!("layer {l} weights are not quantized")));
                    }
                }
                QuantTarget::Activations => {
                    if net.layer(l).activation_quant.is_none() {
                        return Err(Error::FaultSpec(format!("layer {l} activations are not quantized")));
                    }
                }
            }
        }
        Ok(layers)
    }
}

/// Layers targeted by [`LayerSelector::All`].
///
/// For weights: every quantized convolution or dense layer. For activations:
/// every quantized output that a convolution or dense layer consumes, plus
/// the network output. Element-wise layers feeding another element-wise layer
/// (for example a ReLU followed by pooling) are skipped so each stored
/// feature map is counted once.
pub fn injectable_layers<T: Real>(net: &NetworkGraph<T>, target: QuantTarget) -> Vec<usize> {
    match target {
        QuantTarget::Weights => net
            .parametric_layers()
            .into_iter()
            .filter(|&l| net.layer(l).weight_quant.is_some())
            .collect(),
        QuantTarget::Activations => (0..net.len())
            .filter(|&l| {
                let feeds_compute = l + 1 == net.len() || net.layer(l + 1).kind.is_parametric();
                feeds_compute && net.layer(l).activation_quant.is_some()
            })
            .collect(),
    }
}

/// Flips applied to one layer's tensor: `(word index, bit index)`, bit 0 = LSB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerFlips {
    pub layer: usize,
    pub flips: Vec<(usize, u32)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InjectionRecord {
    pub layers: Vec<LayerFlips>,
}

impl InjectionRecord {
    pub fn flip_count(&self) -> usize {
        self.layers.iter().map(|l| l.flips.len()).sum()
    }

    pub fn count_for(&self, layer: usize) -> usize {
        self.layers.iter().filter(|l| l.layer == layer).map(|l| l.flips.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.flip_count() == 0
    }
}

/// Independent stream for one (seed, trial, layer) triple.
pub fn trial_rng(seed: u64, trial: u64, layer: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&trial.to_le_bytes());
    key[16..24].copy_from_slice(&(layer as u64).to_le_bytes());
    key[24..].copy_from_slice(b"softflip");
    ChaCha8Rng::from_seed(key)
}

/// Samples flip positions for a population of `words` words of width `bits`.
///
/// The flip count is drawn from the binomial law and positions are chosen
/// uniformly without replacement, which is distributionally identical to an
/// independent Bernoulli draw per bit (or per MSB).
pub fn sample_flips<R: Rng + ?Sized>(
    words: usize,
    bits: u32,
    mode: InjectionMode,
    rate: f64,
    rng: &mut R,
) -> Vec<(usize, u32)> {
    if rate <= 0.0 || words == 0 {
        return Vec::new();
    }
    let population = match mode {
        InjectionMode::RandomBit => words * bits as usize,
        InjectionMode::MsbOnly => words,
    };
    let count = Binomial::new(population as u64, rate.min(1.0))
        .expect("rate validated to [0, 1]")
        .sample(rng) as usize;
    if count == 0 {
        return Vec::new();
    }
    let mut positions = index::sample(rng, population, count).into_vec();
    positions.sort_unstable();
    positions
        .into_iter()
        .map(|p| match mode {
            InjectionMode::RandomBit => (p / bits as usize, (p % bits as usize) as u32),
            InjectionMode::MsbOnly => (p, bits - 1),
        })
        .collect()
}

/// Returns a faulted copy of `q` and the flips applied.
pub fn inject<R: Rng + ?Sized>(
    q: &QuantTensor,
    mode: InjectionMode,
    rate: f64,
    rng: &mut R,
) -> Result<(QuantTensor, Vec<(usize, u32)>)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::FaultSpec(format!("rate {rate} outside [0, 1]")));
    }
    let flips = sample_flips(q.len(), q.config().bits(), mode, rate, rng);
    let mut out = q.clone();
    for &(i, b) in &flips {
        out.flip_bit_mut(i, b)?;
    }
    Ok((out, flips))
}

/// Number of words exposed to faults in layer `l` for `target`.
pub fn target_words<T: Real>(net: &NetworkGraph<T>, target: QuantTarget, l: usize) -> usize {
    match target {
        QuantTarget::Weights => net.layer(l).kind.weight_shape().map(|s| s.iter().product()).unwrap_or(0),
        QuantTarget::Activations => net.output_shape(l).iter().product(),
    }
}

fn target_config<T: Real>(net: &NetworkGraph<T>, target: QuantTarget, l: usize) -> QuantConfig {
    match target {
        QuantTarget::Weights => net.layer(l).weight_quant,
        QuantTarget::Activations => net.layer(l).activation_quant,
    }
    .expect("resolved layers are quantized")
}

/// Expected number of flipped bits per inference.
pub fn expected_flip_count<T: Real>(net: &NetworkGraph<T>, spec: &FaultSpec) -> Result<f64> {
    let layers = spec.resolve(net)?;
    Ok(layers
        .iter()
        .map(|&l| {
            let words = target_words(net, spec.target, l) as f64;
            match spec.mode {
                InjectionMode::RandomBit => words * target_config(net, spec.target, l).bits() as f64 * spec.rate,
                InjectionMode::MsbOnly => words * spec.rate,
            }
        })
        .sum())
}

/// Concrete flips for one faulty inference.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultPlan {
    pub target: QuantTarget,
    pub record: InjectionRecord,
}

impl FaultPlan {
    /// Draws the flips of trial `trial` for the already-resolved `layers`.
    pub fn sample<T: Real>(net: &NetworkGraph<T>, spec: &FaultSpec, layers: &[usize], trial: u64) -> Self {
        let record = InjectionRecord {
            layers: layers
                .iter()
                .filter_map(|&l| {
                    let mut rng = trial_rng(spec.seed, trial, l);
                    let bits = target_config(net, spec.target, l).bits();
                    let flips = sample_flips(target_words(net, spec.target, l), bits, spec.mode, spec.rate, &mut rng);
                    (!flips.is_empty()).then_some(LayerFlips { layer: l, flips })
                })
                .collect(),
        };
        FaultPlan { target: spec.target, record }
    }

    /// Hand-built plan, e.g. a single forced flip.
    pub fn from_flips(target: QuantTarget, flips: Vec<LayerFlips>) -> Self {
        FaultPlan { target, record: InjectionRecord { layers: flips } }
    }

    /// First layer whose output can differ from the golden run.
    pub fn first_layer(&self) -> Option<usize> {
        self.record.layers.iter().filter(|l| !l.flips.is_empty()).map(|l| l.layer).min()
    }

    fn flips_for(&self, layer: usize) -> impl Iterator<Item = &(usize, u32)> {
        self.record.layers.iter().filter(move |l| l.layer == layer).flat_map(|l| l.flips.iter())
    }
}

/// Runs the quantized network under `plan`.
///
/// `golden(l)` may return the quantized golden output of layer `l` for
/// `input`; when the output feeding the first faulted layer is available the
/// layers before it are not recomputed. Returns the outputs of layers `start..N` (all of them
/// when `keep_all`, otherwise only the final one) and `start`.
pub(crate) fn run_plan<'g, T: Real + 'g>(
    net: &NetworkGraph<T>,
    input: &Tensor<T>,
    golden: impl Fn(usize) -> Option<&'g Tensor<T>>,
    plan: &FaultPlan,
    keep_all: bool,
) -> Result<(usize, Vec<Tensor<T>>)> {
    for lf in &plan.record.layers {
        if lf.layer >= net.len() {
            return Err(Error::FaultSpec(format!("layer {} does not exist", lf.layer)));
        }
    }
    let Some(first) = plan.first_layer() else {
        let outputs = match golden(net.len() - 1) {
            Some(y) if !keep_all => vec![y.clone()],
            _ => {
                net.check_input(0, input.shape())?;
                net.propagate(0, input.clone(), true, |_| None, |_, _| {}, keep_all)
            }
        };
        return Ok((0, outputs));
    };

    let weight_overrides: Vec<(usize, Vec<T>)> = match plan.target {
        QuantTarget::Weights => plan
            .record
            .layers
            .iter()
            .filter(|lf| !lf.flips.is_empty())
            .map(|lf| {
                let q = net
                    .quantized_weights(lf.layer)
                    .ok_or_else(|| Error::FaultSpec(format!("layer {} weights are not quantized", lf.layer)))?;
                let cfg = q.config();
                let mut w = net.effective_weights(lf.layer, true).expect("parametric").to_vec();
                for &(i, b) in &lf.flips {
                    if i >= q.len() || b >= cfg.bits() {
                        return Err(Error::IndexOutOfRange { index: i, len: q.len() });
                    }
                    // accumulate in word space so repeated flips of one word compose
                    let word = cfg.quantize_value(w[i].as_f64());
                    w[i] = T::of(cfg.dequantize_value(cfg.toggle(word, b)));
                }
                Ok((lf.layer, w))
            })
            .collect::<Result<_>>()?,
        QuantTarget::Activations => Vec::new(),
    };

    let mut hook_error = None;
    let act_hook = |l: usize, out: &mut Tensor<T>| {
        if plan.target != QuantTarget::Activations {
            return;
        }
        let mut flips = plan.flips_for(l).peekable();
        if flips.peek().is_none() {
            return;
        }
        let Some(cfg) = net.layer(l).activation_quant else {
            hook_error = Some(Error::FaultSpec(format!("layer {l} activations are not quantized")));
            return;
        };
        let data = out.data_mut();
        for &(i, b) in flips {
            if i >= data.len() || b >= cfg.bits() {
                hook_error = Some(Error::IndexOutOfRange { index: i, len: data.len() });
                return;
            }
            let word = cfg.quantize_value(data[i].as_f64());
            data[i] = T::of(cfg.dequantize_value(cfg.toggle(word, b)));
        }
    };
    let lookup = |l: usize| weight_overrides.iter().find(|(ol, _)| *ol == l).map(|(_, w)| w.as_slice());

    let feed = match plan.target {
        QuantTarget::Activations => golden(first),
        QuantTarget::Weights if first > 0 => golden(first - 1),
        QuantTarget::Weights => None,
    };
    let (start, outputs) = match (feed, plan.target) {
        // Activation faults at layer `first` start from the golden output of that layer.
        (Some(g), QuantTarget::Activations) => {
            let mut out = g.clone();
            let mut hook = act_hook;
            hook(first, &mut out);
            if first + 1 == net.len() {
                (first, vec![out])
            } else {
                let rest = net.propagate(first + 1, out.clone(), true, lookup, hook, keep_all);
                let mut outputs = Vec::new();
                if keep_all {
                    outputs.push(out);
                }
                outputs.extend(rest);
                (first, outputs)
            }
        }
        (Some(g), QuantTarget::Weights) => {
            if g.shape() != net.layer_input_shape(first) {
                return Err(Error::ShapeMismatch { expected: net.layer_input_shape(first).to_vec(), actual: g.shape().to_vec() });
            }
            (first, net.propagate(first, g.clone(), true, lookup, act_hook, keep_all))
        }
        _ => {
            net.check_input(0, input.shape())?;
            (0, net.propagate(0, input.clone(), true, lookup, act_hook, keep_all))
        }
    };
    if let Some(e) = hook_error {
        return Err(e);
    }
    Ok((start, outputs))
}

/// Full quantized trace of `input` with the trial's faults applied.
pub fn faulty_forward<T: Real>(
    net: &NetworkGraph<T>,
    input: &Tensor<T>,
    spec: &FaultSpec,
    trial: u64,
) -> Result<(ActivationTrace<T>, InjectionRecord)> {
    let layers = spec.resolve(net)?;
    let plan = FaultPlan::sample(net, spec, &layers, trial);
    let trace = simulate_plan(net, input, &plan)?;
    Ok((trace, plan.record))
}

/// Full quantized trace of `input` under an explicit plan.
pub fn simulate_plan<T: Real>(net: &NetworkGraph<T>, input: &Tensor<T>, plan: &FaultPlan) -> Result<ActivationTrace<T>> {
    let (start, outputs) = run_plan(net, input, |_| None, plan, true)?;
    debug_assert_eq!(start, 0);
    Ok(ActivationTrace::from_outputs(start, outputs))
}
