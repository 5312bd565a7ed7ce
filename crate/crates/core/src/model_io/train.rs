//! Minimal trainer for the test fixtures: minibatch SGD on softmax
//! cross-entropy, float forward pass, no momentum or weight decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{init_random_network, ops, LayerKind, LayerParams, LayerSpec, NetworkGraph, WeightInit};
use crate::scalar::Real;
use crate::tensor::Tensor;

use super::idx::Dataset;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 4, learning_rate: 0.05, lr_decay: 0.7, batch_size: 16, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
}

type Grads<T> = Vec<Option<(Vec<T>, Vec<T>)>>;

struct Model<'a, T> {
    net: &'a NetworkGraph<T>,
    params: &'a [Option<(Vec<T>, Vec<T>)>],
}

impl<T: Real> Model<'_, T> {
    fn forward(&self, x: &[T]) -> Vec<Vec<T>> {
        let mut acts = vec![x.to_vec()];
        for l in 0..self.net.len() {
            let input = acts.last().expect("non-empty");
            let in_shape = self.net.layer_input_shape(l);
            let n: usize = self.net.output_shape(l).iter().product();
            let mut out = vec![T::zero(); n];
            match self.net.layer(l).kind {
                k @ LayerKind::Conv2d { .. } => {
                    let (w, b) = self.params[l].as_ref().expect("conv has params");
                    ops::conv2d(&k.conv_geom(in_shape).expect("conv"), input, w, b, &mut out);
                }
                LayerKind::Dense { in_features, out_features } => {
                    let (w, b) = self.params[l].as_ref().expect("dense has params");
                    ops::dense(in_features, out_features, input, w, b, &mut out);
                }
                LayerKind::Relu => ops::relu(input, &mut out),
                LayerKind::MaxPool { window } | LayerKind::AvgPool { window } => {
                    let max = matches!(self.net.layer(l).kind, LayerKind::MaxPool { .. });
                    ops::pool(in_shape[0], in_shape[1], in_shape[2], window, max, input, &mut out);
                }
                LayerKind::Flatten => out.copy_from_slice(input),
            }
            acts.push(out);
        }
        acts
    }

    /// Cross-entropy loss and parameter gradients for one sample.
    fn gradient(&self, x: &[T], label: usize) -> (f64, Grads<T>) {
        let acts = self.forward(x);
        let logits: Vec<f64> = acts.last().expect("output").iter().map(|v| v.as_f64()).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        let loss = z.ln() + max - logits[label];
        let mut grad: Vec<T> = logits
            .iter()
            .enumerate()
            .map(|(i, v)| T::of((v - max).exp() / z - if i == label { 1.0 } else { 0.0 }))
            .collect();

        let mut grads: Grads<T> = vec![None; self.net.len()];
        for l in (0..self.net.len()).rev() {
            let input = &acts[l];
            let in_shape = self.net.layer_input_shape(l);
            let mut gin = vec![T::zero(); input.len()];
            let need_in = l > 0;
            match self.net.layer(l).kind {
                k @ LayerKind::Conv2d { .. } => {
                    let (w, b) = self.params[l].as_ref().expect("conv has params");
                    let (mut gw, mut gb) = (vec![T::zero(); w.len()], vec![T::zero(); b.len()]);
                    let g = k.conv_geom(in_shape).expect("conv");
                    ops::conv2d_backward(&g, input, w, &grad, &mut gw, &mut gb, need_in.then_some(&mut gin[..]));
                    grads[l] = Some((gw, gb));
                }
                LayerKind::Dense { in_features, out_features } => {
                    let (w, b) = self.params[l].as_ref().expect("dense has params");
                    let (mut gw, mut gb) = (vec![T::zero(); w.len()], vec![T::zero(); b.len()]);
                    ops::dense_backward(
                        in_features,
                        out_features,
                        input,
                        w,
                        &grad,
                        &mut gw,
                        &mut gb,
                        need_in.then_some(&mut gin[..]),
                    );
                    grads[l] = Some((gw, gb));
                }
                LayerKind::Relu => {
                    for ((d, &g), &x) in gin.iter_mut().zip(&grad).zip(input) {
                        *d = if x > T::zero() { g } else { T::zero() };
                    }
                }
                LayerKind::MaxPool { window } | LayerKind::AvgPool { window } => {
                    let max = matches!(self.net.layer(l).kind, LayerKind::MaxPool { .. });
                    ops::pool_backward(in_shape[0], in_shape[1], in_shape[2], window, max, input, &grad, &mut gin);
                }
                LayerKind::Flatten => gin.copy_from_slice(&grad),
            }
            grad = gin;
        }
        (loss, grads)
    }
}

/// Trains a fresh He-initialized network of the given topology on `dataset`.
///
/// Per-sample gradients of a batch are computed in parallel and summed in
/// sample order, so the result does not depend on the worker count.
pub fn train_fixture<T: Real>(
    dataset: &Dataset<T>,
    layers: Vec<LayerSpec>,
    cfg: &TrainConfig,
) -> Result<(NetworkGraph<T>, TrainReport)> {
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("epochs, batch size and learning rate must be positive".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let init: NetworkGraph<T> = init_random_network(dataset.image_shape(), layers, WeightInit::He, cfg.seed)?;
    if init.classes() != dataset.classes() {
        return Err(Error::Network(format!(
            "network has {} outputs, dataset has {} classes",
            init.classes(),
            dataset.classes()
        )));
    }
    let mut params: Vec<Option<(Vec<T>, Vec<T>)>> = (0..init.len())
        .map(|l| init.params(l).map(|p| (p.weights.data().to_vec(), p.bias.data().to_vec())))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1e);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut lr = cfg.learning_rate;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let model = Model { net: &init, params: &params };
            let results: Vec<(f64, Grads<T>)> = batch
                .par_iter()
                .map(|&i| model.gradient(dataset.image(i).data(), dataset.label(i)))
                .collect();
            let batch_loss: f64 = results.iter().map(|r| r.0).sum();
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss: batch_loss });
            }
            total += batch_loss;
            let scale = T::of(lr / batch.len() as f64);
            for (_, g) in &results {
                for (p, g) in params.iter_mut().zip(g) {
                    if let (Some((w, b)), Some((gw, gb))) = (p.as_mut(), g.as_ref()) {
                        for (w, &d) in w.iter_mut().zip(gw) {
                            *w -= scale * d;
                        }
                        for (b, &d) in b.iter_mut().zip(gb) {
                            *b -= scale * d;
                        }
                    }
                }
            }
        }
        epoch_loss.push(total / dataset.len() as f64);
        lr *= cfg.lr_decay;
    }

    let params = params
        .into_iter()
        .enumerate()
        .map(|(l, p)| {
            p.map(|(w, b)| -> Result<LayerParams<T>> {
                let kind = init.layer(l).kind;
                Ok(LayerParams {
                    weights: Tensor::new(kind.weight_shape().expect("parametric"), w).map_err(|e| e.at_layer(l))?,
                    bias: Tensor::new(vec![b.len()], b).map_err(|e| e.at_layer(l))?,
                })
            })
            .transpose()
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::Layer { layer, .. } => Error::Divergence { epoch: cfg.epochs, step: layer, loss: f64::NAN },
            e => e,
        })?;
    let net = NetworkGraph::new(init.input_shape().to_vec(), init.layers().to_vec(), params, init.classes())?;
    Ok((net, TrainReport { epoch_loss }))
}

/// Fraction of correctly classified samples.
pub fn evaluate_accuracy<T: Real>(net: &NetworkGraph<T>, dataset: &Dataset<T>, quantized: bool) -> Result<f64> {
    let hits = dataset
        .images()
        .par_iter()
        .zip(dataset.labels())
        .map(|(x, &l)| net.logits(x, quantized).map(|y| usize::from(y.argmax() == l)))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / dataset.len() as f64)
}
