use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

use super::{infer_shapes, LayerParams, LayerSpec, NetworkGraph};

/// Standard deviation rule for zero-mean normal weight initialization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightInit {
    /// `1/sqrt(fan_in)`, so that `fan_in * var(w) = 1`.
    FanIn,
    /// `sqrt(2/fan_in)`, for ReLU stacks that are going to be trained.
    He,
    Std(f64),
}

impl WeightInit {
    fn std(&self, fan_in: usize) -> f64 {
        match *self {
            WeightInit::FanIn => 1.0 / (fan_in as f64).sqrt(),
            WeightInit::He => (2.0 / fan_in as f64).sqrt(),
            WeightInit::Std(s) => s,
        }
    }
}

/// Builds a chain network with i.i.d. normal weights and zero biases. The
/// class count is the length of the final output.
pub fn init_random_network<T: Real>(
    input_shape: &[usize],
    layers: Vec<LayerSpec>,
    init: WeightInit,
    seed: u64,
) -> Result<NetworkGraph<T>> {
    let shapes = infer_shapes(input_shape, &layers)?;
    let classes = shapes.last().map(|s| s.iter().product()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(layers.len());
    for spec in &layers {
        let Some(shape) = spec.kind.weight_shape() else {
            params.push(None);
            continue;
        };
        let fan_in = spec.kind.fan_in().expect("parametric");
        let std = init.std(fan_in);
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::InvalidArgument(format!("weight std {std}: {e}")))?;
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n).map(|_| T::of(normal.sample(&mut rng))).collect();
        let bl = spec.kind.bias_len().expect("parametric");
        params.push(Some(LayerParams {
            weights: Tensor::new(shape, data)?,
            bias: Tensor::zeros(vec![bl]),
        }));
    }
    NetworkGraph::new(input_shape.to_vec(), layers, params, classes)
}
