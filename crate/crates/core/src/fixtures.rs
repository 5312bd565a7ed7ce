//! Synthetic digit data and the reference network topologies used by tests,
//! campaigns and the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use std::path::Path;

use crate::error::{Error, Result};
use crate::model_io::{load_network, save_network, train_fixture, Dataset, TrainConfig};
use crate::network::{calibrate_quantization, LayerKind, LayerSpec, NetworkGraph, DEFAULT_BOUND_PERCENTILE};
use crate::scalar::Real;

pub const DIGIT_SIDE: usize = 28;

// Seven-segment strokes in a unit cell 1 wide and 2 tall, y pointing down.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)), // a
    ((1.0, 0.0), (1.0, 1.0)), // b
    ((1.0, 1.0), (1.0, 2.0)), // c
    ((0.0, 2.0), (1.0, 2.0)), // d
    ((0.0, 1.0), (0.0, 2.0)), // e
    ((0.0, 0.0), (0.0, 1.0)), // f
    ((0.0, 1.0), (1.0, 1.0)), // g
];

const DIGITS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],
    &[1, 2],
    &[0, 1, 6, 4, 3],
    &[0, 1, 6, 2, 3],
    &[5, 6, 1, 2],
    &[0, 5, 6, 2, 3],
    &[0, 5, 6, 4, 3, 2],
    &[0, 1, 2],
    &[0, 1, 2, 3, 4, 5, 6],
    &[0, 1, 2, 3, 5, 6],
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Renders one 28 x 28 seven-segment digit with random placement, size,
/// slant, stroke width, endpoint jitter and pixel noise.
pub fn render_digit<R: Rng + ?Sized>(digit: usize, rng: &mut R) -> Vec<u8> {
    let height = rng.random_range(13.0..20.0);
    let width = height * rng.random_range(0.38..0.62);
    let slant = rng.random_range(-0.25..0.25);
    let angle: f64 = rng.random_range(-0.15..0.15);
    let stroke = rng.random_range(1.1..2.4);
    let cx = 14.0 + rng.random_range(-3.0..3.0);
    let cy = 14.0 + rng.random_range(-2.5..2.5);
    let (sin, cos) = angle.sin_cos();
    let to_canvas = |(u, v): (f64, f64)| {
        let x = (u - 0.5) * width + slant * (1.0 - v) * height * 0.5;
        let y = (v - 1.0) * height * 0.5;
        (cx + cos * x - sin * y, cy + sin * x + cos * y)
    };
    let mut jitter = || rng.random_range(-0.08..0.08);
    let strokes: Vec<((f64, f64), (f64, f64))> = DIGITS[digit]
        .iter()
        .map(|&s| {
            let (a, b) = SEGMENTS[s];
            (to_canvas((a.0 + jitter(), a.1 + jitter())), to_canvas((b.0 + jitter(), b.1 + jitter())))
        })
        .collect();
    let noise = Normal::new(0.0, 0.06).expect("valid std");
    let mut out = vec![0u8; DIGIT_SIDE * DIGIT_SIDE];
    for (i, px) in out.iter_mut().enumerate() {
        let p = ((i % DIGIT_SIDE) as f64 + 0.5, (i / DIGIT_SIDE) as f64 + 0.5);
        let d = strokes.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min);
        let ink = (stroke - d + 0.5).clamp(0.0, 1.0);
        let v = ink + noise.sample(rng);
        *px = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    out
}

/// `count` random digits as raw `(pixels, labels)` bytes, reproducible from `seed`.
pub fn synthetic_digits(count: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(count * DIGIT_SIDE * DIGIT_SIDE);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let d = rng.random_range(0..10usize);
        pixels.extend(render_digit(d, &mut rng));
        labels.push(d as u8);
    }
    (pixels, labels)
}

pub fn synthetic_dataset<T: Real>(count: usize, seed: u64) -> Result<Dataset<T>> {
    let (pixels, labels) = synthetic_digits(count, seed);
    Dataset::from_bytes(DIGIT_SIDE, DIGIT_SIDE, &pixels, &labels, Some(10))
}

/// LeNet-5 style classifier for 1 x 28 x 28 inputs: 2 conv + 3 dense layers.
pub fn lenet5() -> Vec<LayerSpec> {
    vec![
        LayerKind::conv(1, 6, 5, 1, 2).into(),
        LayerKind::Relu.into(),
        LayerKind::MaxPool { window: 2 }.into(),
        LayerKind::conv(6, 16, 5, 1, 0).into(),
        LayerKind::Relu.into(),
        LayerKind::MaxPool { window: 2 }.into(),
        LayerKind::Flatten.into(),
        LayerKind::dense(400, 120).into(),
        LayerKind::Relu.into(),
        LayerKind::dense(120, 84).into(),
        LayerKind::Relu.into(),
        LayerKind::dense(84, 10).into(),
    ]
}

/// Eight parametric layers (4 conv + 4 dense) for 1 x 28 x 28 inputs.
pub fn deep8() -> Vec<LayerSpec> {
    vec![
        LayerKind::conv(1, 8, 3, 1, 1).into(),
        LayerKind::Relu.into(),
        LayerKind::conv(8, 8, 3, 1, 1).into(),
        LayerKind::Relu.into(),
        LayerKind::MaxPool { window: 2 }.into(),
        LayerKind::conv(8, 16, 3, 1, 1).into(),
        LayerKind::Relu.into(),
        LayerKind::conv(16, 16, 3, 1, 1).into(),
        LayerKind::Relu.into(),
        LayerKind::MaxPool { window: 2 }.into(),
        LayerKind::Flatten.into(),
        LayerKind::dense(784, 64).into(),
        LayerKind::Relu.into(),
        LayerKind::dense(64, 32).into(),
        LayerKind::Relu.into(),
        LayerKind::dense(32, 32).into(),
        LayerKind::Relu.into(),
        LayerKind::dense(32, 10).into(),
    ]
}

/// `depth` valid-padding `channels -> channels` convolutions, optionally
/// followed by ReLU, closed by a flatten. Fan-in is `kernel^2 * channels`.
pub fn conv_stack(channels: usize, kernel: usize, depth: usize, relu: bool) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for _ in 0..depth {
        layers.push(LayerKind::conv(channels, channels, kernel, 1, 0).into());
        if relu {
            layers.push(LayerKind::Relu.into());
        }
    }
    layers.push(LayerKind::Flatten.into());
    layers
}

/// Seed of the held-out synthetic test set.
pub const TEST_SEED: u64 = 20_000;
/// Images used to calibrate activation bounds.
pub const CALIBRATION_IMAGES: usize = 256;

/// How a trained fixture is produced.
#[derive(Clone, Copy, Debug)]
pub struct FixtureRecipe {
    pub name: &'static str,
    pub layers: fn() -> Vec<LayerSpec>,
    pub train_images: usize,
    pub data_seed: u64,
    pub train: TrainConfig,
    pub bits: u32,
}

pub fn lenet_recipe() -> FixtureRecipe {
    FixtureRecipe {
        name: "lenet5",
        layers: lenet5,
        train_images: 6000,
        data_seed: 1,
        train: TrainConfig { epochs: 2, ..TrainConfig::default() },
        bits: 8,
    }
}

pub fn deep8_recipe() -> FixtureRecipe {
    FixtureRecipe {
        name: "deep8",
        layers: deep8,
        train_images: 4000,
        data_seed: 2,
        train: TrainConfig { epochs: 2, ..TrainConfig::default() },
        bits: 8,
    }
}

/// Trains the recipe's network on synthetic digits and calibrates its
/// quantization on the first training images.
pub fn build_fixture(recipe: &FixtureRecipe) -> Result<NetworkGraph<f32>> {
    let train: Dataset<f32> = synthetic_dataset(recipe.train_images, recipe.data_seed)?;
    let (net, _) = train_fixture(&train, (recipe.layers)(), &recipe.train)?;
    let calib = &train.images()[..CALIBRATION_IMAGES.min(train.len())];
    calibrate_quantization(&net, calib, recipe.bits, DEFAULT_BOUND_PERCENTILE)
}

/// Loads `<dir>/<name>.model` if present, otherwise builds and stores it.
/// The file is written to a temporary name first so concurrent callers never
/// read a partial model.
pub fn cached_fixture(recipe: &FixtureRecipe, dir: impl AsRef<Path>) -> Result<NetworkGraph<f32>> {
    let dir = dir.as_ref();
    let path = dir.join(format!("{}.model", recipe.name));
    if let Ok(net) = load_network(&path) {
        return Ok(net);
    }
    let net = build_fixture(recipe)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!("{}.model.{}.tmp", recipe.name, std::process::id()));
    save_network(&net, &tmp)?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(net)
}
