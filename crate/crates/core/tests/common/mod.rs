#![allow(dead_code)]

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use softerr::fixtures::{cached_fixture, deep8_recipe, lenet_recipe, synthetic_dataset, TEST_SEED};
use softerr::model_io::Dataset;
use softerr::{Network32, Tensor};

fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("fixtures")
}

pub fn lenet() -> &'static Network32 {
    static NET: OnceLock<Network32> = OnceLock::new();
    NET.get_or_init(|| cached_fixture(&lenet_recipe(), fixture_dir()).expect("lenet fixture"))
}

pub fn deep8() -> &'static Network32 {
    static NET: OnceLock<Network32> = OnceLock::new();
    NET.get_or_init(|| cached_fixture(&deep8_recipe(), fixture_dir()).expect("deep8 fixture"))
}

/// Held-out synthetic digits.
pub fn test_set() -> &'static Dataset<f32> {
    static DATA: OnceLock<Dataset<f32>> = OnceLock::new();
    DATA.get_or_init(|| synthetic_dataset(1000, TEST_SEED).expect("test set"))
}

/// `count` i.i.d. normal tensors of `shape`, one class.
pub fn gaussian_dataset(shape: &[usize], std: f64, count: usize, seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    let images = (0..count)
        .map(|_| Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(&mut rng)).collect()).unwrap())
        .collect();
    Dataset::from_tensors(images, vec![0; count], 1).unwrap()
}
