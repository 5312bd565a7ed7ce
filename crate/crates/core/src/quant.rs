//! Symmetric fixed-point quantization and bit-level mutation of words.
//!
//! A word `q` of width `bits` represents the real value `q * bound / 2^(bits-1)`.
//! Words are two's complement, so flipping bit `k` (counted from the LSB)
//! always moves the represented value by exactly `bound / 2^(bits-1-k)`.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

const GRID_SNAP: f64 = 4.0 * f32::EPSILON as f64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantConfig {
    bits: u32,
    bound: f64,
}

impl QuantConfig {
    pub fn new(bits: u32, bound: f64) -> Result<Self> {
        if bits != 8 && bits != 16 {
            return Err(Error::QuantConfig(format!("bits must be 8 or 16, got {bits}")));
        }
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::QuantConfig(format!("bound must be positive, got {bound}")));
        }
        Ok(QuantConfig { bits, bound })
    }

    pub fn int8(bound: f64) -> Result<Self> {
        Self::new(8, bound)
    }

    pub fn int16(bound: f64) -> Result<Self> {
        Self::new(16, bound)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn with_bits(self, bits: u32) -> Result<Self> {
        Self::new(bits, self.bound)
    }

    pub fn with_bound(self, bound: f64) -> Result<Self> {
        Self::new(self.bits, bound)
    }

    pub fn min_word(&self) -> i32 {
        -(1 << (self.bits - 1))
    }

    pub fn max_word(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }

    /// Real value of one least-significant step.
    pub fn step(&self) -> f64 {
        self.bound / self.scale()
    }

    fn scale(&self) -> f64 {
        (1u32 << (self.bits - 1)) as f64
    }

    /// `floor(2^(bits-1) * x / bound)`, saturated to the word range.
    ///
    /// A value lying within `f32` rounding of a grid point snaps to that grid
    /// point instead of falling one step below it, so re-quantizing a value
    /// that was already dequantized (possibly through `f32`) is the identity.
    #[inline]
    pub fn quantize_value(&self, x: f64) -> i32 {
        let t = self.scale() * x / self.bound;
        let r = t.round();
        let q = if (t - r).abs() <= GRID_SNAP * r.abs().max(1.0) { r } else { t.floor() };
        q.clamp(self.min_word() as f64, self.max_word() as f64) as i32
    }

    #[inline]
    pub fn dequantize_value(&self, word: i32) -> f64 {
        word as f64 * self.bound / self.scale()
    }

    /// Quantize then dequantize.
    #[inline]
    pub fn round_trip(&self, x: f64) -> f64 {
        self.dequantize_value(self.quantize_value(x))
    }

    /// XOR bit `bit` (0 = LSB) of a `bits`-wide two's-complement word.
    #[inline]
    pub fn toggle(&self, word: i32, bit: u32) -> i32 {
        let mask = if self.bits == 32 { u32::MAX } else { (1u32 << self.bits) - 1 };
        let raw = (word as u32 & mask) ^ (1u32 << bit);
        // sign-extend back to i32
        let shift = 32 - self.bits;
        ((raw << shift) as i32) >> shift
    }
}

/// Tensor of quantized words sharing one [`QuantConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct QuantTensor {
    shape: Vec<usize>,
    words: Vec<i32>,
    config: QuantConfig,
}

impl QuantTensor {
    pub fn new(shape: Vec<usize>, words: Vec<i32>, config: QuantConfig) -> Result<Self> {
        if shape.iter().product::<usize>() != words.len() {
            return Err(Error::ShapeData { shape, len: words.len() });
        }
        if let Some(i) =
            words.iter().position(|&w| w < config.min_word() || w > config.max_word())
        {
            return Err(Error::QuantConfig(format!(
                "word {} at index {i} outside {}-bit range",
                words[i], config.bits
            )));
        }
        Ok(QuantTensor { shape, words, config })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn words(&self) -> &[i32] {
        &self.words
    }

    pub fn config(&self) -> QuantConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn bit_count(&self) -> u64 {
        self.words.len() as u64 * self.config.bits as u64
    }

    /// Toggles one bit in place.
    pub fn flip_bit_mut(&mut self, index: usize, bit: u32) -> Result<()> {
        if index >= self.words.len() {
            return Err(Error::IndexOutOfRange { index, len: self.words.len() });
        }
        if bit >= self.config.bits {
            return Err(Error::BitOutOfRange { bit, bits: self.config.bits });
        }
        self.words[index] = self.config.toggle(self.words[index], bit);
        Ok(())
    }

    pub fn dequantize_into<T: Real>(&self, out: &mut [T]) {
        for (o, &w) in out.iter_mut().zip(&self.words) {
            *o = T::of(self.config.dequantize_value(w));
        }
    }
}

pub fn quantize<T: Real>(x: &Tensor<T>, cfg: QuantConfig) -> Result<QuantTensor> {
    let mut words = Vec::with_capacity(x.len());
    for (index, v) in x.data().iter().enumerate() {
        let v = v.as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite { index, value: v });
        }
        words.push(cfg.quantize_value(v));
    }
    Ok(QuantTensor { shape: x.shape().to_vec(), words, config: cfg })
}

pub fn dequantize<T: Real>(q: &QuantTensor) -> Tensor<T> {
    let mut data = vec![T::zero(); q.len()];
    q.dequantize_into(&mut data);
    Tensor::from_parts(q.shape.clone(), data)
}

/// Returns a copy of `q` with one bit toggled.
pub fn flip_bit(q: &QuantTensor, index: usize, bit: u32) -> Result<QuantTensor> {
    let mut out = q.clone();
    out.flip_bit_mut(index, bit)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q1(x: f64, bits: u32, bound: f64) -> i32 {
        QuantConfig::new(bits, bound).unwrap().quantize_value(x)
    }

    #[test]
    fn config_validation() {
        assert!(QuantConfig::new(4, 1.0).is_err());
        assert!(QuantConfig::new(8, 0.0).is_err());
        assert!(QuantConfig::new(16, f64::INFINITY).is_err());
        let c = QuantConfig::int16(2.0).unwrap();
        assert_eq!((c.min_word(), c.max_word()), (-32768, 32767));
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(q1(0.5, 8, 1.0), 64);
        assert_eq!(q1(1.0, 8, 1.0), 127);
        assert_eq!(q1(-0.25, 8, 2.0), -16);
        assert_eq!(q1(-5.0, 8, 1.0), -128);
        // floor rounds toward negative infinity
        assert_eq!(q1(-0.001, 8, 1.0), -1);
    }

    #[test]
    fn quantize_rejects_non_finite() {
        // Tensor::new already rejects NaN, so go through a raw f64 path.
        let cfg = QuantConfig::int8(1.0).unwrap();
        let x = Tensor::from_parts(vec![2], vec![0.0, f64::INFINITY]);
        match quantize(&x, cfg) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dequantize_examples() {
        let cfg = QuantConfig::int8(1.0).unwrap();
        assert_eq!(cfg.dequantize_value(64), 0.5);
        assert_eq!(cfg.dequantize_value(-128), -1.0);
    }

    #[test]
    fn flip_examples() {
        let cfg = QuantConfig::int8(1.0).unwrap();
        let q = QuantTensor::new(vec![2], vec![0, 64], cfg).unwrap();
        assert_eq!(flip_bit(&q, 0, 7).unwrap().words(), &[-128, 64]);
        assert_eq!(flip_bit(&q, 1, 6).unwrap().words(), &[0, 0]);
        assert!(matches!(flip_bit(&q, 2, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(flip_bit(&q, 0, 8), Err(Error::BitOutOfRange { .. })));
    }

    #[test]
    fn quant_tensor_rejects_out_of_range_words() {
        let cfg = QuantConfig::int8(1.0).unwrap();
        assert!(QuantTensor::new(vec![1], vec![128], cfg).is_err());
        assert!(QuantTensor::new(vec![2], vec![1], cfg).is_err());
    }

    #[test]
    fn requantizing_grid_values_is_identity() {
        for bound in [0.1, 0.8373, 3.3, 7.0] {
            for bits in [8, 16] {
                let cfg = QuantConfig::new(bits, bound).unwrap();
                for w in (cfg.min_word()..=cfg.max_word()).step_by(7) {
                    let v32 = cfg.dequantize_value(w) as f32;
                    assert_eq!(cfg.quantize_value(v32 as f64), w, "bound {bound} bits {bits}");
                    assert_eq!(cfg.quantize_value(cfg.dequantize_value(w)), w);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn quantize_is_monotone(a in -3.0f64..3.0, b in -3.0f64..3.0, bits in prop_oneof![Just(8u32), Just(16)]) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q1(lo, bits, 1.5) <= q1(hi, bits, 1.5));
        }

        #[test]
        fn flip_disturbance_ladder(word in -32768i32..32768, bit in 0u32..16, bound in 0.1f64..10.0) {
            let cfg = QuantConfig::int16(bound).unwrap();
            let flipped = cfg.toggle(word, bit);
            prop_assert!(flipped >= cfg.min_word() && flipped <= cfg.max_word());
            let d = (cfg.dequantize_value(flipped) - cfg.dequantize_value(word)).abs();
            let from_msb = 15 - bit;
            let expected = bound / 2f64.powi(from_msb as i32);
            prop_assert!((d - expected).abs() <= 1e-12 * bound);
            prop_assert_eq!(cfg.toggle(flipped, bit), word);
        }

        #[test]
        fn round_trip_within_one_step(x in -0.999f64..0.999, bits in prop_oneof![Just(8u32), Just(16)], bound in 0.5f64..4.0) {
            let cfg = QuantConfig::new(bits, bound).unwrap();
            let x = x * bound;
            let err = cfg.round_trip(x) - x;
            prop_assert!(err <= cfg.step() && err > -cfg.step());
        }
    }
}
