//! Dense real tensors and the disturbance metrics computed on them.

use crate::error::{Error, Result};
use crate::reduce::pairwise_sum_by;
use crate::scalar::Real;

/// Row-major dense tensor of finite reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    /// Builds a tensor, rejecting inconsistent shapes and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() || shape.contains(&0) {
            return Err(Error::ShapeData { shape, len: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index, value: data[index].as_f64() });
        }
        Ok(Tensor { shape, data })
    }

    /// Skips the finiteness scan; used on hot paths where values come from
    /// finite arithmetic on finite inputs.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); n] }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, (0..n).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeData { shape, len: self.data.len() });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean and population variance.
pub fn tensor_stats<T: Real>(x: &Tensor<T>) -> Result<(f64, f64)> {
    slice_stats(x.data())
}

pub fn slice_stats<T: Real>(x: &[T]) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Err(Error::Empty);
    }
    let n = x.len() as f64;
    let mean = pairwise_sum_by(x, |v| v.as_f64()) / n;
    let var = pairwise_sum_by(x, |v| {
        let d = v.as_f64() - mean;
        d * d
    }) / n;
    Ok((mean, var))
}

/// Root of the mean of squared entries (uncentered).
pub fn rmse<T: Real>(delta: &Tensor<T>) -> Result<f64> {
    slice_rmse(delta.data())
}

pub fn slice_rmse<T: Real>(delta: &[T]) -> Result<f64> {
    if delta.is_empty() {
        return Err(Error::Empty);
    }
    let ss = pairwise_sum_by(delta, |v| {
        let v = v.as_f64();
        v * v
    });
    Ok((ss / delta.len() as f64).sqrt())
}

/// `rmse(delta) / sqrt(var(reference))`.
pub fn rrmse<T: Real>(delta: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    slice_rrmse(delta.data(), reference.data())
}

pub fn slice_rrmse<T: Real>(delta: &[T], reference: &[T]) -> Result<f64> {
    let (_, var) = slice_stats(reference)?;
    if var <= 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok(slice_rmse(delta)? / var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![0.0f32; 3]),
            Err(Error::ShapeData { .. })
        ));
        match Tensor::new(vec![3], vec![0.0, f64::NAN, 1.0]) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stats_examples() {
        assert_eq!(tensor_stats(&t(&[1.0, 1.0, 1.0])).unwrap(), (1.0, 0.0));
        assert_eq!(tensor_stats(&t(&[-1.0, 1.0])).unwrap(), (0.0, 1.0));
        assert!(matches!(slice_stats::<f64>(&[]), Err(Error::Empty)));
    }

    #[test]
    fn unit_normal_variance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (_, var) = slice_stats(&x).unwrap();
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&t(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_relative_eq!(rmse(&t(&[3.0, 4.0])).unwrap(), 3.5355339059327378, epsilon = 1e-12);
        let d = t(&[0.3, -1.2, 2.5]);
        assert_relative_eq!(
            rmse(&d.scale(-3.0)).unwrap(),
            3.0 * rmse(&d).unwrap(),
            epsilon = 1e-12
        );
        assert!(matches!(slice_rmse::<f32>(&[]), Err(Error::Empty)));
    }

    #[test]
    fn rrmse_examples() {
        let r = t(&[-1.0, 1.0]);
        assert_eq!(rrmse(&t(&[0.0, 0.0]), &r).unwrap(), 0.0);
        assert_eq!(rrmse(&t(&[1.0, 1.0]), &r).unwrap(), 1.0);
        assert!(matches!(
            rrmse(&t(&[1.0, 1.0]), &t(&[2.0, 2.0])),
            Err(Error::DegenerateReference)
        ));
    }

    proptest::proptest! {
        #[test]
        fn rrmse_scale_invariant(
            d in proptest::collection::vec(-10.0f64..10.0, 8),
            r in proptest::collection::vec(-10.0f64..10.0, 8),
            c in proptest::prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
        ) {
            let (d, r) = (t(&d), t(&r));
            if slice_stats(r.data()).unwrap().1 > 1e-6 {
                let a = rrmse(&d, &r).unwrap();
                let b = rrmse(&d.scale(c), &r.scale(c)).unwrap();
                proptest::prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            }
        }
    }
}
