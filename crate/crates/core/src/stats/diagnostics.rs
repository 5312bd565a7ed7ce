//! Normality diagnostics for weights, activations and error samples.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::special::normcdf;

pub const MIN_SAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalityReport {
    pub count: usize,
    pub mean: f64,
    /// Population variance.
    pub var: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Kolmogorov-Smirnov distance to N(mean, var).
    pub ks_distance: f64,
}

pub fn normality_diagnostics<T: Real>(samples: &[T]) -> Result<NormalityReport> {
    let n = samples.len();
    if n < MIN_SAMPLES {
        return Err(Error::DegenerateSamples(format!("{n} samples, need at least {MIN_SAMPLES}")));
    }
    let mut xs: Vec<f64> = samples.iter().map(|v| v.as_f64()).collect();
    if let Some(i) = xs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i, value: xs[i] });
    }
    let nf = n as f64;
    let mean = crate::reduce::pairwise_sum(&xs) / nf;
    let central = |p: i32| crate::reduce::pairwise_sum_by(&xs, |&x| (x - mean).powi(p)) / nf;
    let var = central(2);
    if !(var > 0.0) {
        return Err(Error::DegenerateSamples("zero variance".into()));
    }
    let skewness = central(3) / var.powf(1.5);
    let excess_kurtosis = central(4) / (var * var) - 3.0;

    xs.sort_by(f64::total_cmp);
    let sd = var.sqrt();
    let mut ks: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = normcdf((x - mean) / sd);
        ks = ks.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    Ok(NormalityReport { count: n, mean, var, skewness, excess_kurtosis, ks_distance: ks })
}
