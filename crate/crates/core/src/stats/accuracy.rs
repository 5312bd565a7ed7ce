//! RRMSE to classification-accuracy models.
//!
//! Two analytic forms are provided and intentionally left inconsistent with
//! each other at two classes: [`binary_accuracy`] puts the class margin at
//! two output standard deviations (`0.5 * erf(1/rrmse) + 0.5`), while
//! [`multiclass_accuracy`] with `nc = 2` integrates to `normcdf(1/(sqrt(2) rrmse))`.
//! The two differ by a factor of 2 inside `erf`; neither is adjusted.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::quadrature::adaptive_simpson;
use super::special::{erf, normcdf, normpdf};

const QUAD_TOL: f64 = 1e-7;
const QUAD_PANELS: usize = 64;
const TAIL: f64 = 10.0;

fn check_rrmse<T: Real>(rrmse: T) -> Result<()> {
    if rrmse.is_nan() || rrmse < T::zero() {
        return Err(Error::InvalidArgument(format!("rrmse must be non-negative, got {rrmse}")));
    }
    Ok(())
}

/// Two-class accuracy `0.5 * erf(1/rrmse) + 0.5`; equals 1 at `rrmse = 0`.
pub fn binary_accuracy<T: Real>(rrmse: T) -> Result<T> {
    check_rrmse(rrmse)?;
    if rrmse == T::zero() {
        return Ok(T::one());
    }
    Ok(T::of(0.5) * erf(T::one() / rrmse) + T::of(0.5))
}

/// Probability that the true-class output stays the largest of `nc` outputs
/// when every output is perturbed by independent Gaussian noise:
/// `integral normpdf(x) * normcdf(x + 1/rrmse)^(nc-1) dx`.
///
/// Integrated by adaptive Simpson over `[-10, 10 + min(1/rrmse, 10)]` to an
/// absolute tolerance of `1e-7`; the density is below `1e-22` outside it.
pub fn multiclass_accuracy<T: Real>(rrmse: T, nc: usize) -> Result<T> {
    check_rrmse(rrmse)?;
    if nc < 2 {
        return Err(Error::InvalidArgument(format!("class count must be >= 2, got {nc}")));
    }
    if rrmse == T::zero() {
        return Ok(T::one());
    }
    let shift = T::one() / rrmse;
    let upper = T::of(TAIL) + shift.min(T::of(TAIL));
    let power = (nc - 1) as i32;
    let v = adaptive_simpson(
        |x: T| normpdf(x) * normcdf(x + shift).powi(power),
        T::of(-TAIL),
        upper,
        T::of(QUAD_TOL),
        QUAD_PANELS,
    )?;
    Ok(v.max(T::zero()).min(T::one()))
}

/// The `nc`-parameterized analytic model as a value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AccuracyModelAnalytic {
    nc: usize,
}

impl AccuracyModelAnalytic {
    pub fn new(nc: usize) -> Result<Self> {
        if nc < 2 {
            return Err(Error::InvalidArgument(format!("class count must be >= 2, got {nc}")));
        }
        Ok(AccuracyModelAnalytic { nc })
    }

    pub fn nc(&self) -> usize {
        self.nc
    }

    pub fn accuracy<T: Real>(&self, rrmse: T) -> Result<T> {
        multiclass_accuracy(rrmse, self.nc)
    }
}

/// Sigmoid-shaped accuracy curve anchored at the clean accuracy and at
/// chance level:
///
/// ```text
/// acc(r) = (1 + e^(-m s)) (acc_clean - 1/nc) / (1 + e^(s (r - m))) + 1/nc
/// ```
///
/// `m` is the RRMSE midpoint and `s` the steepness. At `r = 0` this is
/// exactly `acc_clean`; as `r` grows it decays to `1/nc`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccuracyModelEmpirical {
    pub m: f64,
    pub s: f64,
    pub acc_clean: f64,
    pub nc: usize,
}

impl AccuracyModelEmpirical {
    pub fn new(m: f64, s: f64, acc_clean: f64, nc: usize) -> Result<Self> {
        if nc < 2 {
            return Err(Error::InvalidArgument(format!("class count must be >= 2, got {nc}")));
        }
        if !(s.is_finite() && s > 0.0) || !m.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid sigmoid parameters m={m}, s={s}")));
        }
        let chance = 1.0 / nc as f64;
        if !(acc_clean > chance && acc_clean <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "clean accuracy {acc_clean} must lie in (1/nc, 1] = ({chance}, 1]"
            )));
        }
        Ok(AccuracyModelEmpirical { m, s, acc_clean, nc })
    }

    pub fn accuracy(&self, rrmse: f64) -> f64 {
        empirical_curve(self.m, self.s, self.acc_clean, self.nc, rrmse)
    }
}

pub(crate) fn empirical_curve(m: f64, s: f64, acc_clean: f64, nc: usize, rrmse: f64) -> f64 {
    let chance = 1.0 / nc as f64;
    let ratio = (1.0 + (-m * s).exp()) / (1.0 + (s * (rrmse - m)).exp());
    // written as a drop from acc_clean so that rrmse = 0 returns it exactly
    acc_clean - (acc_clean - chance) * (1.0 - ratio)
}

pub fn empirical_accuracy(model: &AccuracyModelEmpirical, rrmse: f64) -> Result<f64> {
    check_rrmse(rrmse)?;
    Ok(model.accuracy(rrmse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn binary_examples() {
        assert_eq!(binary_accuracy(0.0f64).unwrap(), 1.0);
        assert!((binary_accuracy(1e-9f64).unwrap() - 1.0).abs() < 1e-12);
        assert!((binary_accuracy(1e12f64).unwrap() - 0.5).abs() < 1e-9);
        assert!((binary_accuracy(1.0f64).unwrap() - 0.921_350_396_474_857_4).abs() < 1e-12);
        assert!(binary_accuracy(-1.0f64).is_err());
    }

    #[test]
    fn multiclass_limits() {
        for nc in [2, 5, 10, 100] {
            assert!((multiclass_accuracy(1e9f64, nc).unwrap() - 1.0 / nc as f64).abs() < 1e-6, "nc {nc}");
            assert!((multiclass_accuracy(1e-6f64, nc).unwrap() - 1.0).abs() < 1e-6, "nc {nc}");
        }
        assert_eq!(multiclass_accuracy(0.0f64, 10).unwrap(), 1.0);
        assert!(multiclass_accuracy(1.0f64, 1).is_err());
    }

    #[test]
    fn two_class_closed_form() {
        // integral phi(x) Phi(x + c) dx = Phi(c / sqrt 2)
        for &r in &[0.1, 0.3, 1.0, 2.5, 10.0] {
            let closed = normcdf(1.0 / (2f64.sqrt() * r));
            assert!((multiclass_accuracy(r, 2).unwrap() - closed).abs() < 1e-6, "r {r}");
        }
        assert_relative_eq!(multiclass_accuracy(1.0f64, 2).unwrap(), 0.760_25, epsilon = 1e-5);
        // the binary form uses a different margin convention and disagrees
        assert!((binary_accuracy(1.0f64).unwrap() - multiclass_accuracy(1.0f64, 2).unwrap()).abs() > 0.1);
    }

    #[test]
    fn multiclass_monotone_in_rrmse_and_classes() {
        let grid = [0.15, 0.2, 0.5, 1.0, 2.0, 5.0];
        for nc in [2, 5, 10] {
            let accs: Vec<f64> = grid.iter().map(|&r| multiclass_accuracy(r, nc).unwrap()).collect();
            assert!(accs.windows(2).all(|w| w[1] < w[0]), "nc {nc}: {accs:?}");
        }
        for &r in &grid {
            let a: Vec<f64> = [2, 5, 10].iter().map(|&nc| multiclass_accuracy(r, nc).unwrap()).collect();
            assert!(a[0] > a[1] && a[1] > a[2], "r {r}: {a:?}");
        }
    }

    #[test]
    fn multiclass_in_f32() {
        let a = multiclass_accuracy(1.0f32, 2).unwrap();
        assert!((a - 0.760_25).abs() < 1e-4);
    }

    #[test]
    fn empirical_endpoints() {
        let m = AccuracyModelEmpirical::new(0.5, 8.0, 0.97, 10).unwrap();
        assert_eq!(m.accuracy(0.0), 0.97);
        assert!((m.accuracy(1e6) - 0.1).abs() < 1e-12);
        let mut prev = m.accuracy(0.0);
        for i in 1..200 {
            let a = m.accuracy(i as f64 * 0.02);
            assert!(a <= prev && (0.1..=0.97).contains(&a));
            prev = a;
        }
        assert!(AccuracyModelEmpirical::new(0.5, 0.0, 0.9, 10).is_err());
        assert!(AccuracyModelEmpirical::new(0.5, 1.0, 0.05, 10).is_err());
        assert!(AccuracyModelEmpirical::new(0.5, 1.0, 0.9, 1).is_err());
        assert!(empirical_accuracy(&m, -0.1).is_err());
    }
}
