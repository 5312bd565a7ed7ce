//! Error function and standard normal density/distribution.
//!
//! `erf` uses the everywhere-convergent series
//!
//! ```text
//! erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_{n>=0} 2^n x^(2n+1) / (1*3*...*(2n+1))
//! ```
//!
//! whose terms are all positive, so there is no cancellation; summation stops
//! once a term falls below machine epsilon relative to the partial sum. For
//! `|x| >= 6` the result is `±1` (the true tail is below `2.2e-17`). In `f64`
//! the absolute error stays below `1e-15` over the real line, and the
//! algorithm is a plain loop that ports bit-for-bit to other languages.

use crate::scalar::Real;

const SATURATION: f64 = 6.0;

pub fn erf<T: Real>(x: T) -> T {
    if x.is_nan() {
        return x;
    }
    let ax = x.abs();
    if ax >= T::of(SATURATION) {
        return x.signum();
    }
    let two_x2 = T::of(2.0) * ax * ax;
    let mut term = ax;
    let mut sum = ax;
    let mut n = 0u32;
    loop {
        n += 1;
        term = term * two_x2 / T::of((2 * n + 1) as f64);
        sum += term;
        if term <= sum * T::epsilon() || n > 400 {
            break;
        }
    }
    let v = T::of(2.0 / std::f64::consts::PI.sqrt()) * (-ax * ax).exp() * sum;
    v.min(T::one()) * x.signum()
}

pub fn normpdf<T: Real>(x: T) -> T {
    T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt()) * (-(x * x) / T::of(2.0)).exp()
}

pub fn normcdf<T: Real>(x: T) -> T {
    T::of(0.5) * (T::one() + erf(x / T::of(std::f64::consts::SQRT_2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// erf by composite Simpson on the defining integral, as an independent check.
    fn erf_quadrature(x: f64) -> f64 {
        let n = 20_000;
        let h = x / n as f64;
        let f = |t: f64| (-t * t).exp();
        let mut s = f(0.0) + f(x);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0 * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn erf_matches_quadrature() {
        for &x in &[-5.5, -3.0, -1.0, -0.3, 0.0, 0.1, 0.5, 1.0, 1.7, 2.5, 3.9, 5.9] {
            let q = erf_quadrature(x);
            assert!((erf(x) - q).abs() < 1e-12, "x={x}: {} vs {q}", erf(x));
        }
    }

    #[test]
    fn erf_known_values() {
        assert!((erf(1.0f64) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert_eq!(erf(0.0f64), 0.0);
        assert_eq!(erf(7.0f64), 1.0);
        assert_eq!(erf(-7.0f64), -1.0);
        assert!((erf(1.0f32) - 0.842_700_8).abs() < 1e-6);
    }

    #[test]
    fn normcdf_symmetry_and_values() {
        for &x in &[0.0, 0.5, 1.0, 2.0, 4.0] {
            assert!((normcdf(x) + normcdf(-x) - 1.0f64).abs() < 1e-15);
        }
        assert!((normcdf(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-14);
        assert!(normcdf(-10.0f64) < 1e-20);
    }
}
