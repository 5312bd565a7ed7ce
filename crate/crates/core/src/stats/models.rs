//! Closed-form disturbance models: per-flip magnitude, single-fault output
//! RMSE, variance propagation and RRMSE composition rules.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// RMS real disturbance of one uniformly random bit flip in a `bits`-wide
/// word with symmetric range `bound`:
/// `bound * sqrt((1/bits) * sum_{b=0}^{bits-1} 4^-b)`.
///
/// Flipping the bit at distance `b` from the MSB moves the value by
/// `bound / 2^b`. The exact sum is close to `bound/sqrt(6)` for 8-bit and
/// `bound/sqrt(12)` for 16-bit words.
pub fn sigma_delta<T: Real>(bits: u32, bound: T) -> T {
    let mut acc = T::zero();
    let mut w = T::one();
    for _ in 0..bits {
        acc += w;
        w = w / T::of(4.0);
    }
    bound * (acc / T::of(bits as f64)).sqrt()
}

/// Ratio of the MSB disturbance to the average random-bit disturbance,
/// `bound / sigma_delta`. About `sqrt(6)` for int8 and `sqrt(12)` for int16.
pub fn msb_gain(bits: u32) -> f64 {
    1.0 / sigma_delta(bits, 1.0f64)
}

/// Output RMSE of a convolution after one weight disturbance of RMS
/// `sigma_delta`, with default-initialized weights (`var(w) = 1/(K^2 ic)`):
/// `sigma_delta / (K sqrt(ic * oc))`.
pub fn predict_rmse_weight_fault<T: Real>(kernel: usize, ic: usize, oc: usize, sigma_delta: T) -> T {
    sigma_delta / (T::of(kernel as f64) * T::of((ic * oc) as f64).sqrt())
}

/// Output RMSE of a convolution on an `h x h` feature map after one input
/// activation disturbance: `sigma_delta / (H sqrt(ic))`. Independent of `oc`.
pub fn predict_rmse_activation_fault<T: Real>(h: usize, ic: usize, sigma_delta: T) -> T {
    sigma_delta / (T::of(h as f64) * T::of(ic as f64).sqrt())
}

/// Variance of the product of two independent zero-mean variables.
pub fn variance_product<T: Real>(var_x: T, var_y: T) -> T {
    var_x * var_y
}

/// Predicted output variance of a layer accumulating `fan_in` products:
/// `fan_in * var(x) * var(w)`. Applies equally to activations and to errors.
pub fn propagate_variance<T: Real>(fan_in: usize, var_input: T, var_weight: T) -> T {
    T::of(fan_in as f64) * variance_product(var_input, var_weight)
}

/// Combined RRMSE of independent error sources: the Euclidean norm of the parts.
pub fn aggregate_rrmse<T: Real>(parts: &[T]) -> T {
    parts.iter().fold(T::zero(), |acc, &p| acc + p * p).sqrt()
}

/// Converts an RRMSE measured with MSB-only injection to the RRMSE that the
/// same number of uniformly random bit flips would produce, dividing by
/// `bound / sigma_delta(bits, bound)`.
pub fn msb_to_standard_rrmse<T: Real>(rrmse_msb: T, bits: u32) -> Result<T> {
    if bits != 8 && bits != 16 {
        return Err(Error::InvalidArgument(format!("MSB scaling defined for 8 or 16 bits, got {bits}")));
    }
    Ok(rrmse_msb / T::of(msb_gain(bits)))
}

/// Rescales an RRMSE measured at bit error rate `p` to rate `p_target`.
/// Flip counts grow linearly with the rate and independent errors add in
/// quadrature, so RRMSE grows with `sqrt(p_target / p)`.
pub fn ber_rrmse_scaling<T: Real>(rrmse_at_p: T, p: T, p_target: T) -> Result<T> {
    if !(p > T::zero() && p_target > T::zero()) {
        return Err(Error::InvalidArgument(format!("rates must be positive, got {p} and {p_target}")));
    }
    Ok(rrmse_at_p * (p_target / p).sqrt())
}

/// Per-word MSB flip rate whose expected squared disturbance equals that of
/// random-bit injection at per-bit rate `ber`: `ber * bits * (sigma_delta/bound)^2`.
pub fn msb_rate_matching_rrmse(ber: f64, bits: u32) -> f64 {
    let s = sigma_delta(bits, 1.0f64);
    ber * bits as f64 * s * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigma_delta_exact_sums() {
        // closed form of the geometric sum: (1 - 4^-bits) * 4/3
        let exact8 = ((1.0 - 4f64.powi(-8)) * 4.0 / 3.0 / 8.0).sqrt();
        assert_relative_eq!(sigma_delta(8, 1.0f64), exact8, epsilon = 1e-15);
        assert_relative_eq!(sigma_delta(8, 1.0f64), 0.408_245_2, epsilon = 1e-7);
        let exact16 = 2.0 * ((1.0 - 4f64.powi(-16)) * 4.0 / 3.0 / 16.0).sqrt();
        assert_relative_eq!(sigma_delta(16, 2.0f64), exact16, epsilon = 1e-15);
        assert_relative_eq!(sigma_delta(16, 2.0f64), 0.577_350_3, epsilon = 1e-7);
    }

    #[test]
    fn sigma_delta_matches_sqrt6_sqrt12_approximations() {
        let r8 = sigma_delta(8, 1.0f64) * 6f64.sqrt();
        let r16 = sigma_delta(16, 1.0f64) * 12f64.sqrt();
        assert!((r8 - 1.0).abs() < 1e-4, "{r8}");
        assert!((r16 - 1.0).abs() < 1e-4, "{r16}");
    }

    #[test]
    fn sigma_delta_scaling_laws() {
        assert_relative_eq!(sigma_delta(8, 2.0f64) / sigma_delta(8, 1.0f64), 2.0, epsilon = 1e-12);
        let ratio = sigma_delta(8, 1.0f64) / sigma_delta(16, 1.0f64);
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn single_fault_formulas() {
        assert_relative_eq!(predict_rmse_weight_fault(3, 16, 16, 1.0f64), 1.0 / 48.0, epsilon = 1e-15);
        assert_relative_eq!(
            predict_rmse_weight_fault(3, 32, 32, 1.0f64),
            predict_rmse_weight_fault(3, 16, 16, 1.0f64) / 2.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(predict_rmse_activation_fault(32, 16, 1.0f64), 0.0078125, epsilon = 1e-15);
    }

    #[test]
    fn composition_rules() {
        assert_eq!(variance_product(1.0, 1.0), 1.0);
        assert_eq!(variance_product(0.0, 3.0), 0.0);
        assert_relative_eq!(aggregate_rrmse(&[0.1f64, 0.1]), 0.141_421_356, epsilon = 1e-9);
        assert_eq!(aggregate_rrmse(&[0.37f64]), 0.37);
        assert_eq!(aggregate_rrmse::<f64>(&[]), 0.0);
        assert_relative_eq!(msb_to_standard_rrmse(1.0f64, 8).unwrap(), 0.408_25, epsilon = 1e-5);
        assert_relative_eq!(msb_to_standard_rrmse(1.0f64, 16).unwrap(), 0.288_68, epsilon = 1e-5);
        assert!(msb_to_standard_rrmse(1.0f64, 4).is_err());
        assert_relative_eq!(ber_rrmse_scaling(0.1f64, 1e-6, 4e-6).unwrap(), 0.2, epsilon = 1e-12);
        assert_eq!(ber_rrmse_scaling(0.3f64, 1e-5, 1e-5).unwrap(), 0.3);
        assert!(ber_rrmse_scaling(0.3f64, 0.0, 1e-5).is_err());
    }

    proptest::proptest! {
        #[test]
        fn aggregation_is_pythagorean(
            a in proptest::collection::vec(0.0f64..5.0, 0..6),
            b in proptest::collection::vec(0.0f64..5.0, 0..6),
        ) {
            let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
            let nested = aggregate_rrmse(&[aggregate_rrmse(&a), aggregate_rrmse(&b)]);
            proptest::prop_assert!((nested - aggregate_rrmse(&joined)).abs() < 1e-12);
            let mut rev = joined.clone();
            rev.reverse();
            proptest::prop_assert!((aggregate_rrmse(&rev) - aggregate_rrmse(&joined)).abs() < 1e-12);
        }
    }
}
