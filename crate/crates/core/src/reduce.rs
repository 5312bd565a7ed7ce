//! Order-fixed floating point reductions.
//!
//! Campaign results must not depend on worker count, so every reduction runs
//! over values already placed in trial order, using pairwise summation to
//! bound rounding drift.

const LEAF: usize = 32;

pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn pairwise_sum_by<T>(items: &[T], f: impl Fn(&T) -> f64 + Copy) -> f64 {
    if items.len() <= LEAF {
        return items.iter().map(f).sum();
    }
    let mid = items.len() / 2;
    pairwise_sum_by(&items[..mid], f) + pairwise_sum_by(&items[mid..], f)
}

/// Mean and standard error of the mean (sample standard deviation over `sqrt(n)`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = pairwise_sum_by(values, |v| (v - mean) * (v - mean));
    (mean, (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        let (m, se) = mean_stderr(&[2.0; 10]);
        assert_eq!((m, se), (2.0, 0.0));
        assert_eq!(mean_stderr(&[]), (0.0, 0.0));
    }
}
