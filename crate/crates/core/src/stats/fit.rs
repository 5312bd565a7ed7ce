//! Least-squares fitting of the empirical accuracy curve.

use crate::error::{Error, Result};

use super::accuracy::{empirical_curve, AccuracyModelEmpirical};

/// Log-spaced initialization grid for the sigmoid midpoint.
pub const MIDPOINT_GRID: (f64, f64) = (1e-3, 10.0);
/// Log-spaced initialization grid for the sigmoid steepness.
pub const STEEPNESS_GRID: (f64, f64) = (1e-1, 1e3);
pub const GRID_POINTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmpiricalFit {
    pub model: AccuracyModelEmpirical,
    /// Sum of squared accuracy residuals at the optimum.
    pub residual: f64,
    pub iterations: usize,
}

/// Fits `(m, s)` of the empirical curve to `(rrmse, accuracy)` points with
/// `acc_clean` and `nc` held fixed.
///
/// The search starts from the best node of a 16 x 16 log-spaced grid and is
/// refined by Nelder-Mead in `(ln m, ln s)`. Exact duplicate points are
/// collapsed first, so repeating a sample never moves the optimum.
pub fn fit_empirical(points: &[(f64, f64)], acc_clean: f64, nc: usize) -> Result<EmpiricalFit> {
    // validates acc_clean and nc
    AccuracyModelEmpirical::new(1.0, 1.0, acc_clean, nc)?;
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &(r, a) in points {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::InvalidArgument(format!("rrmse {r} must be finite and non-negative")));
        }
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::InvalidArgument(format!("accuracy {a} outside [0, 1]")));
        }
        if !pts.iter().any(|p| p.0.to_bits() == r.to_bits() && p.1.to_bits() == a.to_bits()) {
            pts.push((r, a));
        }
    }
    let first = pts.first().map(|p| p.0);
    if pts.len() < 2 || pts.iter().all(|p| Some(p.0) == first) {
        return Err(Error::FitIllPosed("need at least two points with distinct rrmse".into()));
    }

    let sse = |m: f64, s: f64| -> f64 {
        pts.iter()
            .map(|&(r, a)| {
                let e = empirical_curve(m, s, acc_clean, nc, r) - a;
                e * e
            })
            .sum()
    };
    let objective = |x: [f64; 2]| sse(x[0].exp(), x[1].exp());

    let grid = |(lo, hi): (f64, f64), i: usize| -> f64 {
        (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (GRID_POINTS - 1) as f64).exp()
    };
    let mut best = (f64::INFINITY, [0.0; 2]);
    for i in 0..GRID_POINTS {
        for j in 0..GRID_POINTS {
            let x = [grid(MIDPOINT_GRID, i).ln(), grid(STEEPNESS_GRID, j).ln()];
            let f = objective(x);
            if f < best.0 {
                best = (f, x);
            }
        }
    }
    let (x, f, iterations) = nelder_mead(objective, best.1, 0.3, 1e-12, 4000);
    let model = AccuracyModelEmpirical::new(x[0].exp(), x[1].exp(), acc_clean, nc)?;
    Ok(EmpiricalFit { model, residual: f, iterations })
}

/// Minimizes `f` over R^2 with the standard Nelder-Mead simplex
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2). Stops when the
/// simplex diameter falls below `xtol` or after `max_iter` iterations.
pub fn nelder_mead(f: impl Fn([f64; 2]) -> f64, start: [f64; 2], step: f64, xtol: f64, max_iter: usize) -> ([f64; 2], f64, usize) {
    let mut simplex = [start, [start[0] + step, start[1]], [start[0], start[1] + step]];
    let mut values = simplex.map(&f);
    let combine = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    let mut iter = 0;
    while iter < max_iter {
        iter += 1;
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);

        let diameter = (1..3)
            .map(|i| ((simplex[i][0] - simplex[0][0]).powi(2) + (simplex[i][1] - simplex[0][1]).powi(2)).sqrt())
            .fold(0.0, f64::max);
        if diameter < xtol {
            break;
        }

        let centroid = combine(simplex[0], simplex[1], 0.5);
        let worst = simplex[2];
        let reflected = combine(centroid, worst, -1.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = combine(centroid, worst, -2.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let (target, ft) = if fr < values[2] { (reflected, fr) } else { (worst, values[2]) };
            let contracted = combine(centroid, target, 0.5);
            let fc = f(contracted);
            if fc < ft {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = combine(simplex[0], simplex[i], 0.5);
                    values[i] = f(simplex[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&i, &j| values[i].total_cmp(&values[j])).expect("three vertices");
    (simplex[best], values[best], iter)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let rosen = |x: [f64; 2]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let (x, f, _) = nelder_mead(rosen, [-1.2, 1.0], 0.5, 1e-10, 10_000);
        assert!(f < 1e-12, "{f}");
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn recovers_known_parameters() {
        let truth = AccuracyModelEmpirical::new(0.5, 8.0, 0.98, 10).unwrap();
        let pts: Vec<(f64, f64)> = [0.05, 0.2, 0.4, 0.55, 0.8, 1.2].iter().map(|&r| (r, truth.accuracy(r))).collect();
        let fit = fit_empirical(&pts, 0.98, 10).unwrap();
        assert!((fit.model.m / 0.5 - 1.0).abs() < 0.01, "{:?}", fit.model);
        assert!((fit.model.s / 8.0 - 1.0).abs() < 0.01, "{:?}", fit.model);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn duplicate_point_does_not_move_optimum() {
        let pts = vec![(0.1, 0.95), (0.4, 0.7), (0.9, 0.35), (1.6, 0.15)];
        let a = fit_empirical(&pts, 0.97, 10).unwrap();
        let mut dup = pts.clone();
        dup.push(pts[1]);
        let b = fit_empirical(&dup, 0.97, 10).unwrap();
        assert_eq!(a, b);
        // deterministic
        assert_eq!(a, fit_empirical(&pts, 0.97, 10).unwrap());
    }

    #[test]
    fn ill_posed_inputs() {
        assert!(matches!(fit_empirical(&[(0.3, 0.5), (0.3, 0.6)], 0.9, 10), Err(Error::FitIllPosed(_))));
        assert!(matches!(fit_empirical(&[(0.3, 0.5)], 0.9, 10), Err(Error::FitIllPosed(_))));
        assert!(fit_empirical(&[(0.3, 1.5), (0.5, 0.2)], 0.9, 10).is_err());
    }

    #[test]
    fn four_anchor_points_predict_held_out_sweep() {
        // 31-point sweep drawn from a known curve with +-0.002 measurement
        // noise; the fit only sees 4 evenly spaced points.
        use rand::{Rng, SeedableRng};
        let truth = AccuracyModelEmpirical::new(0.6, 6.0, 0.97, 10).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let sweep: Vec<(f64, f64)> = (0..31)
            .map(|i| {
                let r = 0.02 + 1.98 * i as f64 / 30.0;
                (r, (truth.accuracy(r) + rng.random_range(-0.002..0.002)).clamp(0.0, 1.0))
            })
            .collect();
        let anchors: Vec<(f64, f64)> = [0, 10, 20, 30].iter().map(|&i| sweep[i]).collect();
        let fit = fit_empirical(&anchors, 0.97, 10).unwrap();
        let worst_truth = sweep.iter().map(|&(r, _)| (fit.model.accuracy(r) - truth.accuracy(r)).abs()).fold(0.0, f64::max);
        assert!(worst_truth <= 0.02, "worst held-out error {worst_truth}, model {:?}", fit.model);
    }
}
