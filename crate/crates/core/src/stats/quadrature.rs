use crate::error::{Error, Result};
use crate::scalar::Real;

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// The interval is first split into `panels` equal panels, each refined
/// independently until the Richardson estimate of its error falls below its
/// share of `tol`. A panel that still has not converged at the maximum
/// recursion depth is reported as an error rather than truncated.
pub fn adaptive_simpson<T: Real>(f: impl Fn(T) -> T, a: T, b: T, tol: T, panels: usize) -> Result<T> {
    if !(a.is_finite() && b.is_finite() && tol > T::zero()) || panels == 0 {
        return Err(Error::Quadrature(format!("bad interval [{a}, {b}] or tolerance {tol}")));
    }
    let h = (b - a) / T::of(panels as f64);
    let panel_tol = tol / T::of(panels as f64);
    let mut total = T::zero();
    for i in 0..panels {
        let lo = a + h * T::of(i as f64);
        let hi = if i + 1 == panels { b } else { lo + h };
        let (flo, fhi) = (f(lo), f(hi));
        let mid = (lo + hi) / T::of(2.0);
        let fmid = f(mid);
        let whole = simpson(lo, hi, flo, fmid, fhi);
        total += refine(&f, lo, hi, flo, fmid, fhi, whole, panel_tol, 0)?;
    }
    Ok(total)
}

fn simpson<T: Real>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / T::of(6.0) * (fa + T::of(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine<T: Real>(f: &impl Fn(T) -> T, a: T, b: T, fa: T, fm: T, fb: T, whole: T, tol: T, depth: u32) -> Result<T> {
    let m = (a + b) / T::of(2.0);
    let (lm, rm) = ((a + m) / T::of(2.0), (m + b) / T::of(2.0));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let diff = left + right - whole;
    if !diff.is_finite() {
        return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
    }
    if diff.abs() <= T::of(15.0) * tol {
        return Ok(left + right + diff / T::of(15.0));
    }
    if depth >= MAX_DEPTH {
        return Err(Error::Quadrature(format!("no convergence on [{a}, {b}] at depth {depth}")));
    }
    let half = tol / T::of(2.0);
    Ok(refine(f, a, m, fa, flm, fm, left, half, depth + 1)? + refine(f, m, b, fm, frm, fb, right, half, depth + 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_and_gaussians() {
        let v = adaptive_simpson(|x: f64| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12, 1).unwrap();
        assert!((v - 0.0).abs() < 1e-12);
        let g = adaptive_simpson(|x: f64| (-x * x / 2.0).exp(), -10.0, 10.0, 1e-10, 16).unwrap();
        assert!((g - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn reports_non_convergence() {
        let r = adaptive_simpson(|x: f64| if x > 0.3 { 1.0 / (x - 0.3) } else { 0.0 }, 0.0, 1.0, 1e-12, 1);
        assert!(matches!(r, Err(Error::Quadrature(_))));
    }
}
