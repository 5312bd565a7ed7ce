//! Forward and backward kernels for the supported layer types.
//!
//! Activations are laid out channel-major (`[c, h, w]`); convolution weights
//! are `[oc, ic, k, k]` and dense weights `[out, in]`.

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub ic: usize,
    pub oc: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output column range `[lo, hi)` for which `ox*stride + kx - pad` lands inside the input row.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        // smallest ox with ox*s + kx >= pad
        let lo = if kx >= self.pad { 0 } else { (self.pad - kx).div_ceil(s) };
        // largest ox with ox*s + kx - pad <= w - 1
        let hi = if self.w + self.pad > kx { (self.w + self.pad - kx - 1) / s + 1 } else { 0 };
        (lo, hi.min(self.ow))
    }

    #[inline]
    fn row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = oy * self.stride + ky;
        (iy >= self.pad && iy - self.pad < self.h).then(|| iy - self.pad)
    }
}

pub(crate) fn conv2d<T: Real>(g: &ConvGeom, input: &[T], weights: &[T], bias: &[T], out: &mut [T]) {
    let plane = g.oh * g.ow;
    for o in 0..g.oc {
        let out_o = &mut out[o * plane..(o + 1) * plane];
        out_o.fill(bias[o]);
        for i in 0..g.ic {
            let in_i = &input[i * g.h * g.w..(i + 1) * g.h * g.w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = weights[((o * g.ic + i) * g.k + ky) * g.k + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let (lo, hi) = g.col_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..g.oh {
                        let Some(iy) = g.row(oy, ky) else { continue };
                        let row_in = &in_i[iy * g.w..(iy + 1) * g.w];
                        let row_out = &mut out_o[oy * g.ow..(oy + 1) * g.ow];
                        if g.stride == 1 {
                            let off = kx as isize - g.pad as isize;
                            let src = &row_in[(lo as isize + off) as usize..(hi as isize + off) as usize];
                            for (d, &s) in row_out[lo..hi].iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in lo..hi {
                                row_out[ox] += wv * row_in[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight and bias gradients and, when requested, the input gradient.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weights: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    mut grad_in: Option<&mut [T]>,
) {
    let plane = g.oh * g.ow;
    for o in 0..g.oc {
        let go = &grad_out[o * plane..(o + 1) * plane];
        grad_b[o] += go.iter().copied().sum::<T>();
        for i in 0..g.ic {
            let in_i = &input[i * g.h * g.w..(i + 1) * g.h * g.w];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let widx = ((o * g.ic + i) * g.k + ky) * g.k + kx;
                    let wv = weights[widx];
                    let (lo, hi) = g.col_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    let mut acc = T::zero();
                    for oy in 0..g.oh {
                        let Some(iy) = g.row(oy, ky) else { continue };
                        let row_go = &go[oy * g.ow..(oy + 1) * g.ow];
                        let base = i * g.h * g.w + iy * g.w;
                        for ox in lo..hi {
                            let ix = ox * g.stride + kx - g.pad;
                            acc += row_go[ox] * in_i[iy * g.w + ix];
                            if let Some(gi) = grad_in.as_deref_mut() {
                                gi[base + ix] += row_go[ox] * wv;
                            }
                        }
                    }
                    grad_w[widx] += acc;
                }
            }
        }
    }
}

pub(crate) fn dense<T: Real>(in_f: usize, out_f: usize, input: &[T], weights: &[T], bias: &[T], out: &mut [T]) {
    for j in 0..out_f {
        let row = &weights[j * in_f..(j + 1) * in_f];
        let mut acc = bias[j];
        for (&w, &x) in row.iter().zip(input) {
            acc += w * x;
        }
        out[j] = acc;
    }
}

pub(crate) fn dense_backward<T: Real>(
    in_f: usize,
    out_f: usize,
    input: &[T],
    weights: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    mut grad_in: Option<&mut [T]>,
) {
    for j in 0..out_f {
        let g = grad_out[j];
        grad_b[j] += g;
        let gw = &mut grad_w[j * in_f..(j + 1) * in_f];
        for (d, &x) in gw.iter_mut().zip(input) {
            *d += g * x;
        }
        if let Some(gi) = grad_in.as_deref_mut() {
            let row = &weights[j * in_f..(j + 1) * in_f];
            for (d, &w) in gi.iter_mut().zip(row) {
                *d += g * w;
            }
        }
    }
}

pub(crate) fn relu<T: Real>(input: &[T], out: &mut [T]) {
    for (o, &x) in out.iter_mut().zip(input) {
        *o = if x > T::zero() { x } else { T::zero() };
    }
}

/// Non-overlapping pooling with `window x window` tiles; trailing rows/columns are dropped.
pub(crate) fn pool<T: Real>(c: usize, h: usize, w: usize, window: usize, max: bool, input: &[T], out: &mut [T]) {
    let (oh, ow) = (h / window, w / window);
    let norm = T::of((window * window) as f64);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = if max { T::neg_infinity() } else { T::zero() };
                for dy in 0..window {
                    let row = (ch * h + oy * window + dy) * w + ox * window;
                    for &v in &input[row..row + window] {
                        if max {
                            if v > acc {
                                acc = v;
                            }
                        } else {
                            acc += v;
                        }
                    }
                }
                out[(ch * oh + oy) * ow + ox] = if max { acc } else { acc / norm };
            }
        }
    }
}

pub(crate) fn pool_backward<T: Real>(
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    max: bool,
    input: &[T],
    grad_out: &[T],
    grad_in: &mut [T],
) {
    let (oh, ow) = (h / window, w / window);
    let norm = T::of((window * window) as f64);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out[(ch * oh + oy) * ow + ox];
                if max {
                    let mut best = (ch * h + oy * window) * w + ox * window;
                    for dy in 0..window {
                        let row = (ch * h + oy * window + dy) * w + ox * window;
                        for idx in row..row + window {
                            if input[idx] > input[best] {
                                best = idx;
                            }
                        }
                    }
                    grad_in[best] += g;
                } else {
                    for dy in 0..window {
                        let row = (ch * h + oy * window + dy) * w + ox * window;
                        for d in &mut grad_in[row..row + window] {
                            *d += g / norm;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition of a padded, strided convolution.
    fn conv_reference(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.oc * g.oh * g.ow];
        for o in 0..g.oc {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = b[o];
                    for i in 0..g.ic {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += w[((o * g.ic + i) * g.k + ky) * g.k + kx]
                                    * x[(i * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    out[(o * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
        out
    }

    fn geom(ic: usize, oc: usize, k: usize, stride: usize, pad: usize, h: usize, w: usize) -> ConvGeom {
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        ConvGeom { ic, oc, k, stride, pad, h, w, oh, ow }
    }

    #[test]
    fn conv_matches_reference_definition() {
        for (stride, pad, k) in [(1, 0, 3), (1, 1, 3), (2, 1, 3), (1, 2, 5), (2, 0, 2), (3, 2, 3)] {
            let g = geom(2, 3, k, stride, pad, 7, 6);
            let x: Vec<f64> = (0..g.ic * g.h * g.w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let w: Vec<f64> = (0..g.oc * g.ic * k * k).map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.7).collect();
            let b = vec![0.5, -1.0, 0.25];
            let mut out = vec![0.0; g.oc * g.oh * g.ow];
            conv2d(&g, &x, &w, &b, &mut out);
            assert_eq!(out, conv_reference(&g, &x, &w, &b), "stride {stride} pad {pad} k {k}");
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let g = geom(2, 2, 3, 2, 1, 5, 5);
        let x: Vec<f64> = (0..g.ic * g.h * g.w).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..g.oc * g.ic * 9).map(|i| (i as f64 * 0.71).cos()).collect();
        let b = vec![0.1, -0.2];
        // loss = sum(out * r)
        let r: Vec<f64> = (0..g.oc * g.oh * g.ow).map(|i| (i as f64 * 1.3).sin()).collect();
        let loss = |x: &[f64], w: &[f64]| -> f64 {
            let mut out = vec![0.0; r.len()];
            conv2d(&g, x, w, &b, &mut out);
            out.iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; 2];
        let mut gx = vec![0.0; x.len()];
        conv2d_backward(&g, &x, &w, &r, &mut gw, &mut gb, Some(&mut gx));
        let eps = 1e-6;
        for idx in 0..w.len() {
            let mut wp = w.clone();
            wp[idx] += eps;
            let mut wm = w.clone();
            wm[idx] -= eps;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * eps);
            assert!((fd - gw[idx]).abs() < 1e-6, "w[{idx}] {fd} vs {}", gw[idx]);
        }
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * eps);
            assert!((fd - gx[idx]).abs() < 1e-6, "x[{idx}] {fd} vs {}", gx[idx]);
        }
    }

    #[test]
    fn pooling_forward_and_backward() {
        let x = [1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 8.0, 1.0, 0.0, 0.0, 0.0, 9.0, 1.0, 1.0, 1.0, 1.0];
        let mut out = [0.0; 4];
        pool(1, 4, 4, 2, true, &x, &mut out);
        assert_eq!(out, [5.0, 8.0, 1.0, 9.0]);
        pool(1, 4, 4, 2, false, &x, &mut out);
        assert_eq!(out, [13.0 / 4.0, 11.0 / 4.0, 0.5, 11.0 / 4.0]);
        let mut gi = [0.0; 16];
        pool_backward(1, 4, 4, 2, true, &x, &[1.0, 2.0, 3.0, 4.0], &mut gi);
        assert_eq!(gi[1], 1.0);
        assert_eq!(gi[6], 2.0);
        assert_eq!(gi[11], 4.0);
        assert_eq!(gi.iter().sum::<f64>(), 10.0);
    }
}
