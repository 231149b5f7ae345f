//! Convolution, pixel-shuffle and GELU with hand-written backward passes.
//!
//! Feature maps are planar `[channels, height, width]` slices.

use crate::tensor::{Real, Tensor};

/// A 2D convolution with square kernel, stride 1 and zero "same" padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    /// `[out_channels, in_channels, k, k]`
    pub weight: Tensor<T>,
    /// `[out_channels]`
    pub bias: Tensor<T>,
}

impl<T: Real> Conv<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[T], h: usize, w: usize) -> Vec<T> {
        conv2d_forward(x, h, w, self)
    }

    pub fn backward(&self, x: &[T], h: usize, w: usize, d_out: &[T], grad: &mut Conv<T>) -> Vec<T> {
        conv2d_backward(x, h, w, self, d_out, grad)
    }
}

/// Column buffer `[cin·k·k, h·w]` for a same-padded convolution.
fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let hw = h * w;
    let mut cols = vec![T::zero(); cin * k * k * hw];
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (x_lo, x_hi) = (pad.saturating_sub(kx), (w + pad).saturating_sub(kx).min(w));
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let sy = sy - pad;
                    let src_row = &plane[sy * w..(sy + 1) * w];
                    let sx_lo = x_lo + kx - pad;
                    dst[y * w + x_lo..y * w + x_hi]
                        .copy_from_slice(&src_row[sx_lo..sx_lo + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

/// Scatter-add of a column buffer back onto the input plane layout.
fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..cin {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let (x_lo, x_hi) = (pad.saturating_sub(kx), (w + pad).saturating_sub(kx).min(w));
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let sy = sy - pad;
                    let sx_lo = x_lo + kx - pad;
                    let dst_row = &mut plane[sy * w + sx_lo..sy * w + sx_lo + (x_hi - x_lo)];
                    for (d, &s) in dst_row.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(x: &[T], h: usize, w: usize, conv: &Conv<T>) -> Vec<T> {
    let (cout, cin, k) = (conv.out_channels(), conv.in_channels(), conv.kernel());
    let hw = h * w;
    assert_eq!(
        x.len(),
        cin * hw,
        "conv input does not match {cin} channels of {h}x{w}"
    );
    let mut out = vec![T::zero(); cout * hw];
    for (co, &b) in conv.bias.data().iter().enumerate() {
        out[co * hw..(co + 1) * hw].fill(b);
    }
    let owned;
    let cols: &[T] = if k == 1 {
        x
    } else {
        owned = im2col(x, cin, h, w, k);
        &owned
    };
    let kk = cin * k * k;
    T::gemm(
        cout,
        kk,
        hw,
        T::one(),
        conv.weight.data(),
        kk as isize,
        1,
        cols,
        hw as isize,
        1,
        T::one(),
        &mut out,
        hw as isize,
        1,
    );
    out
}

/// Accumulates weight/bias gradients into `grad` and returns the input gradient.
pub fn conv2d_backward<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    conv: &Conv<T>,
    d_out: &[T],
    grad: &mut Conv<T>,
) -> Vec<T> {
    let (cout, cin, k) = (conv.out_channels(), conv.in_channels(), conv.kernel());
    let hw = h * w;
    let kk = cin * k * k;
    debug_assert_eq!(d_out.len(), cout * hw);

    for (co, gb) in grad.bias.data_mut().iter_mut().enumerate() {
        *gb += d_out[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
    }

    let owned;
    let cols: &[T] = if k == 1 {
        x
    } else {
        owned = im2col(x, cin, h, w, k);
        &owned
    };
    // dW[cout, kk] += dOut[cout, hw] · colsᵀ[hw, kk]
    T::gemm(
        cout,
        hw,
        kk,
        T::one(),
        d_out,
        hw as isize,
        1,
        cols,
        1,
        hw as isize,
        T::one(),
        grad.weight.data_mut(),
        kk as isize,
        1,
    );

    // dCols[kk, hw] = Wᵀ[kk, cout] · dOut[cout, hw]
    let mut d_cols = vec![T::zero(); kk * hw];
    T::gemm(
        kk,
        cout,
        hw,
        T::one(),
        conv.weight.data(),
        1,
        kk as isize,
        d_out,
        hw as isize,
        1,
        T::zero(),
        &mut d_cols,
        hw as isize,
        1,
    );
    if k == 1 {
        d_cols
    } else {
        let mut dx = vec![T::zero(); cin * hw];
        col2im(&d_cols, cin, h, w, k, &mut dx);
        dx
    }
}

/// `[c·r², h, w]` → `[c, h·r, w·r]` with `out[c, y·r+i, x·r+j] = in[c·r²+i·r+j, y, x]`.
pub fn pixel_shuffle<T: Copy + Default>(x: &[T], c: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    if r == 1 {
        return x.to_vec();
    }
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::default(); c * oh * ow];
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let src = &x[((ch * r + i) * r + j) * h * w..][..h * w];
                for y in 0..h {
                    let dst_row = (ch * oh + y * r + i) * ow;
                    for xx in 0..w {
                        out[dst_row + xx * r + j] = src[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint (and inverse) of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Copy + Default>(
    y: &[T],
    c: usize,
    h: usize,
    w: usize,
    r: usize,
) -> Vec<T> {
    if r == 1 {
        return y.to_vec();
    }
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::default(); c * r * r * h * w];
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let dst = &mut out[((ch * r + i) * r + j) * h * w..][..h * w];
                for yy in 0..h {
                    let src_row = (ch * oh + yy * r + i) * ow;
                    for xx in 0..w {
                        dst[yy * w + xx] = y[src_row + xx * r + j];
                    }
                }
            }
        }
    }
    out
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    let cdf = half * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = T::lit(FRAC_1_SQRT_2PI) * (-(x * x) * half).exp();
    cdf + x * pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], h: usize, w: usize, conv: &Conv<f64>) -> Vec<f64> {
        let (cout, cin, k) = (conv.out_channels(), conv.in_channels(), conv.kernel());
        let pad = (k / 2) as isize;
        let wd = conv.weight.data();
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = conv.bias.data()[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += wd[((co * cin + ci) * k + ky) * k + kx]
                                    * x[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(co * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    fn filled_conv(cin: usize, cout: usize, k: usize) -> Conv<f64> {
        let mut conv = Conv::zeros(cin, cout, k);
        for (i, v) in conv.weight.data_mut().iter_mut().enumerate() {
            *v = ((i * 7 % 11) as f64 - 5.0) * 0.1;
        }
        for (i, v) in conv.bias.data_mut().iter_mut().enumerate() {
            *v = i as f64 * 0.01;
        }
        conv
    }

    #[test]
    fn conv_matches_direct_sum() {
        for k in [1, 3, 5] {
            let (cin, cout, h, w) = (3, 4, 5, 6);
            let conv = filled_conv(cin, cout, k);
            let x: Vec<f64> = (0..cin * h * w).map(|i| (i as f64 * 0.3).cos()).collect();
            let fast = conv.forward(&x, h, w);
            let slow = naive_conv(&x, h, w, &conv);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x) - b, g> == <x, dX(g)> and == <W, dW(g)> for a bias-free linear map.
        let (cin, cout, h, w, k) = (2, 3, 4, 5, 3);
        let mut conv = filled_conv(cin, cout, k);
        conv.bias.fill(0.0);
        let x: Vec<f64> = (0..cin * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let g: Vec<f64> = (0..cout * h * w).map(|i| (i as f64 * 0.2).cos()).collect();
        let y = conv.forward(&x, h, w);
        let mut grad = Conv::zeros(cin, cout, k);
        let dx = conv.backward(&x, h, w, &g, &mut grad);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let via_x: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        let via_w: f64 = conv
            .weight
            .data()
            .iter()
            .zip(grad.weight.data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
        assert!((grad.bias.data()[0] - g[..h * w].iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn pixel_shuffle_raster_order() {
        let y = pixel_shuffle(&[1, 2, 3, 4], 1, 1, 1, 2);
        assert_eq!(y, vec![1, 2, 3, 4]);
        let x: Vec<u32> = (0..2 * 4 * 2 * 3).collect();
        let y = pixel_shuffle(&x, 2, 2, 3, 2);
        assert_eq!(pixel_unshuffle(&y, 2, 2, 3, 2), x);
        // channel 1 of a [4,1,1] input lands at row 0, column 1
        let z = pixel_shuffle(&[0, 10, 20, 30], 1, 1, 1, 2);
        assert_eq!(z[1], 10);
        assert_eq!(z[2], 20);
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5f64] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0f64), 0.0);
    }
}
