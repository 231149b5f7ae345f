//! Cross-channel attention fusion.
//!
//! Each static channel is a query over the dynamic channels: with `Q`, `K`, `V`
//! flattened to `[c, n]` (n = pixels), the `[c, c]` score matrix is `Q·Kᵀ`
//! (unscaled), and the fused code is `softmax(Q·Kᵀ)·V + static`.

use super::layers::Conv;
use crate::tensor::{matmul, Real};

/// Row-wise softmax of a `[rows, cols]` matrix, in place.
pub fn softmax_rows<T: Real>(scores: &mut [T], cols: usize) {
    for row in scores.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
}

/// `softmax(q·kᵀ)·v` for `[c, n]` operands; returns `(output, attention)`.
pub fn channel_attention<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    c: usize,
    n: usize,
) -> (Vec<T>, Vec<T>) {
    let mut attn = vec![T::zero(); c * c];
    T::gemm(
        c,
        n,
        c,
        T::one(),
        q,
        n as isize,
        1,
        k,
        1,
        n as isize,
        T::zero(),
        &mut attn,
        c as isize,
        1,
    );
    softmax_rows(&mut attn, c);
    let mut out = vec![T::zero(); c * n];
    matmul(c, c, n, &attn, v, &mut out);
    (out, attn)
}

/// Gradients of [`channel_attention`] with respect to `q`, `k`, `v`.
pub fn channel_attention_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    attn: &[T],
    d_out: &[T],
    c: usize,
    n: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    // dA = dOut·Vᵀ
    let mut d_attn = vec![T::zero(); c * c];
    T::gemm(
        c,
        n,
        c,
        T::one(),
        d_out,
        n as isize,
        1,
        v,
        1,
        n as isize,
        T::zero(),
        &mut d_attn,
        c as isize,
        1,
    );
    // dV = Aᵀ·dOut
    let mut d_v = vec![T::zero(); c * n];
    T::gemm(
        c,
        c,
        n,
        T::one(),
        attn,
        1,
        c as isize,
        d_out,
        n as isize,
        1,
        T::zero(),
        &mut d_v,
        n as isize,
        1,
    );
    // softmax backward: dS = A ⊙ (dA - rowsum(dA ⊙ A))
    let mut d_scores = d_attn;
    for (ds, a) in d_scores.chunks_mut(c).zip(attn.chunks(c)) {
        let dot: T = ds.iter().zip(a).map(|(&x, &y)| x * y).sum();
        for (x, &y) in ds.iter_mut().zip(a) {
            *x = y * (*x - dot);
        }
    }
    let mut d_q = vec![T::zero(); c * n];
    matmul(c, c, n, &d_scores, k, &mut d_q);
    // dK = dSᵀ·Q
    let mut d_k = vec![T::zero(); c * n];
    T::gemm(
        c,
        c,
        n,
        T::one(),
        &d_scores,
        1,
        c as isize,
        q,
        n as isize,
        1,
        T::zero(),
        &mut d_k,
        n as isize,
        1,
    );
    (d_q, d_k, d_v)
}

/// The three 1×1 projections of the fusion module.
#[derive(Clone, Debug, PartialEq)]
pub struct CcaParams<T> {
    pub query: Conv<T>,
    pub key: Conv<T>,
    pub value: Conv<T>,
}

impl<T: Real> CcaParams<T> {
    pub fn zeros(c1: usize) -> Self {
        Self {
            query: Conv::zeros(c1, c1, 1),
            key: Conv::zeros(c1, c1, 1),
            value: Conv::zeros(c1, c1, 1),
        }
    }
}

/// Intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct CcaCache<T> {
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    pub attn: Vec<T>,
}

/// Fuses `[c1, h, w]` static and dynamic features.
pub fn cca_fuse<T: Real>(
    static_feat: &[T],
    dynamic_feat: &[T],
    params: &CcaParams<T>,
    h: usize,
    w: usize,
) -> (Vec<T>, CcaCache<T>) {
    let c = params.query.out_channels();
    let n = h * w;
    let q = params.query.forward(static_feat, h, w);
    let k = params.key.forward(dynamic_feat, h, w);
    let v = params.value.forward(dynamic_feat, h, w);
    let (mut out, attn) = channel_attention(&q, &k, &v, c, n);
    for (o, &s) in out.iter_mut().zip(static_feat) {
        *o += s;
    }
    (out, CcaCache { q, k, v, attn })
}

/// Returns `(d_static_feat, d_dynamic_feat)` and accumulates projection gradients.
#[allow(clippy::too_many_arguments)]
pub fn cca_backward<T: Real>(
    static_feat: &[T],
    dynamic_feat: &[T],
    params: &CcaParams<T>,
    cache: &CcaCache<T>,
    d_out: &[T],
    h: usize,
    w: usize,
    grad: &mut CcaParams<T>,
) -> (Vec<T>, Vec<T>) {
    let c = params.query.out_channels();
    let (d_q, d_k, d_v) =
        channel_attention_backward(&cache.q, &cache.k, &cache.v, &cache.attn, d_out, c, h * w);
    let mut d_static = params
        .query
        .backward(static_feat, h, w, &d_q, &mut grad.query);
    for (d, &g) in d_static.iter_mut().zip(d_out) {
        *d += g;
    }
    let mut d_dynamic = params.key.backward(dynamic_feat, h, w, &d_k, &mut grad.key);
    let d_dyn_v = params
        .value
        .backward(dynamic_feat, h, w, &d_v, &mut grad.value);
    for (d, g) in d_dynamic.iter_mut().zip(d_dyn_v) {
        *d += g;
    }
    (d_static, d_dynamic)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_conv(c: usize) -> Conv<f64> {
        let mut conv = Conv::zeros(c, c, 1);
        for i in 0..c {
            conv.weight.data_mut()[i * c + i] = 1.0;
        }
        conv
    }

    #[test]
    fn zero_value_projection_leaves_static_branch() {
        let c = 4;
        let (h, w) = (2, 3);
        let mut params = CcaParams::<f64>::zeros(c);
        params.query = identity_conv(c);
        params.key = identity_conv(c);
        let s: Vec<f64> = (0..c * h * w).map(|i| (i as f64).sin()).collect();
        let d: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.3).cos()).collect();
        let (out, _) = cca_fuse(&s, &d, &params, h, w);
        assert_eq!(out, s);
    }

    #[test]
    fn two_channel_example_by_hand() {
        let mut params = CcaParams::<f64>::zeros(2);
        params.query = identity_conv(2);
        params.key = identity_conv(2);
        params.value = identity_conv(2);
        let (out, cache) = cca_fuse(&[1.0, 0.0], &[2.0, 4.0], &params, 1, 1);
        let (e2, e4) = (2f64.exp(), 4f64.exp());
        let a0 = [e2 / (e2 + e4), e4 / (e2 + e4)];
        assert!((cache.attn[0] - a0[0]).abs() < 1e-15);
        assert!((cache.attn[2] - 0.5).abs() < 1e-15);
        let expect = [a0[0] * 2.0 + a0[1] * 4.0 + 1.0, 0.5 * 2.0 + 0.5 * 4.0];
        assert!((out[0] - expect[0]).abs() < 1e-12);
        assert!((out[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut m: Vec<f64> = (0..36)
            .map(|i| ((i * 37 % 17) as f64 - 8.0) * 3.0)
            .collect();
        softmax_rows(&mut m, 6);
        for row in m.chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
