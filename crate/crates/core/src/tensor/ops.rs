//! Value kernels shared by the tape's forward and backward passes.

use super::Real;
use crate::error::{dim_err, Error, Result};

/// `out += op(a) * op(b)` where `op` optionally transposes a row-major matrix.
///
/// Each output element accumulates over the inner axis in increasing order, so
/// the result for row `i` depends only on row `i` of `op(a)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc<F: Real>(
    out: &mut [F],
    a: &[F],
    a_dims: (usize, usize),
    ta: bool,
    b: &[F],
    b_dims: (usize, usize),
    tb: bool,
) {
    let (ar, ac) = a_dims;
    let (br, bc) = b_dims;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    debug_assert_eq!(if tb { bc } else { br }, k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = if ta { a[p * ac + i] } else { a[i * ac + p] };
            if tb {
                for (j, o) in out_row.iter_mut().enumerate() {
                    *o = *o + av * b[j * bc + p];
                }
            } else {
                let b_row = &b[p * bc..p * bc + n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o = *o + av * bv;
                }
            }
        }
    }
}

/// Row-wise softmax of an `rows x cols` matrix.
pub fn softmax_values<F: Real>(x: &[F], cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for (xr, or) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        softmax_row(xr, or);
    }
    out
}

pub(crate) fn softmax_row<F: Real>(x: &[F], out: &mut [F]) {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

/// `log(sum(exp(x)))` computed stably.
pub(crate) fn log_sum_exp<F: Real>(x: &[F]) -> F {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let total: F = x.iter().map(|&v| (v - max).exp()).sum();
    max + total.ln()
}

/// Single-filter feature map `tanh(X * W + b)` of a `k x T` input and `k x h` filter.
///
/// Returns `T - h + 1` values.
pub fn conv1d_feature_map_values<F: Real>(
    x: &[F],
    x_dims: (usize, usize),
    w: &[F],
    w_dims: (usize, usize),
    bias: &[F],
) -> Result<Vec<F>> {
    let (k, t_len) = x_dims;
    let (wk, h) = w_dims;
    if wk != k {
        return Err(dim_err("conv1d_feature_map", "embedding rows (k)", k, wk));
    }
    if t_len < h {
        return Err(Error::WindowTooLong { window: h, len: t_len });
    }
    let positions = t_len - h + 1;
    if bias.len() != positions {
        return Err(dim_err("conv1d_feature_map", "bias length (T-h+1)", positions, bias.len()));
    }
    let mut out = Vec::with_capacity(positions);
    for t in 0..positions {
        let mut acc = F::zero();
        for i in 0..k {
            for j in 0..h {
                acc = acc + x[i * t_len + t + j] * w[i * h + j];
            }
        }
        out.push((acc + bias[t]).tanh());
    }
    Ok(out)
}

/// Maximum and the first index attaining it.
pub fn max_over_time_values<F: Real>(c: &[F]) -> Result<(F, usize)> {
    let (&first, rest) = c.split_first().ok_or(Error::EmptyFeatureMap)?;
    let mut best = (first, 0);
    for (i, &v) in rest.iter().enumerate() {
        if v > best.0 {
            best = (v, i + 1);
        }
    }
    Ok(best)
}
