use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Column-wise mean over rows: (n, d) -> (1, d). Errors on zero rows.
pub fn mean_pool(x: &Tensor2) -> Result<Tensor2> {
    if x.rows() == 0 {
        return Err(Error::EmptyInput("mean_pool over zero rows".into()));
    }
    let mut out = x.col_sums();
    out.scale(1.0 / x.rows() as f64);
    Ok(out)
}

/// Gradient of [`mean_pool`]: spread `upstream` (1, d) uniformly over the
/// `rows` pooled rows.
pub fn mean_pool_backward(upstream: &Tensor2, rows: usize) -> Result<Tensor2> {
    if upstream.rows() != 1 {
        return Err(Error::shape(format!(
            "mean_pool_backward expects a (1, d) upstream, got {:?}",
            upstream.shape()
        )));
    }
    if rows == 0 {
        return Err(Error::EmptyInput("mean_pool_backward over zero rows".into()));
    }
    Ok(upstream.scaled(1.0 / rows as f64).tile_rows(rows))
}

/// Sinusoidal positional/step embedding of a non-negative integer.
///
/// Interleaves sin/cos over a geometric frequency ladder:
/// out[2i] = sin(k * w_i), out[2i+1] = cos(k * w_i) with
/// w_i = 10000^(-2i/dim). `dim` must be even.
pub fn sinusoidal_embed(k: usize, dim: usize) -> Result<Tensor2> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::config(format!(
            "sinusoidal embedding dim must be positive and even, got {dim}"
        )));
    }
    let mut data = vec![0.0; dim];
    let kf = k as f64;
    for i in 0..dim / 2 {
        let w = (-(2.0 * i as f64 / dim as f64) * 10000f64.ln()).exp();
        data[2 * i] = (kf * w).sin();
        data[2 * i + 1] = (kf * w).cos();
    }
    Tensor2::from_vec(1, dim, data)
}

/// Row-wise softmax with the max-subtraction trick.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward through a row-wise softmax: given s = softmax(x) and dL/ds,
/// dL/dx_j = s_j * (up_j - sum_k up_k s_k).
pub fn softmax_rows_backward(softmax: &Tensor2, upstream: &Tensor2) -> Tensor2 {
    assert_eq!(softmax.shape(), upstream.shape(), "softmax backward shapes");
    let mut out = Tensor2::zeros(softmax.rows(), softmax.cols());
    for i in 0..softmax.rows() {
        let s = softmax.row(i);
        let u = upstream.row(i);
        let dot: f64 = s.iter().zip(u).map(|(&a, &b)| a * b).sum();
        let orow = out.row_mut(i);
        for ((o, &sv), &uv) in orow.iter_mut().zip(s).zip(u) {
            *o = sv * (uv - dot);
        }
    }
    out
}
