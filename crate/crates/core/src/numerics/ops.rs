// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense kernels. Every reduction runs in a fixed order so repeated calls
//! are bitwise identical on one thread.

use super::Tensor;
use crate::error::{Error, Result};

const ROW_BLOCK: usize = 8;

// ---------------------------------------------------------------------------
// Slice kernels
// ---------------------------------------------------------------------------

/// `out[m,n] = a[m,k] · b[k,n]`, overwriting `out`.
///
/// Each output element accumulates its `k` products in ascending order.
/// Rows are processed in blocks so a long `b` row stays in cache while it is
/// applied to several output rows; blocking does not change the per-element
/// summation order.
pub fn gemm(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut i0 = 0;
    while i0 < m {
        let i1 = (i0 + ROW_BLOCK).min(m);
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            for i in i0..i1 {
                let av = a[i * k + p];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        i0 = i1;
    }
}

/// Dot product with eight interleaved partial sums combined in a fixed tree.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let base = c * 8;
        for l in 0..8 {
            acc[l] += a[base + l] * b[base + l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `out[m,n] = a[m,k] · b[n,k]ᵀ`, overwriting `out`.
pub fn gemm_bt(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · b[m,n]`.
pub fn gemm_at_acc(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn norm(v: &[f32]) -> f32 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt() as f32
}

/// Dot product accumulated in `f64`.
pub fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

// ---------------------------------------------------------------------------
// Tensor-level operations
// ---------------------------------------------------------------------------

fn as_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!("{what} must be 2-D, got {s:?}"))),
    }
}

/// Matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = as_matrix(a, "matmul lhs")?;
    let (k2, n) = as_matrix(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul inner extents {k} vs {k2}")));
    }
    let mut out = vec![0.0; m * n];
    gemm(a.data(), b.data(), &mut out, m, k, n);
    let t = Tensor::new(vec![m, n], out)?;
    t.check_finite("matmul output")?;
    Ok(t)
}

/// Row-wise softmax over the last axis.
///
/// With `causal`, the trailing two axes must be square and entry `(i, j)` with
/// `j > i` is excluded and set to exactly zero.
pub fn softmax_rows(x: &Tensor, causal: bool) -> Result<Tensor> {
    let cols = x.cols();
    if x.rank() == 0 || cols == 0 {
        return Err(Error::Shape("softmax over an empty row".into()));
    }
    if causal {
        let r = x.rank();
        if r < 2 || x.shape()[r - 2] != cols {
            return Err(Error::Shape(format!(
                "causal softmax needs square trailing axes, got {:?}",
                x.shape()
            )));
        }
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        let limit = if causal { r % cols + 1 } else { cols };
        softmax_row_in_place(out.row_mut(r), limit);
    }
    out.check_finite("softmax output")?;
    Ok(out)
}

/// Softmax of `row[..limit]`; entries from `limit` on are set to zero.
pub fn softmax_row_in_place(row: &mut [f32], limit: usize) {
    let max = row[..limit].iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row[..limit].iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row[..limit].iter_mut() {
        *v *= inv;
    }
    for v in row[limit..].iter_mut() {
        *v = 0.0;
    }
}

/// Per-row statistics of a layer norm: the centred input and `1/sqrt(var+eps)`.
pub struct NormParts {
    pub centered: Tensor,
    pub scale: Vec<f32>,
}

/// Centres each row and computes its inverse standard deviation (population
/// variance, two passes).
pub fn norm_parts(x: &Tensor, eps: f32) -> NormParts {
    let d = x.cols();
    let mut centered = x.clone();
    let mut scale = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = centered.row_mut(r);
        let mut mean = 0.0f32;
        for &v in row.iter() {
            mean += v;
        }
        mean /= d as f32;
        let mut var = 0.0f32;
        for v in row.iter_mut() {
            *v -= mean;
            var += *v * *v;
        }
        var /= d as f32;
        scale.push(1.0 / (var + eps).sqrt());
    }
    NormParts { centered, scale }
}

/// Applies `centered * scale * w + b` row by row.
pub fn norm_affine(parts: &NormParts, w: &[f32], b: &[f32]) -> Tensor {
    let mut out = parts.centered.clone();
    for (r, &s) in parts.scale.iter().enumerate() {
        for ((o, &wv), &bv) in out.row_mut(r).iter_mut().zip(w).zip(b) {
            *o = *o * s * wv + bv;
        }
    }
    out
}

/// Layer normalisation over the last axis followed by the affine map.
pub fn layer_norm(x: &Tensor, w: &Tensor, b: &Tensor, eps: f32) -> Result<Tensor> {
    let d = x.cols();
    if w.len() != d || b.len() != d {
        return Err(Error::Shape(format!(
            "layer_norm width {d} vs w {} / b {}",
            w.len(),
            b.len()
        )));
    }
    let out = norm_affine(&norm_parts(x, eps), w.data(), b.data());
    out.check_finite("layer_norm output")?;
    Ok(out)
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_A: f32 = 0.044_715;

#[inline]
pub fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

/// Derivative of the tanh-approximation GELU.
#[inline]
pub fn gelu_grad_scalar(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Elementwise tanh-approximation GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

/// Orthonormalises the columns of a `[d, k]` matrix (thin QR, Q factor with
/// positive diagonal in R). Two passes of modified Gram-Schmidt in `f64`.
pub fn orthonormalize_columns(basis: &Tensor) -> Result<Tensor> {
    let (d, k) = as_matrix(basis, "basis")?;
    let mut cols: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..d).map(|i| basis.data()[i * k + j] as f64).collect())
        .collect();
    for j in 0..k {
        for _pass in 0..2 {
            for p in 0..j {
                let (head, tail) = cols.split_at_mut(j);
                let q = &head[p];
                let c = &mut tail[0];
                let proj: f64 = q.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
                for (ci, qi) in c.iter_mut().zip(q) {
                    *ci -= proj * qi;
                }
            }
        }
        let n: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::Fit(format!("basis column {j} is degenerate")));
        }
        cols[j].iter_mut().for_each(|v| *v /= n);
    }
    let mut data = vec![0.0f32; d * k];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * k + j] = v as f32;
        }
    }
    Tensor::new(vec![d, k], data)
}
