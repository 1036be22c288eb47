//! Pure forward ops. The autodiff graph wraps these; inference paths call them directly.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn zip<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    same_shape(op, a, b)?;
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape().to_vec(), data)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip("add", a, b, |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip("sub", a, b, |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip("mul", a, b, |x, y| x * y)
}

pub fn div<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip("div", a, b, |x, y| x / y)
}

pub fn scale<T: Scalar>(a: &Tensor<T>, c: T) -> Tensor<T> {
    a.map(|x| x * c)
}

pub fn add_scalar<T: Scalar>(a: &Tensor<T>, c: T) -> Tensor<T> {
    a.map(|x| x + c)
}

pub fn neg<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|x| -x)
}

pub fn exp<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|x| x.exp())
}

pub fn ln<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|x| x.ln())
}

pub fn sqrt<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|x| x.sqrt())
}

pub fn sigmoid_val<T: Scalar>(x: T) -> T {
    // Split on sign for stability.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(sigmoid_val)
}

pub fn silu<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|x| x * sigmoid_val(x))
}

/// `x + b` where `b`'s shape is a suffix of `x`'s shape (e.g. a bias over the last axis).
pub fn add_bias<T: Scalar>(x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let bs = b.shape();
    if bs.len() > xs.len() || &xs[xs.len() - bs.len()..] != bs {
        return Err(TensorError::ShapeMismatch {
            op: "add_bias",
            lhs: xs.to_vec(),
            rhs: bs.to_vec(),
        });
    }
    let n = b.len().max(1);
    let data: Vec<T> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + b.data()[i % n])
        .collect();
    Tensor::from_vec(xs.to_vec(), data)
}

/// `x * s` broadcasting `s` over the last axis: `s.shape == x.shape[..rank-1]`.
pub fn mul_last_bcast<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.is_empty() || s.shape() != &xs[..xs.len() - 1] {
        return Err(TensorError::ShapeMismatch {
            op: "mul_last_bcast",
            lhs: xs.to_vec(),
            rhs: s.shape().to_vec(),
        });
    }
    let d = xs[xs.len() - 1];
    let mut data = Vec::with_capacity(x.len());
    for (row, &sv) in s.data().iter().enumerate() {
        for j in 0..d {
            data.push(x.data()[row * d + j] * sv);
        }
    }
    Tensor::from_vec(xs.to_vec(), data)
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![T::zero(); m * n];
    gemm_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::from_vec(vec![m, n], out)
}

/// `a @ b^T` for `a: [M,K]`, `b: [N,K]`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_nt",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[0];
    let mut out = vec![T::zero(); m * n];
    gemm_nt_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::from_vec(vec![m, n], out)
}

/// `a^T @ b` for `a: [K,M]`, `b: [K,N]`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_tn",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (k, m) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![T::zero(); m * n];
    for kk in 0..k {
        let a_row = &a.data()[kk * m..(kk + 1) * m];
        let b_row = &b.data()[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aik = a_row[i];
            let o_row = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                o_row[j] += aik * b_row[j];
            }
        }
    }
    Tensor::from_vec(vec![m, n], out)
}

fn gemm_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                o_row[j] += aik * b_row[j];
            }
        }
    }
}

fn gemm_nt_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for kk in 0..k {
                acc += a_row[kk] * b_row[kk];
            }
            out[i * n + j] = acc;
        }
    }
}

/// Batched `a @ b`: `[B,M,K] @ [B,K,N] -> [B,M,N]`.
pub fn bmm<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1]
    {
        return Err(TensorError::ShapeMismatch {
            op: "bmm",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (bt, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let n = b.shape()[2];
    let mut out = vec![T::zero(); bt * m * n];
    for bi in 0..bt {
        gemm_into(
            &a.data()[bi * m * k..(bi + 1) * m * k],
            &b.data()[bi * k * n..(bi + 1) * k * n],
            &mut out[bi * m * n..(bi + 1) * m * n],
            m,
            k,
            n,
        );
    }
    Tensor::from_vec(vec![bt, m, n], out)
}

/// Batched `a @ b^T`: `[B,M,K] @ [B,N,K] -> [B,M,N]`.
pub fn bmm_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[2]
    {
        return Err(TensorError::ShapeMismatch {
            op: "bmm_nt",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (bt, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let n = b.shape()[1];
    let mut out = vec![T::zero(); bt * m * n];
    for bi in 0..bt {
        gemm_nt_into(
            &a.data()[bi * m * k..(bi + 1) * m * k],
            &b.data()[bi * n * k..(bi + 1) * n * k],
            &mut out[bi * m * n..(bi + 1) * m * n],
            m,
            k,
            n,
        );
    }
    Tensor::from_vec(vec![bt, m, n], out)
}

pub fn permute<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let r = x.rank();
    let mut seen = vec![false; r];
    if axes.len() != r || axes.iter().any(|&a| a >= r || std::mem::replace(&mut seen[a], true)) {
        return Err(TensorError::InvalidArgument {
            op: "permute",
            msg: format!("axes {:?} invalid for rank {}", axes, r),
        });
    }
    let in_shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let in_strides = strides(in_shape);
    let out_strides = strides(&out_shape);
    let mut out = vec![T::zero(); x.len()];
    let mut idx = vec![0usize; r];
    for (o, slot) in out.iter_mut().enumerate() {
        // decompose o into out coordinates
        let mut rem = o;
        for d in 0..r {
            idx[d] = rem / out_strides[d];
            rem %= out_strides[d];
        }
        let mut src = 0;
        for d in 0..r {
            src += idx[d] * in_strides[axes[d]];
        }
        *slot = x.data()[src];
    }
    Tensor::from_vec(out_shape, out)
}

pub fn transpose2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    permute(x, &[1, 0])
}

/// Contiguous window `[start, start+len)` along `axis`.
pub fn narrow<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() || start + len > shape[axis] {
        return Err(TensorError::InvalidArgument {
            op: "narrow",
            msg: format!(
                "axis {} window [{},{}) out of bounds for shape {:?}",
                axis,
                start,
                start + len,
                shape
            ),
        });
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    let mut out = Vec::with_capacity(numel(&out_shape));
    for o in 0..outer {
        let base = o * shape[axis] * inner + start * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Tensor::from_vec(out_shape, out)
}

pub fn concat<T: Scalar>(axis: usize, parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(TensorError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        });
    }
    let first = parts[0].shape();
    if axis >= first.len() {
        return Err(TensorError::InvalidArgument {
            op: "concat",
            msg: format!("axis {} out of range for rank {}", axis, first.len()),
        });
    }
    let mut total = 0;
    for p in parts {
        let s = p.shape();
        if s.len() != first.len()
            || s.iter()
                .zip(first.iter())
                .enumerate()
                .any(|(d, (a, b))| d != axis && a != b)
        {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.to_vec(),
                rhs: s.to_vec(),
            });
        }
        total += s[axis];
    }
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let mut out_shape = first.to_vec();
    out_shape[axis] = total;
    let mut out = Vec::with_capacity(numel(&out_shape));
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis];
            let base = o * len * inner;
            out.extend_from_slice(&p.data()[base..base + len * inner]);
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub fn softmax_last<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = *x.shape().last().unwrap_or(&1);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(d.max(1)) {
        let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: T = exps.iter().cloned().sum();
        out.extend(exps.into_iter().map(|e| e / s));
    }
    Tensor::from_vec(x.shape().to_vec(), out).expect("shape preserved")
}

pub fn log_softmax_last<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = *x.shape().last().unwrap_or(&1);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(d.max(1)) {
        let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let lse: T = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
        out.extend(row.iter().map(|&v| v - lse));
    }
    Tensor::from_vec(x.shape().to_vec(), out).expect("shape preserved")
}

/// Unit-norm rows over the last axis. Zero rows pass through as zero (with a warning).
pub fn l2_normalize_last<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = *x.shape().last().unwrap_or(&1);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(d.max(1)) {
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            log::warn!("l2_normalize_last: zero-norm row left as zero");
            out.extend_from_slice(row);
        } else {
            out.extend(row.iter().map(|&v| v / norm));
        }
    }
    Tensor::from_vec(x.shape().to_vec(), out).expect("shape preserved")
}

pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> T {
    x.data().iter().cloned().sum()
}

pub fn mean_all<T: Scalar>(x: &Tensor<T>) -> T {
    sum_all(x) / T::from_f64_lossy(x.len().max(1) as f64)
}

pub fn cumsum_last<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = *x.shape().last().unwrap_or(&1);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(d.max(1)) {
        let mut acc = T::zero();
        for &v in row {
            acc += v;
            out.push(acc);
        }
    }
    Tensor::from_vec(x.shape().to_vec(), out).expect("shape preserved")
}

pub fn embedding<T: Scalar>(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    if table.rank() != 2 {
        return Err(TensorError::InvalidArgument {
            op: "embedding",
            msg: format!("table must be rank 2, got {:?}", table.shape()),
        });
    }
    let (v, d) = (table.shape()[0], table.shape()[1]);
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(TensorError::TokenOutOfRange { id, vocab: v });
        }
        out.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
    }
    Tensor::from_vec(vec![ids.len(), d], out)
}

/// Repeat each head `group` times: `[T,H,d] -> [T,H*group,d]` (grouped-query sharing).
pub fn repeat_heads<T: Scalar>(x: &Tensor<T>, group: usize) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(TensorError::InvalidArgument {
            op: "repeat_heads",
            msg: format!("expected rank 3, got {:?}", x.shape()),
        });
    }
    let (t, h, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Vec::with_capacity(t * h * group * d);
    for ti in 0..t {
        for hi in 0..h {
            let row = &x.data()[(ti * h + hi) * d..(ti * h + hi + 1) * d];
            for _ in 0..group {
                out.extend_from_slice(row);
            }
        }
    }
    Tensor::from_vec(vec![t, h * group, d], out)
}

/// RMS norm over the last axis with a learned per-channel weight.
pub fn rms_norm<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let d = *x.shape().last().unwrap_or(&0);
    if weight.shape() != [d] {
        return Err(TensorError::ShapeMismatch {
            op: "rms_norm",
            lhs: x.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    let inv_d = T::one() / T::from_f64_lossy(d as f64);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(d) {
        let ms = row.iter().map(|&v| v * v).sum::<T>() * inv_d;
        let r = T::one() / (ms + eps).sqrt();
        for (j, &v) in row.iter().enumerate() {
            out.push(v * r * weight.data()[j]);
        }
    }
    Tensor::from_vec(x.shape().to_vec(), out)
}

/// Pairwise rotations with angles `pos * base^(-2i/head_dim)`; adjacent pairing (2i, 2i+1).
/// `x: [T,H,hd]`, token `t` sits at absolute position `start_pos + t`.
pub fn rope<T: Scalar>(x: &Tensor<T>, start_pos: usize, base: f64) -> Result<Tensor<T>> {
    rope_impl(x, start_pos, base, false)
}

/// Inverse rotation; the backward rule of `rope`.
pub fn rope_inverse<T: Scalar>(x: &Tensor<T>, start_pos: usize, base: f64) -> Result<Tensor<T>> {
    rope_impl(x, start_pos, base, true)
}

fn rope_impl<T: Scalar>(x: &Tensor<T>, start_pos: usize, base: f64, invert: bool) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(TensorError::InvalidArgument {
            op: "rope",
            msg: format!("expected [T,H,head_dim], got {:?}", x.shape()),
        });
    }
    let (t, h, hd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if hd % 2 != 0 {
        return Err(TensorError::InvalidArgument {
            op: "rope",
            msg: format!("head_dim must be even, got {}", hd),
        });
    }
    let mut out = vec![T::zero(); x.len()];
    for ti in 0..t {
        let pos = (start_pos + ti) as f64;
        for hi in 0..h {
            let off = (ti * h + hi) * hd;
            for i in 0..hd / 2 {
                let theta = pos * base.powf(-2.0 * i as f64 / hd as f64);
                let (sin, cos) = if invert { (-theta.sin(), theta.cos()) } else { (theta.sin(), theta.cos()) };
                let (s, c) = (T::from_f64_lossy(sin), T::from_f64_lossy(cos));
                let x0 = x.data()[off + 2 * i];
                let x1 = x.data()[off + 2 * i + 1];
                out[off + 2 * i] = x0 * c - x1 * s;
                out[off + 2 * i + 1] = x0 * s + x1 * c;
            }
        }
    }
    Tensor::from_vec(vec![t, h, hd], out)
}

/// Depthwise causal conv over a `[T,D]` stream with kernel `[D,K]`; `tail` supplies the
/// `K-1` inputs preceding `t=0` (zeros when absent).
pub fn causal_conv_depthwise<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    tail: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "causal_conv_depthwise",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let (t, d) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[1];
    if let Some(tl) = tail {
        if tl.shape() != [k - 1, d] {
            return Err(TensorError::ShapeMismatch {
                op: "causal_conv_depthwise(tail)",
                lhs: vec![k - 1, d],
                rhs: tl.shape().to_vec(),
            });
        }
    }
    let at = |s: isize, c: usize| -> T {
        if s >= 0 {
            x.data()[s as usize * d + c]
        } else if let Some(tl) = tail {
            let idx = (s + (k - 1) as isize) as usize;
            tl.data()[idx * d + c]
        } else {
            T::zero()
        }
    };
    let mut out = Vec::with_capacity(t * d);
    for ti in 0..t {
        for c in 0..d {
            let mut acc = T::zero();
            for i in 0..k {
                let s = ti as isize - (k - 1 - i) as isize;
                acc += w.data()[c * k + i] * at(s, c);
            }
            out.push(acc);
        }
    }
    Tensor::from_vec(vec![t, d], out)
}

/// Per-token, per-head dynamic causal conv on `v: [T,H,dV]` with kernels `[T,H,K]`.
/// One kernel per head, shared across that head's channels; zero left padding
/// unless `tail: [K-1,H,dV]` supplies the preceding inputs.
pub fn dynamic_causal_conv<T: Scalar>(
    v: &Tensor<T>,
    kernels: &Tensor<T>,
    tail: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if v.rank() != 3
        || kernels.rank() != 3
        || v.shape()[0] != kernels.shape()[0]
        || v.shape()[1] != kernels.shape()[1]
    {
        return Err(TensorError::ShapeMismatch {
            op: "dynamic_causal_conv",
            lhs: v.shape().to_vec(),
            rhs: kernels.shape().to_vec(),
        });
    }
    let (t, h, dv) = (v.shape()[0], v.shape()[1], v.shape()[2]);
    let k = kernels.shape()[2];
    if let Some(tl) = tail {
        if tl.shape() != [k - 1, h, dv] {
            return Err(TensorError::ShapeMismatch {
                op: "dynamic_causal_conv(tail)",
                lhs: vec![k - 1, h, dv],
                rhs: tl.shape().to_vec(),
            });
        }
    }
    let at = |s: isize, hi: usize, c: usize| -> T {
        if s >= 0 {
            v.data()[(s as usize * h + hi) * dv + c]
        } else if let Some(tl) = tail {
            let idx = (s + (k - 1) as isize) as usize;
            tl.data()[(idx * h + hi) * dv + c]
        } else {
            T::zero()
        }
    };
    let mut out = Vec::with_capacity(t * h * dv);
    for ti in 0..t {
        for hi in 0..h {
            for c in 0..dv {
                let mut acc = T::zero();
                for i in 0..k {
                    let s = ti as isize - (k - 1 - i) as isize;
                    acc += kernels.data()[(ti * h + hi) * k + i] * at(s, hi, c);
                }
                out.push(acc);
            }
        }
    }
    Tensor::from_vec(vec![t, h, dv], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry() {
        let x = Tensor::<f32>::from_vec(vec![2], vec![0.0, 0.0]).unwrap();
        let y = softmax_last(&x);
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn silu_at_zero() {
        let x = Tensor::<f32>::scalar(0.0);
        assert_eq!(silu(&x).item(), 0.0);
    }

    #[test]
    fn matmul_identity() {
        let mut rng = crate::rng::SeedRng::new(1);
        let a = Tensor::<f64>::randn(vec![3, 3], 1.0, &mut rng);
        let i = Tensor::<f64>::eye(3);
        let out = matmul(&i, &a).unwrap();
        assert!(out.bitwise_eq(&a) || out.max_abs_diff(&a) == 0.0);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let a = Tensor::<f32>::zeros(vec![2, 3]);
        let b = Tensor::<f32>::zeros(vec![4, 5]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[4, 5]"));
    }

    #[test]
    fn narrow_concat_roundtrip() {
        let x = Tensor::<f32>::from_vec(vec![2, 4], (0..8).map(|v| v as f32).collect()).unwrap();
        let a = narrow(&x, 1, 0, 2).unwrap();
        let b = narrow(&x, 1, 2, 2).unwrap();
        let back = concat(1, &[&a, &b]).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::<f32>::from_vec(vec![2, 3, 4], (0..24).map(|v| v as f32).collect()).unwrap();
        let p = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        let back = permute(&p, &[1, 2, 0]).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn rope_preserves_norm_and_pos0_identity() {
        let mut rng = crate::rng::SeedRng::new(3);
        let x = Tensor::<f64>::randn(vec![1, 2, 8], 1.0, &mut rng);
        let r0 = rope(&x, 0, 10_000.0).unwrap();
        assert!(r0.max_abs_diff(&x) < 1e-12);
        let r5 = rope(&x, 5, 10_000.0).unwrap();
        let n_in: f64 = x.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let n_out: f64 = r5.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n_in - n_out).abs() < 1e-9);
        let undone = rope_inverse(&r5, 5, 10_000.0).unwrap();
        assert!(undone.max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn dynamic_conv_one_hot_last_tap_is_identity() {
        let mut rng = crate::rng::SeedRng::new(4);
        let v = Tensor::<f32>::randn(vec![5, 2, 3], 1.0, &mut rng);
        let mut kdata = vec![0.0f32; 5 * 2 * 4];
        for t in 0..5 {
            for h in 0..2 {
                kdata[(t * 2 + h) * 4 + 3] = 1.0;
            }
        }
        let kernels = Tensor::from_vec(vec![5, 2, 4], kdata).unwrap();
        let out = dynamic_causal_conv(&v, &kernels, None).unwrap();
        assert!(out.bitwise_eq(&v));
    }
}
