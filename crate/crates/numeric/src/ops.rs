//! Non-recording kernels shared by the tape and by inference code.

use crate::error::{invalid, shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Fixed variance epsilon for layer normalization.
pub const LAYERNORM_EPS: f64 = 1e-5;

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(shape_err("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![T::zero(); m * n];
    if m > 0 && n > 0 {
        T::gemm(
            m,
            k,
            n,
            a.data(),
            (k as isize, 1),
            b.data(),
            (n as isize, 1),
            &mut out,
            T::zero(),
        );
    }
    Tensor::new(&[m, n], out)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn elu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow
    if x > T::c(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(invalid(
            "softmax",
            format!("axis {axis} out of range for rank {}", x.rank()),
        ));
    }
    let shape = x.shape();
    let ext = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * ext + k) * inner + i;
            let mut m = T::neg_infinity();
            for k in 0..ext {
                m = m.max(out[idx(k)]);
            }
            let mut s = T::zero();
            for k in 0..ext {
                let e = (out[idx(k)] - m).exp();
                out[idx(k)] = e;
                s += e;
            }
            for k in 0..ext {
                out[idx(k)] /= s;
            }
        }
    }
    Tensor::new(shape, out)
}

/// Softmax of one slice in place.
pub fn softmax_slice<T: Real>(row: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Layer norm over the last axis. Returns `(y, xhat, rstd)`.
pub fn layernorm_forward<T: Real>(
    x: &Tensor<T>,
    gain: &[T],
    bias: &[T],
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let d = x.cols();
    if d == 0 || gain.len() != d || bias.len() != d {
        return Err(shape_err("layernorm", x.shape(), &[gain.len(), bias.len()]));
    }
    let rows = x.rows();
    let eps = T::c(LAYERNORM_EPS);
    let dn = T::c(d as f64);
    let mut y = vec![T::zero(); x.numel()];
    let mut xhat = vec![T::zero(); x.numel()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let xh = (row[j] - mean) * rs;
            xhat[r * d + j] = xh;
            y[r * d + j] = xh * gain[j] + bias[j];
        }
    }
    Ok((Tensor::new(x.shape(), y)?, xhat, rstd))
}

/// Saved states of a diagonal linear recurrence run by [`diag_scan_forward`].
#[derive(Debug, Clone)]
pub struct DiagScan<T> {
    /// Readouts, `[batch, len, p_out]`.
    pub outputs: Vec<T>,
    /// States after consuming each input, `[batch, len, n]`.
    pub states: Vec<T>,
    /// Per-step decay factors `exp(dt_t * lambda)`, `[batch, len, n]`.
    pub decays: Vec<T>,
}

/// Extents of a batched diagonal scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub p: usize,
    pub n: usize,
    pub p_out: usize,
}

/// Diagonal state recurrence with input map and readout, run independently
/// for every batch element with shared parameters.
///
/// With `lambda = -exp(theta)` and `a_t = exp(dt_t * lambda)`:
///
/// ```text
/// s_1 = h0 + B v_1
/// s_l = a_{l-1} * s_{l-1} + B v_l
/// z_l = C s_l
/// ```
///
/// Shapes: `v [batch, len, p]`, `dt [batch, len]`, `theta [n]`, `b [n, p]`,
/// `c [p_out, n]`, `h0 [n]`.
pub fn diag_scan_forward<T: Real>(
    v: &[T],
    dt: &[T],
    theta: &[T],
    b: &[T],
    c: &[T],
    h0: &[T],
    dims: ScanDims,
) -> DiagScan<T> {
    let ScanDims {
        batch,
        len,
        p,
        n,
        p_out,
    } = dims;
    let lambda: Vec<T> = theta.iter().map(|&t| -t.exp()).collect();
    let mut states = vec![T::zero(); batch * len * n];
    let mut decays = vec![T::zero(); batch * len * n];
    let mut outputs = vec![T::zero(); batch * len * p_out];
    if len == 0 {
        return DiagScan {
            outputs,
            states,
            decays,
        };
    }
    for bi in 0..batch {
        let vb = &v[bi * len * p..(bi + 1) * len * p];
        let sb = &mut states[bi * len * n..(bi + 1) * len * n];
        // u = v B^T, written straight into the state buffer
        if n > 0 && p > 0 {
            T::gemm(len, p, n, vb, (p as isize, 1), b, (1, p as isize), sb, T::zero());
        }
        let db = &mut decays[bi * len * n..(bi + 1) * len * n];
        for l in 0..len {
            let dtl = dt[bi * len + l];
            for k in 0..n {
                db[l * n + k] = (dtl * lambda[k]).exp();
            }
        }
        for k in 0..n {
            sb[k] += h0[k];
        }
        for l in 1..len {
            let (done, rest) = sb.split_at_mut(l * n);
            let prev = &done[(l - 1) * n..];
            let a = &db[(l - 1) * n..l * n];
            for k in 0..n {
                rest[k] += a[k] * prev[k];
            }
        }
        if n > 0 && p_out > 0 {
            T::gemm(
                len,
                n,
                p_out,
                sb,
                (n as isize, 1),
                c,
                (1, n as isize),
                &mut outputs[bi * len * p_out..(bi + 1) * len * p_out],
                T::zero(),
            );
        }
    }
    DiagScan {
        outputs,
        states,
        decays,
    }
}

/// Elementwise clamp of every entry.
pub fn clamp<T: Real>(x: T, lo: T, hi: T) -> T {
    x.max(lo).min(hi)
}
