//! Reverse-mode tape.
//!
//! Nodes are appended in execution order, so the node list is already a
//! topological order; `backward` walks it once from the loss to the first
//! node. Each node keeps its forward value plus whatever the backward rule
//! needs (normalization statistics, scan states, dropout masks).

use rand::Rng;

use crate::error::{invalid, shape_err, NumericError, Result};
use crate::ops::{self, DiagScan, ScanDims};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    /// Right operand repeats along the leading axes of the left.
    Lead,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Sigmoid,
    Tanh,
    Elu,
    Silu,
    Relu,
    Softplus,
    Exp,
    Log,
    Abs,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize, Bcast),
    Sub(usize, usize, Bcast),
    Mul(usize, usize, Bcast),
    AddScalar(usize),
    MulScalar(usize, T),
    Neg(usize),
    Unary(usize, Unary),
    Clamp(usize, T, T),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Sum(usize),
    Mean(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize, usize),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize, usize),
    ScaleRows(usize, usize),
    Transpose(usize),
    Reshape(usize),
    GatherRows(usize, Vec<usize>),
    MulMask(usize, Vec<T>),
    TimeSlice(usize, usize),
    StackTime(Vec<usize>),
    CausalDwConv {
        x: usize,
        w: usize,
        b: usize,
    },
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        dilation: usize,
    },
    DiagScan {
        v: usize,
        dt: usize,
        theta: usize,
        b: usize,
        c: usize,
        h0: usize,
        saved: DiagScan<T>,
        dims: ScanDims,
    },
    Pinball {
        pred: usize,
        target: usize,
        q: Vec<T>,
    },
    WeightedBce {
        logits: usize,
        target: usize,
        alpha: T,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Neg(..) => "neg",
            Op::Unary(..) => "unary",
            Op::Clamp(..) => "clamp",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layernorm",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::ScaleRows(..) => "scale_rows",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::GatherRows(..) => "gather_rows",
            Op::MulMask(..) => "dropout",
            Op::TimeSlice(..) => "time_slice",
            Op::StackTime(..) => "stack_time",
            Op::CausalDwConv { .. } => "causal_conv",
            Op::Conv1d { .. } => "conv1d",
            Op::DiagScan { .. } => "diag_scan",
            Op::Pinball { .. } => "pinball",
            Op::WeightedBce { .. } => "weighted_bce",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: usize,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Number of nodes whose backward rule ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

/// Records tensor operations for one forward pass.
///
/// A tape is confined to the thread that built it; independent tapes can be
/// evaluated in parallel.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn bcast_kind(a: &[usize], b: &[usize]) -> Option<Bcast> {
    if a == b {
        return Some(Bcast::Same);
    }
    let bn: usize = b.iter().product();
    if bn == 1 {
        return Some(Bcast::Scalar);
    }
    let stripped: Vec<usize> = b.iter().copied().skip_while(|&d| d == 1).collect();
    if stripped.len() <= a.len() && a[a.len() - stripped.len()..] == stripped[..] {
        return Some(Bcast::Lead);
    }
    None
}

fn bidx(kind: Bcast, i: usize, bn: usize) -> usize {
    match kind {
        Bcast::Same => i,
        Bcast::Lead => i % bn,
        Bcast::Scalar => 0,
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out, Op::MatMul(a.0, b.0), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Tensor<T>, Bcast)> {
        let (va, vb) = (self.value(a), self.value(b));
        let kind =
            bcast_kind(va.shape(), vb.shape()).ok_or_else(|| shape_err(name, va.shape(), vb.shape()))?;
        let bn = vb.numel();
        let bd = vb.data();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[bidx(kind, i, bn)]))
            .collect();
        Ok((Tensor::new(va.shape(), data)?, kind))
    }

    fn wider(&self, a: Var, b: Var) -> bool {
        self.value(a).numel() >= self.value(b).numel()
    }

    /// Elementwise sum; the smaller operand may broadcast along leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = if self.wider(a, b) { (a, b) } else { (b, a) };
        let (out, kind) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out, Op::Add(a.0, b.0, kind), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if !self.wider(a, b) {
            let nb = self.neg(b);
            return self.add(nb, a);
        }
        let (out, kind) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out, Op::Sub(a.0, b.0, kind), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = if self.wider(a, b) { (a, b) } else { (b, a) };
        let (out, kind) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out, Op::Mul(a.0, b.0, kind), rg))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::AddScalar(a.0), rg)
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::MulScalar(a.0, s), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| -x);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Neg(a.0), rg)
    }

    fn unary(&mut self, a: Var, u: Unary) -> Var {
        let f: fn(T) -> T = match u {
            Unary::Sigmoid => ops::sigmoid,
            Unary::Tanh => |x: T| x.tanh(),
            Unary::Elu => ops::elu,
            Unary::Silu => ops::silu,
            Unary::Relu => |x: T| x.max(T::zero()),
            Unary::Softplus => ops::softplus,
            Unary::Exp => |x: T| x.exp(),
            Unary::Log => |x: T| x.ln(),
            Unary::Abs => |x: T| x.abs(),
        };
        let out = self.value(a).map(f);
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Unary(a.0, u), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Elu)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| !(x > T::zero())) {
            return Err(NumericError::Domain {
                op: "log",
                detail: format!("non-positive argument {bad}"),
            });
        }
        Ok(self.unary(a, Unary::Log))
    }

    /// Clamps into `[lo, hi]`; gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let out = self.value(a).map(|x| ops::clamp(x, lo, hi));
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Clamp(a.0, lo, hi), rg)
    }

    /// `min(x, hi)` elementwise.
    pub fn clipmax(&mut self, a: Var, hi: T) -> Var {
        self.clamp(a, T::neg_infinity(), hi)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let last = v.rank().saturating_sub(1);
        let out = ops::softmax(v, last)?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(out, Op::Softmax(a.0), rg))
    }

    /// Layer norm over the last axis with affine `gain`, `bias` of that extent.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (out, xhat, rstd) = ops::layernorm_forward(
            self.value(x),
            self.value(gain).data(),
            self.value(bias).data(),
        )?;
        let rg = self.rg(&[x.0, gain.0, bias.0]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / T::c(v.numel().max(1) as f64);
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(s), Op::Mean(a.0), rg)
    }

    /// Concatenates along the last axis; all parts must share the leading extents.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat_cols", "no parts"))?;
        let rows = self.value(*first).rows();
        let lead: Vec<usize> = {
            let s = self.shape(*first);
            s[..s.len().saturating_sub(1)].to_vec()
        };
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(shape_err("concat_cols", self.shape(*first), v.shape()));
            }
            total += v.cols();
        }
        let mut data = vec![T::zero(); rows * total];
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            let c = v.cols();
            for r in 0..rows {
                data[r * total + off..r * total + off + c].copy_from_slice(v.row(r));
            }
            off += c;
        }
        let mut shape = lead;
        shape.push(total);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Tensor::new(&shape, data)?, Op::ConcatCols(ids), rg))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        let c = v.cols();
        if start >= end || end > c {
            return Err(invalid(
                "slice_cols",
                format!("range {start}..{end} for {c} columns"),
            ));
        }
        let w = end - start;
        let rows = v.rows();
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&v.row(r)[start..end]);
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::new(&shape, data)?, Op::SliceCols(a.0, start, end), rg))
    }

    /// Stacks 2-D parts with equal column counts along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat_rows", "no parts"))?;
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != c {
                return Err(shape_err("concat_rows", self.shape(*first), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Tensor::new(&[rows, c], data)?, Op::ConcatRows(ids), rg))
    }

    /// Rows `start..end` of the first axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        let n0 = *v.shape().first().unwrap_or(&0);
        if start >= end || end > n0 {
            return Err(invalid(
                "slice_rows",
                format!("range {start}..{end} for {n0} rows"),
            ));
        }
        let inner = v.numel() / n0;
        let data = v.data()[start * inner..end * inner].to_vec();
        let mut shape = v.shape().to_vec();
        shape[0] = end - start;
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::new(&shape, data)?, Op::SliceRows(a.0, start, end), rg))
    }

    /// Multiplies row `r` of `x` by the scalar `s[r]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (vx, vs) = (self.value(x), self.value(s));
        if vs.numel() != vx.rows() {
            return Err(shape_err("scale_rows", vx.shape(), vs.shape()));
        }
        let c = vx.cols();
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * vs.data()[i / c])
            .collect();
        let out = Tensor::new(vx.shape(), data)?;
        let rg = self.rg(&[x.0, s.0]);
        Ok(self.push(out, Op::ScaleRows(x.0, s.0), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(out, Op::Transpose(a.0), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(out, Op::Reshape(a.0), rg))
    }

    /// Selects rows of a 2-D table (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(table);
        if v.rank() != 2 {
            return Err(invalid("gather_rows", "table must be 2-D"));
        }
        let (n, d) = (v.shape()[0], v.shape()[1]);
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= n {
                return Err(invalid("gather_rows", format!("row {i} of {n}")));
            }
            data.extend_from_slice(v.row(i));
        }
        let rg = self.rg(&[table.0]);
        Ok(self.push(
            Tensor::new(&[idx.len(), d], data)?,
            Op::GatherRows(table.0, idx.to_vec()),
            rg,
        ))
    }

    /// Inverted dropout with drop probability `p`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = T::c(1.0 / (1.0 - p));
        let v = self.value(a);
        let mask: Vec<T> = (0..v.numel())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(v.shape(), data).expect("same shape");
        let rg = self.rg(&[a.0]);
        self.push(out, Op::MulMask(a.0, mask), rg)
    }

    /// `[B, T, F]` to the `[B, F]` slice at time `t`.
    pub fn time_slice(&mut self, a: Var, t: usize) -> Result<Var> {
        let v = self.value(a);
        if v.rank() != 3 || t >= v.shape()[1] {
            return Err(invalid(
                "time_slice",
                format!("step {t} of shape {:?}", v.shape()),
            ));
        }
        let (b, tt, f) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let mut data = Vec::with_capacity(b * f);
        for bi in 0..b {
            let o = (bi * tt + t) * f;
            data.extend_from_slice(&v.data()[o..o + f]);
        }
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::new(&[b, f], data)?, Op::TimeSlice(a.0, t), rg))
    }

    /// Stacks `[B, F]` parts into `[B, T, F]`.
    pub fn stack_time(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("stack_time", "no parts"))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() != 2 {
            return Err(invalid("stack_time", "parts must be [B, F]"));
        }
        let (b, f) = (s0[0], s0[1]);
        let tt = parts.len();
        let mut data = vec![T::zero(); b * tt * f];
        for (t, &p) in parts.iter().enumerate() {
            let v = self.value(p);
            if v.shape() != s0.as_slice() {
                return Err(shape_err("stack_time", &s0, v.shape()));
            }
            for bi in 0..b {
                let o = (bi * tt + t) * f;
                data[o..o + f].copy_from_slice(v.row(bi));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Tensor::new(&[b, tt, f], data)?, Op::StackTime(ids), rg))
    }

    /// Causal depthwise convolution: `x [T, C]` or `[B, T, C]`, `w [C, K]`, `b [C]`.
    ///
    /// `y[t, c] = b[c] + sum_k w[c, k] * x[t - (K - 1) + k, c]`, zero-padded on the left.
    pub fn causal_conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let r = vx.rank();
        if !(r == 2 || r == 3) || vw.rank() != 2 || vw.shape()[0] != vx.shape()[r - 1] || vb.numel() != vx.shape()[r - 1] {
            return Err(shape_err("causal_conv", vx.shape(), vw.shape()));
        }
        let (tt, c) = (vx.shape()[r - 2], vx.shape()[r - 1]);
        let bs = if r == 3 { vx.shape()[0] } else { 1 };
        let k = vw.shape()[1];
        let (xd, wd, bd) = (vx.data(), vw.data(), vb.data());
        let mut out = vec![T::zero(); bs * tt * c];
        for bi in 0..bs {
            let base = bi * tt * c;
            for t in 0..tt {
                let row = &mut out[base + t * c..base + (t + 1) * c];
                row.copy_from_slice(bd);
                for kk in 0..k {
                    let src = t as isize - (k as isize - 1) + kk as isize;
                    if src < 0 {
                        continue;
                    }
                    let xs = &xd[base + src as usize * c..base + (src as usize + 1) * c];
                    for ch in 0..c {
                        row[ch] += wd[ch * k + kk] * xs[ch];
                    }
                }
            }
        }
        let shape = vx.shape().to_vec();
        let rg = self.rg(&[x.0, w.0, b.0]);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::CausalDwConv {
                x: x.0,
                w: w.0,
                b: b.0,
            },
            rg,
        ))
    }

    /// Centered ("same") dilated convolution over time.
    ///
    /// `x [B, T, Cin]`, `w [Cout, Cin, K]` with odd `K`, `b [Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vx.rank() != 3 || vw.rank() != 3 || vw.shape()[1] != vx.shape()[2] || vb.numel() != vw.shape()[0] {
            return Err(shape_err("conv1d", vx.shape(), vw.shape()));
        }
        let (bs, tt, cin) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let (cout, k) = (vw.shape()[0], vw.shape()[2]);
        if k % 2 == 0 {
            return Err(invalid("conv1d", "kernel width must be odd"));
        }
        let half = (k / 2) as isize;
        let (xd, wd, bd) = (vx.data(), vw.data(), vb.data());
        let mut out = vec![T::zero(); bs * tt * cout];
        for bi in 0..bs {
            for t in 0..tt {
                let o = &mut out[(bi * tt + t) * cout..(bi * tt + t + 1) * cout];
                o.copy_from_slice(bd);
                for kk in 0..k {
                    let src = t as isize + (kk as isize - half) * dilation as isize;
                    if src < 0 || src >= tt as isize {
                        continue;
                    }
                    let xs = &xd[(bi * tt + src as usize) * cin..(bi * tt + src as usize + 1) * cin];
                    for (oc, slot) in o.iter_mut().enumerate() {
                        let wbase = oc * cin * k;
                        let mut acc = T::zero();
                        for ic in 0..cin {
                            acc += wd[wbase + ic * k + kk] * xs[ic];
                        }
                        *slot += acc;
                    }
                }
            }
        }
        let rg = self.rg(&[x.0, w.0, b.0]);
        Ok(self.push(
            Tensor::new(&[bs, tt, cout], out)?,
            Op::Conv1d {
                x: x.0,
                w: w.0,
                b: b.0,
                dilation,
            },
            rg,
        ))
    }

    /// Diagonal state-space recurrence, see [`ops::diag_scan_forward`].
    ///
    /// `v [L, P]` or `[B, L, P]`, `dt` with `B * L` entries, `theta [N]`,
    /// `b [N, P]`, `c [Pout, N]`, `h0 [N]`; output `[L, Pout]` or `[B, L, Pout]`.
    pub fn diag_scan(
        &mut self,
        v: Var,
        dt: Var,
        theta: Var,
        b: Var,
        c: Var,
        h0: Var,
    ) -> Result<Var> {
        let vv = self.value(v);
        let (batch, len, p) = match *vv.shape() {
            [l, p] => (1, l, p),
            [b, l, p] => (b, l, p),
            _ => return Err(invalid("diag_scan", "values must be [L, P] or [B, L, P]")),
        };
        let n = self.value(theta).numel();
        let vb = self.value(b);
        if vb.shape() != [n, p] {
            return Err(shape_err("diag_scan", &[n, p], vb.shape()));
        }
        let vc = self.value(c);
        if vc.rank() != 2 || vc.shape()[1] != n {
            return Err(shape_err("diag_scan", &[0, n], vc.shape()));
        }
        let p_out = vc.shape()[0];
        if self.value(dt).numel() != batch * len {
            return Err(shape_err("diag_scan", &[batch, len], self.shape(dt)));
        }
        if self.value(h0).numel() != n {
            return Err(shape_err("diag_scan", &[n], self.shape(h0)));
        }
        let dims = ScanDims {
            batch,
            len,
            p,
            n,
            p_out,
        };
        let saved = ops::diag_scan_forward(
            vv.data(),
            self.value(dt).data(),
            self.value(theta).data(),
            self.value(b).data(),
            self.value(c).data(),
            self.value(h0).data(),
            dims,
        );
        let shape: Vec<usize> = if vv.rank() == 2 {
            vec![len, p_out]
        } else {
            vec![batch, len, p_out]
        };
        let out = Tensor::new(&shape, saved.outputs.clone())?;
        let rg = self.rg(&[v.0, dt.0, theta.0, b.0, c.0, h0.0]);
        Ok(self.push(
            out,
            Op::DiagScan {
                v: v.0,
                dt: dt.0,
                theta: theta.0,
                b: b.0,
                c: c.0,
                h0: h0.0,
                saved,
                dims,
            },
            rg,
        ))
    }

    /// Mean pinball loss of `pred [R, Q]` against `target` with `R` entries.
    pub fn pinball(&mut self, pred: Var, target: Var, quantiles: &[f64]) -> Result<Var> {
        let (vp, vt) = (self.value(pred), self.value(target));
        let q = quantiles.len();
        if vp.cols() != q || vp.rows() != vt.numel() {
            return Err(shape_err("pinball", vp.shape(), vt.shape()));
        }
        let qs: Vec<T> = quantiles.iter().map(|&x| T::c(x)).collect();
        let mut acc = T::zero();
        for r in 0..vp.rows() {
            let y = vt.data()[r];
            for (j, &qj) in qs.iter().enumerate() {
                let e = y - vp.data()[r * q + j];
                acc += if e >= T::zero() { qj * e } else { (qj - T::one()) * e };
            }
        }
        let loss = acc / T::c((vp.numel()).max(1) as f64);
        let rg = self.rg(&[pred.0]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Pinball {
                pred: pred.0,
                target: target.0,
                q: qs,
            },
            rg,
        ))
    }

    /// Positive-weighted binary cross-entropy on logits, averaged over entries.
    pub fn weighted_bce(&mut self, logits: Var, target: Var, alpha: f64) -> Result<Var> {
        let (vl, vt) = (self.value(logits), self.value(target));
        if vl.numel() != vt.numel() {
            return Err(shape_err("weighted_bce", vl.shape(), vt.shape()));
        }
        let a = T::c(alpha);
        let mut acc = T::zero();
        for (&x, &y) in vl.data().iter().zip(vt.data()) {
            acc += a * y * ops::softplus(-x) + (T::one() - y) * ops::softplus(x);
        }
        let loss = acc / T::c(vl.numel().max(1) as f64);
        let rg = self.rg(&[logits.0]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedBce {
                logits: logits.0,
                target: target.0,
                alpha: a,
            },
            rg,
        ))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(invalid(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited += 1;
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let y = &nodes[i].value;
        let gd = g.data();
        // Lazily materialized accumulator for input `j`, or None if it needs no gradient.
        macro_rules! acc {
            ($j:expr) => {{
                let j = $j;
                if nodes[j].requires_grad {
                    Some(
                        grads[j]
                            .get_or_insert_with(|| Tensor::zeros(nodes[j].value.shape()))
                            .data_mut(),
                    )
                } else {
                    None
                }
            }};
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if let Some(ga) = acc!(*a) {
                    // dA = dC * B^T
                    T::gemm(m, n, k, gd, (n as isize, 1), vb.data(), (1, n as isize), ga, T::one());
                }
                if let Some(gb) = acc!(*b) {
                    // dB = A^T * dC
                    T::gemm(k, m, n, va.data(), (1, k as isize), gd, (n as isize, 1), gb, T::one());
                }
            }
            Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
                let sign = if matches!(nodes[i].op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if let Some(ga) = acc!(*a) {
                    for (x, &d) in ga.iter_mut().zip(gd) {
                        *x += d;
                    }
                }
                let bn = nodes[*b].value.numel();
                if let Some(gb) = acc!(*b) {
                    for (idx, &d) in gd.iter().enumerate() {
                        gb[bidx(*kind, idx, bn)] += sign * d;
                    }
                }
            }
            Op::Mul(a, b, kind) => {
                let bn = nodes[*b].value.numel();
                let (ad, bd) = (nodes[*a].value.data(), nodes[*b].value.data());
                if let Some(ga) = acc!(*a) {
                    for (idx, x) in ga.iter_mut().enumerate() {
                        *x += gd[idx] * bd[bidx(*kind, idx, bn)];
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for (idx, &d) in gd.iter().enumerate() {
                        gb[bidx(*kind, idx, bn)] += d * ad[idx];
                    }
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = acc!(*a) {
                    for (x, &d) in ga.iter_mut().zip(gd) {
                        *x += d;
                    }
                }
            }
            Op::MulScalar(a, s) => {
                if let Some(ga) = acc!(*a) {
                    for (x, &d) in ga.iter_mut().zip(gd) {
                        *x += d * *s;
                    }
                }
            }
            Op::Neg(a) => {
                if let Some(ga) = acc!(*a) {
                    for (x, &d) in ga.iter_mut().zip(gd) {
                        *x -= d;
                    }
                }
            }
            Op::Unary(a, u) => {
                let xd = nodes[*a].value.data();
                let yd = y.data();
                let u = *u;
                if let Some(ga) = acc!(*a) {
                    for idx in 0..ga.len() {
                        let (x, yv) = (xd[idx], yd[idx]);
                        let dydx = match u {
                            Unary::Sigmoid => yv * (T::one() - yv),
                            Unary::Tanh => T::one() - yv * yv,
                            Unary::Elu => {
                                if x > T::zero() {
                                    T::one()
                                } else {
                                    yv + T::one()
                                }
                            }
                            Unary::Silu => {
                                let s = ops::sigmoid(x);
                                s * (T::one() + x * (T::one() - s))
                            }
                            Unary::Relu => {
                                if x > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Softplus => ops::sigmoid(x),
                            Unary::Exp => yv,
                            Unary::Log => T::one() / x,
                            Unary::Abs => x.signum(),
                        };
                        ga[idx] += gd[idx] * dydx;
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let xd = nodes[*a].value.data();
                if let Some(ga) = acc!(*a) {
                    for idx in 0..ga.len() {
                        if xd[idx] >= *lo && xd[idx] <= *hi {
                            ga[idx] += gd[idx];
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let c = y.cols();
                if let Some(ga) = acc!(*a) {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &gd[r * c..(r + 1) * c];
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..c {
                            ga[r * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = y.cols();
                let rows = y.rows();
                let gn = nodes[*gain].value.data().to_vec();
                if let Some(gg) = acc!(*gain) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += gd[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = acc!(*bias) {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += gd[r * d + j];
                        }
                    }
                }
                if let Some(gx) = acc!(*x) {
                    let dn = T::c(d as f64);
                    for r in 0..rows {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let dxh = gd[r * d + j] * gn[j];
                            m1 += dxh;
                            m2 += dxh * xhat[r * d + j];
                        }
                        m1 /= dn;
                        m2 /= dn;
                        for j in 0..d {
                            let dxh = gd[r * d + j] * gn[j];
                            gx[r * d + j] += rstd[r] * (dxh - m1 - xhat[r * d + j] * m2);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = acc!(*a) {
                    for x in ga.iter_mut() {
                        *x += gd[0];
                    }
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = acc!(*a) {
                    let s = gd[0] / T::c(ga.len().max(1) as f64);
                    for x in ga.iter_mut() {
                        *x += s;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let rows = y.rows();
                let mut off = 0;
                for &p in parts {
                    let c = nodes[p].value.cols();
                    if let Some(gp) = acc!(p) {
                        for r in 0..rows {
                            for j in 0..c {
                                gp[r * c + j] += gd[r * total + off + j];
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::SliceCols(a, start, _end) => {
                let c_in = nodes[*a].value.cols();
                let w = y.cols();
                if let Some(ga) = acc!(*a) {
                    for r in 0..y.rows() {
                        for j in 0..w {
                            ga[r * c_in + start + j] += gd[r * w + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = nodes[p].value.numel();
                    if let Some(gp) = acc!(p) {
                        for (x, &d) in gp.iter_mut().zip(&gd[off..off + n]) {
                            *x += d;
                        }
                    }
                    off += n;
                }
            }
            Op::SliceRows(a, start, _end) => {
                let va = &nodes[*a].value;
                let inner = va.numel() / va.shape()[0];
                if let Some(ga) = acc!(*a) {
                    let o = start * inner;
                    for (x, &d) in ga[o..o + gd.len()].iter_mut().zip(gd) {
                        *x += d;
                    }
                }
            }
            Op::ScaleRows(x, s) => {
                let c = y.cols();
                let (xd, sd) = (nodes[*x].value.data(), nodes[*s].value.data());
                if let Some(gx) = acc!(*x) {
                    for (idx, v) in gx.iter_mut().enumerate() {
                        *v += gd[idx] * sd[idx / c];
                    }
                }
                if let Some(gs) = acc!(*s) {
                    for (idx, &d) in gd.iter().enumerate() {
                        gs[idx / c] += d * xd[idx];
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (y.shape()[0], y.shape()[1]);
                if let Some(ga) = acc!(*a) {
                    // y is [r, c]; input is [c, r]
                    for i2 in 0..r {
                        for j in 0..c {
                            ga[j * r + i2] += gd[i2 * c + j];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = acc!(*a) {
                    for (x, &d) in ga.iter_mut().zip(gd) {
                        *x += d;
                    }
                }
            }
            Op::GatherRows(table, idx) => {
                let d = y.cols();
                if let Some(gt) = acc!(*table) {
                    for (r, &row) in idx.iter().enumerate() {
                        for j in 0..d {
                            gt[row * d + j] += gd[r * d + j];
                        }
                    }
                }
            }
            Op::MulMask(a, mask) => {
                if let Some(ga) = acc!(*a) {
                    for idx in 0..ga.len() {
                        ga[idx] += gd[idx] * mask[idx];
                    }
                }
            }
            Op::TimeSlice(a, t) => {
                let s = nodes[*a].value.shape();
                let (b, tt, f) = (s[0], s[1], s[2]);
                if let Some(ga) = acc!(*a) {
                    for bi in 0..b {
                        let o = (bi * tt + t) * f;
                        for j in 0..f {
                            ga[o + j] += gd[bi * f + j];
                        }
                    }
                }
            }
            Op::StackTime(parts) => {
                let s = y.shape();
                let (b, tt, f) = (s[0], s[1], s[2]);
                for (t, &p) in parts.iter().enumerate() {
                    if let Some(gp) = acc!(p) {
                        for bi in 0..b {
                            let o = (bi * tt + t) * f;
                            for j in 0..f {
                                gp[bi * f + j] += gd[o + j];
                            }
                        }
                    }
                }
            }
            Op::CausalDwConv { x, w, b } => {
                let vx = &nodes[*x].value;
                let r = vx.rank();
                let (tt, c) = (vx.shape()[r - 2], vx.shape()[r - 1]);
                let bs = vx.numel() / (tt * c).max(1);
                let k = nodes[*w].value.shape()[1];
                let (xd, wd) = (vx.data(), nodes[*w].value.data());
                if let Some(gb) = acc!(*b) {
                    for row in gd.chunks_exact(c.max(1)) {
                        for ch in 0..c {
                            gb[ch] += row[ch];
                        }
                    }
                }
                if let Some(gw) = acc!(*w) {
                    for bi in 0..bs {
                        let base = bi * tt * c;
                        for t in 0..tt {
                            for kk in 0..k {
                                let src = t as isize - (k as isize - 1) + kk as isize;
                                if src < 0 {
                                    continue;
                                }
                                for ch in 0..c {
                                    gw[ch * k + kk] += gd[base + t * c + ch] * xd[base + src as usize * c + ch];
                                }
                            }
                        }
                    }
                }
                if let Some(gx) = acc!(*x) {
                    for bi in 0..bs {
                        let base = bi * tt * c;
                        for t in 0..tt {
                            for kk in 0..k {
                                let src = t as isize - (k as isize - 1) + kk as isize;
                                if src < 0 {
                                    continue;
                                }
                                for ch in 0..c {
                                    gx[base + src as usize * c + ch] += gd[base + t * c + ch] * wd[ch * k + kk];
                                }
                            }
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b, dilation } => {
                let vx = &nodes[*x].value;
                let (bs, tt, cin) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
                let vw = &nodes[*w].value;
                let (cout, k) = (vw.shape()[0], vw.shape()[2]);
                let half = (k / 2) as isize;
                let (xd, wd) = (vx.data(), vw.data());
                if let Some(gb) = acc!(*b) {
                    for r in 0..bs * tt {
                        for oc in 0..cout {
                            gb[oc] += gd[r * cout + oc];
                        }
                    }
                }
                let taps = |t: usize, kk: usize| -> Option<usize> {
                    let src = t as isize + (kk as isize - half) * *dilation as isize;
                    (src >= 0 && src < tt as isize).then_some(src as usize)
                };
                if let Some(gw) = acc!(*w) {
                    for bi in 0..bs {
                        for t in 0..tt {
                            let go = &gd[(bi * tt + t) * cout..(bi * tt + t + 1) * cout];
                            for kk in 0..k {
                                let Some(src) = taps(t, kk) else { continue };
                                let xs = &xd[(bi * tt + src) * cin..(bi * tt + src + 1) * cin];
                                for (oc, &gv) in go.iter().enumerate() {
                                    for ic in 0..cin {
                                        gw[(oc * cin + ic) * k + kk] += gv * xs[ic];
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(gx) = acc!(*x) {
                    for bi in 0..bs {
                        for t in 0..tt {
                            let go = &gd[(bi * tt + t) * cout..(bi * tt + t + 1) * cout];
                            for kk in 0..k {
                                let Some(src) = taps(t, kk) else { continue };
                                let base = (bi * tt + src) * cin;
                                for (oc, &gv) in go.iter().enumerate() {
                                    for ic in 0..cin {
                                        gx[base + ic] += gv * wd[(oc * cin + ic) * k + kk];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::DiagScan {
                v,
                dt,
                theta,
                b,
                c,
                h0,
                saved,
                dims,
            } => self.scan_backward(gd, [*v, *dt, *theta, *b, *c, *h0], saved, *dims, grads),
            Op::Pinball { pred, target, q } => {
                let vp = &nodes[*pred].value;
                let vt = &nodes[*target].value;
                let nq = q.len();
                let scale = gd[0] / T::c(vp.numel().max(1) as f64);
                if let Some(gp) = acc!(*pred) {
                    for r in 0..vp.rows() {
                        for j in 0..nq {
                            let e = vt.data()[r] - vp.data()[r * nq + j];
                            let d = if e >= T::zero() { -q[j] } else { T::one() - q[j] };
                            gp[r * nq + j] += scale * d;
                        }
                    }
                }
            }
            Op::WeightedBce {
                logits,
                target,
                alpha,
            } => {
                let vl = &nodes[*logits].value;
                let vt = &nodes[*target].value;
                let scale = gd[0] / T::c(vl.numel().max(1) as f64);
                if let Some(gl) = acc!(*logits) {
                    for idx in 0..gl.len() {
                        let (x, t) = (vl.data()[idx], vt.data()[idx]);
                        let s = ops::sigmoid(x);
                        gl[idx] += scale * (-*alpha * t * (T::one() - s) + (T::one() - t) * s);
                    }
                }
            }
        }
        Ok(())
    }

    fn scan_backward(
        &self,
        gz: &[T],
        ids: [usize; 6],
        saved: &DiagScan<T>,
        dims: ScanDims,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let ScanDims {
            batch,
            len,
            p,
            n,
            p_out,
        } = dims;
        let [iv, idt, itheta, ib, ic, ih0] = ids;
        let nodes = &self.nodes;
        let vd = nodes[iv].value.data();
        let dtd = nodes[idt].value.data();
        let thd = nodes[itheta].value.data();
        let bd = nodes[ib].value.data();
        let cd = nodes[ic].value.data();
        let lambda: Vec<T> = thd.iter().map(|&t| -t.exp()).collect();

        let mut g_v = vec![T::zero(); batch * len * p];
        let mut g_dt = vec![T::zero(); batch * len];
        let mut g_lambda = vec![T::zero(); n];
        let mut g_b = vec![T::zero(); n * p];
        let mut g_c = vec![T::zero(); p_out * n];
        let mut g_h0 = vec![T::zero(); n];
        // Gradient w.r.t. the states, later w.r.t. the inputs u = B v.
        let mut gs = vec![T::zero(); len * n];

        for bi in 0..batch {
            let gzb = &gz[bi * len * p_out..(bi + 1) * len * p_out];
            let sb = &saved.states[bi * len * n..(bi + 1) * len * n];
            let db = &saved.decays[bi * len * n..(bi + 1) * len * n];
            let vb = &vd[bi * len * p..(bi + 1) * len * p];
            if len == 0 || n == 0 {
                continue;
            }
            // direct readout contribution: gS = gZ C, and gC += gZ^T S
            if p_out > 0 {
                T::gemm(len, p_out, n, gzb, (p_out as isize, 1), cd, (n as isize, 1), &mut gs, T::zero());
                T::gemm(p_out, len, n, gzb, (1, p_out as isize), sb, (n as isize, 1), &mut g_c, T::one());
            } else {
                gs.iter_mut().for_each(|x| *x = T::zero());
            }
            // reverse recurrence
            for l in (1..len).rev() {
                let (head, tail) = gs.split_at_mut(l * n);
                let gl = &tail[..n];
                let prev = &sb[(l - 1) * n..l * n];
                let a = &db[(l - 1) * n..l * n];
                let mut gdt = T::zero();
                for k in 0..n {
                    let ga = gl[k] * prev[k] * a[k];
                    gdt += ga * lambda[k];
                    g_lambda[k] += ga * dtd[bi * len + l - 1];
                    head[(l - 1) * n + k] += a[k] * gl[k];
                }
                g_dt[bi * len + l - 1] += gdt;
            }
            for k in 0..n {
                g_h0[k] += gs[k];
            }
            if p > 0 {
                T::gemm(len, n, p, &gs, (n as isize, 1), bd, (p as isize, 1), &mut g_v[bi * len * p..(bi + 1) * len * p], T::zero());
                T::gemm(n, len, p, &gs, (1, n as isize), vb, (p as isize, 1), &mut g_b, T::one());
            }
        }
        let g_theta: Vec<T> = g_lambda.iter().zip(&lambda).map(|(&g, &lam)| g * lam).collect();

        let mut put = |id: usize, src: &[T]| {
            if nodes[id].requires_grad {
                let dst = grads[id].get_or_insert_with(|| Tensor::zeros(nodes[id].value.shape()));
                for (x, &s) in dst.data_mut().iter_mut().zip(src) {
                    *x += s;
                }
            }
        };
        put(iv, &g_v);
        put(idt, &g_dt);
        put(itheta, &g_theta);
        put(ib, &g_b);
        put(ic, &g_c);
        put(ih0, &g_h0);
    }
}
