//! Diagonal selective state-space scans and the Mamba / MES layers built on them.
//!
//! Convention: the state after consuming input `t` is
//! `s_t = exp(dt_{t-1} * lambda) * s_{t-1} + B_t x_t` (with `s_0 = h0`, no decay
//! before the first input), and `z_t = C_t s_t + D x_t`. The lag kernel is
//! therefore `K_{lj} = C_l diag(exp(sum_{t=j}^{l-1} dt_t lambda)) B_j`.

use cgm_numeric::ops::{diag_scan_forward, ScanDims};
use cgm_numeric::{ParamId, ParamStore, Real, Session, Tensor, Var};
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::layers::{Linear, Norm};

/// Diagonal of `Lambda = -exp(theta)`; nonpositive for every `theta`.
pub fn lambda_from_theta(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|t| -t.exp()).collect()
}

/// A matrix that is either fixed or given per time step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepMatrix {
    Shared(Vec<f64>),
    /// Concatenated per-step matrices.
    PerStep(Vec<f64>),
}

impl StepMatrix {
    fn at(&self, t: usize, size: usize) -> &[f64] {
        match self {
            StepMatrix::Shared(m) => m,
            StepMatrix::PerStep(m) => &m[t * size..(t + 1) * size],
        }
    }

    fn check(&self, len: usize, size: usize, what: &str) -> Result<()> {
        let want = match self {
            StepMatrix::Shared(_) => size,
            StepMatrix::PerStep(_) => len * size,
        };
        let got = match self {
            StepMatrix::Shared(m) | StepMatrix::PerStep(m) => m.len(),
        };
        if got != want {
            return Err(CoreError::Shape(format!("{what}: expected {want} entries, got {got}")));
        }
        Ok(())
    }
}

/// Extents of a single-head scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanShape {
    pub len: usize,
    /// Input channels.
    pub p: usize,
    /// State size.
    pub n: usize,
    /// Readout channels.
    pub p_out: usize,
}

/// Everything attribution needs to rebuild the lag kernels of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanTrace {
    pub shape: ScanShape,
    pub dt: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `[n, p]` per step.
    pub b: StepMatrix,
    /// `[p_out, n]` per step.
    pub c: StepMatrix,
}

impl ScanTrace {
    pub fn b_at(&self, t: usize) -> &[f64] {
        self.b.at(t, self.shape.n * self.shape.p)
    }

    pub fn c_at(&self, t: usize) -> &[f64] {
        self.c.at(t, self.shape.p_out * self.shape.n)
    }

    /// Per-state decay factors `exp(dt_t * lambda)` applied after step `t`.
    pub fn decay(&self, t: usize) -> Vec<f64> {
        self.lambda.iter().map(|&l| (self.dt[t] * l).exp()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SelectiveParams {
    pub theta: Vec<f64>,
    pub b: StepMatrix,
    pub c: StepMatrix,
    /// Optional skip `[p]`; requires `p_out == p`.
    pub d: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ScanOutput {
    /// `[len, p_out]`
    pub z: Vec<f64>,
    pub final_state: Vec<f64>,
    pub trace: ScanTrace,
}

/// Reference single-head selective scan at 64-bit, linear in `len`.
///
/// `x [len, p]`, `dt [len]`, `h0 [n]`.
pub fn selective_scan(
    x: &[f64],
    dt: &[f64],
    params: &SelectiveParams,
    shape: ScanShape,
    h0: &[f64],
) -> Result<ScanOutput> {
    let ScanShape { len, p, n, p_out } = shape;
    if len == 0 {
        return Err(CoreError::Empty("scan needs at least one step".into()));
    }
    if x.len() != len * p || dt.len() != len || h0.len() != n || params.theta.len() != n {
        return Err(CoreError::Shape(format!(
            "scan inputs: x {} (want {}), dt {} (want {len}), h0 {} and theta {} (want {n})",
            x.len(),
            len * p,
            dt.len(),
            h0.len(),
            params.theta.len()
        )));
    }
    params.b.check(len, n * p, "B")?;
    params.c.check(len, p_out * n, "C")?;
    if let Some(d) = &params.d {
        if d.len() != p || p_out != p {
            return Err(CoreError::Shape("skip D needs p_out == p entries".into()));
        }
    }
    if x.iter().chain(dt).chain(h0).any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("scan input".into()));
    }
    let lambda = lambda_from_theta(&params.theta);
    let trace = ScanTrace {
        shape,
        dt: dt.to_vec(),
        lambda,
        b: params.b.clone(),
        c: params.c.clone(),
    };
    let mut state = h0.to_vec();
    let mut z = vec![0.0; len * p_out];
    for t in 0..len {
        if t > 0 {
            for (sk, a) in state.iter_mut().zip(trace.decay(t - 1)) {
                *sk *= a;
            }
        }
        let b = trace.b_at(t);
        let xt = &x[t * p..(t + 1) * p];
        for k in 0..n {
            state[k] += b[k * p..(k + 1) * p].iter().zip(xt).map(|(w, v)| w * v).sum::<f64>();
        }
        let c = trace.c_at(t);
        for o in 0..p_out {
            let mut acc = c[o * n..(o + 1) * n].iter().zip(&state).map(|(w, v)| w * v).sum::<f64>();
            if let Some(d) = &params.d {
                acc += d[o] * xt[o];
            }
            z[t * p_out + o] = acc;
        }
    }
    Ok(ScanOutput {
        z,
        final_state: state,
        trace,
    })
}

/// Batched time-invariant scan evaluated in chunks of `chunk` steps, carrying
/// the state across chunk boundaries. Returns outputs `[batch, len, p_out]`.
#[allow(clippy::too_many_arguments)]
pub fn chunked_scan<T: Real>(
    v: &[T],
    dt: &[T],
    theta: &[T],
    b: &[T],
    c: &[T],
    h0: &[T],
    dims: ScanDims,
    chunk: usize,
) -> Result<Vec<T>> {
    let ScanDims {
        batch,
        len,
        p,
        n,
        p_out,
    } = dims;
    if chunk == 0 {
        return Err(CoreError::Config("chunk must be positive".into()));
    }
    if v.len() != batch * len * p || dt.len() != batch * len {
        return Err(CoreError::Shape("chunked scan inputs".into()));
    }
    let mut out = vec![T::zero(); batch * len * p_out];
    for bi in 0..batch {
        let mut state = h0.to_vec();
        let mut start = 0;
        while start < len {
            let end = (start + chunk).min(len);
            let cl = end - start;
            // the first step of a chunk must see the decay left over from the previous one
            let mut carry = state.clone();
            if start > 0 {
                let dprev = dt[bi * len + start - 1];
                for (k, s) in carry.iter_mut().enumerate() {
                    *s *= (dprev * (-theta[k].exp())).exp();
                }
            }
            let part = diag_scan_forward(
                &v[(bi * len + start) * p..(bi * len + end) * p],
                &dt[bi * len + start..bi * len + end],
                theta,
                b,
                c,
                &carry,
                ScanDims {
                    batch: 1,
                    len: cl,
                    p,
                    n,
                    p_out,
                },
            );
            out[(bi * len + start) * p_out..(bi * len + end) * p_out].copy_from_slice(&part.outputs);
            state.copy_from_slice(&part.states[(cl - 1) * n..cl * n]);
            start = end;
        }
    }
    Ok(out)
}

/// Shared value `v_t = mean_h x_t^(h)` of `x [len, heads * p]`.
pub fn mes_value(x: &[f64], heads: usize, p: usize) -> Result<Vec<f64>> {
    if heads == 0 || x.len() % (heads * p).max(1) != 0 {
        return Err(CoreError::Shape(format!(
            "mes value: {} entries not divisible into {heads} heads of {p}",
            x.len()
        )));
    }
    let len = x.len() / (heads * p);
    let mut v = vec![0.0; len * p];
    for t in 0..len {
        for h in 0..heads {
            for j in 0..p {
                v[t * p + j] += x[(t * heads + h) * p + j];
            }
        }
    }
    v.iter_mut().for_each(|x| *x /= heads as f64);
    Ok(v)
}

/// One head of the MES layer: own dynamics, shared value and readout.
#[derive(Debug, Clone, PartialEq)]
pub struct MesHead {
    pub theta: Vec<f64>,
    /// `[n, p]`
    pub b: Vec<f64>,
    pub dt: Vec<f64>,
    pub h0: Vec<f64>,
}

/// Reference MES readout `z_t = sum_h C_sh s_t^(h) + D v_t` over a shared value `v [len, p]`.
pub fn mamba2_mes_forward(
    v: &[f64],
    heads: &[MesHead],
    c_sh: &[f64],
    d: Option<&[f64]>,
    p: usize,
    n: usize,
) -> Result<(Vec<f64>, Vec<ScanTrace>)> {
    if heads.is_empty() {
        return Err(CoreError::Empty("mes needs at least one head".into()));
    }
    let len = v.len() / p.max(1);
    let mut z = vec![0.0; len * p];
    let mut traces = Vec::with_capacity(heads.len());
    for head in heads {
        if head.b.len() != n * p || head.theta.len() != n {
            return Err(CoreError::Shape("mes head dimension mismatch".into()));
        }
        let out = selective_scan(
            v,
            &head.dt,
            &SelectiveParams {
                theta: head.theta.clone(),
                b: StepMatrix::Shared(head.b.clone()),
                c: StepMatrix::Shared(c_sh.to_vec()),
                d: None,
            },
            ScanShape { len, p, n, p_out: p },
            &head.h0,
        )?;
        for (acc, x) in z.iter_mut().zip(&out.z) {
            *acc += x;
        }
        traces.push(out.trace);
    }
    if let Some(d) = d {
        for t in 0..len {
            for j in 0..p {
                z[t * p + j] += d[j] * v[t * p + j];
            }
        }
    }
    Ok((z, traces))
}

/// Inverse softplus, for initializing step-size biases.
fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Mamba layer with MES value and readout sharing.
///
/// The full block is input projection, causal depthwise convolution, SiLU,
/// head-mean value, per-head scans, SiLU gate, output projection, then a
/// residual connection and layer norm. The light variant drops the
/// convolution and the gate.
#[derive(Debug, Clone)]
pub struct MesLayer {
    pub heads: usize,
    pub headdim: usize,
    pub d_state: usize,
    pub d_model: usize,
    pub w_x: Linear,
    /// Depthwise kernel `[heads * headdim, d_conv]` and bias.
    pub conv: Option<(ParamId, ParamId)>,
    pub w_gate: Option<Linear>,
    pub w_dt: Linear,
    pub theta: Vec<ParamId>,
    pub b: Vec<ParamId>,
    pub c_sh: ParamId,
    pub h0: Vec<ParamId>,
    pub d: ParamId,
    pub w_out: Linear,
    pub norm: Norm,
    pub dt_min: f64,
    pub dt_max: f64,
    pub dropout: f64,
}

/// Tape handles needed to rebuild a layer's kernels after the forward pass.
#[derive(Debug, Clone)]
pub struct MesTraceVars {
    /// Per head, `[B, T]`.
    pub dt: Vec<Var>,
    /// `[B, T, P]`
    pub v: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct MesOptions {
    pub heads: usize,
    pub headdim: usize,
    pub d_state: usize,
    pub d_model: usize,
    /// Convolution width, `None` for the light layer.
    pub d_conv: Option<usize>,
    pub gated: bool,
    pub dt_min: f64,
    pub dt_max: f64,
    pub dropout: f64,
}

impl MesLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        o: MesOptions,
        rng: &mut R,
    ) -> Self {
        let inner = o.heads * o.headdim;
        let w_x = Linear::new(store, &format!("{name}.in_x"), o.d_model, inner, false, rng);
        let conv = o.d_conv.map(|k| {
            let bound = 1.0 / (k as f64).sqrt();
            (
                store.add(format!("{name}.conv.w"), Tensor::uniform(&[inner, k], bound, rng)),
                store.add(format!("{name}.conv.b"), Tensor::zeros(&[inner])),
            )
        });
        let w_gate = o
            .gated
            .then(|| Linear::new(store, &format!("{name}.in_gate"), o.d_model, o.headdim, false, rng));
        let w_dt = Linear::new(store, &format!("{name}.in_dt"), o.d_model, o.heads, true, rng);
        store.get_mut(w_dt.w).scale(T::c(0.1));
        // step sizes start log-uniform in [1e-3, 1e-1]
        let dt_lo = o.dt_min.max(1e-3).ln();
        let dt_hi = 0.1f64.min(o.dt_max).ln();
        let dt_bias: Vec<f64> = (0..o.heads)
            .map(|_| softplus_inv((dt_lo + rng.random::<f64>() * (dt_hi - dt_lo)).exp()))
            .collect();
        if let Some(bid) = w_dt.b {
            *store.get_mut(bid) = Tensor::from_f64(&[o.heads], &dt_bias).expect("dt bias shape");
        }
        let n = o.d_state;
        let theta_init: Vec<f64> = (0..n).map(|k| ((k + 1) as f64).ln()).collect();
        let mut theta = Vec::with_capacity(o.heads);
        let mut b = Vec::with_capacity(o.heads);
        let mut h0 = Vec::with_capacity(o.heads);
        for h in 0..o.heads {
            theta.push(store.add(
                format!("{name}.h{h}.theta"),
                Tensor::from_f64(&[n], &theta_init).expect("theta shape"),
            ));
            b.push(store.add(
                format!("{name}.h{h}.B"),
                Tensor::randn(&[n, o.headdim], 1.0 / (o.headdim as f64).sqrt(), rng),
            ));
            h0.push(store.add(format!("{name}.h{h}.h0"), Tensor::zeros(&[n])));
        }
        let c_sh = store.add(
            format!("{name}.C_sh"),
            Tensor::randn(&[o.headdim, n], 1.0 / (n as f64).sqrt(), rng),
        );
        let d = store.add(format!("{name}.D"), Tensor::ones(&[o.headdim]));
        let w_out = Linear::new(store, &format!("{name}.out"), o.headdim, o.d_model, false, rng);
        let norm = Norm::new(store, &format!("{name}.ln"), o.d_model);
        Self {
            heads: o.heads,
            headdim: o.headdim,
            d_state: n,
            d_model: o.d_model,
            w_x,
            conv,
            w_gate,
            w_dt,
            theta,
            b,
            c_sh,
            h0,
            d,
            w_out,
            norm,
            dt_min: o.dt_min,
            dt_max: o.dt_max,
            dropout: o.dropout,
        }
    }

    /// Head-mean of `x [R, heads * headdim]` on the tape.
    pub fn value<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let p = self.headdim;
        let mut acc = s.tape.slice_cols(x, 0, p)?;
        for h in 1..self.heads {
            let xh = s.tape.slice_cols(x, h * p, (h + 1) * p)?;
            acc = s.tape.add(acc, xh)?;
        }
        Ok(s.tape.mul_scalar(acc, T::c(1.0 / self.heads as f64)))
    }

    /// `x [batch * len, d_model]`, rows grouped by sample.
    pub fn forward<T: Real>(
        &self,
        s: &mut Session<T>,
        x: Var,
        batch: usize,
        len: usize,
    ) -> Result<(Var, MesTraceVars)> {
        let rows = batch * len;
        if s.tape.shape(x) != [rows, self.d_model] {
            return Err(CoreError::Shape(format!(
                "mes layer expects [{rows}, {}], got {:?}",
                self.d_model,
                s.tape.shape(x)
            )));
        }
        let inner = self.heads * self.headdim;
        let mut xp = self.w_x.forward(s, x)?;
        if let Some((w, b)) = self.conv {
            let x3 = s.tape.reshape(xp, &[batch, len, inner])?;
            let (w, b) = (s.p(w), s.p(b));
            let c = s.tape.causal_conv(x3, w, b)?;
            let c = s.tape.reshape(c, &[rows, inner])?;
            xp = s.tape.silu(c);
        }
        let v = self.value(s, xp)?;
        let v3 = s.tape.reshape(v, &[batch, len, self.headdim])?;
        let dt = self.w_dt.forward(s, x)?;
        let dt = s.tape.softplus(dt);
        let dt = s.tape.clamp(dt, T::c(self.dt_min), T::c(self.dt_max));
        let c_sh = s.p(self.c_sh);
        let mut z: Option<Var> = None;
        let mut dts = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let dth = s.tape.slice_cols(dt, h, h + 1)?;
            let dth = s.tape.reshape(dth, &[batch, len])?;
            dts.push(dth);
            let (theta, b, h0) = (s.p(self.theta[h]), s.p(self.b[h]), s.p(self.h0[h]));
            let zh = s.tape.diag_scan(v3, dth, theta, b, c_sh, h0)?;
            z = Some(match z {
                Some(acc) => s.tape.add(acc, zh)?,
                None => zh,
            });
        }
        let z = z.ok_or_else(|| CoreError::Empty("mes layer without heads".into()))?;
        let z = s.tape.reshape(z, &[rows, self.headdim])?;
        let d = s.p(self.d);
        let dv = s.tape.mul(v, d)?;
        let mut y = s.tape.add(z, dv)?;
        if let Some(g) = &self.w_gate {
            let gate = g.forward(s, x)?;
            let gate = s.tape.silu(gate);
            y = s.tape.mul(y, gate)?;
        }
        let out = self.w_out.forward(s, y)?;
        let out = s.dropout(out, self.dropout);
        let res = s.tape.add(x, out)?;
        let y = self.norm.forward(s, res)?;
        Ok((y, MesTraceVars { dt: dts, v: v3 }))
    }

    /// Kernel parameters of head `h` at 64-bit: `(theta, B [n, p])`.
    pub fn head_params<T: Real>(&self, store: &ParamStore<T>, h: usize) -> (Vec<f64>, Vec<f64>) {
        (
            store.get(self.theta[h]).to_f64_vec(),
            store.get(self.b[h]).to_f64_vec(),
        )
    }
}
