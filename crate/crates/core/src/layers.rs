//! Dense building blocks shared by the fusion and sequence layers.

use cgm_numeric::{ParamId, ParamStore, Real, Session, Tensor, Var};
use rand::Rng;

use crate::error::{CoreError, Result};

/// Glorot-uniform weight bound.
fn glorot(inp: usize, out: usize) -> f64 {
    (6.0 / (inp + out).max(1) as f64).sqrt()
}

/// `x W + b` with `W [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        inp: usize,
        out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            Tensor::uniform(&[inp, out], glorot(inp, out), rng),
        );
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[out])));
        Self { w, b, inp, out }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let w = s.p(self.w);
        let mut y = s.tape.matmul(x, w)?;
        if let Some(b) = self.b {
            let b = s.p(b);
            y = s.tape.add(y, b)?;
        }
        Ok(y)
    }
}

/// Layer-norm gain and bias.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[dim])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let (g, b) = (s.p(self.gain), s.p(self.bias));
        Ok(s.tape.layernorm(x, g, b)?)
    }
}

/// Conditioning input of a [`Grn`].
#[derive(Debug, Clone, Copy)]
pub enum Context {
    /// One context row per input row.
    Rows(Var),
    /// `c [B, dc]`; input rows come in `B` consecutive groups of `repeat`.
    Repeat { c: Var, repeat: usize },
}

impl Context {
    /// Projects the context with `lin` and aligns it with the input rows.
    fn project<T: Real>(&self, s: &mut Session<T>, lin: &Linear) -> Result<Var> {
        match *self {
            Context::Rows(c) => lin.forward(s, c),
            Context::Repeat { c, repeat } => {
                let p = lin.forward(s, c)?;
                let groups = s.tape.shape(p)[0];
                if repeat == 1 {
                    return Ok(p);
                }
                let idx: Vec<usize> = (0..groups)
                    .flat_map(|g| std::iter::repeat_n(g, repeat))
                    .collect();
                Ok(s.tape.gather_rows(p, &idx)?)
            }
        }
    }
}

/// Gated residual network.
///
/// `z = LN(skip(u) + g * (W2 elu(W1 [u; c] + b1) + b2))`, `g = sigmoid(Wg [u; c] + bg)`.
#[derive(Debug, Clone)]
pub struct Grn {
    pub w1u: Linear,
    pub w1c: Option<Linear>,
    pub w2: Linear,
    pub wgu: Linear,
    pub wgc: Option<Linear>,
    pub skip: Option<Linear>,
    pub norm: Norm,
    pub dropout: f64,
    pub inp: usize,
    pub out: usize,
}

impl Grn {
    /// `ctx` is the context width, or `None` for an unconditioned block. A
    /// projected skip is added when `inp != out`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        inp: usize,
        hidden: usize,
        out: usize,
        ctx: Option<usize>,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            w1u: Linear::new(store, &format!("{name}.w1u"), inp, hidden, true, rng),
            w1c: ctx.map(|dc| Linear::new(store, &format!("{name}.w1c"), dc, hidden, false, rng)),
            w2: Linear::new(store, &format!("{name}.w2"), hidden, out, true, rng),
            wgu: Linear::new(store, &format!("{name}.wgu"), inp, out, true, rng),
            wgc: ctx.map(|dc| Linear::new(store, &format!("{name}.wgc"), dc, out, false, rng)),
            skip: (inp != out).then(|| Linear::new(store, &format!("{name}.skip"), inp, out, false, rng)),
            norm: Norm::new(store, &format!("{name}.ln"), out),
            dropout,
            inp,
            out,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<T>, u: Var, ctx: Option<Context>) -> Result<Var> {
        let width = s.tape.value(u).cols();
        if width != self.inp {
            return Err(CoreError::Shape(format!(
                "grn expects {} input features, got {width}",
                self.inp
            )));
        }
        if ctx.is_some() != self.w1c.is_some() {
            return Err(CoreError::Shape(
                "grn context presence does not match its parameters".into(),
            ));
        }
        let mut a = self.w1u.forward(s, u)?;
        let mut gl = self.wgu.forward(s, u)?;
        if let (Some(c), Some(w1c), Some(wgc)) = (ctx, &self.w1c, &self.wgc) {
            let pc = c.project(s, w1c)?;
            a = s.tape.add(a, pc)?;
            let gc = c.project(s, wgc)?;
            gl = s.tape.add(gl, gc)?;
        }
        let a = s.tape.elu(a);
        let zhat = self.w2.forward(s, a)?;
        let zhat = s.dropout(zhat, self.dropout);
        let g = s.tape.sigmoid(gl);
        let gz = s.tape.mul(g, zhat)?;
        let base = match &self.skip {
            Some(k) => k.forward(s, u)?,
            None => u,
        };
        let pre = s.tape.add(base, gz)?;
        self.norm.forward(s, pre)
    }
}
