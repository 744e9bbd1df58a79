//! Static and temporal variable selection networks.

use std::path::Path;

use cgm_numeric::{ParamId, ParamStore, Real, Session, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::layers::{Context, Grn, Linear};

/// Per-variable embedding, GRN and projection plus the shared scoring head.
///
/// Weights are `softmax_i(v . grn_i(e_i) + a)` and the fused output is
/// `sum_i alpha_i P_i e_i`.
#[derive(Debug, Clone)]
pub struct Selector {
    pub grns: Vec<Grn>,
    pub projs: Vec<Linear>,
    pub score_v: ParamId,
    pub score_a: ParamId,
}

impl Selector {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        n: usize,
        emb: usize,
        out: usize,
        ctx: Option<usize>,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let grns = (0..n)
            .map(|i| Grn::new(store, &format!("{name}.grn{i}"), emb, emb, emb, ctx, dropout, rng))
            .collect();
        let projs = (0..n)
            .map(|i| Linear::new(store, &format!("{name}.proj{i}"), emb, out, false, rng))
            .collect();
        // zero scoring parameters start every selection uniform
        let score_v = store.add(format!("{name}.score_v"), Tensor::zeros(&[emb, 1]));
        let score_a = store.add(format!("{name}.score_a"), Tensor::zeros(&[1]));
        Self {
            grns,
            projs,
            score_v,
            score_a,
        }
    }

    /// `embeds[i]` is `[R, emb]`. Returns `(fused [R, out], weights [R, n])`.
    fn forward<T: Real>(
        &self,
        s: &mut Session<T>,
        embeds: &[Var],
        ctx: Option<Context>,
    ) -> Result<(Var, Var)> {
        if embeds.len() != self.grns.len() {
            return Err(CoreError::Shape(format!(
                "selector has {} variables, got {}",
                self.grns.len(),
                embeds.len()
            )));
        }
        let v = s.p(self.score_v);
        let mut scores = Vec::with_capacity(embeds.len());
        for (grn, &e) in self.grns.iter().zip(embeds) {
            let t = grn.forward(s, e, ctx)?;
            scores.push(s.tape.matmul(t, v)?);
        }
        let scores = s.tape.concat_cols(&scores)?;
        let a = s.p(self.score_a);
        let scores = s.tape.add(scores, a)?;
        let alpha = s.tape.softmax(scores)?;
        let mut fused: Option<Var> = None;
        for (i, (proj, &e)) in self.projs.iter().zip(embeds).enumerate() {
            let pe = proj.forward(s, e)?;
            let ai = s.tape.slice_cols(alpha, i, i + 1)?;
            let term = s.tape.scale_rows(pe, ai)?;
            fused = Some(match fused {
                Some(f) => s.tape.add(f, term)?,
                None => term,
            });
        }
        let fused = fused.ok_or_else(|| CoreError::Empty("selector without variables".into()))?;
        Ok((fused, alpha))
    }

    pub fn len(&self) -> usize {
        self.grns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grns.is_empty()
    }
}

/// How a static variable is embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StaticKind {
    /// Lookup table; `unknown_mean` maps unseen levels to the mean embedding.
    Categorical { levels: usize, unknown_mean: bool },
    /// Affine embedding of a standardized scalar.
    Continuous,
}

/// One static value for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StaticInput {
    Level(usize),
    Unknown,
    Value(f64),
}

#[derive(Debug, Clone)]
pub struct StaticVar {
    pub name: String,
    pub kind: StaticKind,
    /// Table `[levels, d]` or weight `[1, d]`.
    pub embed: ParamId,
    pub embed_bias: Option<ParamId>,
}

/// Static VSN producing the context `c`.
#[derive(Debug, Clone)]
pub struct StaticVsn {
    pub vars: Vec<StaticVar>,
    pub selector: Selector,
    pub dim: usize,
}

/// Context and per-variable weights for a batch.
#[derive(Debug, Clone, Copy)]
pub struct StaticContext {
    /// `[B, d_model]`
    pub c: Var,
    /// `[B, K]`
    pub weights: Var,
}

impl StaticVsn {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        vars: &[(String, StaticKind)],
        dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let mut out = Vec::with_capacity(vars.len());
        for (vname, kind) in vars {
            let (embed, embed_bias) = match kind {
                StaticKind::Categorical { levels, .. } => (
                    store.add(
                        format!("{name}.{vname}.table"),
                        Tensor::randn(&[(*levels).max(1), dim], 1.0, rng),
                    ),
                    None,
                ),
                StaticKind::Continuous => (
                    store.add(
                        format!("{name}.{vname}.w"),
                        Tensor::randn(&[1, dim], 1.0, rng),
                    ),
                    Some(store.add(format!("{name}.{vname}.b"), Tensor::zeros(&[dim]))),
                ),
            };
            out.push(StaticVar {
                name: vname.clone(),
                kind: kind.clone(),
                embed,
                embed_bias,
            });
        }
        let selector = Selector::new(store, name, vars.len(), dim, dim, None, dropout, rng);
        Self {
            vars: out,
            selector,
            dim,
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.iter().map(|v| v.name.clone()).collect()
    }

    fn embed<T: Real>(&self, s: &mut Session<T>, k: usize, inputs: &[Vec<StaticInput>]) -> Result<Var> {
        let var = &self.vars[k];
        let b = inputs.len();
        match var.kind {
            StaticKind::Categorical {
                levels,
                unknown_mean,
            } => {
                let mut sel = vec![T::zero(); b * levels];
                for (r, row) in inputs.iter().enumerate() {
                    match row[k] {
                        StaticInput::Level(l) if l < levels => sel[r * levels + l] = T::one(),
                        StaticInput::Unknown | StaticInput::Level(_) if unknown_mean => {
                            let w = T::c(1.0 / levels as f64);
                            sel[r * levels..(r + 1) * levels].iter_mut().for_each(|x| *x = w);
                        }
                        other => {
                            return Err(CoreError::UnknownLevel {
                                variable: var.name.clone(),
                                level: format!("{other:?}"),
                            })
                        }
                    }
                }
                let sel = s.constant(Tensor::new(&[b, levels], sel)?);
                let table = s.p(var.embed);
                Ok(s.tape.matmul(sel, table)?)
            }
            StaticKind::Continuous => {
                let mut x = Vec::with_capacity(b);
                for row in inputs {
                    match row[k] {
                        StaticInput::Value(v) if v.is_finite() => x.push(T::c(v)),
                        other => {
                            return Err(CoreError::Shape(format!(
                                "static {} expects a finite value, got {other:?}",
                                var.name
                            )))
                        }
                    }
                }
                let x = s.constant(Tensor::new(&[b, 1], x)?);
                let w = s.p(var.embed);
                let e = s.tape.matmul(x, w)?;
                let bias = s.p(var.embed_bias.expect("continuous statics carry a bias"));
                Ok(s.tape.add(e, bias)?)
            }
        }
    }

    /// `inputs[b][k]` is the value of static `k` for sample `b`.
    pub fn forward<T: Real>(&self, s: &mut Session<T>, inputs: &[Vec<StaticInput>]) -> Result<StaticContext> {
        if inputs.is_empty() {
            return Err(CoreError::Empty("static batch".into()));
        }
        if let Some(row) = inputs.iter().find(|r| r.len() != self.vars.len()) {
            return Err(CoreError::Shape(format!(
                "expected {} statics, got {}",
                self.vars.len(),
                row.len()
            )));
        }
        let embeds = (0..self.vars.len())
            .map(|k| self.embed(s, k, inputs))
            .collect::<Result<Vec<_>>>()?;
        let (c, weights) = self.selector.forward(s, &embeds, None)?;
        Ok(StaticContext { c, weights })
    }
}

/// Temporal VSN over scalar variables.
#[derive(Debug, Clone)]
pub struct TemporalVsn {
    pub names: Vec<String>,
    pub embeds: Vec<Linear>,
    pub selector: Selector,
}

impl TemporalVsn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        names: &[&str],
        emb: usize,
        out: usize,
        ctx: Option<usize>,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let embeds = names
            .iter()
            .map(|v| Linear::new(store, &format!("{name}.{v}.embed"), 1, emb, true, rng))
            .collect();
        let selector = Selector::new(store, name, names.len(), emb, out, ctx, dropout, rng);
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            embeds,
            selector,
        }
    }

    /// `x [R, V]` of normalized values. Returns `(r [R, out], alpha [R, V])`.
    pub fn forward<T: Real>(&self, s: &mut Session<T>, x: Var, ctx: Option<Context>) -> Result<(Var, Var)> {
        let cols = s.tape.value(x).cols();
        if cols != self.names.len() || s.tape.value(x).rank() != 2 {
            return Err(CoreError::Shape(format!(
                "temporal vsn expects [rows, {}], got {:?}",
                self.names.len(),
                s.tape.shape(x)
            )));
        }
        let mut embeds = Vec::with_capacity(cols);
        for (i, lin) in self.embeds.iter().enumerate() {
            let xi = s.tape.slice_cols(x, i, i + 1)?;
            embeds.push(lin.forward(s, xi)?);
        }
        self.selector.forward(s, &embeds, ctx)
    }

    /// Reorders variables and their parameters by `perm` (new position `j` holds old `perm[j]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |v: &[Linear]| perm.iter().map(|&p| v[p].clone()).collect::<Vec<_>>();
        Self {
            names: perm.iter().map(|&p| self.names[p].clone()).collect(),
            embeds: pick(&self.embeds),
            selector: Selector {
                grns: perm.iter().map(|&p| self.selector.grns[p].clone()).collect(),
                projs: pick(&self.selector.projs),
                score_v: self.selector.score_v,
                score_a: self.selector.score_a,
            },
        }
    }
}

/// One row of the variable-importance export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRecord {
    /// `static`, `encoder` or `decoder`.
    pub scope: String,
    pub variable: String,
    /// Time step within the block; 0 for statics.
    pub step: usize,
    pub weight: f64,
}

pub fn write_importance_csv(path: impl AsRef<Path>, records: &[ImportanceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scope", "variable", "step", "weight"])?;
    for r in records {
        w.write_record([
            r.scope.clone(),
            r.variable.clone(),
            r.step.to_string(),
            format!("{}", r.weight),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean weight per `(scope, variable)` over steps, in first-seen order.
pub fn summarize_importance(records: &[ImportanceRecord]) -> Vec<(String, String, f64)> {
    let mut keys: Vec<(String, String)> = Vec::new();
    let mut acc: Vec<(f64, usize)> = Vec::new();
    for r in records {
        let key = (r.scope.clone(), r.variable.clone());
        let i = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                keys.push(key);
                acc.push((0.0, 0));
                keys.len() - 1
            }
        };
        acc[i].0 += r.weight;
        acc[i].1 += 1;
    }
    keys.into_iter()
        .zip(acc)
        .map(|((s, v), (sum, n))| (s, v, sum / n.max(1) as f64))
        .collect()
}
