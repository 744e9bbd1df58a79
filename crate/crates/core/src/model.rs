//! The assembled forecaster: static VSN, temporal VSNs, stacked Mamba
//! blocks, static enrichment, the light MES layer, a position-wise GRN and a
//! linear quantile head.

use cgm_data::features::{DEC_VARS, ENC_VARS};
use cgm_data::window::check_decoder_vars;
use cgm_data::{FeatureStats, Prepared, StaticProfile, WindowSample};
use cgm_numeric::{rng, ParamStore, Real, Session, Tensor, Var};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::attribution::{head_aggregate, lag_importance_psi, unroll_kernels, AttentionMap, HeadSel};
use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::fusion::{ImportanceRecord, StaticInput, StaticKind, StaticVsn, TemporalVsn};
use crate::layers::{Context, Grn, Linear};
use crate::ssm::{MesLayer, MesOptions, MesTraceVars, ScanShape, ScanTrace, StepMatrix};

/// Static covariates in reporting order.
pub const STATIC_VARS: [&str; 7] = [
    "participant_id",
    "glucose_scale",
    "diabetes_status",
    "encoder_length",
    "age",
    "site",
    "glucose_center",
];

/// Input standardization and categorical vocabularies fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub features: FeatureStats,
    pub participants: Vec<String>,
    pub sites: Vec<String>,
    /// Mean and sd of the continuous statics, in the order glucose_scale, encoder_length, age, glucose_center.
    pub static_mean: Vec<f64>,
    pub static_sd: Vec<f64>,
}

impl Normalizer {
    pub fn fit(prepared: &Prepared, enc_len: usize) -> Self {
        let features = FeatureStats::fit(prepared);
        let participants: Vec<String> = prepared
            .profiles
            .iter()
            .map(|p| p.participant_id.clone())
            .collect();
        let mut sites: Vec<String> = prepared.profiles.iter().map(|p| p.site.clone()).collect();
        sites.sort();
        sites.dedup();
        let rows: Vec<[f64; 4]> = prepared
            .profiles
            .iter()
            .map(|p| continuous_values(p, enc_len))
            .collect();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; 4];
        let mut sd = vec![0.0; 4];
        for r in &rows {
            for k in 0..4 {
                mean[k] += r[k] / n;
            }
        }
        for r in &rows {
            for k in 0..4 {
                sd[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        let sd = sd
            .into_iter()
            .map(|v: f64| if v.sqrt() > 1e-9 { v.sqrt() } else { 1.0 })
            .collect();
        Self {
            features,
            participants,
            sites,
            static_mean: mean,
            static_sd: sd,
        }
    }

    /// Static inputs in `STATIC_VARS` order. Unseen participants map to the
    /// mean embedding; unseen sites are rejected.
    pub fn static_inputs(&self, profile: &StaticProfile, enc_len: usize) -> Result<Vec<StaticInput>> {
        let pid = match self
            .participants
            .iter()
            .position(|p| *p == profile.participant_id)
        {
            Some(i) => StaticInput::Level(i),
            None => StaticInput::Unknown,
        };
        let site = self
            .sites
            .iter()
            .position(|s| *s == profile.site)
            .ok_or_else(|| CoreError::UnknownLevel {
                variable: "site".into(),
                level: profile.site.clone(),
            })?;
        let c = continuous_values(profile, enc_len);
        let z = |k: usize| StaticInput::Value((c[k] - self.static_mean[k]) / self.static_sd[k]);
        Ok(vec![
            pid,
            z(0),
            StaticInput::Level(profile.status.index()),
            z(1),
            z(2),
            StaticInput::Level(site),
            z(3),
        ])
    }
}

fn continuous_values(p: &StaticProfile, enc_len: usize) -> [f64; 4] {
    [p.glucose_scale, enc_len as f64, p.age, p.glucose_center]
}

/// One window converted to model-scale numbers.
#[derive(Debug, Clone)]
pub struct EncodedSample {
    pub enc: Vec<f64>,
    pub dec: Vec<f64>,
    pub statics: Vec<StaticInput>,
    /// Normalized targets.
    pub target: Vec<f64>,
}

/// Batched model inputs.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub enc: Vec<f64>,
    pub dec: Vec<f64>,
    pub statics: Vec<Vec<StaticInput>>,
    pub target: Vec<f64>,
}

impl Batch {
    pub fn from_encoded(items: &[&EncodedSample]) -> Self {
        let mut b = Batch {
            size: items.len(),
            enc: Vec::new(),
            dec: Vec::new(),
            statics: Vec::with_capacity(items.len()),
            target: Vec::new(),
        };
        for it in items {
            b.enc.extend_from_slice(&it.enc);
            b.dec.extend_from_slice(&it.dec);
            b.statics.push(it.statics.clone());
            b.target.extend_from_slice(&it.target);
        }
        b
    }
}

/// Multi-horizon quantile forecast in mg/dL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub participant_id: String,
    pub anchor_time: DateTime<Utc>,
    pub quantiles: Vec<f64>,
    /// Row-major `[horizon, quantiles]`, sorted within each row.
    pub values: Vec<f64>,
    /// The head's outputs before rearrangement.
    pub raw: Vec<f64>,
}

impl ForecastResult {
    pub fn horizon(&self) -> usize {
        self.values.len() / self.quantiles.len().max(1)
    }

    pub fn at(&self, h: usize, q: usize) -> f64 {
        self.values[h * self.quantiles.len() + q]
    }

    /// Column of quantile `q`.
    pub fn column(&self, q: usize) -> Vec<f64> {
        (0..self.horizon()).map(|h| self.at(h, q)).collect()
    }

    /// Median column, or the middle quantile when 0.5 is not configured.
    pub fn median(&self) -> Vec<f64> {
        let q = self
            .quantiles
            .iter()
            .position(|&q| (q - 0.5).abs() < 1e-12)
            .unwrap_or(self.quantiles.len() / 2);
        self.column(q)
    }
}

/// Sorts each row so quantile outputs never cross.
pub fn rearrange(values: &mut [f64], q: usize) {
    for row in values.chunks_mut(q.max(1)) {
        row.sort_by(|a, b| a.total_cmp(b));
    }
}

/// Kernel inputs of one MES layer for one sample, at 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub len: usize,
    pub p: usize,
    pub n: usize,
    pub theta: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub dt: Vec<Vec<f64>>,
    pub c_sh: Vec<f64>,
    /// Shared value `[len, p]`.
    pub v: Vec<f64>,
}

impl LayerTrace {
    pub fn heads(&self) -> usize {
        self.theta.len()
    }

    pub fn scan_trace(&self, h: usize) -> ScanTrace {
        ScanTrace {
            shape: ScanShape {
                len: self.len,
                p: self.p,
                n: self.n,
                p_out: self.p,
            },
            dt: self.dt[h].clone(),
            lambda: crate::ssm::lambda_from_theta(&self.theta[h]),
            b: StepMatrix::Shared(self.b[h].clone()),
            c: StepMatrix::Shared(self.c_sh.clone()),
        }
    }

    /// Lag-importance map of one head or the head aggregate over the trailing `window`.
    pub fn attention(&self, head: HeadSel, window: Option<usize>, tau: f64, eps: f64) -> Result<AttentionMap> {
        let heads: Vec<usize> = match head {
            HeadSel::Head(h) if h < self.heads() => vec![h],
            HeadSel::Head(h) => {
                return Err(CoreError::Config(format!(
                    "head {h} out of range ({} heads)",
                    self.heads()
                )))
            }
            HeadSel::Aggregate => (0..self.heads()).collect(),
        };
        let mut start = 0;
        let psis: Vec<_> = heads
            .iter()
            .map(|&h| {
                let k = unroll_kernels(&self.scan_trace(h), window);
                start = k.start;
                k.psi()
            })
            .collect();
        let mut map = match head {
            HeadSel::Aggregate => head_aggregate(&psis, tau, eps)?,
            HeadSel::Head(_) => lag_importance_psi(&psis[0], tau, eps)?,
        };
        map.head = head;
        map.start = start;
        Ok(map)
    }
}

/// Interpretability outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpretation {
    pub static_weights: Vec<f64>,
    /// `[enc_len, ENC_VARS]`
    pub encoder_weights: Vec<f64>,
    /// `[horizon, DEC_VARS]`
    pub decoder_weights: Vec<f64>,
    /// Stacked blocks first, light layer last.
    pub layers: Vec<LayerTrace>,
}

impl Interpretation {
    pub fn importance_records(&self) -> Vec<ImportanceRecord> {
        let mut out = Vec::new();
        for (k, w) in self.static_weights.iter().enumerate() {
            out.push(ImportanceRecord {
                scope: "static".into(),
                variable: STATIC_VARS[k].into(),
                step: 0,
                weight: *w,
            });
        }
        for (scope, names, w) in [
            ("encoder", &ENC_VARS[..], &self.encoder_weights),
            ("decoder", &DEC_VARS[..], &self.decoder_weights),
        ] {
            for (i, x) in w.iter().enumerate() {
                out.push(ImportanceRecord {
                    scope: scope.into(),
                    variable: names[i % names.len()].into(),
                    step: i / names.len(),
                    weight: *x,
                });
            }
        }
        out
    }
}

/// Tape outputs of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Normalized quantiles `[B * H, Q]`.
    pub pred: Var,
    pub static_weights: Var,
    pub encoder_weights: Var,
    pub decoder_weights: Var,
    pub traces: Vec<MesTraceVars>,
}

#[derive(Debug, Clone)]
pub struct Forecaster<T> {
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub store: ParamStore<T>,
    pub static_vsn: StaticVsn,
    pub enc_vsn: TemporalVsn,
    pub dec_vsn: TemporalVsn,
    pub blocks: Vec<MesLayer>,
    pub enrich: Grn,
    pub light: MesLayer,
    pub pos_grn: Grn,
    pub head: Linear,
}

impl<T: Real> Forecaster<T> {
    /// Builds a freshly initialized model. Parameter names and shapes depend
    /// only on `config` and the normalizer vocabularies.
    pub fn new(config: ModelConfig, normalizer: Normalizer) -> Result<Self> {
        config.validate()?;
        check_decoder_vars(&DEC_VARS).map_err(|e| CoreError::Leakage(e.to_string()))?;
        let mut r = rng::seeded(config.seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let statics: Vec<(String, StaticKind)> = STATIC_VARS
            .iter()
            .map(|&name| {
                let kind = match name {
                    "participant_id" => StaticKind::Categorical {
                        levels: normalizer.participants.len().max(1),
                        unknown_mean: true,
                    },
                    "diabetes_status" => StaticKind::Categorical {
                        levels: cgm_data::DiabetesStatus::ALL.len(),
                        unknown_mean: false,
                    },
                    "site" => StaticKind::Categorical {
                        levels: normalizer.sites.len().max(1),
                        unknown_mean: false,
                    },
                    _ => StaticKind::Continuous,
                };
                (name.to_string(), kind)
            })
            .collect();
        let static_vsn = StaticVsn::new(&mut store, "static_vsn", &statics, d, config.dropout, &mut r);
        let enc_vsn = TemporalVsn::new(
            &mut store,
            "enc_vsn",
            &ENC_VARS,
            config.var_dim,
            d,
            Some(d),
            config.dropout,
            &mut r,
        );
        let dec_vsn = TemporalVsn::new(
            &mut store,
            "dec_vsn",
            &DEC_VARS,
            config.var_dim,
            d,
            Some(d),
            config.dropout,
            &mut r,
        );
        let opts = |conv: bool| MesOptions {
            heads: config.heads,
            headdim: config.headdim,
            d_state: config.d_state,
            d_model: d,
            d_conv: conv.then_some(config.d_conv),
            gated: conv,
            dt_min: config.dt_min,
            dt_max: config.dt_max,
            dropout: config.dropout,
        };
        let blocks = (0..config.depth)
            .map(|i| MesLayer::new(&mut store, &format!("mamba{i}"), opts(true), &mut r))
            .collect();
        let enrich = Grn::new(&mut store, "enrich", d, d, d, Some(d), config.dropout, &mut r);
        let light = MesLayer::new(&mut store, "light", opts(false), &mut r);
        let pos_grn = Grn::new(&mut store, "pos_grn", d, d, d, None, config.dropout, &mut r);
        let head = Linear::new(&mut store, "head", d, config.quantiles.len(), true, &mut r);
        Ok(Self {
            config,
            normalizer,
            store,
            static_vsn,
            enc_vsn,
            dec_vsn,
            blocks,
            enrich,
            light,
            pos_grn,
            head,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Normalizes a window. Fails on mismatched block lengths.
    pub fn encode(&self, w: &WindowSample) -> Result<EncodedSample> {
        if w.enc_len != self.config.enc_len || w.horizon != self.config.horizon {
            return Err(CoreError::Shape(format!(
                "window is L={} H={}, model expects L={} H={}",
                w.enc_len, w.horizon, self.config.enc_len, self.config.horizon
            )));
        }
        if w.encoder.len() != w.enc_len * ENC_VARS.len() || w.decoder.len() != w.horizon * DEC_VARS.len() {
            return Err(CoreError::Shape("window covariate blocks have the wrong size".into()));
        }
        let enc = self.normalizer.features.normalize_encoder(w);
        let dec = self.normalizer.features.normalize_decoder(w);
        if enc.iter().chain(&dec).any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite(format!(
                "covariates of {} at {}",
                w.participant_id, w.anchor_time
            )));
        }
        let target = w
            .target
            .iter()
            .map(|&y| cgm_data::window::normalize_target(y, &w.statics))
            .collect();
        Ok(EncodedSample {
            enc,
            dec,
            statics: self.normalizer.static_inputs(&w.statics, w.enc_len)?,
            target,
        })
    }

    /// Records the full network on `s`.
    pub fn forward_tape(&self, s: &mut Session<T>, batch: &Batch) -> Result<ForwardVars> {
        let b = batch.size;
        let (l, h) = (self.config.enc_len, self.config.horizon);
        let t = l + h;
        let (ve, vd) = (ENC_VARS.len(), DEC_VARS.len());
        if batch.enc.len() != b * l * ve || batch.dec.len() != b * h * vd {
            return Err(CoreError::Shape("batch blocks do not match the configuration".into()));
        }
        let enc = s.constant(Tensor::from_f64(&[b * l, ve], &batch.enc)?);
        let dec = s.constant(Tensor::from_f64(&[b * h, vd], &batch.dec)?);
        let st = self.static_vsn.forward(s, &batch.statics)?;
        let (r_enc, a_enc) = self
            .enc_vsn
            .forward(s, enc, Some(Context::Repeat { c: st.c, repeat: l }))?;
        let (r_dec, a_dec) = self
            .dec_vsn
            .forward(s, dec, Some(Context::Repeat { c: st.c, repeat: h }))?;
        let both = s.tape.concat_rows(&[r_enc, r_dec])?;
        let order: Vec<usize> = (0..b)
            .flat_map(|i| (0..l).map(move |k| i * l + k).chain((0..h).map(move |k| b * l + i * h + k)))
            .collect();
        let mut x = s.tape.gather_rows(both, &order)?;
        let mut traces = Vec::with_capacity(self.blocks.len() + 1);
        for blk in &self.blocks {
            let (y, tr) = blk.forward(s, x, b, t)?;
            x = y;
            traces.push(tr);
        }
        x = self
            .enrich
            .forward(s, x, Some(Context::Repeat { c: st.c, repeat: t }))?;
        let (y, tr) = self.light.forward(s, x, b, t)?;
        traces.push(tr);
        let x = self.pos_grn.forward(s, y, None)?;
        let rows: Vec<usize> = (0..b).flat_map(|i| (0..h).map(move |k| i * t + l + k)).collect();
        let xd = s.tape.gather_rows(x, &rows)?;
        let pred = self.head.forward(s, xd)?;
        Ok(ForwardVars {
            pred,
            static_weights: st.weights,
            encoder_weights: a_enc,
            decoder_weights: a_dec,
            traces,
        })
    }

    /// Pinball loss of a batch on a fresh tape, returning `(loss, session)`.
    pub fn loss_session(&self, batch: &Batch, training: bool, seed: u64) -> Result<(Session<'_, T>, Var)> {
        let mut s = Session::new(&self.store, training, seed);
        let fv = self.forward_tape(&mut s, batch)?;
        let y = s.constant(Tensor::from_f64(&[batch.target.len()], &batch.target)?);
        let loss = s.tape.pinball(fv.pred, y, &self.config.quantiles)?;
        Ok((s, loss))
    }

    fn results_from(&self, samples: &[&WindowSample], pred: &Tensor<T>) -> Vec<ForecastResult> {
        let q = self.config.quantiles.len();
        let h = self.config.horizon;
        samples
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let raw: Vec<f64> = pred.data()[i * h * q..(i + 1) * h * q]
                    .iter()
                    .map(|v| cgm_data::window::denormalize(v.f64(), &w.statics))
                    .collect();
                let mut values = raw.clone();
                rearrange(&mut values, q);
                ForecastResult {
                    participant_id: w.participant_id.clone(),
                    anchor_time: w.anchor_time,
                    quantiles: self.config.quantiles.clone(),
                    values,
                    raw,
                }
            })
            .collect()
    }

    /// Deterministic inference in batches of the configured size.
    pub fn predict(&self, samples: &[WindowSample]) -> Result<Vec<ForecastResult>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(self.config.batch.max(1)) {
            let enc = chunk.iter().map(|w| self.encode(w)).collect::<Result<Vec<_>>>()?;
            let batch = Batch::from_encoded(&enc.iter().collect::<Vec<_>>());
            let mut s = Session::new(&self.store, false, 0);
            let fv = self.forward_tape(&mut s, &batch)?;
            let refs: Vec<&WindowSample> = chunk.iter().collect();
            out.extend(self.results_from(&refs, s.tape.value(fv.pred)));
        }
        Ok(out)
    }

    pub fn predict_one(&self, sample: &WindowSample) -> Result<ForecastResult> {
        Ok(self.predict(std::slice::from_ref(sample))?.remove(0))
    }

    /// Forecast plus VSN weights and per-layer scan traces.
    pub fn explain(&self, sample: &WindowSample) -> Result<(ForecastResult, Interpretation)> {
        let enc = self.encode(sample)?;
        let batch = Batch::from_encoded(&[&enc]);
        let mut s = Session::new(&self.store, false, 0);
        let fv = self.forward_tape(&mut s, &batch)?;
        let result = self.results_from(&[sample], s.tape.value(fv.pred)).remove(0);
        let tape = &s.tape;
        let mut layers = Vec::with_capacity(fv.traces.len());
        let all: Vec<&MesLayer> = self.blocks.iter().chain(std::iter::once(&self.light)).collect();
        for (layer, tr) in all.iter().zip(&fv.traces) {
            let (mut theta, mut b, mut dt) = (Vec::new(), Vec::new(), Vec::new());
            for h in 0..layer.heads {
                let (th, bh) = layer.head_params(&self.store, h);
                theta.push(th);
                b.push(bh);
                dt.push(tape.value(tr.dt[h]).to_f64_vec());
            }
            layers.push(LayerTrace {
                len: self.config.enc_len + self.config.horizon,
                p: layer.headdim,
                n: layer.d_state,
                theta,
                b,
                dt,
                c_sh: self.store.get(layer.c_sh).to_f64_vec(),
                v: tape.value(tr.v).to_f64_vec(),
            });
        }
        let interp = Interpretation {
            static_weights: tape.value(fv.static_weights).to_f64_vec(),
            encoder_weights: tape.value(fv.encoder_weights).to_f64_vec(),
            decoder_weights: tape.value(fv.decoder_weights).to_f64_vec(),
            layers,
        };
        Ok((result, interp))
    }
}
