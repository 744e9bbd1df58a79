//! Dilated convolution front end followed by a bidirectional LSTM stack,
//! emitting one meal logit per step of a fixed-length glucose window.

use cgm_numeric::{rng, Archive, ParamId, ParamStore, Session, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MealError, Result};
use crate::vote::WindowProbs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub window: usize,
    /// Stride of the inference windows.
    pub stride: usize,
    /// Stride of the training windows.
    pub train_stride: usize,
    pub kernels: Vec<usize>,
    pub dilations: Vec<usize>,
    pub channels: usize,
    pub hidden: usize,
    pub layers: usize,
    pub bidirectional: bool,
    pub dropout: f64,
    /// Weight on positive labels in the loss.
    pub alpha: f64,
    pub theta: f64,
    pub rho: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Label plateau half-width and ramp width, in steps.
    pub plateau: usize,
    pub ramp: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 72,
            stride: 1,
            train_stride: 1,
            kernels: vec![15, 3, 3],
            dilations: vec![1, 2, 4],
            channels: 16,
            hidden: 64,
            layers: 2,
            bidirectional: true,
            dropout: 0.4,
            alpha: 5.0,
            theta: 0.36,
            rho: 0.77,
            lr: 1e-4,
            batch: 16,
            epochs: 10,
            plateau: 2,
            ramp: 2,
            seed: 11,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MealError::Config(m.to_string()));
        if self.window == 0 || self.stride == 0 || self.train_stride == 0 {
            return bad("window and strides must be positive");
        }
        if self.kernels.is_empty() || self.kernels.len() != self.dilations.len() {
            return bad("kernels and dilations must be non-empty and of equal length");
        }
        if self.kernels.iter().any(|k| k % 2 == 0) || self.dilations.contains(&0) {
            return bad("kernel widths must be odd and dilations positive");
        }
        if self.channels == 0 || self.hidden == 0 || self.layers == 0 {
            return bad("channels, hidden and layers must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.theta > 0.0 && self.theta < 1.0 && self.rho > 0.0 && self.rho < 1.0) {
            return bad("theta and rho must lie in (0, 1)");
        }
        if !(self.alpha > 0.0 && self.lr > 0.0) || self.batch == 0 {
            return bad("alpha, lr and batch must be positive");
        }
        Ok(())
    }

    /// Steps of context one output sees through the convolutions, per side.
    pub fn conv_reach(&self) -> usize {
        self.kernels
            .iter()
            .zip(&self.dilations)
            .map(|(k, d)| (k / 2) * d)
            .sum()
    }
}

#[derive(Debug, Clone)]
struct Conv {
    w: ParamId,
    b: ParamId,
    dilation: usize,
}

/// One direction of one recurrent layer: `x W_x + h W_h + b`, gate order i, f, g, o.
#[derive(Debug, Clone)]
struct LstmDir {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

pub struct Detector {
    pub config: DetectorConfig,
    pub store: ParamStore<f32>,
    convs: Vec<Conv>,
    /// `layers` entries, each with one or two directions.
    lstm: Vec<Vec<LstmDir>>,
    out_w: ParamId,
    out_b: ParamId,
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, r: &mut R) -> Tensor<f32> {
    Tensor::uniform(shape, bound, r)
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(config.seed);
        let mut store = ParamStore::new();
        let mut convs = Vec::new();
        let mut cin = 1;
        for (i, (&k, &d)) in config.kernels.iter().zip(&config.dilations).enumerate() {
            let bound = (1.0 / (cin * k) as f64).sqrt();
            let w = store.add(format!("conv{i}.w"), uniform(&[config.channels, cin, k], bound, &mut r));
            let b = store.add(format!("conv{i}.b"), Tensor::zeros(&[config.channels]));
            convs.push(Conv { w, b, dilation: d });
            cin = config.channels;
        }
        let h = config.hidden;
        let dirs = if config.bidirectional { 2 } else { 1 };
        let bound = (1.0 / h as f64).sqrt();
        let mut lstm = Vec::new();
        let mut inp = config.channels;
        for l in 0..config.layers {
            let mut layer = Vec::new();
            for d in 0..dirs {
                let name = format!("lstm{l}.{}", if d == 0 { "fwd" } else { "bwd" });
                let wx = store.add(format!("{name}.wx"), uniform(&[inp, 4 * h], bound, &mut r));
                let wh = store.add(format!("{name}.wh"), uniform(&[h, 4 * h], bound, &mut r));
                let mut bias = Tensor::zeros(&[4 * h]);
                for j in h..2 * h {
                    bias.data_mut()[j] = 1.0;
                }
                let b = store.add(format!("{name}.b"), bias);
                layer.push(LstmDir { wx, wh, b });
            }
            lstm.push(layer);
            inp = dirs * h;
        }
        let out_w = store.add("out.w", uniform(&[inp, 1], (1.0 / inp as f64).sqrt(), &mut r));
        let out_b = store.add("out.b", Tensor::zeros(&[1]));
        Ok(Self {
            config,
            store,
            convs,
            lstm,
            out_w,
            out_b,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    fn run_dir(&self, s: &mut Session<f32>, x: Var, dir: &LstmDir, reverse: bool) -> Result<Vec<Var>> {
        let shape = s.tape.shape(x).to_vec();
        let (bs, tt, inp) = (shape[0], shape[1], shape[2]);
        let h = self.config.hidden;
        let flat = s.tape.reshape(x, &[bs * tt, inp])?;
        let (wx, wh, b) = (s.p(dir.wx), s.p(dir.wh), s.p(dir.b));
        let xp = s.tape.matmul(flat, wx)?;
        let xp = s.tape.add(xp, b)?;
        let xp = s.tape.reshape(xp, &[bs, tt, 4 * h])?;
        let mut out = vec![None; tt];
        let mut state: Option<(Var, Var)> = None;
        let steps: Vec<usize> = if reverse { (0..tt).rev().collect() } else { (0..tt).collect() };
        for t in steps {
            let mut g = s.tape.time_slice(xp, t)?;
            if let Some((hp, _)) = state {
                let rec = s.tape.matmul(hp, wh)?;
                g = s.tape.add(g, rec)?;
            }
            let i = s.tape.slice_cols(g, 0, h)?;
            let i = s.tape.sigmoid(i);
            let f = s.tape.slice_cols(g, h, 2 * h)?;
            let f = s.tape.sigmoid(f);
            let gg = s.tape.slice_cols(g, 2 * h, 3 * h)?;
            let gg = s.tape.tanh(gg);
            let o = s.tape.slice_cols(g, 3 * h, 4 * h)?;
            let o = s.tape.sigmoid(o);
            let ig = s.tape.mul(i, gg)?;
            let c = match state {
                Some((_, cp)) => {
                    let fc = s.tape.mul(f, cp)?;
                    s.tape.add(fc, ig)?
                }
                None => ig,
            };
            let tc = s.tape.tanh(c);
            let hn = s.tape.mul(o, tc)?;
            out[t] = Some(hn);
            state = Some((hn, c));
        }
        Ok(out.into_iter().map(|v| v.expect("every step visited")).collect())
    }

    /// Logits `[B, window]` for normalized glucose windows `x [B, window]`.
    pub fn forward_tape(&self, s: &mut Session<f32>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.config.window {
            return Err(MealError::Length {
                what: "detector window",
                expected: self.config.window,
                got: shape.get(1).copied().unwrap_or(0),
            });
        }
        let (bs, tt) = (shape[0], shape[1]);
        let mut hcur = s.tape.reshape(x, &[bs, tt, 1])?;
        for c in &self.convs {
            let (w, b) = (s.p(c.w), s.p(c.b));
            hcur = s.tape.conv1d(hcur, w, b, c.dilation)?;
            hcur = s.tape.relu(hcur);
        }
        for layer in &self.lstm {
            hcur = s.dropout(hcur, self.config.dropout);
            let fwd = self.run_dir(s, hcur, &layer[0], false)?;
            let steps = if layer.len() == 2 {
                let bwd = self.run_dir(s, hcur, &layer[1], true)?;
                fwd.into_iter()
                    .zip(bwd)
                    .map(|(a, b)| s.tape.concat_cols(&[a, b]))
                    .collect::<std::result::Result<Vec<_>, _>>()?
            } else {
                fwd
            };
            hcur = s.tape.stack_time(&steps)?;
        }
        hcur = s.dropout(hcur, self.config.dropout);
        let width = s.tape.shape(hcur)[2];
        let flat = s.tape.reshape(hcur, &[bs * tt, width])?;
        let (w, b) = (s.p(self.out_w), s.p(self.out_b));
        let y = s.tape.matmul(flat, w)?;
        let y = s.tape.add(y, b)?;
        Ok(s.tape.reshape(y, &[bs, tt])?)
    }

    /// Per-step meal probabilities for a batch of windows, evaluation mode.
    pub fn predict_batch(&self, windows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let l = self.config.window;
        let mut data = Vec::with_capacity(windows.len() * l);
        for w in windows {
            if w.len() != l {
                return Err(MealError::Length {
                    what: "detector window",
                    expected: l,
                    got: w.len(),
                });
            }
            data.extend_from_slice(w);
        }
        let mut s = Session::new(&self.store, false, 0);
        let x = s.constant(Tensor::from_f64(&[windows.len(), l], &data)?);
        let y = self.forward_tape(&mut s, x)?;
        let logits = s.tape.value(y).to_f64_vec();
        Ok(logits
            .chunks(l)
            .map(|c| c.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect())
            .collect())
    }

    /// Scores every window of `config.stride` over a normalized series.
    pub fn score_series(&self, glucose: &[f64]) -> Result<Vec<WindowProbs>> {
        let l = self.config.window;
        if glucose.len() < l {
            return Err(MealError::Length {
                what: "series",
                expected: l,
                got: glucose.len(),
            });
        }
        let starts: Vec<usize> = (0..=glucose.len() - l).step_by(self.config.stride).collect();
        let mut out = Vec::with_capacity(starts.len());
        for chunk in starts.chunks(64) {
            let wins: Vec<&[f64]> = chunk.iter().map(|&st| &glucose[st..st + l]).collect();
            for (st, probs) in chunk.iter().zip(self.predict_batch(&wins)?) {
                out.push(WindowProbs { start: *st, probs });
            }
        }
        Ok(out)
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::new();
        a.set_meta("kind", "cgm-meal-detector");
        a.set_meta("detector_config", serde_json::to_string(&self.config)?);
        self.store.export(&mut a);
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.meta("kind") != Some("cgm-meal-detector") {
            return Err(MealError::Checkpoint("archive is not a meal detector".into()));
        }
        let cfg = a
            .meta("detector_config")
            .ok_or_else(|| MealError::Checkpoint("missing detector_config".into()))?;
        let mut d = Detector::new(serde_json::from_str(cfg)?)?;
        d.store.import(a)?;
        Ok(d)
    }
}

/// Per-participant standardization of a glucose series.
pub fn normalize_series(g: &[f64]) -> Vec<f64> {
    let n = g.len().max(1) as f64;
    let m = g.iter().sum::<f64>() / n;
    let sd = (g.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt().max(1e-6);
    g.iter().map(|x| (x - m) / sd).collect()
}
