//! Window extraction, chronological splits and input normalization.

use chrono::{DateTime, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::cohort::{step_time, Cohort, DiabetesStatus, STEPS_PER_HOUR};
use crate::error::{DataError, Result};
use crate::features::{
    dec_index, engineer_features, enc_index, scaling, EngineeredFrame, Scaling, DEC_VARS, ENC_VARS,
};
use crate::impute::{preprocess, GapReport};

/// Statics attached to every window of a participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticProfile {
    pub participant_id: String,
    pub age: f64,
    pub status: DiabetesStatus,
    pub site: String,
    /// Training-period glucose mean (mg/dL).
    pub glucose_center: f64,
    /// Training-period glucose sd (mg/dL), floored at 1.
    pub glucose_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub participant_id: String,
    /// Grid index of the last encoder step.
    pub anchor: usize,
    pub anchor_time: DateTime<Utc>,
    pub enc_len: usize,
    pub horizon: usize,
    /// Raw historical covariates, row-major `[enc_len, ENC_VARS.len()]`.
    pub encoder: Vec<f64>,
    /// Raw known-future covariates, row-major `[horizon, DEC_VARS.len()]`.
    pub decoder: Vec<f64>,
    /// Glucose at anchor+1 ..= anchor+horizon (mg/dL).
    pub target: Vec<f64>,
    pub statics: StaticProfile,
}

impl WindowSample {
    pub fn encoder_value(&self, step: usize, var: usize) -> f64 {
        self.encoder[step * ENC_VARS.len() + var]
    }

    pub fn decoder_value(&self, step: usize, var: usize) -> f64 {
        self.decoder[step * DEC_VARS.len() + var]
    }

    /// Column of the decoder block for a named variable.
    pub fn decoder_column(&self, name: &str) -> Option<Vec<f64>> {
        let v = dec_index(name)?;
        Some((0..self.horizon).map(|s| self.decoder_value(s, v)).collect())
    }

    pub fn encoder_column(&self, name: &str) -> Option<Vec<f64>> {
        let v = enc_index(name)?;
        Some((0..self.enc_len).map(|s| self.encoder_value(s, v)).collect())
    }

    /// Overwrites a decoder variable over all horizon steps.
    pub fn set_decoder_column(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let v = dec_index(name)
            .ok_or_else(|| DataError::Schema(format!("{name} is not a decoder variable")))?;
        if values.len() != self.horizon {
            return Err(DataError::Schema(format!(
                "expected {} planned values, got {}",
                self.horizon,
                values.len()
            )));
        }
        for (s, &x) in values.iter().enumerate() {
            self.decoder[s * DEC_VARS.len() + v] = x;
        }
        Ok(())
    }

    pub fn last_glucose(&self) -> f64 {
        self.encoder_value(self.enc_len - 1, 0)
    }

    pub fn target_time(&self, h: usize) -> DateTime<Utc> {
        step_time(self.anchor_time, h + 1)
    }

    /// First and last target grid indices.
    pub fn target_span(&self) -> (usize, usize) {
        (self.anchor + 1, self.anchor + self.horizon)
    }
}

/// Rejects decoder variable lists that would expose the target.
pub fn check_decoder_vars(names: &[&str]) -> Result<()> {
    for n in names {
        if crate::features::is_glucose_derived(n) {
            return Err(DataError::Leakage(format!(
                "decoder variable {n} is derived from glucose"
            )));
        }
    }
    Ok(())
}

pub fn window_count(len: usize, enc_len: usize, horizon: usize, stride: usize) -> usize {
    if stride == 0 || len < enc_len + horizon {
        0
    } else {
        (len - enc_len - horizon) / stride + 1
    }
}

/// Window whose encoder ends at `anchor`, if it fits inside the frame.
pub fn window_at(
    frame: &EngineeredFrame,
    statics: &StaticProfile,
    anchor: usize,
    enc_len: usize,
    horizon: usize,
) -> Option<WindowSample> {
    if enc_len == 0 || horizon == 0 || anchor + 1 < enc_len || anchor + horizon >= frame.len() {
        return None;
    }
    let lo = anchor + 1 - enc_len;
    let mut encoder = Vec::with_capacity(enc_len * ENC_VARS.len());
    for t in lo..=anchor {
        for col in &frame.columns {
            encoder.push(col[t]);
        }
    }
    let dec_cols: Vec<&[f64]> = DEC_VARS
        .iter()
        .map(|n| frame.column(n).expect("decoder vars are engineered"))
        .collect();
    let mut decoder = Vec::with_capacity(horizon * DEC_VARS.len());
    for t in anchor + 1..=anchor + horizon {
        for col in &dec_cols {
            decoder.push(col[t]);
        }
    }
    let target = frame.columns[0][anchor + 1..=anchor + horizon].to_vec();
    Some(WindowSample {
        participant_id: frame.participant_id.clone(),
        anchor,
        anchor_time: frame.timestamp(anchor),
        enc_len,
        horizon,
        encoder,
        decoder,
        target,
        statics: statics.clone(),
    })
}

/// Sliding windows from the start of the frame.
pub fn make_windows(
    frame: &EngineeredFrame,
    statics: &StaticProfile,
    enc_len: usize,
    horizon: usize,
    stride: usize,
) -> Vec<WindowSample> {
    let n = window_count(frame.len(), enc_len, horizon, stride);
    if n == 0 {
        warn!(
            "{}: {} steps cannot hold a window of {}+{}",
            frame.participant_id,
            frame.len(),
            enc_len,
            horizon
        );
    }
    (0..n)
        .filter_map(|k| window_at(frame, statics, k * stride + enc_len - 1, enc_len, horizon))
        .collect()
}

/// Preprocessed cohort ready for windowing.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub frames: Vec<EngineeredFrame>,
    pub profiles: Vec<StaticProfile>,
    pub gaps: Vec<GapReport>,
    /// Length of the held-out tail (validation + test) used when fitting statistics.
    pub holdout: usize,
}

impl Prepared {
    pub fn index_of(&self, participant_id: &str) -> Option<usize> {
        self.profiles
            .iter()
            .position(|p| p.participant_id == participant_id)
    }

    /// Number of leading steps of participant `i` that belong to training.
    pub fn train_len(&self, i: usize) -> usize {
        self.frames[i].len().saturating_sub(self.holdout)
    }
}

/// Imputes, engineers features and fits per-participant glucose statistics on
/// everything before the final `2 * horizon` steps.
pub fn prepare(cohort: &Cohort, horizon: usize) -> Result<Prepared> {
    if cohort.statics.len() != cohort.frames.len() {
        return Err(DataError::Schema(
            "statics and frames differ in length".to_string(),
        ));
    }
    let holdout = 2 * horizon;
    let mut out = Prepared {
        frames: Vec::new(),
        profiles: Vec::new(),
        gaps: Vec::new(),
        holdout,
    };
    for (info, raw) in cohort.statics.iter().zip(&cohort.frames) {
        if info.participant_id != raw.participant_id {
            return Err(DataError::Schema(format!(
                "statics row {} does not match frame {}",
                info.participant_id, raw.participant_id
            )));
        }
        let (aligned, report) = preprocess(raw)?;
        let frame = engineer_features(&aligned);
        let n_train = frame.len().saturating_sub(holdout).max(1).min(frame.len());
        let g = &frame.columns[0][..n_train];
        let center = g.iter().sum::<f64>() / g.len() as f64;
        let var = g.iter().map(|x| (x - center) * (x - center)).sum::<f64>() / g.len() as f64;
        out.profiles.push(StaticProfile {
            participant_id: info.participant_id.clone(),
            age: info.age,
            status: info.status,
            site: info.site.clone(),
            glucose_center: center,
            glucose_scale: var.sqrt().max(1.0),
        });
        out.frames.push(frame);
        out.gaps.push(report);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub dropped: Vec<String>,
}

/// Chronological per-participant split.
///
/// The final `horizon` steps are the test target, the `horizon` before them
/// the validation target. Training windows are cut from the remaining prefix,
/// so no training target reaches the validation period.
pub fn split(prepared: &Prepared, enc_len: usize, horizon: usize, stride: usize) -> Splits {
    let mut s = Splits::default();
    let min_len = enc_len + horizon + 4 * STEPS_PER_HOUR;
    for (frame, profile) in prepared.frames.iter().zip(&prepared.profiles) {
        let n = frame.len();
        if n < min_len || n < enc_len + 3 * horizon {
            warn!(
                "dropping {}: {} steps, need {}",
                frame.participant_id, n, min_len
            );
            s.dropped.push(frame.participant_id.clone());
            continue;
        }
        let test_anchor = n - horizon - 1;
        let val_anchor = n - 2 * horizon - 1;
        let val_start = val_anchor + 1;
        s.test
            .extend(window_at(frame, profile, test_anchor, enc_len, horizon));
        s.val
            .extend(window_at(frame, profile, val_anchor, enc_len, horizon));
        let prefix = frame.truncated(val_start);
        s.train.extend(
            make_windows(&prefix, profile, enc_len, horizon, stride)
                .into_iter()
                .filter(|w| w.target_span().1 < val_start),
        );
    }
    s
}

/// Cohort-level standardization of non-glucose covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl FeatureStats {
    /// Fits on the training prefix of every participant.
    pub fn fit(prepared: &Prepared) -> FeatureStats {
        let mut names = Vec::new();
        let mut mean = Vec::new();
        let mut sd = Vec::new();
        for (v, name) in ENC_VARS.iter().enumerate() {
            if scaling(name) != Scaling::Covariate {
                continue;
            }
            let mut n = 0.0;
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for (i, f) in prepared.frames.iter().enumerate() {
                for &x in &f.columns[v][..prepared.train_len(i)] {
                    n += 1.0;
                    s1 += x;
                    s2 += x * x;
                }
            }
            let m = if n > 0.0 { s1 / n } else { 0.0 };
            let var = if n > 0.0 { (s2 / n - m * m).max(0.0) } else { 0.0 };
            names.push(name.to_string());
            mean.push(m);
            sd.push(if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 });
        }
        FeatureStats { names, mean, sd }
    }

    fn lookup(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.mean[i], self.sd[i]))
    }

    /// Model-scale value of a raw variable.
    pub fn normalize(&self, name: &str, raw: f64, profile: &StaticProfile) -> f64 {
        match scaling(name) {
            Scaling::GlucoseLevel => (raw - profile.glucose_center) / profile.glucose_scale,
            Scaling::GlucoseSpread => raw / profile.glucose_scale,
            Scaling::Covariate => match self.lookup(name) {
                Some((m, s)) => (raw - m) / s,
                None => raw,
            },
        }
    }

    pub fn normalize_encoder(&self, w: &WindowSample) -> Vec<f64> {
        let v = ENC_VARS.len();
        w.encoder
            .iter()
            .enumerate()
            .map(|(i, &x)| self.normalize(ENC_VARS[i % v], x, &w.statics))
            .collect()
    }

    pub fn normalize_decoder(&self, w: &WindowSample) -> Vec<f64> {
        let v = DEC_VARS.len();
        w.decoder
            .iter()
            .enumerate()
            .map(|(i, &x)| self.normalize(DEC_VARS[i % v], x, &w.statics))
            .collect()
    }
}

/// Glucose-scale normalization of targets.
pub fn normalize_target(y: f64, profile: &StaticProfile) -> f64 {
    (y - profile.glucose_center) / profile.glucose_scale
}

pub fn denormalize(y: f64, profile: &StaticProfile) -> f64 {
    profile.glucose_center + profile.glucose_scale * y
}
