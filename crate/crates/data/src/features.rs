//! Engineered covariates on the aligned grid.
//!
//! Lags and rolling windows are trailing, so every channel at step `t`
//! depends only on raw values at steps `<= t`. Heads of lag channels are
//! back-filled with the first observation.

use std::f64::consts::PI;

use chrono::{DateTime, Utc};

use crate::cohort::{minute_of_day, step_time, Channel, TimeAlignedFrame};

pub const GLUCOSE_LAGS: [usize; 5] = [1, 2, 3, 6, 12];
/// Rolling window lengths in steps (1 h and 3 h).
pub const ROLLING_WINDOWS: [usize; 2] = [12, 36];

/// Number of leading [`ENC_VARS`] entries derived from glucose.
pub const GLUCOSE_FEATURES: usize = 11;

/// Historical (encoder) variables, in model order.
pub const ENC_VARS: [&str; 22] = [
    "glucose",
    "glucose_lag1",
    "glucose_lag2",
    "glucose_lag3",
    "glucose_lag6",
    "glucose_lag12",
    "glucose_diff1",
    "glucose_mean_1h",
    "glucose_mean_3h",
    "glucose_sd_1h",
    "glucose_sd_3h",
    "minute_of_day",
    "tod_sin",
    "tod_cos",
    "hr",
    "rr",
    "spo2",
    "steps",
    "stress",
    "calories",
    "sleep_stage",
    "meal_flag",
];

/// Known-future (decoder) variables. No glucose-derived channel may appear here.
pub const DEC_VARS: [&str; 11] = [
    "minute_of_day",
    "tod_sin",
    "tod_cos",
    "hr",
    "rr",
    "spo2",
    "steps",
    "stress",
    "calories",
    "sleep_stage",
    "meal_flag",
];

/// How a variable is normalized before entering the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// `(x - center) / scale` with the participant's glucose statistics.
    GlucoseLevel,
    /// `x / scale`; differences and spreads.
    GlucoseSpread,
    /// Standardized with cohort training statistics.
    Covariate,
}

pub fn scaling(name: &str) -> Scaling {
    if !name.starts_with("glucose") {
        Scaling::Covariate
    } else if name == "glucose_diff1" || name.starts_with("glucose_sd") {
        Scaling::GlucoseSpread
    } else {
        Scaling::GlucoseLevel
    }
}

pub fn is_glucose_derived(name: &str) -> bool {
    scaling(name) != Scaling::Covariate
}

/// Index of `name` among the decoder variables.
pub fn dec_index(name: &str) -> Option<usize> {
    DEC_VARS.iter().position(|v| *v == name)
}

pub fn enc_index(name: &str) -> Option<usize> {
    ENC_VARS.iter().position(|v| *v == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineeredFrame {
    pub participant_id: String,
    pub start: DateTime<Utc>,
    /// One column per entry of [`ENC_VARS`].
    pub columns: Vec<Vec<f64>>,
}

impl EngineeredFrame {
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        enc_index(name).map(|i| self.columns[i].as_slice())
    }

    pub fn timestamp(&self, i: usize) -> DateTime<Utc> {
        step_time(self.start, i)
    }

    /// Replaces the glucose series and recomputes every glucose-derived channel.
    pub fn set_glucose(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.len(), "glucose series length");
        for (i, c) in glucose_features(g).into_iter().enumerate() {
            self.columns[i] = c;
        }
    }

    /// Frame restricted to the first `n` steps.
    pub fn truncated(&self, n: usize) -> EngineeredFrame {
        EngineeredFrame {
            participant_id: self.participant_id.clone(),
            start: self.start,
            columns: self.columns.iter().map(|c| c[..n.min(c.len())].to_vec()).collect(),
        }
    }
}

/// `x[t - k]`, with the head filled by `x[0]`.
pub fn lag(x: &[f64], k: usize) -> Vec<f64> {
    (0..x.len()).map(|t| x[t.saturating_sub(k)]).collect()
}

/// First difference with a zero at the head.
pub fn diff1(x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| if t == 0 { 0.0 } else { x[t] - x[t - 1] })
        .collect()
}

/// Trailing mean over up to `w` samples.
pub fn rolling_mean(x: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    (0..x.len())
        .map(|t| {
            let s = &x[(t + 1).saturating_sub(w)..=t];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

/// Trailing population standard deviation over up to `w` samples.
pub fn rolling_sd(x: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    (0..x.len())
        .map(|t| {
            let s = &x[(t + 1).saturating_sub(w)..=t];
            let n = s.len() as f64;
            let m = s.iter().sum::<f64>() / n;
            (s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// `(minute / 1440, sin, cos)` of the 24 h phase.
pub fn time_encoding(minute: u32) -> (f64, f64, f64) {
    let phase = 2.0 * PI * minute as f64 / 1440.0;
    (minute as f64 / 1440.0, phase.sin(), phase.cos())
}

/// Glucose and its derived channels, in [`ENC_VARS`] order.
pub fn glucose_features(g: &[f64]) -> Vec<Vec<f64>> {
    let mut cols = Vec::with_capacity(GLUCOSE_FEATURES);
    cols.push(g.to_vec());
    for k in GLUCOSE_LAGS {
        cols.push(lag(g, k));
    }
    cols.push(diff1(g));
    for w in ROLLING_WINDOWS {
        cols.push(rolling_mean(g, w));
    }
    for w in ROLLING_WINDOWS {
        cols.push(rolling_sd(g, w));
    }
    cols
}

pub fn engineer_features(frame: &TimeAlignedFrame) -> EngineeredFrame {
    let n = frame.len();
    let g = frame.channel(Channel::Glucose);
    let mut cols = glucose_features(g);
    cols.reserve(ENC_VARS.len() - cols.len());
    let (mut mod_, mut sin, mut cos) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (m, s, c) = time_encoding(minute_of_day(frame.timestamp(i)));
        mod_.push(m);
        sin.push(s);
        cos.push(c);
    }
    cols.push(mod_);
    cols.push(sin);
    cols.push(cos);
    for name in &ENC_VARS[14..] {
        let c = Channel::from_feature(name).expect("wearable feature maps to a channel");
        cols.push(frame.channel(c).to_vec());
    }
    debug_assert_eq!(cols.len(), ENC_VARS.len());
    EngineeredFrame {
        participant_id: frame.participant_id.clone(),
        start: frame.start,
        columns: cols,
    }
}
