//! Do-interventions on planned future covariates.
//!
//! A plan fixes one decoder channel over the first `h` forecast steps. The
//! single-pass forecast overwrites the decoder block and reruns the model;
//! the recursive rollout re-forecasts one step at a time, feeding each median
//! back into the glucose history.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Timelike, Utc};
use cgm_data::{Channel, DiabetesStatus, EngineeredFrame, StaticProfile, WindowSample};
use cgm_data::features::dec_index;
use cgm_data::window::window_at;
use cgm_numeric::Real;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{ForecastResult, Forecaster};

/// Steps per day on the 5-minute grid.
const DAY: usize = 288;

/// Allowed anchor hours as a half-open clock interval `[start, end)`, wrapping
/// past midnight when `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourMask {
    pub start: u32,
    pub end: u32,
}

impl HourMask {
    pub const ALL: HourMask = HourMask { start: 0, end: 24 };

    pub fn new(start: u32, end: u32) -> Result<Self> {
        if start > 24 || end > 24 || start == end && start != 0 {
            return Err(CoreError::Plan {
                field: "hours".into(),
                reason: format!("invalid hour range {start}-{end}"),
            });
        }
        Ok(Self { start, end })
    }

    /// Parses `"9-21"`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || CoreError::Plan {
            field: "hours".into(),
            reason: format!("expected START-END, got {s:?}"),
        };
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        let a = a.trim().parse().map_err(|_| bad())?;
        let b = b.trim().parse().map_err(|_| bad())?;
        Self::new(a, b)
    }

    /// Default mask for a channel: daytime for heart rate, night for respiration.
    pub fn default_for(channel: Channel) -> Self {
        match channel {
            Channel::Hr => HourMask { start: 9, end: 21 },
            Channel::Rr => HourMask { start: 21, end: 6 },
            _ => HourMask::ALL,
        }
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        let m = t.hour() * 60 + t.minute();
        let (s, e) = (self.start * 60, self.end * 60);
        if s < e {
            (s..e).contains(&m)
        } else if s > e {
            m >= s || m < e
        } else {
            true
        }
    }
}

/// How the planned values relate to the observed future.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Every step set to `mean + k * sd`.
    Absolute,
    /// Observed value plus `k * sd`.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub channel: Channel,
    pub mode: PlanMode,
    pub k_sd: f64,
    /// Within-person mean and sd of the channel over the history.
    pub mean: f64,
    pub sd: f64,
    /// Planned values for forecast steps `1..=values.len()`.
    pub values: Vec<f64>,
    pub hours: HourMask,
}

fn decoder_name(channel: Channel) -> Result<&'static str> {
    let name = channel.feature();
    match dec_index(name) {
        Some(_) => Ok(name),
        None => Err(CoreError::Plan {
            field: "channel".into(),
            reason: format!("{name} is not a decoder covariate"),
        }),
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

impl InterventionPlan {
    /// Plan that reproduces the observed future exactly.
    pub fn observed(sample: &WindowSample, channel: Channel) -> Result<Self> {
        let name = decoder_name(channel)?;
        let values = sample.decoder_column(name).expect("decoder channel");
        let (mean, sd) = mean_sd(&values);
        Ok(Self {
            channel,
            mode: PlanMode::Absolute,
            k_sd: 0.0,
            mean,
            sd,
            values,
            hours: HourMask::ALL,
        })
    }

    /// Plan with explicit values, clamped to the channel's physiological range.
    pub fn absolute(channel: Channel, values: Vec<f64>, hours: HourMask) -> Result<Self> {
        decoder_name(channel)?;
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Plan {
                field: "values".into(),
                reason: "need at least one finite value".into(),
            });
        }
        let (lo, hi) = channel.clamp_range();
        let values: Vec<f64> = values.into_iter().map(|v| v.clamp(lo, hi)).collect();
        let (mean, sd) = mean_sd(&values);
        Ok(Self {
            channel,
            mode: PlanMode::Absolute,
            k_sd: 0.0,
            mean,
            sd,
            values,
            hours,
        })
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    /// Errors when the anchor falls outside the plan's hour mask.
    pub fn check_anchor(&self, anchor_time: DateTime<Utc>) -> Result<()> {
        if self.hours.contains(anchor_time) {
            Ok(())
        } else {
            Err(CoreError::Gate(format!(
                "anchor {} is outside the allowed hours {}-{} for {}",
                anchor_time.format("%Y-%m-%d %H:%M"),
                self.hours.start,
                self.hours.end,
                self.channel.feature()
            )))
        }
    }

    /// Copy of `sample` with the plan written into its decoder block.
    pub fn apply(&self, sample: &WindowSample) -> Result<WindowSample> {
        if self.horizon() > sample.horizon {
            return Err(CoreError::Plan {
                field: "values".into(),
                reason: format!("{} steps exceed horizon {}", self.horizon(), sample.horizon),
            });
        }
        let name = decoder_name(self.channel)?;
        let mut col = sample.decoder_column(name).expect("decoder channel");
        col[..self.values.len()].copy_from_slice(&self.values);
        let mut out = sample.clone();
        out.set_decoder_column(name, &col)?;
        Ok(out)
    }
}

/// Builds a `mean + k * sd` plan from at least one day of channel history.
///
/// `history` is the raw channel up to and including the anchor; in additive
/// mode the planned value is the observed future plus `k * sd`.
pub fn build_plan(
    history: &[f64],
    sample: &WindowSample,
    channel: Channel,
    k_sd: f64,
    hours: HourMask,
    mode: PlanMode,
    h: usize,
) -> Result<InterventionPlan> {
    let name = decoder_name(channel)?;
    if history.len() < DAY {
        return Err(CoreError::Plan {
            field: "history".into(),
            reason: format!("{} steps of history, need {DAY}", history.len()),
        });
    }
    if h == 0 || h > sample.horizon {
        return Err(CoreError::Plan {
            field: "h".into(),
            reason: format!("h = {h} outside 1..={}", sample.horizon),
        });
    }
    if !k_sd.is_finite() {
        return Err(CoreError::Plan {
            field: "k_sd".into(),
            reason: "not finite".into(),
        });
    }
    let (mean, sd) = mean_sd(history);
    let plan_base = InterventionPlan {
        channel,
        mode,
        k_sd,
        mean,
        sd,
        values: Vec::new(),
        hours,
    };
    plan_base.check_anchor(sample.anchor_time)?;
    let (lo, hi) = channel.clamp_range();
    let observed = sample.decoder_column(name).expect("decoder channel");
    let values = (0..h)
        .map(|s| {
            let v = match mode {
                PlanMode::Absolute => mean + k_sd * sd,
                PlanMode::Additive => observed[s] + k_sd * sd,
            };
            v.clamp(lo, hi)
        })
        .collect();
    Ok(InterventionPlan { values, ..plan_base })
}

/// Per-anchor effect of a plan on the median forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub participant_id: String,
    pub anchor_time: DateTime<Utc>,
    pub channel: Channel,
    pub k_sd: f64,
    /// Counterfactual minus factual median, mg/dL, over the plan's steps.
    pub delta: Vec<f64>,
    /// Entry of `delta` with the largest magnitude.
    pub max_effect: f64,
    pub sign: f64,
}

impl EffectSummary {
    pub fn new(factual: &ForecastResult, counterfactual: &ForecastResult, plan: &InterventionPlan) -> Self {
        let f = factual.median();
        let c = counterfactual.median();
        let delta: Vec<f64> = (0..plan.horizon()).map(|s| c[s] - f[s]).collect();
        let max_effect = delta
            .iter()
            .copied()
            .fold(0.0f64, |acc, d| if d.abs() > acc.abs() { d } else { acc });
        Self {
            participant_id: factual.participant_id.clone(),
            anchor_time: factual.anchor_time,
            channel: plan.channel,
            k_sd: plan.k_sd,
            delta,
            max_effect,
            sign: if max_effect == 0.0 { 0.0 } else { max_effect.signum() },
        }
    }

    pub fn mean_delta(&self) -> f64 {
        self.delta.iter().sum::<f64>() / self.delta.len().max(1) as f64
    }
}

/// Factual and planned single-pass forecasts with their median difference.
pub fn counterfactual_forecast<T: Real>(
    model: &Forecaster<T>,
    sample: &WindowSample,
    plan: &InterventionPlan,
) -> Result<(ForecastResult, ForecastResult, EffectSummary)> {
    plan.check_anchor(sample.anchor_time)?;
    let planned = plan.apply(sample)?;
    let factual = model.predict_one(sample)?;
    let counterfactual = model.predict_one(&planned)?;
    let summary = EffectSummary::new(&factual, &counterfactual, plan);
    Ok((factual, counterfactual, summary))
}

/// Recursive one-step simulation of the median trajectory under `plan`.
///
/// At step `s` the window ends at `anchor + s`; glucose after the anchor is
/// the model's own earlier medians, with every glucose-derived channel
/// recomputed, and the planned channel holds the plan in both the history
/// and the future.
pub fn g_formula_rollout<T: Real>(
    model: &Forecaster<T>,
    frame: &EngineeredFrame,
    profile: &StaticProfile,
    anchor: usize,
    plan: &InterventionPlan,
) -> Result<Vec<f64>> {
    let (l, hz) = (model.config.enc_len, model.config.horizon);
    let h = plan.horizon();
    if h == 0 || h > hz {
        return Err(CoreError::Plan {
            field: "values".into(),
            reason: format!("rollout of {h} steps exceeds the model horizon {hz}"),
        });
    }
    if anchor + 1 < l || anchor >= frame.len() {
        return Err(CoreError::Plan {
            field: "anchor".into(),
            reason: format!("anchor {anchor} has no full encoder window"),
        });
    }
    plan.check_anchor(frame.timestamp(anchor))?;
    let name = decoder_name(plan.channel)?;
    let col = cgm_data::features::enc_index(name).expect("decoder channels are encoder channels");
    // Enough steps for the last window's decoder; later rows only pad the
    // decoder beyond the first step, which the causal model never reads.
    let need = anchor + h + hz;
    let mut work = frame.truncated(need);
    for c in &mut work.columns {
        let last = *c.last().expect("non-empty frame");
        c.resize(need, last);
    }
    for (s, &v) in plan.values.iter().enumerate() {
        work.columns[col][anchor + 1 + s] = v;
    }
    let mut glucose = work.columns[0].clone();
    let mut path = Vec::with_capacity(h);
    for s in 0..h {
        let w = window_at(&work, profile, anchor + s, l, hz).ok_or_else(|| {
            CoreError::Plan {
                field: "anchor".into(),
                reason: "rollout window out of range".into(),
            }
        })?;
        let next = model.predict_one(&w)?.median()[0];
        path.push(next);
        glucose[anchor + s + 1] = next;
        work.set_glucose(&glucose);
    }
    Ok(path)
}

/// Stratum-level effect with a normal-approximation 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEffect {
    pub status: DiabetesStatus,
    /// Participants contributing.
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Which per-anchor number enters the stratum average.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectStat {
    MeanDelta,
    MaxEffect,
}

/// Averages effects within participants, then across participants of each
/// diabetes stratum. Strata with fewer than two participants are omitted.
pub fn cohort_effects(
    effects: &[(EffectSummary, DiabetesStatus)],
    stat: EffectStat,
) -> Vec<StratumEffect> {
    let mut per: BTreeMap<(usize, &str), (DiabetesStatus, f64, usize)> = BTreeMap::new();
    for (e, st) in effects {
        let v = match stat {
            EffectStat::MeanDelta => e.mean_delta(),
            EffectStat::MaxEffect => e.max_effect,
        };
        let slot = per
            .entry((st.index(), e.participant_id.as_str()))
            .or_insert((*st, 0.0, 0));
        slot.1 += v;
        slot.2 += 1;
    }
    let mut out = Vec::new();
    for status in DiabetesStatus::ALL {
        let xs: Vec<f64> = per
            .values()
            .filter(|(s, _, _)| *s == status)
            .map(|(_, sum, n)| sum / *n as f64)
            .collect();
        if xs.len() < 2 {
            if effects.iter().any(|(_, s)| *s == status) {
                warn!("stratum {} has {} participant(s); omitted", status.as_str(), xs.len());
            }
            continue;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let half = 1.96 * (var / n).sqrt();
        out.push(StratumEffect {
            status,
            n: xs.len(),
            mean,
            ci_low: mean - half,
            ci_high: mean + half,
        });
    }
    out
}

/// One row per forecast step: participant, anchor, channel, ksd, step, delta_mgdl.
pub fn write_effects_csv(path: impl AsRef<Path>, effects: &[EffectSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["participant", "anchor", "channel", "ksd", "step", "delta_mgdl"])?;
    for e in effects {
        let anchor = cgm_data::cohort::format_time(e.anchor_time);
        for (s, d) in e.delta.iter().enumerate() {
            w.write_record([
                e.participant_id.clone(),
                anchor.clone(),
                e.channel.feature().to_string(),
                e.k_sd.to_string(),
                (s + 1).to_string(),
                d.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_strata_csv(path: impl AsRef<Path>, strata: &[StratumEffect]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "status,n,mean,ci_low,ci_high")?;
    for s in strata {
        writeln!(f, "{},{},{},{},{}", s.status.as_str(), s.n, s.mean, s.ci_low, s.ci_high)?;
    }
    Ok(())
}
