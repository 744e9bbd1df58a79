//! Read-only queries against a loaded model and cohort. The HTTP handlers and
//! the CLI subcommands both go through these, so any number the API returns
//! is reproducible from the command line.

use std::path::Path;

use cgm_core::attribution::{HeadSel, DEFAULT_EPS};
use cgm_core::checkpoint;
use cgm_core::counterfactual::{build_plan, counterfactual_forecast, HourMask, InterventionPlan, PlanMode};
use cgm_core::fusion::summarize_importance;
use cgm_core::{ForecastResult, Forecaster};
use cgm_data::cohort::{format_time, parse_time, step_time};
use cgm_data::features::dec_index;
use cgm_data::io::read_cohort;
use cgm_data::window::window_at;
use cgm_data::{prepare, Channel, Cohort, Prepared, WindowSample};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// A model and the cohort it is queried against. Never mutated after loading.
pub struct Snapshot {
    pub model: Forecaster<f32>,
    pub cohort: Cohort,
    pub prep: Prepared,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantView {
    pub participant_id: String,
    pub age: f64,
    pub status: String,
    pub site: String,
    pub start: String,
    pub end: String,
    pub steps: usize,
    /// Latest anchor with a full forecast window.
    pub last_anchor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryView {
    pub participant_id: String,
    pub times: Vec<String>,
    /// Channel name to values, in raw units after gap filling.
    pub channels: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastView {
    pub participant_id: String,
    pub anchor: String,
    pub quantiles: Vec<f64>,
    pub times: Vec<String>,
    /// One row per step, one entry per quantile, mg/dL.
    pub values: Vec<Vec<f64>>,
}

impl ForecastView {
    pub fn from_result(r: &ForecastResult) -> Self {
        let q = r.quantiles.len();
        Self {
            participant_id: r.participant_id.clone(),
            anchor: format_time(r.anchor_time),
            quantiles: r.quantiles.clone(),
            times: (0..r.horizon()).map(|h| format_time(step_time(r.anchor_time, h + 1))).collect(),
            values: r.values.chunks(q).map(<[f64]>::to_vec).collect(),
        }
    }
}

/// Requested intervention. Exactly one of `values`, `k_sd` and `observed` is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRequest {
    pub channel: String,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub k_sd: Option<f64>,
    #[serde(default)]
    pub observed: Option<bool>,
    /// `absolute` (default) or `additive`, for `k_sd` plans.
    #[serde(default)]
    pub mode: Option<String>,
    /// Allowed anchor hours as `START-END`; defaults to the channel's mask.
    #[serde(default)]
    pub hours: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualView {
    pub participant_id: String,
    pub anchor: String,
    pub channel: String,
    pub planned: Vec<f64>,
    pub factual: ForecastView,
    pub counterfactual: ForecastView,
    /// Counterfactual minus factual median over the planned steps.
    pub delta: Vec<f64>,
    pub max_effect: f64,
    pub sign: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionView {
    pub participant_id: String,
    pub anchor: String,
    pub layer: usize,
    /// Head index, or `aggregate`.
    pub head: String,
    pub tau: f64,
    /// Sequence position of row 0; positions past `enc_len - 1` are forecast steps.
    pub start: usize,
    pub enc_len: usize,
    /// Row `l` holds the weights of positions `0..=l`.
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub scope: String,
    pub variable: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceView {
    pub participant_id: String,
    pub anchor: String,
    /// Mean selection weight per variable; each scope sums to 1.
    pub weights: Vec<ImportanceEntry>,
}

pub fn parse_channel(name: &str) -> Result<Channel> {
    let ch = Channel::from_feature(name).ok_or_else(|| CliError::invalid("channel", format!("unknown channel {name:?}")))?;
    if dec_index(ch.feature()).is_none() {
        return Err(CliError::invalid("channel", format!("{name} is not a decoder covariate")));
    }
    Ok(ch)
}

pub fn parse_head(s: &str) -> Result<HeadSel> {
    match s {
        "agg" | "aggregate" => Ok(HeadSel::Aggregate),
        _ => s
            .parse()
            .map(HeadSel::Head)
            .map_err(|_| CliError::invalid("head", format!("expected an index or 'aggregate', got {s:?}"))),
    }
}

fn file_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::File {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_cohort(dir: &Path) -> Result<Cohort> {
    for f in ["cohort.csv", "statics.csv"] {
        let p = dir.join(f);
        std::fs::metadata(&p).map_err(file_err(&p))?;
    }
    Ok(read_cohort(dir)?)
}

pub fn load_model(path: &Path) -> Result<Forecaster<f32>> {
    std::fs::metadata(path).map_err(file_err(path))?;
    Ok(checkpoint::load(path)?)
}

impl Snapshot {
    pub fn load(data: &Path, checkpoint: &Path) -> Result<Self> {
        let model = load_model(checkpoint)?;
        let cohort = load_cohort(data)?;
        Self::new(model, cohort, checkpoint.display().to_string())
    }

    pub fn new(model: Forecaster<f32>, cohort: Cohort, checkpoint: String) -> Result<Self> {
        let prep = prepare(&cohort, model.config.horizon)?;
        Ok(Self {
            model,
            cohort,
            prep,
            checkpoint,
        })
    }

    pub fn participant(&self, pid: &str) -> Result<usize> {
        self.prep
            .index_of(pid)
            .ok_or_else(|| CliError::NotFound(format!("participant {pid:?}")))
    }

    fn last_anchor(&self, i: usize) -> usize {
        self.prep.frames[i].len().saturating_sub(self.model.config.horizon + 1)
    }

    /// Grid index of `anchor`, or the latest usable anchor when absent.
    pub fn anchor_index(&self, i: usize, anchor: Option<&str>) -> Result<usize> {
        let frame = &self.prep.frames[i];
        let Some(text) = anchor else {
            return Ok(self.last_anchor(i));
        };
        let t = parse_time(text).map_err(|e| CliError::invalid("anchor", e.to_string()))?;
        let secs = (t - frame.start).num_seconds();
        (secs >= 0 && secs % 300 == 0)
            .then_some((secs / 300) as usize)
            .filter(|&a| a < frame.len())
            .ok_or_else(|| CliError::invalid("anchor", format!("{text} is not on the participant's 5-minute grid")))
    }

    pub fn window(&self, pid: &str, anchor: Option<&str>) -> Result<WindowSample> {
        let i = self.participant(pid)?;
        let a = self.anchor_index(i, anchor)?;
        let (l, h) = (self.model.config.enc_len, self.model.config.horizon);
        window_at(&self.prep.frames[i], &self.prep.profiles[i], a, l, h).ok_or_else(|| {
            CliError::invalid(
                "anchor",
                format!("needs {l} steps of history and {h} steps of future covariates"),
            )
        })
    }

    pub fn participants(&self) -> Vec<ParticipantView> {
        self.prep
            .frames
            .iter()
            .zip(&self.prep.profiles)
            .enumerate()
            .map(|(i, (f, p))| ParticipantView {
                participant_id: p.participant_id.clone(),
                age: p.age,
                status: p.status.as_str().to_string(),
                site: p.site.clone(),
                start: format_time(f.timestamp(0)),
                end: format_time(f.timestamp(f.len().saturating_sub(1))),
                steps: f.len(),
                last_anchor: format_time(f.timestamp(self.last_anchor(i))),
            })
            .collect()
    }

    /// The last `hours` hours up to and including `end` (default: the last step).
    pub fn history(&self, pid: &str, hours: Option<f64>, end: Option<&str>) -> Result<HistoryView> {
        let i = self.participant(pid)?;
        let frame = &self.prep.frames[i];
        let hours = hours.unwrap_or(24.0);
        if !(hours > 0.0 && hours.is_finite()) {
            return Err(CliError::invalid("hours", "must be positive"));
        }
        let last = match end {
            Some(_) => self.anchor_index(i, end)?,
            None => frame.len() - 1,
        };
        let steps = ((hours * 12.0).round() as usize).max(1);
        let first = (last + 1).saturating_sub(steps);
        let channels = Channel::ALL
            .iter()
            .filter_map(|c| frame.column(c.feature()).map(|col| (c.feature().to_string(), col[first..=last].to_vec())))
            .collect();
        Ok(HistoryView {
            participant_id: pid.to_string(),
            times: (first..=last).map(|t| format_time(frame.timestamp(t))).collect(),
            channels,
        })
    }

    pub fn forecast(&self, pid: &str, anchor: Option<&str>) -> Result<ForecastView> {
        let w = self.window(pid, anchor)?;
        Ok(ForecastView::from_result(&self.model.predict_one(&w)?))
    }

    pub fn plan(&self, pid: &str, w: &WindowSample, req: &PlanRequest) -> Result<InterventionPlan> {
        let channel = parse_channel(&req.channel)?;
        let h = self.model.config.horizon;
        let hours = match &req.hours {
            Some(s) => HourMask::parse(s)?,
            None => HourMask::default_for(channel),
        };
        let chosen = [req.values.is_some(), req.k_sd.is_some(), req.observed == Some(true)];
        if chosen.iter().filter(|&&c| c).count() != 1 {
            return Err(CliError::invalid("plan", "give exactly one of values, k_sd or observed"));
        }
        if req.mode.is_some() && req.k_sd.is_none() {
            return Err(CliError::invalid("mode", "only applies to k_sd plans"));
        }
        if req.observed == Some(true) {
            let mut plan = InterventionPlan::observed(w, channel)?;
            if req.hours.is_some() {
                plan.hours = hours;
            }
            plan.check_anchor(w.anchor_time)?;
            return Ok(plan);
        }
        if let Some(values) = &req.values {
            if values.is_empty() || values.len() > h {
                return Err(CliError::invalid("values", format!("expected 1 to {h} values, got {}", values.len())));
            }
            let (lo, hi) = channel.clamp_range();
            if let Some((s, v)) = values.iter().enumerate().find(|(_, v)| !(lo..=hi).contains(*v)) {
                return Err(CliError::invalid(
                    "values",
                    format!("step {} value {v} outside the {} range [{lo}, {hi}]", s + 1, channel.feature()),
                ));
            }
            let plan = InterventionPlan::absolute(channel, values.clone(), hours)?;
            plan.check_anchor(w.anchor_time)?;
            return Ok(plan);
        }
        let k = req.k_sd.expect("checked above");
        let mode = match req.mode.as_deref() {
            None | Some("absolute") => PlanMode::Absolute,
            Some("additive") => PlanMode::Additive,
            Some(m) => return Err(CliError::invalid("mode", format!("expected absolute or additive, got {m:?}"))),
        };
        let i = self.participant(pid)?;
        let col = self.prep.frames[i].column(channel.feature()).expect("decoder channels are frame columns");
        Ok(build_plan(&col[..=w.anchor], w, channel, k, hours, mode, h)?)
    }

    pub fn counterfactual(&self, pid: &str, anchor: Option<&str>, req: &PlanRequest) -> Result<CounterfactualView> {
        let w = self.window(pid, anchor)?;
        let plan = self.plan(pid, &w, req)?;
        let (f, c, eff) = counterfactual_forecast(&self.model, &w, &plan)?;
        Ok(CounterfactualView {
            participant_id: pid.to_string(),
            anchor: format_time(w.anchor_time),
            channel: plan.channel.feature().to_string(),
            planned: plan.values.clone(),
            factual: ForecastView::from_result(&f),
            counterfactual: ForecastView::from_result(&c),
            delta: eff.delta,
            max_effect: eff.max_effect,
            sign: eff.sign,
        })
    }

    pub fn attribution(
        &self,
        pid: &str,
        anchor: Option<&str>,
        layer: Option<usize>,
        head: HeadSel,
        window: Option<usize>,
        tau: f64,
    ) -> Result<AttributionView> {
        let w = self.window(pid, anchor)?;
        let (_, interp) = self.model.explain(&w)?;
        let n = interp.layers.len();
        let layer = layer.unwrap_or(n - 1);
        let lt = interp
            .layers
            .get(layer)
            .ok_or_else(|| CliError::invalid("layer", format!("{layer} out of range ({n} layers)")))?;
        if let HeadSel::Head(h) = head {
            if h >= lt.heads() {
                return Err(CliError::invalid("head", format!("{h} out of range ({} heads)", lt.heads())));
            }
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(CliError::invalid("tau", "must be positive"));
        }
        if window == Some(0) {
            return Err(CliError::invalid("window", "must be positive"));
        }
        let map = lt.attention(head, window, tau, DEFAULT_EPS)?;
        Ok(AttributionView {
            participant_id: pid.to_string(),
            anchor: format_time(w.anchor_time),
            layer,
            head: match head {
                HeadSel::Aggregate => "aggregate".into(),
                HeadSel::Head(h) => h.to_string(),
            },
            tau,
            start: map.start,
            enc_len: self.model.config.enc_len,
            rows: (0..map.size).map(|l| map.row(l)[..=l].to_vec()).collect(),
        })
    }

    pub fn importance(&self, pid: &str, anchor: Option<&str>) -> Result<ImportanceView> {
        let w = self.window(pid, anchor)?;
        let (_, interp) = self.model.explain(&w)?;
        let weights = summarize_importance(&interp.importance_records())
            .into_iter()
            .map(|(scope, variable, weight)| ImportanceEntry { scope, variable, weight })
            .collect();
        Ok(ImportanceView {
            participant_id: pid.to_string(),
            anchor: format_time(w.anchor_time),
            weights,
        })
    }
}
