//! Participant-level containers on the 5-minute grid.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::DataError;

pub const STEP_MINUTES: i64 = 5;
pub const STEPS_PER_DAY: usize = 288;
pub const STEPS_PER_HOUR: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiabetesStatus {
    Healthy,
    Prediabetes,
    T2dOral,
    T2dInsulin,
}

impl DiabetesStatus {
    pub const ALL: [DiabetesStatus; 4] = [
        DiabetesStatus::Healthy,
        DiabetesStatus::Prediabetes,
        DiabetesStatus::T2dOral,
        DiabetesStatus::T2dInsulin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DiabetesStatus::Healthy => "healthy",
            DiabetesStatus::Prediabetes => "prediabetes",
            DiabetesStatus::T2dOral => "t2d_oral",
            DiabetesStatus::T2dInsulin => "t2d_insulin",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DiabetesStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DiabetesStatus {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DiabetesStatus::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| DataError::Schema(format!("unknown diabetes status {s:?}")))
    }
}

/// Raw recorded channels, in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Glucose,
    Hr,
    Rr,
    Spo2,
    Steps,
    Stress,
    Calories,
    SleepStage,
    MealFlag,
}

impl Channel {
    pub const ALL: [Channel; 9] = [
        Channel::Glucose,
        Channel::Hr,
        Channel::Rr,
        Channel::Spo2,
        Channel::Steps,
        Channel::Stress,
        Channel::Calories,
        Channel::SleepStage,
        Channel::MealFlag,
    ];
    pub const COUNT: usize = 9;

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column header in the cohort CSV.
    pub fn column(self) -> &'static str {
        match self {
            Channel::Glucose => "glucose_mgdl",
            Channel::Hr => "hr_bpm",
            Channel::Rr => "rr_brpm",
            Channel::Spo2 => "spo2_pct",
            Channel::Steps => "steps",
            Channel::Stress => "stress",
            Channel::Calories => "calories",
            Channel::SleepStage => "sleep_stage",
            Channel::MealFlag => "meal_flag",
        }
    }

    /// Short feature name used by the engineered frame.
    pub fn feature(self) -> &'static str {
        match self {
            Channel::Glucose => "glucose",
            Channel::Hr => "hr",
            Channel::Rr => "rr",
            Channel::Spo2 => "spo2",
            Channel::Steps => "steps",
            Channel::Stress => "stress",
            Channel::Calories => "calories",
            Channel::SleepStage => "sleep_stage",
            Channel::MealFlag => "meal_flag",
        }
    }

    pub fn from_feature(name: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.feature() == name)
    }

    /// Physiological clamp used when planning interventions.
    pub fn clamp_range(self) -> (f64, f64) {
        match self {
            Channel::Glucose => (40.0, 400.0),
            Channel::Hr => (30.0, 220.0),
            Channel::Rr => (4.0, 40.0),
            Channel::Spo2 => (50.0, 100.0),
            Channel::Steps => (0.0, 1000.0),
            Channel::Stress => (0.0, 100.0),
            Channel::Calories => (0.0, 100.0),
            Channel::SleepStage => (0.0, 3.0),
            Channel::MealFlag => (0.0, 1.0),
        }
    }
}

/// Participant-level covariates that do not change over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticInfo {
    pub participant_id: String,
    pub age: f64,
    pub status: DiabetesStatus,
    pub site: String,
}

/// Recorded channels with gaps, as ingested.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub participant_id: String,
    pub start: DateTime<Utc>,
    /// One column per [`Channel`], all of equal length.
    pub columns: Vec<Vec<Option<f64>>>,
}

impl RawFrame {
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: Channel) -> &[Option<f64>] {
        &self.columns[c.index()]
    }
}

/// Gap-free channels on a constant 5-minute grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeAlignedFrame {
    pub participant_id: String,
    pub start: DateTime<Utc>,
    pub columns: Vec<Vec<f64>>,
}

impl TimeAlignedFrame {
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: Channel) -> &[f64] {
        &self.columns[c.index()]
    }

    pub fn channel_mut(&mut self, c: Channel) -> &mut Vec<f64> {
        &mut self.columns[c.index()]
    }

    pub fn timestamp(&self, i: usize) -> DateTime<Utc> {
        step_time(self.start, i)
    }

    /// Grid index of `t`, if it lies on the grid inside the frame.
    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        grid_index(self.start, t).filter(|&i| i < self.len())
    }
}

pub fn step_time(start: DateTime<Utc>, i: usize) -> DateTime<Utc> {
    start + Duration::minutes(STEP_MINUTES * i as i64)
}

/// Grid offset of `t` from `start`, or `None` when off-grid or earlier.
pub fn grid_index(start: DateTime<Utc>, t: DateTime<Utc>) -> Option<usize> {
    let secs = (t - start).num_seconds();
    let step = STEP_MINUTES * 60;
    (secs >= 0 && secs % step == 0).then(|| (secs / step) as usize)
}

pub fn minute_of_day(t: DateTime<Utc>) -> u32 {
    t.hour() * 60 + t.minute()
}

/// A cohort as recorded: statics plus raw frames, aligned by index.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub statics: Vec<StaticInfo>,
    pub frames: Vec<RawFrame>,
}

pub fn format_time(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn parse_time(s: &str) -> Result<DateTime<Utc>, DataError> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| DataError::Schema(format!("bad timestamp {s:?}: {e}")))
}
