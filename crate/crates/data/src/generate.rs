//! Synthetic cohort with a known, mostly linear causal structure.
//!
//! Wearable channels are simulated first and independently of glucose.
//! Glucose is then a deterministic function of the participant's parameters,
//! the wearables, the meal schedule and an AR(1) noise path, so every effect
//! that a model might learn has a closed-form ground truth in the ledger.

use std::f64::consts::PI;

use chrono::{DateTime, TimeZone, Utc};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use cgm_numeric::rng;

use crate::cohort::{
    minute_of_day, step_time, Channel, Cohort, DiabetesStatus, RawFrame, StaticInfo,
    STEPS_PER_DAY,
};
use crate::error::{DataError, Result};

/// Sensor range of the simulated CGM.
pub const GLUCOSE_RANGE: (f64, f64) = (40.0, 400.0);
/// Number of lags in the wearable-to-glucose effect kernel.
pub const EFFECT_LAGS: usize = 12;
/// Decay constant (steps) of the effect kernel `w_k = exp(-k / EFFECT_DECAY)`.
pub const EFFECT_DECAY: f64 = 4.0;
/// Half-width (steps) of the oracle meal flag around each meal time.
pub const MEAL_FLAG_HALF_WIDTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub participants: usize,
    pub days_min: usize,
    pub days_max: usize,
    pub seed: u64,
    /// Multiplier on the glucose noise sd; 0 gives a noise-free cohort.
    pub noise_scale: f64,
    pub meals: bool,
    /// Adds a slow, late meal response component that outlasts short contexts.
    pub long_memory: bool,
    /// Per-step probability that a gap starts in a channel.
    pub missing_rate: f64,
    pub start: DateTime<Utc>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            participants: 12,
            days_min: 8,
            days_max: 10,
            seed: 7,
            noise_scale: 1.0,
            meals: true,
            long_memory: false,
            missing_rate: 0.002,
            start: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DataError::Spec(m.to_string()));
        if self.participants == 0 {
            return bad("participants must be positive");
        }
        if self.days_min == 0 || self.days_min > self.days_max {
            return bad("need 1 <= days_min <= days_max");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be finite and nonnegative");
        }
        if !(0.0..0.5).contains(&self.missing_rate) {
            return bad("missing_rate must lie in [0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MealEvent {
    /// Grid index from the frame start.
    pub step: usize,
    pub time: String,
    /// Multiplier on the participant's meal gain.
    pub size: f64,
}

/// Ground truth for one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantTruth {
    pub participant_id: String,
    pub status: DiabetesStatus,
    pub days: usize,
    pub baseline: f64,
    pub circadian_amp: f64,
    pub circadian_peak_minute: f64,
    pub meal_gain: f64,
    /// Steps from meal to peak of the fast response.
    pub meal_tau: f64,
    pub slow_gain: f64,
    pub slow_tau: f64,
    /// mg/dL per bpm, applied through the lag kernel.
    pub gamma_hr: f64,
    /// mg/dL per breath/min, applied through the lag kernel.
    pub gamma_rr: f64,
    /// Centering constants for the wearable effects.
    pub hr_center: f64,
    pub rr_center: f64,
    pub effect_kernel: Vec<f64>,
    pub noise_sd: f64,
    pub ar_phi: f64,
    pub meals: Vec<MealEvent>,
}

impl ParticipantTruth {
    /// Kernel-weighted sum of `x[t-k] - center` over the effect lags.
    fn lagged_effect(&self, x: &[f64], center: f64, t: usize) -> f64 {
        self.effect_kernel
            .iter()
            .enumerate()
            .map(|(k, w)| w * (x[t.saturating_sub(k)] - center))
            .sum()
    }

    /// Noise-free glucose before sensor clamping.
    pub fn mean_glucose(&self, start: DateTime<Utc>, hr: &[f64], rr: &[f64], t: usize) -> f64 {
        let m = minute_of_day(step_time(start, t)) as f64;
        let mut g = self.baseline
            + self.circadian_amp * (2.0 * PI * (m - self.circadian_peak_minute) / 1440.0).cos();
        for meal in &self.meals {
            if meal.step > t {
                continue;
            }
            let d = (t - meal.step) as f64;
            g += meal.size * self.meal_gain * impulse_response(d, self.meal_tau);
            if self.slow_gain > 0.0 {
                g += meal.size * self.slow_gain * impulse_response(d, self.slow_tau);
            }
        }
        g + self.gamma_hr * self.lagged_effect(hr, self.hr_center, t)
            + self.gamma_rr * self.lagged_effect(rr, self.rr_center, t)
    }

    /// Exact change in glucose at `t` when the heart-rate path `hr` is
    /// replaced by `planned`, everything else held fixed.
    pub fn hr_effect(&self, hr: &[f64], planned: &[f64], t: usize) -> f64 {
        self.gamma_hr * (self.lagged_effect(planned, 0.0, t) - self.lagged_effect(hr, 0.0, t))
    }

    /// As [`hr_effect`](Self::hr_effect) for respiration rate.
    pub fn rr_effect(&self, rr: &[f64], planned: &[f64], t: usize) -> f64 {
        self.gamma_rr * (self.lagged_effect(planned, 0.0, t) - self.lagged_effect(rr, 0.0, t))
    }

    pub fn kernel_sum(&self) -> f64 {
        self.effect_kernel.iter().sum()
    }
}

/// Gamma-shaped meal response `(d/tau) exp(1 - d/tau)`, peaking at 1 when `d = tau`.
pub fn impulse_response(d: f64, tau: f64) -> f64 {
    if d < 0.0 || tau <= 0.0 {
        return 0.0;
    }
    let x = d / tau;
    x * (1.0 - x).exp()
}

pub fn effect_kernel() -> Vec<f64> {
    (0..EFFECT_LAGS)
        .map(|k| (-(k as f64) / EFFECT_DECAY).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub spec: GeneratorSpec,
    pub participants: Vec<ParticipantTruth>,
}

impl Ledger {
    pub fn get(&self, participant_id: &str) -> Option<&ParticipantTruth> {
        self.participants
            .iter()
            .find(|p| p.participant_id == participant_id)
    }
}

/// Nominal heart-rate effect by status; type 2 diabetes is twice healthy.
pub fn nominal_gamma_hr(status: DiabetesStatus) -> f64 {
    match status {
        DiabetesStatus::Healthy => -0.06,
        DiabetesStatus::Prediabetes => -0.08,
        DiabetesStatus::T2dOral | DiabetesStatus::T2dInsulin => -0.12,
    }
}

pub fn nominal_gamma_rr(status: DiabetesStatus) -> f64 {
    match status {
        DiabetesStatus::Healthy => 0.3,
        DiabetesStatus::Prediabetes => 0.4,
        DiabetesStatus::T2dOral | DiabetesStatus::T2dInsulin => 0.6,
    }
}

const SITES: [&str; 3] = ["site1", "site2", "site3"];

/// Generates the cohort and its ground-truth ledger. Deterministic in `spec.seed`.
pub fn generate_cohort(spec: &GeneratorSpec) -> Result<(Cohort, Ledger)> {
    spec.validate()?;
    let mut statics = Vec::with_capacity(spec.participants);
    let mut frames = Vec::with_capacity(spec.participants);
    let mut truths = Vec::with_capacity(spec.participants);
    for i in 0..spec.participants {
        let mut r = rng::seeded(rng::derive(spec.seed, i as u64 + 1));
        let status = DiabetesStatus::ALL[i % 4];
        let id = format!("P{:03}", i + 1);
        let days = r.random_range(spec.days_min..=spec.days_max);
        let n = days * STEPS_PER_DAY;

        let wear = simulate_wearables(&mut r, n);
        let truth = sample_truth(&mut r, spec, &id, status, days, &wear);
        let glucose = simulate_glucose(&mut r, spec, &truth, &wear);

        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); Channel::COUNT];
        columns[Channel::Glucose.index()] = glucose;
        columns[Channel::Hr.index()] = wear.hr;
        columns[Channel::Rr.index()] = wear.rr;
        columns[Channel::Spo2.index()] = wear.spo2;
        columns[Channel::Steps.index()] = wear.steps;
        columns[Channel::Stress.index()] = wear.stress;
        columns[Channel::Calories.index()] = wear.calories;
        columns[Channel::SleepStage.index()] = wear.sleep_stage;
        columns[Channel::MealFlag.index()] = oracle_meal_flags(&truth.meals, n);

        let columns = columns
            .into_iter()
            .map(|c| punch_gaps(&mut r, c, spec.missing_rate))
            .collect();
        frames.push(RawFrame {
            participant_id: id.clone(),
            start: spec.start,
            columns,
        });
        let age_range: (f64, f64) = match status {
            DiabetesStatus::Healthy => (30.0, 60.0),
            DiabetesStatus::Prediabetes => (40.0, 70.0),
            _ => (45.0, 75.0),
        };
        statics.push(StaticInfo {
            participant_id: id,
            age: r.random_range(age_range.0..age_range.1).round(),
            status,
            site: SITES[(i / 4 + i) % 3].to_string(),
        });
        truths.push(truth);
    }
    Ok((
        Cohort { statics, frames },
        Ledger {
            spec: spec.clone(),
            participants: truths,
        },
    ))
}

/// Binary meal flag, 1 within [`MEAL_FLAG_HALF_WIDTH`] steps of a meal.
pub fn oracle_meal_flags(meals: &[MealEvent], n: usize) -> Vec<f64> {
    let mut flags = vec![0.0; n];
    for m in meals {
        let lo = m.step.saturating_sub(MEAL_FLAG_HALF_WIDTH);
        let hi = (m.step + MEAL_FLAG_HALF_WIDTH).min(n.saturating_sub(1));
        for f in flags.iter_mut().take(hi + 1).skip(lo) {
            *f = 1.0;
        }
    }
    flags
}

struct Wearables {
    hr: Vec<f64>,
    rr: Vec<f64>,
    spo2: Vec<f64>,
    steps: Vec<f64>,
    stress: Vec<f64>,
    calories: Vec<f64>,
    sleep_stage: Vec<f64>,
}

fn gauss(r: &mut rng::Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).map(|d| d.sample(r)).unwrap_or(0.0)
}

/// AR(1) path with stationary standard deviation `sd`.
fn ar1(r: &mut rng::Rng, n: usize, phi: f64, sd: f64) -> Vec<f64> {
    let innov = sd * (1.0 - phi * phi).sqrt();
    let mut x = gauss(r, sd);
    (0..n)
        .map(|_| {
            let out = x;
            x = phi * x + gauss(r, innov);
            out
        })
        .collect()
}

fn simulate_wearables(r: &mut rng::Rng, n: usize) -> Wearables {
    let days = n.div_ceil(STEPS_PER_DAY);
    let hr_rest = r.random_range(58.0..70.0);
    let rr_rest = r.random_range(13.0..16.0);

    // Sleep intervals in grid steps, one per night.
    let mut asleep = vec![false; n];
    for d in 0..=days {
        let day = (d * STEPS_PER_DAY) as f64;
        let onset = (day - 12.0 + gauss(r, 5.0)).max(0.0) as usize;
        let wake = (day + 84.0 + gauss(r, 5.0)).max(0.0) as usize;
        for a in asleep.iter_mut().take(wake.min(n)).skip(onset) {
            *a = true;
        }
    }

    // Activity bouts during waking hours.
    let mut bout = vec![0.0f64; n];
    let mut bout_steps = vec![0.0f64; n];
    let mut t = 0;
    while t < n {
        if !asleep[t] && r.random_bool(1.0 / 60.0) {
            let len = r.random_range(6..=18);
            let intensity = r.random_range(15.0..40.0);
            let cadence = r.random_range(60.0..130.0);
            for k in t..(t + len).min(n) {
                if asleep[k] {
                    break;
                }
                bout[k] = intensity;
                bout_steps[k] = cadence * r.random_range(0.7..1.3);
            }
            t += len;
        } else {
            t += 1;
        }
    }

    let hr_noise = ar1(r, n, 0.95, 7.0);
    let rr_noise = ar1(r, n, 0.9, 1.2);
    let stress_noise = ar1(r, n, 0.97, 8.0);
    let spo2_noise = ar1(r, n, 0.8, 0.6);

    // Occasional nocturnal breathing episodes lift RR at night.
    let mut rr_night = vec![0.0f64; n];
    for t in 0..n {
        if asleep[t] && r.random_bool(1.0 / 80.0) {
            let len = r.random_range(4..=10);
            let lift = r.random_range(2.0..5.0);
            for v in rr_night.iter_mut().skip(t).take(len) {
                *v = lift;
            }
        }
    }

    let mut w = Wearables {
        hr: Vec::with_capacity(n),
        rr: Vec::with_capacity(n),
        spo2: Vec::with_capacity(n),
        steps: Vec::with_capacity(n),
        stress: Vec::with_capacity(n),
        calories: Vec::with_capacity(n),
        sleep_stage: Vec::with_capacity(n),
    };
    let mut sleep_started = 0usize;
    for t in 0..n {
        let awake = !asleep[t];
        if !awake && (t == 0 || !asleep[t - 1]) {
            sleep_started = t;
        }
        let hr = hr_rest + if awake { 10.0 } else { -4.0 } + bout[t] + hr_noise[t];
        w.hr.push(hr.clamp(35.0, 200.0));
        let rr = rr_rest + 0.08 * bout[t] + rr_night[t] + rr_noise[t];
        w.rr.push(rr.clamp(6.0, 35.0));
        let spo2 = 97.5 - if awake { 0.0 } else { 0.8 } - 0.3 * rr_night[t] + spo2_noise[t];
        w.spo2.push(spo2.clamp(85.0, 100.0));
        let steps: f64 = if awake {
            bout_steps[t] + r.random_range(0.0..15.0)
        } else {
            0.0
        };
        w.steps.push(steps.round());
        let stress = if awake { 35.0 } else { 12.0 } + 0.4 * bout[t] + stress_noise[t];
        w.stress.push(stress.clamp(0.0, 100.0).round());
        w.calories.push(6.0 + 0.04 * steps + if awake { 1.0 } else { 0.0 });
        let stage = if awake {
            0.0
        } else {
            // ~90 minute cycles: light, deep, light, REM
            match ((t - sleep_started) % 18) / 4 {
                0 | 2 => 1.0,
                1 => 2.0,
                _ => 3.0,
            }
        };
        w.sleep_stage.push(stage);
    }
    w
}

fn sample_truth(
    r: &mut rng::Rng,
    spec: &GeneratorSpec,
    id: &str,
    status: DiabetesStatus,
    days: usize,
    wear: &Wearables,
) -> ParticipantTruth {
    let (base, gain, tau, sd) = match status {
        DiabetesStatus::Healthy => (95.0, 35.0, 6.0, 2.0),
        DiabetesStatus::Prediabetes => (110.0, 50.0, 8.0, 2.5),
        DiabetesStatus::T2dOral => (140.0, 70.0, 10.0, 3.0),
        DiabetesStatus::T2dInsulin => (150.0, 75.0, 10.0, 3.5),
    };
    let jitter = |r: &mut rng::Rng| r.random_range(0.9..1.1);
    let n = wear.hr.len();
    let meals = if spec.meals {
        sample_meals(r, spec.start, days)
    } else {
        Vec::new()
    };
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len().max(1) as f64;
    ParticipantTruth {
        participant_id: id.to_string(),
        status,
        days,
        baseline: base + gauss(r, 6.0),
        circadian_amp: r.random_range(6.0..14.0),
        circadian_peak_minute: r.random_range(420.0..600.0),
        meal_gain: gain * jitter(r),
        meal_tau: tau,
        slow_gain: if spec.long_memory { 0.6 * gain } else { 0.0 },
        slow_tau: 48.0,
        gamma_hr: nominal_gamma_hr(status) * jitter(r),
        gamma_rr: nominal_gamma_rr(status) * jitter(r),
        hr_center: mean(&wear.hr[..n]),
        rr_center: mean(&wear.rr[..n]),
        effect_kernel: effect_kernel(),
        noise_sd: sd,
        ar_phi: 0.9,
        meals,
    }
}

fn sample_meals(r: &mut rng::Rng, start: DateTime<Utc>, days: usize) -> Vec<MealEvent> {
    // Nominal minute-of-day, probability, size range.
    const SLOTS: [(f64, f64, f64, f64); 4] = [
        (450.0, 1.0, 0.6, 1.2),
        (750.0, 1.0, 0.8, 1.4),
        (930.0, 0.4, 0.3, 0.5),
        (1140.0, 1.0, 0.8, 1.4),
    ];
    let n = days * STEPS_PER_DAY;
    let mut meals = Vec::new();
    for d in 0..days {
        for &(minute, p, lo, hi) in &SLOTS {
            if !r.random_bool(p) {
                continue;
            }
            let m = minute + gauss(r, 40.0);
            let step = (d as f64 * STEPS_PER_DAY as f64 + m / 5.0).round();
            if step < 0.0 || step as usize >= n {
                continue;
            }
            let step = step as usize;
            meals.push(MealEvent {
                step,
                time: crate::cohort::format_time(step_time(start, step)),
                size: r.random_range(lo..hi),
            });
        }
    }
    meals.sort_by_key(|m| m.step);
    meals
}

fn simulate_glucose(
    r: &mut rng::Rng,
    spec: &GeneratorSpec,
    truth: &ParticipantTruth,
    wear: &Wearables,
) -> Vec<f64> {
    let n = wear.hr.len();
    let sd = truth.noise_sd * spec.noise_scale;
    let noise = if sd > 0.0 {
        ar1(r, n, truth.ar_phi, sd)
    } else {
        vec![0.0; n]
    };
    (0..n)
        .map(|t| {
            let g = truth.mean_glucose(spec.start, &wear.hr, &wear.rr, t) + noise[t];
            g.clamp(GLUCOSE_RANGE.0, GLUCOSE_RANGE.1)
        })
        .collect()
}

/// Drops runs of 1 to 6 values; the first sample is always kept.
fn punch_gaps(r: &mut rng::Rng, col: Vec<f64>, rate: f64) -> Vec<Option<f64>> {
    let mut out: Vec<Option<f64>> = col.into_iter().map(Some).collect();
    if rate <= 0.0 {
        return out;
    }
    let mut t = 1;
    while t < out.len() {
        if r.random_bool(rate) {
            let len = r.random_range(1..=6);
            for v in out.iter_mut().skip(t).take(len) {
                *v = None;
            }
            t += len + 1;
        } else {
            t += 1;
        }
    }
    out
}
