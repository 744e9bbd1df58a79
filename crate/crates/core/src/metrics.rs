//! Pinball loss, point metrics and the persistence baseline.

use cgm_data::WindowSample;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::ForecastResult;

/// `max(q (y - p), (q - 1)(y - p))`.
pub fn pinball(y: f64, pred: f64, q: f64) -> f64 {
    let e = y - pred;
    (q * e).max((q - 1.0) * e)
}

/// Mean pinball loss of `pred [H, Q]` against `y [H]`.
pub fn quantile_loss(pred: &[f64], y: &[f64], quantiles: &[f64]) -> Result<f64> {
    let q = quantiles.len();
    if q == 0 || pred.len() != y.len() * q {
        return Err(CoreError::Shape(format!(
            "quantile loss: {} predictions for {} targets and {q} quantiles",
            pred.len(),
            y.len()
        )));
    }
    let mut acc = 0.0;
    for (h, &yh) in y.iter().enumerate() {
        for (j, &qj) in quantiles.iter().enumerate() {
            acc += pinball(yh, pred[h * q + j], qj);
        }
    }
    Ok(acc / pred.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub quantile_loss: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Fraction of targets inside the outermost quantile band.
    pub coverage: f64,
    pub count: usize,
}

/// Metrics in mg/dL over aligned forecasts and targets; MAE/RMSE use the median.
pub fn metrics(preds: &[ForecastResult], targets: &[Vec<f64>]) -> Result<Metrics> {
    if preds.len() != targets.len() {
        return Err(CoreError::Shape(format!(
            "{} forecasts for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(CoreError::Empty("no forecasts to score".into()));
    }
    let (mut ql, mut ae, mut se, mut inside, mut n) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for (p, y) in preds.iter().zip(targets) {
        if p.horizon() != y.len() {
            return Err(CoreError::Shape("forecast horizon differs from target".into()));
        }
        ql += quantile_loss(&p.values, y, &p.quantiles)? * y.len() as f64;
        let med = p.median();
        let last = p.quantiles.len() - 1;
        for (h, &yh) in y.iter().enumerate() {
            let e = yh - med[h];
            ae += e.abs();
            se += e * e;
            if yh >= p.at(h, 0) && yh <= p.at(h, last) {
                inside += 1;
            }
            n += 1;
        }
    }
    let nf = n as f64;
    Ok(Metrics {
        quantile_loss: ql / nf,
        mae: ae / nf,
        rmse: (se / nf).sqrt(),
        coverage: inside as f64 / nf,
        count: n,
    })
}

/// Repeats the last observed glucose for every horizon and quantile.
pub fn persistence_baseline(sample: &WindowSample, quantiles: &[f64]) -> Result<ForecastResult> {
    if sample.enc_len == 0 || sample.encoder.is_empty() {
        return Err(CoreError::Empty("persistence needs a nonempty encoder".into()));
    }
    let last = sample.last_glucose();
    let values = vec![last; sample.horizon * quantiles.len()];
    Ok(ForecastResult {
        participant_id: sample.participant_id.clone(),
        anchor_time: sample.anchor_time,
        quantiles: quantiles.to_vec(),
        raw: values.clone(),
        values,
    })
}

/// Mean absolute error of the median per horizon step.
pub fn mae_by_horizon(preds: &[ForecastResult], targets: &[Vec<f64>]) -> Vec<f64> {
    let h = targets.first().map_or(0, |t| t.len());
    let mut acc = vec![0.0; h];
    for (p, y) in preds.iter().zip(targets) {
        for (k, (m, t)) in p.median().iter().zip(y).enumerate() {
            acc[k] += (t - m).abs();
        }
    }
    acc.iter().map(|a| a / preds.len().max(1) as f64).collect()
}
