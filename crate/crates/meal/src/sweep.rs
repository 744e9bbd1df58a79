//! Grid search of the threshold and vote ratio by pooled event F1.

use serde::{Deserialize, Serialize};

use crate::events::{EventCounts, EventMetrics, EventSet};
use crate::vote::{reconstruct, WindowProbs};

/// Window scores of one timeline with its truth events.
#[derive(Debug, Clone)]
pub struct ScoredTimeline {
    pub windows: Vec<WindowProbs>,
    pub len: usize,
    pub truth: EventSet,
}

/// Pooled event metrics over several timelines at one `(theta, rho)`.
pub fn evaluate(timelines: &[ScoredTimeline], theta: f64, rho: f64) -> EventMetrics {
    let mut c = EventCounts::default();
    for tl in timelines {
        let pred = EventSet::from_mask(&reconstruct(&tl.windows, tl.len, theta, rho));
        c.add(EventCounts::of(&tl.truth, &pred));
    }
    c.metrics()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub theta: f64,
    pub rho: f64,
    pub metrics: EventMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best: SweepPoint,
    pub table: Vec<SweepPoint>,
    /// Set when F1 is zero at every grid point.
    pub degenerate: bool,
}

/// Best F1 over the grid; ties go to the higher `rho`, then the higher `theta`.
pub fn sweep(thetas: &[f64], rhos: &[f64], timelines: &[ScoredTimeline]) -> Option<SweepResult> {
    let mut table = Vec::with_capacity(thetas.len() * rhos.len());
    for &theta in thetas {
        for &rho in rhos {
            table.push(SweepPoint {
                theta,
                rho,
                metrics: evaluate(timelines, theta, rho),
            });
        }
    }
    let best = table
        .iter()
        .max_by(|a, b| {
            a.metrics
                .f1
                .total_cmp(&b.metrics.f1)
                .then(a.rho.total_cmp(&b.rho))
                .then(a.theta.total_cmp(&b.theta))
        })?
        .clone();
    let degenerate = best.metrics.f1 == 0.0;
    Some(SweepResult {
        best,
        table,
        degenerate,
    })
}

/// `lo, lo + step, ...` up to and including `hi`.
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((lo + i as f64 * step) * 1e6).round() / 1e6).collect()
}
