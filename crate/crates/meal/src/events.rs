//! Event sets on a global timeline and overlap-based event metrics.

use serde::{Deserialize, Serialize};

/// Maximal runs of positive steps, as inclusive `(start, end)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventSet {
    pub intervals: Vec<(usize, usize)>,
}

impl EventSet {
    pub fn from_mask(mask: &[bool]) -> Self {
        let mut intervals = Vec::new();
        let mut start = None;
        for (t, &on) in mask.iter().enumerate() {
            match (on, start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    intervals.push((s, t - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            intervals.push((s, mask.len() - 1));
        }
        Self { intervals }
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Shifts every interval by `offset` steps, for pooling timelines.
    pub fn shifted(&self, offset: usize) -> Self {
        Self {
            intervals: self.intervals.iter().map(|&(a, b)| (a + offset, b + offset)).collect(),
        }
    }

    /// Whether any interval intersects `[a, b]`.
    pub fn hits(&self, a: usize, b: usize) -> bool {
        // Intervals are sorted and disjoint; find the first ending at or after `a`.
        let i = self.intervals.partition_point(|&(_, e)| e < a);
        self.intervals.get(i).is_some_and(|&(s, _)| s <= b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventMetrics {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub truth_events: usize,
    pub predicted_events: usize,
    /// False when there are no predicted events; precision is then reported as 0.
    pub precision_defined: bool,
    /// False when there are no truth events; recall is then reported as 0.
    pub recall_defined: bool,
}

impl EventMetrics {
    pub fn fbeta(&self, beta: f64) -> f64 {
        fbeta(self.precision, self.recall, beta)
    }
}

pub fn fbeta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den <= 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

/// Counts from which pooled metrics are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventCounts {
    pub truth: usize,
    pub truth_hit: usize,
    pub predicted: usize,
    pub predicted_hit: usize,
}

impl EventCounts {
    pub fn of(truth: &EventSet, predicted: &EventSet) -> Self {
        Self {
            truth: truth.len(),
            truth_hit: truth.intervals.iter().filter(|&&(a, b)| predicted.hits(a, b)).count(),
            predicted: predicted.len(),
            predicted_hit: predicted.intervals.iter().filter(|&&(a, b)| truth.hits(a, b)).count(),
        }
    }

    pub fn add(&mut self, o: EventCounts) {
        self.truth += o.truth;
        self.truth_hit += o.truth_hit;
        self.predicted += o.predicted;
        self.predicted_hit += o.predicted_hit;
    }

    pub fn metrics(&self) -> EventMetrics {
        let recall = if self.truth > 0 {
            self.truth_hit as f64 / self.truth as f64
        } else {
            0.0
        };
        let precision = if self.predicted > 0 {
            self.predicted_hit as f64 / self.predicted as f64
        } else {
            0.0
        };
        EventMetrics {
            recall,
            precision,
            f1: fbeta(precision, recall, 1.0),
            truth_events: self.truth,
            predicted_events: self.predicted,
            precision_defined: self.predicted > 0,
            recall_defined: self.truth > 0,
        }
    }
}

/// Recall: share of truth events overlapped by a prediction. Precision:
/// share of predicted events overlapping a truth event.
pub fn event_metrics(truth: &EventSet, predicted: &EventSet) -> EventMetrics {
    EventCounts::of(truth, predicted).metrics()
}
