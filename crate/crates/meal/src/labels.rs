//! Trapezoidal smoothing of meal times into soft per-step labels.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedLabels {
    pub values: Vec<f64>,
    /// Plateau half-width in steps.
    pub plateau: usize,
    /// Ramp width in steps.
    pub ramp: usize,
}

/// Weight of a meal at distance `d` steps.
pub fn trapezoid_weight(d: usize, plateau: usize, ramp: usize) -> f64 {
    if d <= plateau {
        1.0
    } else if d < plateau + ramp {
        1.0 - (d - plateau) as f64 / ramp as f64
    } else {
        0.0
    }
}

/// Sums one trapezoid per meal over a grid of `n` steps and clips at 1.
pub fn trapezoid_labels(meal_steps: &[usize], n: usize, plateau: usize, ramp: usize) -> SmoothedLabels {
    let mut values = vec![0.0; n];
    let reach = plateau + ramp;
    for &m in meal_steps {
        let lo = m.saturating_sub(reach);
        let hi = (m + reach + 1).min(n);
        for (t, v) in values.iter_mut().enumerate().take(hi).skip(lo) {
            *v += trapezoid_weight(t.abs_diff(m), plateau, ramp);
        }
    }
    for v in &mut values {
        *v = v.min(1.0);
    }
    SmoothedLabels {
        values,
        plateau,
        ramp,
    }
}

impl SmoothedLabels {
    /// Binary truth timeline: steps with a label of at least one half.
    pub fn truth_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v >= 0.5).collect()
    }
}
