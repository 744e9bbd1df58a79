//! Sliding-window reconstruction by thresholding and ratio voting.

use serde::{Deserialize, Serialize};

/// Per-step probabilities of one window placed at `start` on the timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowProbs {
    pub start: usize,
    pub probs: Vec<f64>,
}

/// Binarizes every window at `theta`; step `t` is positive when the share of
/// covering windows voting 1 is at least `rho`. Uncovered steps are 0.
pub fn reconstruct(windows: &[WindowProbs], n: usize, theta: f64, rho: f64) -> Vec<bool> {
    let mut votes = vec![0u32; n];
    let mut cover = vec![0u32; n];
    for w in windows {
        for (k, &p) in w.probs.iter().enumerate() {
            let t = w.start + k;
            if t >= n {
                break;
            }
            cover[t] += 1;
            if p >= theta {
                votes[t] += 1;
            }
        }
    }
    votes
        .iter()
        .zip(&cover)
        .map(|(&v, &c)| c > 0 && v as f64 / c as f64 >= rho)
        .collect()
}
