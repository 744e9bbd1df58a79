//! Gap handling: last observation carried forward, with leading gaps clipped.

use log::debug;

use crate::cohort::{step_time, Channel, RawFrame, TimeAlignedFrame};
use crate::error::{DataError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Locf {
    /// Imputed values, starting at the first observation.
    pub values: Vec<f64>,
    /// Number of leading missing samples dropped.
    pub leading_clipped: usize,
    /// Length of every interior or trailing gap that was filled.
    pub gap_lengths: Vec<usize>,
}

pub fn locf_impute(series: &[Option<f64>]) -> Result<Locf> {
    let first = series
        .iter()
        .position(|v| v.is_some())
        .ok_or(DataError::EmptySeries)?;
    let mut values = Vec::with_capacity(series.len() - first);
    let mut gap_lengths = Vec::new();
    let mut last = 0.0;
    let mut run = 0;
    for v in &series[first..] {
        match v {
            Some(x) => {
                if run > 0 {
                    gap_lengths.push(run);
                    run = 0;
                }
                last = *x;
            }
            None => run += 1,
        }
        values.push(last);
    }
    if run > 0 {
        gap_lengths.push(run);
    }
    Ok(Locf {
        values,
        leading_clipped: first,
        gap_lengths,
    })
}

/// Per-channel gap report produced by [`preprocess`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GapReport {
    pub clipped_start: usize,
    pub gaps: Vec<(Channel, Vec<usize>)>,
}

impl GapReport {
    pub fn total_filled(&self) -> usize {
        self.gaps.iter().flat_map(|(_, g)| g).sum()
    }
}

/// Imputes every channel and clips the frame to the span where all channels
/// have started reporting.
pub fn preprocess(raw: &RawFrame) -> Result<(TimeAlignedFrame, GapReport)> {
    let mut imputed = Vec::with_capacity(raw.columns.len());
    for c in Channel::ALL {
        let r = locf_impute(raw.channel(c)).map_err(|_| DataError::AllMissing {
            participant: raw.participant_id.clone(),
            channel: c.column().to_string(),
        })?;
        imputed.push((c, r));
    }
    let clip = imputed.iter().map(|(_, r)| r.leading_clipped).max().unwrap_or(0);
    let mut report = GapReport {
        clipped_start: clip,
        gaps: Vec::new(),
    };
    let columns = imputed
        .into_iter()
        .map(|(c, r)| {
            debug!(
                "{} {}: {} gaps filled",
                raw.participant_id,
                c.column(),
                r.gap_lengths.len()
            );
            report.gaps.push((c, r.gap_lengths));
            r.values[clip - r.leading_clipped..].to_vec()
        })
        .collect();
    Ok((
        TimeAlignedFrame {
            participant_id: raw.participant_id.clone(),
            start: step_time(raw.start, clip),
            columns,
        },
        report,
    ))
}
