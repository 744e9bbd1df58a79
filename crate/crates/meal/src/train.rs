//! Subjects, subject-wise splits and the detector training loop.

use std::time::Instant;

use cgm_data::{preprocess, Channel, Cohort, DiabetesStatus, Ledger};
use cgm_numeric::{rng, Adam, Session, Tensor};
use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::detector::{normalize_series, Detector};
use crate::error::{MealError, Result};
use crate::events::EventSet;
use crate::labels::{trapezoid_labels, SmoothedLabels};

/// One participant's normalized glucose with smoothed meal labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MealSubject {
    pub participant_id: String,
    pub status: DiabetesStatus,
    pub glucose: Vec<f64>,
    pub labels: SmoothedLabels,
    pub truth: EventSet,
}

impl MealSubject {
    pub fn new(
        participant_id: &str,
        status: DiabetesStatus,
        raw_glucose: &[f64],
        meal_steps: &[usize],
        plateau: usize,
        ramp: usize,
    ) -> Self {
        let labels = trapezoid_labels(meal_steps, raw_glucose.len(), plateau, ramp);
        let truth = EventSet::from_mask(&labels.truth_mask());
        Self {
            participant_id: participant_id.to_string(),
            status,
            glucose: normalize_series(raw_glucose),
            labels,
            truth,
        }
    }

    pub fn len(&self) -> usize {
        self.glucose.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glucose.is_empty()
    }
}

/// Subjects from a generated cohort, with meal times from its ledger.
pub fn subjects_from_cohort(cohort: &Cohort, ledger: &Ledger, plateau: usize, ramp: usize) -> Result<Vec<MealSubject>> {
    let mut out = Vec::new();
    for (info, raw) in cohort.statics.iter().zip(&cohort.frames) {
        let truth = ledger
            .get(&info.participant_id)
            .ok_or_else(|| MealError::Empty(format!("{} missing from ledger", info.participant_id)))?;
        let (aligned, _) = preprocess(raw).map_err(|e| MealError::Empty(e.to_string()))?;
        let meals: Vec<usize> = truth.meals.iter().map(|m| m.step).collect();
        out.push(MealSubject::new(
            &info.participant_id,
            info.status,
            aligned.channel(Channel::Glucose),
            &meals,
            plateau,
            ramp,
        ));
    }
    Ok(out)
}

/// Index sets of a subject-wise split.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubjectSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Within each diabetes stratum, the last `test` subjects go to test and the
/// `val` before them to validation.
pub fn split_subjects(statuses: &[DiabetesStatus], val: usize, test: usize) -> SubjectSplit {
    let mut s = SubjectSplit::default();
    for st in DiabetesStatus::ALL {
        let idx: Vec<usize> = (0..statuses.len()).filter(|&i| statuses[i] == st).collect();
        let n = idx.len();
        let n_test = test.min(n.saturating_sub(1));
        let n_val = val.min(n.saturating_sub(1 + n_test));
        let n_train = n - n_test - n_val;
        s.train.extend(&idx[..n_train]);
        s.val.extend(&idx[n_train..n_train + n_val]);
        s.test.extend(&idx[n_train + n_val..]);
    }
    s.train.sort_unstable();
    s.val.sort_unstable();
    s.test.sort_unstable();
    s
}

/// Training windows `(glucose, labels)` cut at `stride`.
pub fn training_windows(subjects: &[&MealSubject], window: usize, stride: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = Vec::new();
    for s in subjects {
        if s.len() < window {
            continue;
        }
        let mut st = 0;
        while st + window <= s.len() {
            out.push((
                s.glucose[st..st + window].to_vec(),
                s.labels.values[st..st + window].to_vec(),
            ));
            st += stride;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    /// Evaluation-mode loss on a fixed monitor subset, before training and after each epoch.
    pub epoch_loss: Vec<f64>,
    pub windows: usize,
    pub seconds: f64,
}

fn batch_loss(det: &Detector, items: &[&(Vec<f64>, Vec<f64>)], training: bool, seed: u64) -> Result<(f64, Option<Vec<Tensor<f32>>>)> {
    let l = det.config.window;
    let mut x = Vec::with_capacity(items.len() * l);
    let mut y = Vec::with_capacity(items.len() * l);
    for (g, lab) in items {
        x.extend_from_slice(g);
        y.extend_from_slice(lab);
    }
    let mut s = Session::new(&det.store, training, seed);
    let xv = s.constant(Tensor::from_f64(&[items.len(), l], &x)?);
    let yv = s.constant(Tensor::from_f64(&[items.len(), l], &y)?);
    let logits = det.forward_tape(&mut s, xv)?;
    let loss = s.tape.weighted_bce(logits, yv, det.config.alpha)?;
    let value = s.tape.value(loss).item() as f64;
    let grads = if training { Some(s.param_grads(loss)?) } else { None };
    Ok((value, grads))
}

fn monitor_loss(det: &Detector, monitor: &[&(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in monitor.chunks(64) {
        total += batch_loss(det, chunk, false, 0)?.0 * chunk.len() as f64;
    }
    Ok(total / monitor.len() as f64)
}

/// Adam at a constant learning rate over shuffled windows.
pub fn train_detector(det: &mut Detector, subjects: &[&MealSubject]) -> Result<DetectorReport> {
    let started = Instant::now();
    let cfg = det.config.clone();
    let data = training_windows(subjects, cfg.window, cfg.train_stride);
    if data.is_empty() {
        return Err(MealError::Empty("no training windows".into()));
    }
    let step = (data.len() / 256).max(1);
    let monitor: Vec<&(Vec<f64>, Vec<f64>)> = data.iter().step_by(step).collect();
    let mut adam = Adam::new(det.store.tensors(), cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut r = rng::seeded(rng::derive(cfg.seed, 0xd47a));
    let mut epoch_loss = vec![monitor_loss(det, &monitor)?];
    let mut it = 0u64;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut r);
        for idx in order.chunks(cfg.batch) {
            let items: Vec<&(Vec<f64>, Vec<f64>)> = idx.iter().map(|&i| &data[i]).collect();
            it += 1;
            let (_, grads) = batch_loss(det, &items, true, rng::derive(cfg.seed, it))?;
            adam.step(det.store.tensors_mut(), &grads.expect("training grads"))?;
        }
        let l = monitor_loss(det, &monitor)?;
        info!("detector epoch {epoch}: loss {l:.4} ({:.0}s)", started.elapsed().as_secs_f64());
        epoch_loss.push(l);
    }
    Ok(DetectorReport {
        epoch_loss,
        windows: data.len(),
        seconds: started.elapsed().as_secs_f64(),
    })
}
