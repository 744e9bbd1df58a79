//! Mini-batch training with Adam and early stopping on validation loss.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use cgm_data::WindowSample;
use cgm_numeric::{clip_grad_norm, rng, Adam, Real, Session, Tensor};
use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{Batch, EncodedSample, Forecaster};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<LogRecord>,
    /// Validation loss before training and after every epoch.
    pub epoch_val_loss: Vec<f64>,
    pub best_val_loss: f64,
    pub best_step: usize,
    pub epochs_run: usize,
    pub steps: usize,
    pub stopped_early: bool,
    pub seconds: f64,
}

impl TrainReport {
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            writeln!(f, "epoch={} step={} split={} metric={} value={}", r.epoch, r.step, r.split, r.metric, r.value)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Overrides `max_epochs` when set.
    pub epochs: Option<usize>,
    pub clip_norm: Option<f64>,
    pub restore_best: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: None,
            clip_norm: Some(1.0),
            restore_best: true,
        }
    }
}

/// Mean normalized pinball loss over `data` in evaluation mode.
pub fn evaluate_loss<T: Real>(model: &Forecaster<T>, data: &[EncodedSample]) -> Result<f64> {
    if data.is_empty() {
        return Err(CoreError::Empty("no samples to evaluate".into()));
    }
    let mut total = 0.0;
    for chunk in data.chunks(model.config.batch.max(1)) {
        let batch = Batch::from_encoded(&chunk.iter().collect::<Vec<_>>());
        let (s, loss) = model.loss_session(&batch, false, 0)?;
        total += s.tape.value(loss).item().f64() * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

pub fn encode_all<T: Real>(model: &Forecaster<T>, samples: &[WindowSample]) -> Result<Vec<EncodedSample>> {
    samples.iter().map(|w| model.encode(w)).collect()
}

/// Trains in place; the parameters with the best validation loss are kept
/// when `restore_best` is set.
pub fn train<T: Real>(
    model: &mut Forecaster<T>,
    train: &[WindowSample],
    val: &[WindowSample],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let started = Instant::now();
    let cfg = model.config.clone();
    let tr = encode_all(model, train)?;
    let va = encode_all(model, val)?;
    if tr.is_empty() || va.is_empty() {
        return Err(CoreError::Empty("training needs train and validation windows".into()));
    }
    let epochs = opts.epochs.unwrap_or(cfg.max_epochs);
    let mut adam = Adam::new(model.store.tensors(), cfg.lr);
    let mut order: Vec<usize> = (0..tr.len()).collect();
    let mut shuffler = rng::seeded(rng::derive(cfg.seed, 0x5eed));
    let n_batches = tr.len().div_ceil(cfg.batch);
    let check_every = (n_batches / cfg.val_checks_per_epoch).max(1);

    let mut records = Vec::new();
    let v0 = evaluate_loss(model, &va)?;
    records.push(LogRecord {
        epoch: 0,
        step: 0,
        split: "val".into(),
        metric: "quantile_loss".into(),
        value: v0,
    });
    let mut epoch_val = vec![v0];
    let mut best = v0;
    let mut best_step = 0;
    let mut best_params: Vec<Tensor<T>> = model.store.tensors().to_vec();
    let mut bad_checks = 0;
    let mut step = 0;
    let mut stopped = false;
    let mut epochs_run = 0;

    'outer: for epoch in 1..=epochs {
        epochs_run = epoch;
        order.shuffle(&mut shuffler);
        let mut run_loss = 0.0;
        for (bi, idx) in order.chunks(cfg.batch).enumerate() {
            let items: Vec<&EncodedSample> = idx.iter().map(|&i| &tr[i]).collect();
            let batch = Batch::from_encoded(&items);
            let seed = rng::derive(cfg.seed, step as u64 + 1);
            let mut grads = {
                let (s, loss): (Session<T>, _) = model.loss_session(&batch, true, seed)?;
                run_loss += s.tape.value(loss).item().f64();
                s.param_grads(loss)?
            };
            if let Some(c) = opts.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            adam.step(model.store.tensors_mut(), &grads)?;
            step += 1;
            let last = bi + 1 == n_batches;
            if (bi + 1) % check_every == 0 || last {
                let v = evaluate_loss(model, &va)?;
                records.push(LogRecord {
                    epoch,
                    step,
                    split: "val".into(),
                    metric: "quantile_loss".into(),
                    value: v,
                });
                if v < best {
                    best = v;
                    best_step = step;
                    best_params = model.store.tensors().to_vec();
                    bad_checks = 0;
                } else {
                    bad_checks += 1;
                }
                if last {
                    epoch_val.push(v);
                }
                if bad_checks >= cfg.patience {
                    info!("early stop at epoch {epoch} step {step}");
                    stopped = true;
                    if !last {
                        epoch_val.push(v);
                    }
                    break 'outer;
                }
            }
        }
        let tl = run_loss / n_batches as f64;
        records.push(LogRecord {
            epoch,
            step,
            split: "train".into(),
            metric: "quantile_loss".into(),
            value: tl,
        });
        info!(
            "epoch {epoch}: train {tl:.4} val {:.4} ({:.0}s)",
            epoch_val.last().copied().unwrap_or(f64::NAN),
            started.elapsed().as_secs_f64()
        );
    }
    if opts.restore_best {
        model.store.tensors_mut().clone_from_slice(&best_params);
    }
    Ok(TrainReport {
        records,
        epoch_val_loss: epoch_val,
        best_val_loss: best,
        best_step,
        epochs_run,
        steps: step,
        stopped_early: stopped,
        seconds: started.elapsed().as_secs_f64(),
    })
}
