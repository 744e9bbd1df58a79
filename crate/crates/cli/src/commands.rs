//! Subcommand implementations behind the `cgm` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cgm_core::attribution::{write_map_csv, write_map_png, DEFAULT_EPS};
use cgm_core::checkpoint;
use cgm_core::counterfactual::{
    build_plan, cohort_effects, counterfactual_forecast, g_formula_rollout, write_effects_csv, write_strata_csv, EffectStat, EffectSummary,
    HourMask, PlanMode,
};
use cgm_core::fusion::{summarize_importance, write_importance_csv};
use cgm_core::metrics::{metrics, persistence_baseline, Metrics};
use cgm_core::train::train;
use cgm_core::{Forecaster, Normalizer};
use cgm_data::cohort::{format_time, step_time, STEPS_PER_DAY};
use cgm_data::io::{read_ledger, write_cohort, write_ledger};
use cgm_data::window::window_at;
use cgm_data::{generate_cohort, prepare, split, DiabetesStatus, WindowSample};
use cgm_meal::sweep::{evaluate, grid};
use cgm_meal::{
    reconstruct, split_subjects, subjects_from_cohort, sweep, train_detector, Detector, EventSet, MealSubject,
    ScoredTimeline,
};
use cgm_numeric::Archive;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::service::{load_cohort, load_model, parse_channel, parse_head, Snapshot};

pub const EFFECTIVE_CONFIG: &str = "config.effective";
pub const CHECKPOINT: &str = "model.ckpt";
pub const DETECTOR: &str = "detector.ckpt";
pub const LEDGER: &str = "ledger.json";

#[derive(Debug, Parser)]
#[command(name = "cgm", version, about = "Interpretable state-space glucose forecasting")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with its ground-truth ledger.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a forecaster on a cohort directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint and the persistence baseline on a split.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
    },
    /// Quantile forecast for one participant and anchor, printed as JSON.
    Forecast {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lag attention map and variable importance at one anchor.
    Attribute {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        out: PathBuf,
        /// Layer index; defaults to the last layer.
        #[arg(long)]
        layer: Option<usize>,
        /// Head index or `aggregate`.
        #[arg(long, default_value = "aggregate")]
        head: String,
        /// Trailing window length of the map.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        /// Pixels per map cell in the PNG.
        #[arg(long, default_value_t = 4)]
        scale: u32,
    },
    /// Cohort counterfactual effects of shifting one covariate.
    Counterfactual {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        channel: String,
        /// Shift in participant standard deviations.
        #[arg(long, allow_hyphen_values = true)]
        ksd: f64,
        /// Allowed anchor hours, `START-END`; defaults to the channel's mask.
        #[arg(long)]
        hours: Option<String>,
        #[arg(long, value_enum, default_value_t = ModeArg::Absolute)]
        mode: ModeArg,
        /// Days at the end of each record to sweep anchors over.
        #[arg(long, default_value_t = 2)]
        days: usize,
        /// Steps between anchors.
        #[arg(long, default_value_t = 12)]
        every: usize,
        /// Also run the recursive rollout and write its divergence from the single pass.
        #[arg(long)]
        rollout: bool,
    },
    /// Meal detection from glucose alone.
    #[command(subcommand)]
    MealDetect(MealCommand),
    /// Serve the JSON API.
    Serve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Debug, Args)]
pub struct Target {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub pid: String,
    /// RFC 3339 anchor; defaults to the latest usable one.
    #[arg(long)]
    pub anchor: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum MealCommand {
    /// Train a detector on the training subjects of a generated cohort.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Ground-truth ledger; defaults to `<data>/ledger.json`.
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect meal events in every participant's glucose.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search the threshold and vote ratio on the validation subjects.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitName {
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Absolute,
    Additive,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.common.set)?;
    match cli.command {
        Command::Generate { out } => generate(&cfg, &out),
        Command::Train { data, out } => train_cmd(&cfg, &data, &out),
        Command::Evaluate {
            data,
            checkpoint,
            out,
            split,
        } => evaluate_cmd(&cfg, &data, &checkpoint, &out, split),
        Command::Forecast { target, out } => {
            let snap = Snapshot::load(&target.data, &target.checkpoint)?;
            let view = snap.forecast(&target.pid, target.anchor.as_deref())?;
            let text = serde_json::to_string_pretty(&view)?;
            match out {
                Some(p) => write_file(&p, &text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Attribute {
            target,
            out,
            layer,
            head,
            window,
            tau,
            scale,
        } => attribute(&target, &out, layer, &head, window, tau, scale),
        Command::Counterfactual {
            data,
            checkpoint,
            out,
            channel,
            ksd,
            hours,
            mode,
            days,
            every,
            rollout,
        } => {
            let req = SweepRequest {
                channel,
                k_sd: ksd,
                hours,
                mode,
                days,
                every,
                rollout,
            };
            counterfactual_cmd(&cfg, &data, &checkpoint, &out, &req)
        }
        Command::MealDetect(m) => meal(&cfg, m),
        Command::Serve { data, checkpoint, addr } => serve(&data, &checkpoint, &addr),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(path, text).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::File {
        path: dir.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn echo_config(cfg: &RunConfig, out: &Path, sections: &[&str]) -> Result<()> {
    write_file(&out.join(EFFECTIVE_CONFIG), &cfg.render_effective(sections)?)
}

fn generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg.generator()?;
    let (cohort, ledger) = generate_cohort(&spec)?;
    create_dir(out)?;
    write_cohort(out, &cohort)?;
    write_ledger(out.join(LEDGER), &ledger)?;
    echo_config(cfg, out, &["gen"])?;
    log::info!("wrote {} participants to {}", cohort.frames.len(), out.display());
    Ok(())
}

fn train_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let model_cfg = cfg.model()?;
    let opts = cfg.train_options()?;
    let cohort = load_cohort(data)?;
    let prep = prepare(&cohort, model_cfg.horizon)?;
    let splits = split(&prep, model_cfg.enc_len, model_cfg.horizon, cfg.stride()?);
    log::info!(
        "{} train, {} val, {} test windows",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let norm = Normalizer::fit(&prep, model_cfg.enc_len);
    let mut model: Forecaster<f32> = Forecaster::new(model_cfg, norm)?;
    let report = train(&mut model, &splits.train, &splits.val, &opts)?;
    create_dir(out)?;
    checkpoint::save(&model, out.join(CHECKPOINT))?;
    report.write_log(out.join("train_log.txt"))?;
    write_json(
        &out.join("train_report.json"),
        &json!({
            "train_windows": splits.train.len(),
            "val_windows": splits.val.len(),
            "dropped": splits.dropped,
            "epoch_val_loss": report.epoch_val_loss,
            "best_val_loss": report.best_val_loss,
            "best_step": report.best_step,
            "epochs_run": report.epochs_run,
            "steps": report.steps,
            "stopped_early": report.stopped_early,
            "seconds": report.seconds,
        }),
    )?;
    echo_config(cfg, out, &["model", "train"])
}

#[derive(Debug, Serialize)]
pub struct EvaluationReport {
    pub split: String,
    pub windows: usize,
    pub quantile_loss: f64,
    pub mae: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub persistence: Metrics,
    /// Relative MAE reduction over persistence.
    pub mae_improvement: f64,
}

pub fn evaluate_windows(model: &Forecaster<f32>, set: &[WindowSample], name: &str) -> Result<EvaluationReport> {
    let preds = model.predict(set)?;
    let targets: Vec<Vec<f64>> = set.iter().map(|w| w.target.clone()).collect();
    let base = set
        .iter()
        .map(|w| persistence_baseline(w, &model.config.quantiles))
        .collect::<cgm_core::Result<Vec<_>>>()?;
    let m = metrics(&preds, &targets)?;
    let p = metrics(&base, &targets)?;
    Ok(EvaluationReport {
        split: name.to_string(),
        windows: set.len(),
        quantile_loss: m.quantile_loss,
        mae: m.mae,
        rmse: m.rmse,
        coverage: m.coverage,
        persistence: p,
        mae_improvement: 1.0 - m.mae / p.mae,
    })
}

fn evaluate_cmd(cfg: &RunConfig, data: &Path, ckpt: &Path, out: &Path, which: SplitName) -> Result<()> {
    let model = load_model(ckpt)?;
    let cohort = load_cohort(data)?;
    let prep = prepare(&cohort, model.config.horizon)?;
    let splits = split(&prep, model.config.enc_len, model.config.horizon, cfg.stride()?);
    let (set, name) = match which {
        SplitName::Val => (&splits.val, "val"),
        SplitName::Test => (&splits.test, "test"),
    };
    let report = evaluate_windows(&model, set, name)?;
    create_dir(out)?;
    write_json(&out.join("metrics.json"), &report)?;
    echo_config(cfg, out, &["train"])?;
    println!(
        "{name}: mae {:.3} rmse {:.3} coverage {:.3} (persistence mae {:.3})",
        report.mae, report.rmse, report.coverage, report.persistence.mae
    );
    Ok(())
}

fn attribute(
    t: &Target,
    out: &Path,
    layer: Option<usize>,
    head: &str,
    window: Option<usize>,
    tau: f64,
    scale: u32,
) -> Result<()> {
    let snap = Snapshot::load(&t.data, &t.checkpoint)?;
    let head = parse_head(head)?;
    let view = snap.attribution(&t.pid, t.anchor.as_deref(), layer, head, window, tau)?;
    let w = snap.window(&t.pid, t.anchor.as_deref())?;
    let (_, interp) = snap.model.explain(&w)?;
    let map = interp.layers[view.layer].attention(head, window, tau, DEFAULT_EPS)?;
    create_dir(out)?;
    write_map_csv(out.join("attention.csv"), &map)?;
    write_map_png(out.join("attention.png"), &map, scale.max(1))?;
    let records = interp.importance_records();
    write_importance_csv(out.join("importance.csv"), &records)?;
    let summary: Vec<_> = summarize_importance(&records)
        .into_iter()
        .map(|(scope, variable, weight)| json!({ "scope": scope, "variable": variable, "weight": weight }))
        .collect();
    write_json(&out.join("importance_summary.json"), &summary)?;
    write_json(&out.join("attention.json"), &view)
}

pub struct SweepRequest {
    pub channel: String,
    pub k_sd: f64,
    pub hours: Option<String>,
    pub mode: ModeArg,
    pub days: usize,
    pub every: usize,
    pub rollout: bool,
}

/// Single-pass and recursive counterfactual medians at one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutPath {
    pub participant_id: String,
    pub anchor: String,
    pub single_pass: Vec<f64>,
    pub rollout: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct SweepOutput {
    pub effects: Vec<(EffectSummary, DiabetesStatus)>,
    pub rollouts: Vec<RolloutPath>,
    /// Anchors rejected by the plausibility gate.
    pub skipped: usize,
}

/// Effects at every admissible anchor of the last `days` days of each participant.
pub fn sweep_effects(snap: &Snapshot, req: &SweepRequest) -> Result<SweepOutput> {
    let channel = parse_channel(&req.channel)?;
    if !req.k_sd.is_finite() {
        return Err(CliError::invalid("ksd", "must be finite"));
    }
    if req.every == 0 || req.days == 0 {
        return Err(CliError::invalid("every", "days and every must be positive"));
    }
    let hours = match &req.hours {
        Some(s) => HourMask::parse(s)?,
        None => HourMask::default_for(channel),
    };
    let mode = match req.mode {
        ModeArg::Absolute => PlanMode::Absolute,
        ModeArg::Additive => PlanMode::Additive,
    };
    let (l, h) = (snap.model.config.enc_len, snap.model.config.horizon);
    let mut out = SweepOutput::default();
    for (frame, profile) in snap.prep.frames.iter().zip(&snap.prep.profiles) {
        let n = frame.len();
        let col = frame.column(channel.feature()).expect("decoder channels are frame columns");
        let first = n.saturating_sub(req.days * STEPS_PER_DAY).max(STEPS_PER_DAY - 1).max(l - 1);
        for a in (first..n.saturating_sub(h)).step_by(req.every) {
            if !hours.contains(frame.timestamp(a)) {
                continue;
            }
            let Some(w) = window_at(frame, profile, a, l, h) else { continue };
            let plan = match build_plan(&col[..=a], &w, channel, req.k_sd, hours, mode, h) {
                Ok(p) => p,
                Err(cgm_core::CoreError::Gate(reason)) => {
                    log::debug!("{} {}: {reason}", profile.participant_id, format_time(w.anchor_time));
                    out.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let (_, cf, eff) = counterfactual_forecast(&snap.model, &w, &plan)?;
            if req.rollout {
                out.rollouts.push(RolloutPath {
                    participant_id: profile.participant_id.clone(),
                    anchor: format_time(w.anchor_time),
                    single_pass: cf.median()[..plan.horizon()].to_vec(),
                    rollout: g_formula_rollout(&snap.model, frame, profile, a, &plan)?,
                });
            }
            out.effects.push((eff, profile.status));
        }
    }
    log::info!(
        "{} anchors evaluated, {} rejected by the plausibility gate",
        out.effects.len(),
        out.skipped
    );
    Ok(out)
}

fn counterfactual_cmd(cfg: &RunConfig, data: &Path, ckpt: &Path, out: &Path, req: &SweepRequest) -> Result<()> {
    let snap = Snapshot::load(data, ckpt)?;
    let SweepOutput { effects, rollouts, .. } = sweep_effects(&snap, req)?;
    if effects.is_empty() {
        return Err(CliError::Gate("no admissible anchors".into()));
    }
    create_dir(out)?;
    let plain: Vec<EffectSummary> = effects.iter().map(|(e, _)| e.clone()).collect();
    write_effects_csv(out.join("effects.csv"), &plain)?;
    write_strata_csv(out.join("strata.csv"), &cohort_effects(&effects, EffectStat::MeanDelta))?;
    write_strata_csv(out.join("strata_max.csv"), &cohort_effects(&effects, EffectStat::MaxEffect))?;
    if req.rollout {
        write_rollouts(&out.join("rollout.csv"), &rollouts)?;
    }
    echo_config(cfg, out, &["train"])?;
    let mean = plain.iter().map(EffectSummary::mean_delta).sum::<f64>() / plain.len() as f64;
    println!("{} anchors, mean delta {mean:.3} mg/dL", plain.len());
    Ok(())
}

/// One row per step: both medians and rollout minus single pass.
fn write_rollouts(path: &Path, rollouts: &[RolloutPath]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(cgm_data::DataError::from)?;
    w.write_record(["participant_id", "anchor", "step", "single_pass", "rollout", "divergence"])
        .map_err(cgm_data::DataError::from)?;
    for r in rollouts {
        for (s, (a, b)) in r.single_pass.iter().zip(&r.rollout).enumerate() {
            w.write_record([
                r.participant_id.clone(),
                r.anchor.clone(),
                (s + 1).to_string(),
                a.to_string(),
                b.to_string(),
                (b - a).to_string(),
            ])
            .map_err(cgm_data::DataError::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn ledger_path(data: &Path, ledger: Option<PathBuf>) -> PathBuf {
    ledger.unwrap_or_else(|| data.join(LEDGER))
}

fn meal_subjects(cfg: &RunConfig, data: &Path, ledger: Option<PathBuf>) -> Result<(Vec<MealSubject>, cgm_meal::train::SubjectSplit)> {
    let det = cfg.detector()?;
    let cohort = load_cohort(data)?;
    let lp = ledger_path(data, ledger);
    fs::metadata(&lp).map_err(|source| CliError::File {
        path: lp.display().to_string(),
        source,
    })?;
    let ledger = read_ledger(&lp)?;
    let subjects = subjects_from_cohort(&cohort, &ledger, det.plateau, det.ramp)?;
    let statuses: Vec<DiabetesStatus> = subjects.iter().map(|s| s.status).collect();
    let parts = split_subjects(&statuses, 1, 1);
    Ok((subjects, parts))
}

fn load_detector(path: &Path) -> Result<Detector> {
    fs::metadata(path).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })?;
    Ok(Detector::from_archive(&Archive::load(path)?)?)
}

fn scored(det: &Detector, subjects: &[&MealSubject]) -> Result<Vec<ScoredTimeline>> {
    subjects
        .iter()
        .map(|s| {
            Ok(ScoredTimeline {
                windows: det.score_series(&s.glucose)?,
                len: s.len(),
                truth: s.truth.clone(),
            })
        })
        .collect()
}

fn meal(cfg: &RunConfig, cmd: MealCommand) -> Result<()> {
    match cmd {
        MealCommand::Train { data, ledger, out } => {
            let (subjects, parts) = meal_subjects(cfg, &data, ledger)?;
            let mut det = Detector::new(cfg.detector()?)?;
            let train_set: Vec<&MealSubject> = parts.train.iter().map(|&i| &subjects[i]).collect();
            let report = train_detector(&mut det, &train_set)?;
            create_dir(&out)?;
            det.to_archive()?.save(out.join(DETECTOR))?;
            let val: Vec<&MealSubject> = parts.val.iter().map(|&i| &subjects[i]).collect();
            let m = evaluate(&scored(&det, &val)?, det.config.theta, det.config.rho);
            write_json(
                &out.join("meal_report.json"),
                &json!({ "train": report, "val_subjects": val.len(), "val": m }),
            )?;
            echo_config(cfg, &out, &["meal"])
        }
        MealCommand::Sweep {
            data,
            ledger,
            model,
            out,
            step,
        } => {
            if !(step > 0.0 && step < 1.0) {
                return Err(CliError::invalid("step", "must be in (0, 1)"));
            }
            let det = load_detector(&model)?;
            let (subjects, parts) = meal_subjects(cfg, &data, ledger)?;
            let val: Vec<&MealSubject> = parts.val.iter().map(|&i| &subjects[i]).collect();
            let test: Vec<&MealSubject> = parts.test.iter().map(|&i| &subjects[i]).collect();
            let g = grid(step, 1.0 - step / 2.0, step);
            let res = sweep(&g, &g, &scored(&det, &val)?).ok_or_else(|| CliError::invalid("step", "empty grid"))?;
            let held_out = evaluate(&scored(&det, &test)?, res.best.theta, res.best.rho);
            create_dir(&out)?;
            write_json(&out.join("sweep.json"), &json!({ "best": res.best, "degenerate": res.degenerate, "test": held_out, "table": res.table }))?;
            println!(
                "theta {} rho {}: val f1 {:.3}, test precision {:.3} recall {:.3}",
                res.best.theta, res.best.rho, res.best.metrics.f1, held_out.precision, held_out.recall
            );
            Ok(())
        }
        MealCommand::Infer { data, model, out } => {
            let det = load_detector(&model)?;
            let cohort = load_cohort(&data)?;
            let prep = prepare(&cohort, 1)?;
            let mut w = csv::Writer::from_path(out_file(&out, "meals.csv")?).map_err(cgm_data::DataError::from)?;
            w.write_record(["participant_id", "start", "end", "steps"]).map_err(cgm_data::DataError::from)?;
            for (frame, p) in prep.frames.iter().zip(&prep.profiles) {
                let g = frame.column("glucose").expect("glucose column");
                let s = MealSubject::new(&p.participant_id, p.status, g, &[], det.config.plateau, det.config.ramp);
                let probs = det.score_series(&s.glucose)?;
                let events = EventSet::from_mask(&reconstruct(&probs, s.len(), det.config.theta, det.config.rho));
                for (a, b) in events.intervals {
                    w.write_record([
                        p.participant_id.clone(),
                        format_time(step_time(frame.start, a)),
                        format_time(step_time(frame.start, b)),
                        (b - a + 1).to_string(),
                    ])
                    .map_err(cgm_data::DataError::from)?;
                }
            }
            w.flush()?;
            echo_config(cfg, &out, &["meal"])
        }
    }
}

fn out_file(dir: &Path, name: &str) -> Result<PathBuf> {
    create_dir(dir)?;
    Ok(dir.join(name))
}

fn serve(data: &Path, ckpt: &Path, addr: &str) -> Result<()> {
    let snap = Arc::new(Snapshot::load(data, ckpt)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("serving {} participants on {}", snap.prep.profiles.len(), listener.local_addr()?);
        axum::serve(listener, crate::api::router(snap))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}
