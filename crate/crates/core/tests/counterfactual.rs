use chrono::{TimeZone, Timelike, Utc};
use cgm_core::counterfactual::{
    build_plan, cohort_effects, counterfactual_forecast, g_formula_rollout, write_effects_csv, write_strata_csv,
    EffectStat, EffectSummary, HourMask, InterventionPlan, PlanMode,
};
use cgm_core::model::{Forecaster, Normalizer};
use cgm_core::{CoreError, ModelConfig};
use cgm_data::window::window_at;
use cgm_data::{engineer_features, generate_cohort, preprocess, prepare, Channel, DiabetesStatus, GeneratorSpec, Prepared};
use proptest::prelude::*;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads: 2,
        depth: 1,
        d_state: 4,
        d_conv: 4,
        expand: 2,
        headdim: 8,
        var_dim: 4,
        enc_len: 36,
        ..ModelConfig::desk()
    }
}

struct Fixture {
    model: Forecaster<f64>,
    prep: Prepared,
    spec: GeneratorSpec,
}

fn fixture() -> Fixture {
    let spec = GeneratorSpec {
        participants: 3,
        days_min: 2,
        days_max: 2,
        seed: 5,
        missing_rate: 0.0,
        ..Default::default()
    };
    let (cohort, _) = generate_cohort(&spec).unwrap();
    let cfg = tiny_config();
    let prep = prepare(&cohort, cfg.horizon).unwrap();
    let model = Forecaster::new(cfg.clone(), Normalizer::fit(&prep, cfg.enc_len)).unwrap();
    Fixture { model, prep, spec }
}

/// Grid index of `hour:00` on the second day.
fn day2(hour: usize) -> usize {
    288 + hour * 12
}

fn sample_at(fx: &Fixture, p: usize, anchor: usize) -> cgm_data::WindowSample {
    window_at(&fx.prep.frames[p], &fx.prep.profiles[p], anchor, 36, 12).unwrap()
}

#[test]
fn hour_masks() {
    let day = HourMask::parse("9-21").unwrap();
    let night = HourMask::parse("21-6").unwrap();
    let at = |h: u32, m: u32| Utc.with_ymd_and_hms(2024, 1, 2, h, m, 0).unwrap();
    assert!(day.contains(at(9, 0)) && day.contains(at(20, 55)));
    assert!(!day.contains(at(21, 0)) && !day.contains(at(3, 0)));
    assert!(night.contains(at(23, 0)) && night.contains(at(3, 0)) && !night.contains(at(12, 0)));
    assert!(HourMask::ALL.contains(at(0, 0)));
    assert_eq!(HourMask::default_for(Channel::Hr), day);
    assert_eq!(HourMask::default_for(Channel::Rr), night);
    assert!(HourMask::parse("nine").is_err());
    assert!(HourMask::parse("5-30").is_err());
}

/// One day of history alternating 59 and 91: mean 75, sd 16.
fn history() -> Vec<f64> {
    (0..288).map(|i| if i % 2 == 0 { 59.0 } else { 91.0 }).collect()
}

#[test]
fn plan_is_mean_plus_k_sd() {
    let fx = fixture();
    let w = sample_at(&fx, 0, day2(12));
    let plan = build_plan(&history(), &w, Channel::Hr, 2.0, HourMask::default_for(Channel::Hr), PlanMode::Absolute, 12).unwrap();
    assert!((plan.mean - 75.0).abs() < 1e-12 && (plan.sd - 16.0).abs() < 1e-12);
    assert!(plan.values.iter().all(|&v| (v - 107.0).abs() < 1e-12));
    let flat = build_plan(&history(), &w, Channel::Hr, 0.0, HourMask::ALL, PlanMode::Absolute, 5).unwrap();
    assert_eq!(flat.values, vec![75.0; 5]);
    // values leave the physiological range only through the clamp
    let high = build_plan(&history(), &w, Channel::Hr, 20.0, HourMask::ALL, PlanMode::Absolute, 3).unwrap();
    assert_eq!(high.values, vec![220.0; 3]);
}

#[test]
fn additive_plan_shifts_the_observed_future() {
    let fx = fixture();
    let w = sample_at(&fx, 1, day2(10));
    let plan = build_plan(&history(), &w, Channel::Hr, 1.0, HourMask::ALL, PlanMode::Additive, 12).unwrap();
    let obs = w.decoder_column("hr").unwrap();
    for (v, o) in plan.values.iter().zip(&obs) {
        assert!((v - (o + 16.0).clamp(30.0, 220.0)).abs() < 1e-12);
    }
}

#[test]
fn night_anchor_is_gated_for_heart_rate() {
    let fx = fixture();
    let w = sample_at(&fx, 0, day2(3));
    assert_eq!(w.anchor_time.hour(), 3);
    let err = build_plan(&history(), &w, Channel::Hr, 2.0, HourMask::default_for(Channel::Hr), PlanMode::Absolute, 12);
    assert!(matches!(err, Err(CoreError::Gate(_))));
    let plan = InterventionPlan::absolute(Channel::Hr, vec![90.0; 12], HourMask::default_for(Channel::Hr)).unwrap();
    assert!(matches!(counterfactual_forecast(&fx.model, &w, &plan), Err(CoreError::Gate(_))));
}

#[test]
fn invalid_plans_are_rejected() {
    let fx = fixture();
    let w = sample_at(&fx, 0, day2(12));
    assert!(build_plan(&history()[..100], &w, Channel::Hr, 1.0, HourMask::ALL, PlanMode::Absolute, 12).is_err());
    assert!(build_plan(&history(), &w, Channel::Hr, 1.0, HourMask::ALL, PlanMode::Absolute, 13).is_err());
    assert!(build_plan(&history(), &w, Channel::Hr, f64::NAN, HourMask::ALL, PlanMode::Absolute, 12).is_err());
    assert!(build_plan(&history(), &w, Channel::Glucose, 1.0, HourMask::ALL, PlanMode::Absolute, 12).is_err());
    assert!(InterventionPlan::absolute(Channel::Hr, vec![], HourMask::ALL).is_err());
    let long = InterventionPlan::absolute(Channel::Hr, vec![80.0; 13], HourMask::ALL).unwrap();
    assert!(long.apply(&w).is_err());
}

#[test]
fn observed_plan_leaves_forecasts_unchanged() {
    let fx = fixture();
    for p in 0..3 {
        for hour in [0, 7, 13, 19] {
            let w = sample_at(&fx, p, day2(hour));
            for ch in [Channel::Hr, Channel::Rr, Channel::Steps] {
                let plan = InterventionPlan::observed(&w, ch).unwrap();
                let (f, c, e) = counterfactual_forecast(&fx.model, &w, &plan).unwrap();
                assert_eq!(f, c);
                assert!(e.delta.iter().all(|&d| d == 0.0));
                assert_eq!((e.max_effect, e.sign), (0.0, 0.0));
            }
            let zero = build_plan(&history(), &w, Channel::Rr, 0.0, HourMask::ALL, PlanMode::Additive, 12).unwrap();
            let (_, _, e) = counterfactual_forecast(&fx.model, &w, &zero).unwrap();
            assert!(e.delta.iter().all(|&d| d == 0.0));
        }
    }
}

#[test]
fn plans_only_touch_their_channel_and_steps() {
    let fx = fixture();
    let w = sample_at(&fx, 2, day2(11));
    let plan = InterventionPlan::absolute(Channel::Hr, vec![130.0; 4], HourMask::ALL).unwrap();
    let out = plan.apply(&w).unwrap();
    let col = cgm_data::features::dec_index("hr").unwrap();
    for s in 0..12 {
        for v in 0..cgm_data::DEC_VARS.len() {
            let changed = out.decoder_value(s, v) != w.decoder_value(s, v);
            if v != col || s >= 4 {
                assert!(!changed, "step {s} var {v}");
            }
        }
    }
    assert_eq!((out.encoder.clone(), out.target.clone()), (w.encoder.clone(), w.target.clone()));
    let (_, _, e) = counterfactual_forecast(&fx.model, &w, &plan).unwrap();
    assert_eq!(e.delta.len(), 4);
    assert!(e.delta.iter().any(|&d| d != 0.0));
}

#[test]
fn one_step_rollout_equals_single_pass() {
    let fx = fixture();
    let anchor = day2(14);
    let w = sample_at(&fx, 0, anchor);
    let plan = InterventionPlan::absolute(Channel::Hr, vec![120.0], HourMask::ALL).unwrap();
    let path = g_formula_rollout(&fx.model, &fx.prep.frames[0], &fx.prep.profiles[0], anchor, &plan).unwrap();
    let (_, c, _) = counterfactual_forecast(&fx.model, &w, &plan).unwrap();
    assert_eq!(path, vec![c.median()[0]]);
}

#[test]
fn rollout_matches_re_engineered_history() {
    let fx = fixture();
    let anchor = day2(8);
    let w = sample_at(&fx, 1, anchor);
    let plan = InterventionPlan::observed(&w, Channel::Hr).unwrap();
    let path = g_formula_rollout(&fx.model, &fx.prep.frames[1], &fx.prep.profiles[1], anchor, &plan).unwrap();
    assert_eq!(path.len(), 12);

    // independent route: rebuild every feature from the raw aligned frame
    let (cohort, _) = generate_cohort(&fx.spec).unwrap();
    let (mut aligned, _) = preprocess(&cohort.frames[1]).unwrap();
    for s in 0..12 {
        let frame = engineer_features(&aligned);
        let ws = window_at(&frame, &fx.prep.profiles[1], anchor + s, 36, 12).unwrap();
        let next = fx.model.predict_one(&ws).unwrap().median()[0];
        assert!((next - path[s]).abs() < 1e-9, "step {s}: {next} vs {}", path[s]);
        aligned.channel_mut(Channel::Glucose)[anchor + s + 1] = next;
    }
}

#[test]
fn rollout_rejects_bad_requests() {
    let fx = fixture();
    let plan = InterventionPlan::absolute(Channel::Hr, vec![100.0; 13], HourMask::ALL).unwrap();
    assert!(g_formula_rollout(&fx.model, &fx.prep.frames[0], &fx.prep.profiles[0], day2(12), &plan).is_err());
    let plan = InterventionPlan::absolute(Channel::Hr, vec![100.0; 3], HourMask::ALL).unwrap();
    assert!(g_formula_rollout(&fx.model, &fx.prep.frames[0], &fx.prep.profiles[0], 10, &plan).is_err());
    let gated = InterventionPlan::absolute(Channel::Hr, vec![100.0; 3], HourMask::default_for(Channel::Hr)).unwrap();
    assert!(g_formula_rollout(&fx.model, &fx.prep.frames[0], &fx.prep.profiles[0], day2(2), &gated).is_err());
}

fn effect(pid: &str, delta: Vec<f64>) -> EffectSummary {
    let max_effect = delta.iter().copied().fold(0.0f64, |a, d| if d.abs() > a.abs() { d } else { a });
    EffectSummary {
        participant_id: pid.into(),
        anchor_time: Utc.with_ymd_and_hms(2024, 1, 2, 12, 0, 0).unwrap(),
        channel: Channel::Hr,
        k_sd: 2.0,
        delta,
        max_effect,
        sign: max_effect.signum(),
    }
}

#[test]
fn stratum_interval_uses_participant_means() {
    let h = DiabetesStatus::Healthy;
    let effects = vec![
        (effect("a", vec![1.0, 1.0]), h),
        (effect("a", vec![0.0, 2.0]), h),
        (effect("b", vec![2.0]), h),
        (effect("c", vec![3.0, 3.0]), h),
        (effect("d", vec![-4.0]), DiabetesStatus::T2dInsulin),
    ];
    let strata = cohort_effects(&effects, EffectStat::MeanDelta);
    // the single-participant stratum is omitted
    assert_eq!(strata.len(), 1);
    let s = &strata[0];
    assert_eq!((s.status, s.n), (h, 3));
    assert!((s.mean - 2.0).abs() < 1e-12);
    let half = 1.96 * 1.0 / 3f64.sqrt();
    assert!((s.ci_high - s.mean - half).abs() < 1e-12 && (s.mean - s.ci_low - half).abs() < 1e-12);
    let maxes = cohort_effects(&effects, EffectStat::MaxEffect);
    // per-participant max effects 1.5, 2 and 3
    assert!((maxes[0].mean - 13.0 / 6.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn interval_width_shrinks_with_root_n(vals in proptest::collection::vec(-10.0f64..10.0, 2..30)) {
        let effects: Vec<_> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| (effect(&format!("p{i}"), vec![v]), DiabetesStatus::Prediabetes))
            .collect();
        let s = &cohort_effects(&effects, EffectStat::MeanDelta)[0];
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        prop_assert!((s.mean - m).abs() < 1e-9);
        prop_assert!(((s.ci_high - s.ci_low) / 2.0 - 1.96 * sd / n.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn effect_exports() {
    let dir = tempfile::tempdir().unwrap();
    let e = [effect("a", vec![0.5, -1.5]), effect("b", vec![2.0])];
    let path = dir.path().join("effects.csv");
    write_effects_csv(&path, &e).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "participant,anchor,channel,ksd,step,delta_mgdl");
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("a,") && lines[2].ends_with(",hr,2,2,-1.5"));
    let strata = cohort_effects(
        &[(e[0].clone(), DiabetesStatus::Healthy), (e[1].clone(), DiabetesStatus::Healthy)],
        EffectStat::MaxEffect,
    );
    let path = dir.path().join("strata.csv");
    write_strata_csv(&path, &strata).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("status,n,mean,ci_low,ci_high\nhealthy,2,"));
    assert_eq!(e[0].max_effect, -1.5);
}
