use cgm_core::metrics::{metrics, persistence_baseline, pinball, quantile_loss};
use cgm_core::model::{rearrange, Batch, Forecaster, Normalizer};
use cgm_core::train::{train, TrainOptions};
use cgm_core::{ForecastResult, ModelConfig};
use cgm_data::features::{is_glucose_derived, DEC_VARS};
use cgm_data::window::{check_decoder_vars, denormalize, normalize_target, StaticProfile};
use cgm_data::{generate_cohort, prepare, split, DiabetesStatus, GeneratorSpec, Splits};
use cgm_numeric::{rng, Session, Tensor};
use proptest::prelude::*;
use rand::Rng;

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
        batch: 16,
        max_epochs: 3,
        ..ModelConfig::desk()
    }
}

fn fixture(cfg: &ModelConfig) -> (Normalizer, Splits) {
    let spec = GeneratorSpec {
        participants: 4,
        days_min: 3,
        days_max: 3,
        seed: 3,
        ..Default::default()
    };
    let (cohort, _) = generate_cohort(&spec).unwrap();
    let prep = prepare(&cohort, cfg.horizon).unwrap();
    let norm = Normalizer::fit(&prep, cfg.enc_len);
    (norm, split(&prep, cfg.enc_len, cfg.horizon, 12))
}

fn tiny_model() -> (Forecaster<f64>, Splits) {
    let cfg = tiny_config();
    let (norm, sp) = fixture(&cfg);
    (Forecaster::new(cfg, norm).unwrap(), sp)
}

fn result(values: Vec<f64>) -> ForecastResult {
    ForecastResult {
        participant_id: "p".into(),
        anchor_time: chrono::DateTime::UNIX_EPOCH,
        quantiles: vec![0.1, 0.5, 0.9],
        raw: values.clone(),
        values,
    }
}

#[test]
fn forecasts_have_one_row_per_horizon_step() {
    let (model, sp) = tiny_model();
    let f = model.predict_one(&sp.test[0]).unwrap();
    assert_eq!(f.horizon(), 12);
    assert_eq!(f.values.len(), 36);
    assert_eq!(f.participant_id, sp.test[0].participant_id);
    assert_eq!(f.anchor_time, sp.test[0].anchor_time);
}

#[test]
fn inference_is_deterministic() {
    let (model, sp) = tiny_model();
    let a = model.predict(&sp.val).unwrap();
    let b = model.predict(&sp.val).unwrap();
    assert_eq!(a, b);
    // batching does not change a sample's forecast
    assert_eq!(model.predict_one(&sp.val[1]).unwrap(), a[1]);
}

#[test]
fn decoder_steps_only_influence_later_forecasts() {
    let (model, sp) = tiny_model();
    let base = model.predict_one(&sp.test[0]).unwrap();
    for k in [0, 4, 11] {
        let mut w = sp.test[0].clone();
        let mut hr = w.decoder_column("hr").unwrap();
        hr[k] += 25.0;
        w.set_decoder_column("hr", &hr).unwrap();
        let f = model.predict_one(&w).unwrap();
        for h in 0..12 {
            let (a, b) = (&base.raw[h * 3..(h + 1) * 3], &f.raw[h * 3..(h + 1) * 3]);
            if h < k {
                assert_eq!(a, b, "step {h} moved after perturbing decoder step {k}");
            } else if h == k {
                assert_ne!(a, b);
            }
        }
    }
}

#[test]
fn decoder_carries_no_glucose() {
    assert!(DEC_VARS.iter().all(|v| !is_glucose_derived(v)));
    assert!(check_decoder_vars(&DEC_VARS).is_ok());
    assert!(check_decoder_vars(&["hr", "glucose"]).is_err());
    assert!(check_decoder_vars(&["glucose_lag1"]).is_err());
}

#[test]
fn zeroing_future_covariates_changes_forecasts() {
    let (model, sp) = tiny_model();
    let w = &sp.test[1];
    let mut z = w.clone();
    z.decoder.iter_mut().for_each(|x| *x = 0.0);
    assert_ne!(model.predict_one(w).unwrap().raw, model.predict_one(&z).unwrap().raw);
}

#[test]
fn wrong_window_length_is_rejected() {
    let (model, _) = tiny_model();
    let cfg = ModelConfig { enc_len: 48, ..tiny_config() };
    let (_, other) = fixture(&cfg);
    assert!(model.predict_one(&other.test[0]).is_err());
}

#[test]
fn forecasts_are_the_denormalized_network_output() {
    let (model, sp) = tiny_model();
    let w = &sp.test[2];
    let enc = model.encode(w).unwrap();
    let batch = Batch::from_encoded(&[&enc]);
    let mut s = Session::new(&model.store, false, 0);
    let fv = model.forward_tape(&mut s, &batch).unwrap();
    let net = s.tape.value(fv.pred).to_f64_vec();
    let f = model.predict_one(w).unwrap();
    for (r, n) in f.raw.iter().zip(&net) {
        assert!((r - denormalize(*n, &w.statics)).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn doubling_the_scale_doubles_the_deviation(y in -5.0f64..5.0, center in 60.0f64..200.0, scale in 1.0f64..60.0) {
        let mut p = StaticProfile {
            participant_id: "p".into(),
            age: 50.0,
            status: DiabetesStatus::Healthy,
            site: "a".into(),
            glucose_center: center,
            glucose_scale: scale,
        };
        let a = denormalize(y, &p) - center;
        p.glucose_scale = 2.0 * scale;
        let b = denormalize(y, &p) - center;
        prop_assert!((b - 2.0 * a).abs() < 1e-9);
        prop_assert!((normalize_target(denormalize(y, &p), &p) - y).abs() < 1e-12);
    }

    #[test]
    fn rearranged_quantiles_never_cross(vals in proptest::collection::vec(-50.0f64..50.0, 36)) {
        let mut v = vals.clone();
        rearrange(&mut v, 3);
        for row in v.chunks(3) {
            prop_assert!(row[0] <= row[1] && row[1] <= row[2]);
        }
        for (a, b) in v.chunks(3).zip(vals.chunks(3)) {
            let mut s = b.to_vec();
            s.sort_by(f64::total_cmp);
            prop_assert_eq!(a, &s[..]);
        }
    }
}

#[test]
fn every_forecast_is_monotone_in_quantile() {
    let (model, sp) = tiny_model();
    for f in model.predict(&sp.train[..64]).unwrap() {
        for h in 0..12 {
            assert!(f.at(h, 0) <= f.at(h, 1) && f.at(h, 1) <= f.at(h, 2));
        }
    }
}

#[test]
fn pinball_examples() {
    assert!((pinball(10.0, 8.0, 0.9) - 1.8).abs() < 1e-12);
    assert!((pinball(10.0, 8.0, 0.1) - 0.2).abs() < 1e-12);
    let y = [3.0, 7.5, -1.0];
    let exact: Vec<f64> = y.iter().flat_map(|&v| [v, v, v]).collect();
    assert_eq!(quantile_loss(&exact, &y, &[0.1, 0.5, 0.9]).unwrap(), 0.0);
    assert!(quantile_loss(&exact[..8], &y, &[0.1, 0.5, 0.9]).is_err());
}

#[test]
fn tape_pinball_matches_reference() {
    let mut r = rng::seeded(4);
    let pred: Vec<f64> = (0..12 * 3).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
    let y: Vec<f64> = (0..12).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
    let q = [0.1, 0.5, 0.9];
    let mut tape = cgm_numeric::Tape::<f64>::new();
    let pv = tape.constant(Tensor::from_f64(&[12, 3], &pred).unwrap());
    let yv = tape.constant(Tensor::from_f64(&[12], &y).unwrap());
    let l = tape.pinball(pv, yv, &q).unwrap();
    assert!((tape.value(l).item() - quantile_loss(&pred, &y, &q).unwrap()).abs() < 1e-12);
}

#[test]
fn constant_minimizing_pinball_is_the_empirical_quantile() {
    let mut r = rng::seeded(5);
    let ys: Vec<f64> = (0..101).map(|_| r.random::<f64>() * 100.0).collect();
    let mut sorted = ys.clone();
    sorted.sort_by(f64::total_cmp);
    for q in [0.1, 0.5, 0.9] {
        let loss = |c: f64| ys.iter().map(|&y| pinball(y, c, q)).sum::<f64>();
        let (mut best, mut best_c) = (f64::INFINITY, 0.0);
        for i in 0..=20_000 {
            let c = i as f64 * 0.005;
            let l = loss(c);
            if l < best {
                (best, best_c) = (l, c);
            }
        }
        // with 101 samples the q-quantile is the order statistic at index 100 q
        let want = sorted[(100.0 * q) as usize];
        assert!((best_c - want).abs() < 0.01, "q {q}: grid {best_c} vs {want}");
    }
}

#[test]
fn point_metric_examples() {
    let y = vec![vec![100.0; 12]];
    let m = metrics(&[result(vec![100.0; 36])], &y).unwrap();
    assert_eq!((m.mae, m.rmse, m.quantile_loss), (0.0, 0.0, 0.0));
    let m = metrics(&[result(vec![103.0; 36])], &y).unwrap();
    assert!((m.mae - 3.0).abs() < 1e-12 && (m.rmse - 3.0).abs() < 1e-12);
    let two = result(vec![0.0; 6]);
    let m = metrics(&[two], &[vec![0.0, 4.0]]).unwrap();
    assert!((m.mae - 2.0).abs() < 1e-12);
    assert!((m.rmse - 8f64.sqrt()).abs() < 1e-12);
    assert!(metrics(&[], &[]).is_err());
}

#[test]
fn persistence_repeats_the_last_reading() {
    let (_, sp) = tiny_model();
    let mut w = sp.test[0].clone();
    let last = (w.enc_len - 1) * cgm_data::features::ENC_VARS.len();
    w.encoder[last] = 120.0;
    let f = persistence_baseline(&w, &[0.1, 0.5, 0.9]).unwrap();
    assert_eq!(f.values, vec![120.0; 36]);
    w.target = vec![120.0; 12];
    let m = metrics(&[f], &[w.target.clone()]).unwrap();
    assert_eq!(m.mae, 0.0);
}

#[test]
fn invalid_configurations_are_rejected() {
    let bad = [
        ModelConfig { quantiles: vec![0.5, 0.1], ..ModelConfig::desk() },
        ModelConfig { heads: 3, ..ModelConfig::desk() },
        ModelConfig { dt_min: 0.0, ..ModelConfig::desk() },
        ModelConfig { dropout: 1.0, ..ModelConfig::desk() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err());
    }
    assert!(ModelConfig::desk().validate().is_ok());
    assert!(ModelConfig::paper_scale().validate().is_ok());
}

#[test]
fn validation_loss_falls_over_the_first_epochs() {
    let cfg = tiny_config();
    let (norm, sp) = fixture(&cfg);
    let mut model: Forecaster<f32> = Forecaster::new(cfg, norm).unwrap();
    let rep = train(&mut model, &sp.train, &sp.val, &TrainOptions { epochs: Some(3), ..Default::default() }).unwrap();
    assert_eq!(rep.epoch_val_loss.len(), 4);
    for w in rep.epoch_val_loss.windows(2) {
        assert!(w[1] < w[0], "{:?}", rep.epoch_val_loss);
    }
}
