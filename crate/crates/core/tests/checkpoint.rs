use cgm_core::checkpoint::{from_archive, load, save, to_archive};
use cgm_core::model::{Forecaster, Normalizer};
use cgm_core::ModelConfig;
use cgm_data::{generate_cohort, prepare, split, GeneratorSpec};
use cgm_numeric::Archive;

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

#[test]
fn saved_model_forecasts_bit_exactly() {
    let spec = GeneratorSpec {
        participants: 3,
        days_min: 2,
        days_max: 2,
        seed: 9,
        ..Default::default()
    };
    let (cohort, _) = generate_cohort(&spec).unwrap();
    let cfg = tiny_config();
    let prep = prepare(&cohort, cfg.horizon).unwrap();
    let sp = split(&prep, cfg.enc_len, cfg.horizon, 24);
    let norm = Normalizer::fit(&prep, cfg.enc_len);
    let mut model: Forecaster<f32> = Forecaster::new(cfg, norm).unwrap();
    // move the parameters away from their initial values
    for (i, t) in model.store.tensors_mut().iter_mut().enumerate() {
        for (j, v) in t.data_mut().iter_mut().enumerate() {
            *v += 1e-3 * ((i * 31 + j * 7) % 13) as f32;
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save(&model, &path).unwrap();
    let back: Forecaster<f32> = load(&path).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.normalizer, model.normalizer);
    let samples: Vec<_> = sp.train.iter().take(20).chain(&sp.test).cloned().collect();
    let a = model.predict(&samples).unwrap();
    let b = back.predict(&samples).unwrap();
    for (x, y) in a.iter().zip(&b) {
        let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.raw), bits(&y.raw));
    }
    // the byte form round-trips as well
    let bytes = to_archive(&model).unwrap().to_bytes();
    let again: Forecaster<f32> = from_archive(&Archive::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(again.predict(&samples).unwrap(), a);
}

#[test]
fn foreign_archives_are_rejected() {
    let mut a = Archive::new();
    a.set_meta("kind", "something-else");
    assert!(from_archive::<f32>(&a).is_err());
    assert!(load::<f32>("/nonexistent/model.ckpt").is_err());
}
