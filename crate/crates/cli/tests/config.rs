use cgm_cli::config::{RunConfig, DEFAULT_STRIDE};
use cgm_cli::CliError;
use cgm_core::ModelConfig;

#[test]
fn empty_config_gives_defaults() {
    let c = RunConfig::parse("# nothing\n\n").unwrap();
    assert_eq!(c.model().unwrap(), ModelConfig::desk());
    assert_eq!(c.stride().unwrap(), DEFAULT_STRIDE);
    let o = c.train_options().unwrap();
    assert_eq!(o.clip_norm, Some(1.0));
    assert!(o.restore_best);
    assert_eq!(o.epochs, None);
}

#[test]
fn file_values_reach_sections() {
    let c = RunConfig::parse(
        "model.d_model = 16\nmodel.headdim = 16\nmodel.quantiles = 0.05, 0.5, 0.95\n\
         gen.participants = 3\ngen.meals = false\nmeal.theta = 0.5\ntrain.clip_norm = none\ntrain.epochs = 0\n",
    )
    .unwrap();
    let m = c.model().unwrap();
    assert_eq!(m.d_model, 16);
    assert_eq!(m.quantiles, vec![0.05, 0.5, 0.95]);
    let g = c.generator().unwrap();
    assert_eq!(g.participants, 3);
    assert!(!g.meals);
    assert_eq!(c.detector().unwrap().theta, 0.5);
    let o = c.train_options().unwrap();
    assert_eq!(o.clip_norm, None);
    assert_eq!(o.epochs, Some(0));
}

#[test]
fn overrides_replace_file_values() {
    let mut c = RunConfig::parse("gen.seed = 3\n").unwrap();
    c.apply_overrides(&["gen.seed=9".into(), "train.stride = 12".into()]).unwrap();
    assert_eq!(c.generator().unwrap().seed, 9);
    assert_eq!(c.stride().unwrap(), 12);
}

#[test]
fn rejects_bad_input() {
    let cases = [
        "model.nope = 1",
        "bogus = 1",
        "gen.seed = 1\ngen.seed = 2",
        "gen.seed",
        "model.d_model = sixteen",
        "model.d_model = 0",
        "model.heads = 3",
        "train.stride = 0",
        "train.clip_norm = big",
        "train.other = 1",
        "meal.theta = yes",
    ];
    for text in cases {
        let e = RunConfig::parse(text).expect_err(text);
        assert!(matches!(e, CliError::Config(_)), "{text}: {e}");
        assert_eq!(e.exit_code(), 2);
    }
    let mut c = RunConfig::default();
    assert!(c.apply_overrides(&["gen.seed".into()]).is_err());
    assert!(c.set("model.heads", "3").is_err());
    assert_eq!(c, RunConfig::default(), "failed set leaves the config untouched");
}

#[test]
fn effective_config_parses_back() {
    let mut c = RunConfig::default();
    c.apply_overrides(&["model.d_model=16".into(), "model.headdim=16".into(), "gen.participants=5".into()])
        .unwrap();
    let text = c.render_effective(&["model", "gen", "meal"]).unwrap();
    let back = RunConfig::parse(&text).unwrap();
    assert_eq!(back.model().unwrap(), c.model().unwrap());
    assert_eq!(back.generator().unwrap(), c.generator().unwrap());
    assert_eq!(back.detector().unwrap(), c.detector().unwrap());
    assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
}
