mod common;

use common::{cgm, cgm_ok, s, scratch, trained, with_tiny};
use serde_json::Value;

fn read_json(p: &std::path::Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn generate_is_deterministic() {
    let root = scratch("generate-twice");
    let (a, b) = (root.join("a"), root.join("b"));
    cgm_ok(&with_tiny(&["generate", "--out", s(&a)]));
    cgm_ok(&with_tiny(&["generate", "--out", s(&b)]));
    for f in ["cohort.csv", "statics.csv", "ledger.json", "config.effective"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty(), "{f} empty");
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let c = root.join("c");
    let mut args = with_tiny(&["generate", "--out", s(&c)]);
    args.extend(["--set", "gen.seed=6"]);
    cgm_ok(&args);
    assert_ne!(std::fs::read(a.join("cohort.csv")).unwrap(), std::fs::read(c.join("cohort.csv")).unwrap());
}

#[test]
fn config_file_and_overrides_are_echoed() {
    let root = scratch("config-echo");
    let cfg = root.join("run.cfg");
    std::fs::write(&cfg, "gen.participants = 2\ngen.days_min = 2\ngen.days_max = 2\ngen.seed = 1\n").unwrap();
    let out = root.join("data");
    cgm_ok(&["generate", "--config", s(&cfg), "--set", "gen.seed=4", "--out", s(&out)]);
    let echo = std::fs::read_to_string(out.join("config.effective")).unwrap();
    assert!(echo.contains("gen.seed = 4"), "{echo}");
    assert!(echo.contains("gen.participants = 2"), "{echo}");
    assert!(echo.contains("gen.noise_scale = 1"), "defaults are echoed too: {echo}");
}

#[test]
fn train_then_evaluate_writes_metrics() {
    let t = trained("cli");
    assert!(t.checkpoint().exists());
    assert!(t.run.join("train_log.txt").exists());
    let echo = std::fs::read_to_string(t.run.join("config.effective")).unwrap();
    assert!(echo.contains("model.d_model = 16"), "{echo}");
    let out = t.run.join("eval");
    cgm_ok(&with_tiny(&["evaluate", "--data", s(&t.data), "--checkpoint", s(&t.checkpoint()), "--out", s(&out)]));
    let m = read_json(&out.join("metrics.json"));
    for k in ["quantile_loss", "mae", "rmse", "coverage"] {
        let v = m[k].as_f64().unwrap_or_else(|| panic!("{k} missing: {m}"));
        assert!(v.is_finite() && v >= 0.0, "{k} = {v}");
        assert!(m["persistence"][k].as_f64().is_some(), "persistence {k}");
    }
    assert_eq!(m["split"], "test");
    assert!(m["coverage"].as_f64().unwrap() <= 1.0);
}

#[test]
fn training_beats_an_untrained_model() {
    let t = trained("cli");
    let root = scratch("untrained");
    let mut args = with_tiny(&["train", "--data", s(&t.data), "--out", s(&root)]);
    args.extend(["--set", "train.epochs=0"]);
    cgm_ok(&args);
    let mae = |ckpt: &std::path::Path, out: &std::path::Path| {
        cgm_ok(&with_tiny(&["evaluate", "--data", s(&t.data), "--checkpoint", s(ckpt), "--out", s(out), "--split", "val"]));
        read_json(&out.join("metrics.json"))["mae"].as_f64().unwrap()
    };
    let raw = mae(&root.join("model.ckpt"), &root.join("eval"));
    let fit = mae(&t.checkpoint(), &t.run.join("eval-val"));
    assert!(raw > 2.0 * fit, "untrained {raw} vs trained {fit}");
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        vec!["generate"],
        vec!["frobnicate"],
        vec!["generate", "--out", "/tmp/x", "--bogus"],
        vec!["generate", "--out", "/tmp/x", "--set", "gen.unknown=1"],
        vec!["generate", "--out", "/tmp/x", "--set", "gen.seed"],
        vec!["evaluate", "--data", "d", "--checkpoint", "c", "--out", "o", "--split", "train"],
    ] {
        let out = cgm(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn missing_files_exit_with_one() {
    let root = scratch("missing");
    let nowhere = root.join("nowhere");
    let t = trained("cli");
    for args in [
        vec!["train", "--data", s(&nowhere), "--out", s(&root)],
        vec!["evaluate", "--data", s(&t.data), "--checkpoint", s(&nowhere), "--out", s(&root)],
        vec!["forecast", "--data", s(&nowhere), "--checkpoint", s(&t.checkpoint()), "--pid", "P000"],
        vec!["serve", "--data", s(&t.data), "--checkpoint", s(&nowhere)],
        vec!["generate", "--config", s(&nowhere), "--out", s(&root)],
    ] {
        let out = cgm(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
    }
}

#[test]
fn forecast_attribute_and_counterfactual_outputs() {
    let t = trained("cli");
    let (d, c) = (s(&t.data), t.checkpoint());
    let c = s(&c);
    let out = cgm_ok(&["forecast", "--data", d, "--checkpoint", c, "--pid", "P001"]);
    let f: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(f["values"].as_array().unwrap().len(), 12);
    assert_eq!(f["times"].as_array().unwrap().len(), 12);

    let att = t.run.join("attr");
    cgm_ok(&["attribute", "--data", d, "--checkpoint", c, "--pid", "P002", "--out", s(&att), "--window", "24"]);
    for f in ["attention.csv", "attention.png", "importance.csv", "importance_summary.json", "attention.json"] {
        assert!(att.join(f).exists(), "{f}");
    }
    let view = read_json(&att.join("attention.json"));
    for row in view["rows"].as_array().unwrap() {
        let sum: f64 = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    let cf = t.run.join("cf");
    cgm_ok(&["counterfactual", "--data", d, "--checkpoint", c, "--out", s(&cf), "--channel", "hr", "--ksd", "2", "--hours", "0-24", "--rollout"]);
    let effects = std::fs::read_to_string(cf.join("effects.csv")).unwrap();
    assert!(effects.lines().count() > 12, "{effects}");
    assert!(cf.join("strata.csv").exists());
    let rollout = std::fs::read_to_string(cf.join("rollout.csv")).unwrap();
    let mut lines = rollout.lines();
    assert_eq!(lines.next(), Some("participant_id,anchor,step,single_pass,rollout,divergence"));
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f[2] == "1" {
            assert_eq!(f[5].parse::<f64>().unwrap(), 0.0, "first rollout step is the single pass: {line}");
        }
    }

    let bad = cgm(&["counterfactual", "--data", d, "--checkpoint", c, "--out", s(&cf), "--channel", "glucose", "--ksd", "1"]);
    assert_eq!(bad.status.code(), Some(2));
    let bad = cgm(&["attribute", "--data", d, "--checkpoint", c, "--pid", "P002", "--out", s(&att), "--head", "9"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn meal_detect_train_sweep_infer() {
    let root = scratch("meal");
    let data = root.join("data");
    let tiny_meal = [
        "--set", "gen.participants=12", "--set", "gen.days_min=2", "--set", "gen.days_max=2",
        "--set", "meal.epochs=1", "--set", "meal.train_stride=36", "--set", "meal.hidden=8",
        "--set", "meal.channels=4", "--set", "meal.stride=12",
    ];
    let with = |args: &[&str]| -> Vec<String> { args.iter().chain(tiny_meal.iter()).map(|x| x.to_string()).collect() };
    let run = |args: Vec<String>| cgm_ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    run(with(&["generate", "--out", s(&data)]));
    let det = root.join("det");
    run(with(&["meal-detect", "train", "--data", s(&data), "--out", s(&det)]));
    assert!(det.join("detector.ckpt").exists());
    let rep = read_json(&det.join("meal_report.json"));
    assert_eq!(rep["val_subjects"], 4);
    let sw = root.join("sweep");
    run(with(&["meal-detect", "sweep", "--data", s(&data), "--model", s(&det.join("detector.ckpt")), "--out", s(&sw), "--step", "0.25"]));
    let res = read_json(&sw.join("sweep.json"));
    assert_eq!(res["table"].as_array().unwrap().len(), 9);
    let inf = root.join("infer");
    run(with(&["meal-detect", "infer", "--data", s(&data), "--model", s(&det.join("detector.ckpt")), "--out", s(&inf)]));
    let csv = std::fs::read_to_string(inf.join("meals.csv")).unwrap();
    assert!(csv.starts_with("participant_id,start,end,steps"));
}
