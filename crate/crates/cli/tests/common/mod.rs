#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

/// Small cohort and model that train in seconds.
pub const TINY: &[&str] = &[
    "gen.participants=4",
    "gen.days_min=4",
    "gen.days_max=4",
    "gen.seed=5",
    "model.d_model=16",
    "model.heads=2",
    "model.headdim=16",
    "model.expand=2",
    "model.depth=1",
    "model.d_state=8",
    "model.d_conv=4",
    "model.var_dim=4",
    "model.enc_len=36",
    "model.max_epochs=4",
    "train.stride=4",
];

pub fn cgm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run cgm")
}

pub fn cgm_ok(args: &[&str]) -> Output {
    let out = cgm(args);
    assert!(
        out.status.success(),
        "cgm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    for s in TINY {
        v.push("--set");
        v.push(s);
    }
    v
}

pub fn scratch(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&p);
    std::fs::create_dir_all(&p).expect("scratch dir");
    p
}

pub struct Trained {
    pub data: PathBuf,
    pub run: PathBuf,
}

impl Trained {
    pub fn checkpoint(&self) -> PathBuf {
        self.run.join("model.ckpt")
    }
}

/// Generates and trains the tiny setup once per test binary.
pub fn trained(tag: &str) -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let root = scratch(&format!("trained-{tag}"));
        let data = root.join("data");
        let run = root.join("run");
        let (d, r) = (data.to_str().unwrap(), run.to_str().unwrap());
        cgm_ok(&with_tiny(&["generate", "--out", d]));
        cgm_ok(&with_tiny(&["train", "--data", d, "--out", r]));
        Trained { data, run }
    })
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}
