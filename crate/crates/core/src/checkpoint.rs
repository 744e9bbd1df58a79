//! Checkpoints: parameter archive plus configuration and normalization metadata.

use std::path::Path;

use cgm_numeric::{Archive, Real};

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::model::{Forecaster, Normalizer};

const KEY_CONFIG: &str = "model_config";
const KEY_NORMALIZER: &str = "normalizer";
const KEY_KIND: &str = "kind";
const KIND: &str = "cgm-forecaster";

pub fn to_archive<T: Real>(model: &Forecaster<T>) -> Result<Archive> {
    let mut a = Archive::new();
    a.set_meta(KEY_KIND, KIND);
    a.set_meta(KEY_CONFIG, serde_json::to_string(&model.config)?);
    a.set_meta(KEY_NORMALIZER, serde_json::to_string(&model.normalizer)?);
    model.store.export(&mut a);
    Ok(a)
}

pub fn from_archive<T: Real>(a: &Archive) -> Result<Forecaster<T>> {
    if a.meta(KEY_KIND) != Some(KIND) {
        return Err(CoreError::Checkpoint("archive is not a forecaster checkpoint".into()));
    }
    let meta = |k: &str| {
        a.meta(k)
            .ok_or_else(|| CoreError::Checkpoint(format!("missing metadata {k}")))
    };
    let config: ModelConfig = serde_json::from_str(meta(KEY_CONFIG)?)?;
    let normalizer: Normalizer = serde_json::from_str(meta(KEY_NORMALIZER)?)?;
    let mut model = Forecaster::new(config, normalizer)?;
    model.store.import(a)?;
    Ok(model)
}

pub fn save<T: Real>(model: &Forecaster<T>, path: impl AsRef<Path>) -> Result<()> {
    to_archive(model)?.save(path)?;
    Ok(())
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<Forecaster<T>> {
    from_archive(&Archive::load(path)?)
}
