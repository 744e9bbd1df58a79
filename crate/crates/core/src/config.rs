//! Model and training hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub const DEFAULT_QUANTILES: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    /// Number of stacked Mamba blocks before static enrichment.
    pub depth: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub expand: usize,
    pub headdim: usize,
    /// Width of the per-variable temporal embeddings.
    pub var_dim: usize,
    pub dropout: f64,
    pub quantiles: Vec<f64>,
    pub enc_len: usize,
    pub horizon: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Chunk length of the inference-time scan.
    pub chunk: usize,
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Patience counted in validation checks.
    pub patience: usize,
    pub val_checks_per_epoch: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration that trains on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            depth: 2,
            d_state: 16,
            d_conv: 8,
            expand: 4,
            headdim: 32,
            var_dim: 8,
            dropout: 0.2,
            quantiles: DEFAULT_QUANTILES.to_vec(),
            enc_len: 144,
            horizon: 12,
            dt_min: 1e-3,
            dt_max: 10.0,
            chunk: 128,
            lr: 1e-3,
            batch: 32,
            max_epochs: 12,
            patience: 15,
            val_checks_per_epoch: 5,
            seed: 7,
        }
    }

    /// Full-size hyperparameters.
    pub fn paper_scale() -> Self {
        Self {
            d_model: 128,
            heads: 8,
            depth: 4,
            d_state: 128,
            headdim: 64,
            var_dim: 16,
            dropout: 0.2,
            max_epochs: 30,
            ..Self::desk()
        }
    }

    pub fn d_inner(&self) -> usize {
        self.heads * self.headdim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("depth", self.depth),
            ("d_state", self.d_state),
            ("d_conv", self.d_conv),
            ("expand", self.expand),
            ("headdim", self.headdim),
            ("var_dim", self.var_dim),
            ("enc_len", self.enc_len),
            ("horizon", self.horizon),
            ("chunk", self.chunk),
            ("batch", self.batch),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("val_checks_per_epoch", self.val_checks_per_epoch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config_err(format!("{name} must be positive")));
            }
        }
        if self.expand * self.d_model != self.heads * self.headdim {
            return Err(config_err(format!(
                "expand * d_model = {} but heads * headdim = {}",
                self.expand * self.d_model,
                self.heads * self.headdim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err("dropout must lie in [0, 1)"));
        }
        if self.quantiles.is_empty()
            || self.quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0))
            || self.quantiles.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(config_err(
                "quantiles must be strictly increasing inside (0, 1)",
            ));
        }
        if !(self.dt_min > 0.0 && self.dt_min < self.dt_max) {
            return Err(config_err("dt limits must satisfy 0 < dt_min < dt_max"));
        }
        if !(self.lr > 0.0) {
            return Err(config_err("lr must be positive"));
        }
        Ok(())
    }

    /// Index of the median quantile, if configured.
    pub fn median_index(&self) -> Option<usize> {
        self.quantiles.iter().position(|&q| (q - 0.5).abs() < 1e-12)
    }
}
