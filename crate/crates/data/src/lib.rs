//! Cohort data for glucose forecasting: a synthetic generator with a
//! ground-truth ledger, CSV ingestion, gap imputation, engineered covariates,
//! windowing and chronological splits.

pub mod cohort;
mod error;
pub mod features;
pub mod generate;
pub mod impute;
pub mod io;
pub mod window;

pub use cohort::{Channel, Cohort, DiabetesStatus, RawFrame, StaticInfo, TimeAlignedFrame};
pub use error::{DataError, Result};
pub use features::{engineer_features, EngineeredFrame, DEC_VARS, ENC_VARS};
pub use generate::{generate_cohort, GeneratorSpec, Ledger, MealEvent, ParticipantTruth};
pub use impute::{locf_impute, preprocess};
pub use window::{
    make_windows, prepare, split, FeatureStats, Prepared, Splits, StaticProfile, WindowSample,
};
