//! Dense tensor arithmetic with a reverse-mode tape.
//!
//! Everything a small training loop needs: [`Tensor`] values, a [`Tape`]
//! that records operations and replays them backwards, named parameter
//! storage with [`Session`] binding, the [`Adam`] optimizer and a flat
//! little-endian [`Archive`] for checkpoints.
//!
//! Element precision is a type parameter bounded by [`Real`]; `f32` is used
//! for training and `f64` for gradient verification.

mod archive;
mod error;
pub mod gradcheck;
pub mod ops;
mod optim;
mod params;
mod real;
pub mod rng;
mod tape;
mod tensor;

pub use archive::{Archive, ArchiveEntry, ARCHIVE_VERSION};
pub use error::{NumericError, Result};
pub use optim::{clip_grad_norm, Adam, AdamState};
pub use params::{ParamId, ParamStore, Session};
pub use real::{DType, Real};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
