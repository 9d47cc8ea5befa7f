//! Gait-based user recognition from head-worn accelerometer data.
//!
//! The pipeline: accelerometer sessions ([`signal`]) become dB spectrogram
//! windows, a small CNN ([`encoder`]) maps each window to a unit-norm
//! embedding trained with the NT-Xent contrastive loss ([`trainer`]), users
//! are enrolled as averaged templates and verified by cosine distance
//! ([`identity`]), and [`eval`] runs the per-user F1 / FAR / FRR / EER
//! protocol. [`synth`] generates deterministic synthetic gait corpora.

pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod identity;
pub mod model;
pub mod rng;
pub mod signal;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
