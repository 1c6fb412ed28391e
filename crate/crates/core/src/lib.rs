//! Named-entity recognition heads over frozen encoder embeddings.
//!
//! The crate reads CoNLL corpora and per-token embedding files, trains
//! linear or BiLSTM heads with optional CRF layers and a decaying
//! coarse-grained auxiliary loss, and scores predictions at entity level.
//! A feature-engineered CRF is included as a classic baseline.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the precision used by the command-line tool.

pub mod classic;
pub mod crf;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod heads;
pub mod params;
pub mod scalar;
pub mod seeding;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type CrfParams64 = crf::CrfParams<f64>;
pub type CrfParams32 = crf::CrfParams<f32>;
pub type HeadParams64 = heads::HeadParams<f64>;
pub type HeadParams32 = heads::HeadParams<f32>;
pub type ModelParams64 = training::ModelParams<f64>;
pub type ModelParams32 = training::ModelParams<f32>;
pub type Checkpoint64 = training::Checkpoint<f64>;
pub type Checkpoint32 = training::Checkpoint<f32>;
