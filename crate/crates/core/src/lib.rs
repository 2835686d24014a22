//! Minute-level prediction of eating and food purchasing from wearable
//! GPS and accelerometer streams.
//!
//! The pipeline runs ingestion ([`data`]), home inference and outlet
//! proximity ([`geo`]), feature construction ([`features`]), per-individual
//! splitting with class balancing ([`split`]), four classifiers
//! ([`learners`]) and grid-searched evaluation ([`evaluation`]). [`synth`]
//! generates cohorts with known structure for testing the whole chain.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod features;
pub mod geo;
pub mod learners;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod split;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
pub use exec::Execution;
pub use matrix::Matrix;
