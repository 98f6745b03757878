//! Channel-aware vision transformers trained with hierarchical channel
//! sampling, plus the baselines, evaluation sweeps and attribution tools
//! used to study them on synthetic multi-channel images.

pub mod analysis;
pub mod autograd;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod image;
mod io;
pub mod models;
pub mod nn;
pub mod parallel;
pub mod relevance;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
