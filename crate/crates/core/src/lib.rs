//! Transformer sleep staging with shuffled-patch position pretraining.

pub mod cli;
pub mod dsp;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod mp3;
pub mod parallel;
pub mod records;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
