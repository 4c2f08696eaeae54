pub mod augment;
pub mod config;
pub mod dataio;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod pseudolabel;
pub mod segmenter;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
