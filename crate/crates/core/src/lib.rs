pub mod dataio;
pub mod llmproto;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod sampling;
pub mod numerics;
pub mod model;
pub mod rng;
pub mod taxonomy;
pub mod trainer;

pub use error::{Error, Result};
