pub mod config;
pub mod dataio;
pub mod error;
pub mod metrics;
pub mod model;
pub mod signal;
pub mod synthgen;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
