pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod numeric;
pub mod simulator;
pub mod temporal;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
