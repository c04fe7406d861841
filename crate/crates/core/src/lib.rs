pub mod attention;
pub mod csvio;
pub mod error;
pub mod finetune;
pub mod forecaster;
pub mod harness;
pub mod nn;
pub mod numeric;
pub mod static_encoder;

pub use error::{Error, Result};
