mod codec;
pub mod cost_model;
pub mod error;
pub mod harness;
pub mod patch_store;
pub mod predictor;
pub mod router;
pub mod sim;

pub use error::{Error, Result};
