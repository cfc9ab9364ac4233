pub mod cli;
pub mod error;
pub mod fixtures;
pub mod format;
pub mod mapper;
pub mod nn;
pub mod quant;
pub mod sim;
pub mod trainer;

pub use error::{Error, Result};
