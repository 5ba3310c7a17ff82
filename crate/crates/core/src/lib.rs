pub mod autodiff;
pub mod cli;
pub mod color;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{Error, Result};
