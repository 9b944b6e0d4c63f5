pub mod boundary;
pub mod data;
pub mod error;
pub mod fdm;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod trainer;

pub use error::{Error, Result};
