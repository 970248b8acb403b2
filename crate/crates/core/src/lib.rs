pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod format;
pub mod models;
pub mod netsim;
pub mod planner;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod theorylab;
pub mod train;

pub use error::{Error, FormatError, Result};
