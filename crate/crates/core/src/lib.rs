pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod masking;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
