pub mod checkpoint;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod raster;
pub mod real;
pub mod render;
pub mod repr;
pub mod train;

pub use error::{Error, Result};
