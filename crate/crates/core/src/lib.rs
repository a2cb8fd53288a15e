pub mod error;
pub mod focusmap;
pub mod geometry;
pub mod imageio;
pub mod kernel;
pub mod measures;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod refocus;
pub mod representation;
pub mod service;
pub mod stack;

pub use error::{Error, Result};
