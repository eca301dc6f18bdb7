pub mod batch;
pub mod data;
mod binio;
pub mod diffusion;
pub mod digest;
pub mod error;
pub mod guidance;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod samplers;
pub mod shift;

pub use batch::{ImageBatch, ItemShape};
pub use error::{Error, Result};
