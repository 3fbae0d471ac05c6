//! Unpaired conversion between handwritten and machine-printed glyph images
//! by bridging the denoising processes of a conditional DDPM at a fixed
//! timestep, together with the SDEdit baseline, synthetic data and metrics.

pub mod batch;
pub mod checkpoint;
pub mod conversion;
pub mod datasets;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod rng;

pub use batch::{ClassToken, Conditioning, Direction, Domain, ImageBatch, NUM_CLASSES};
pub use error::{Error, Result};
