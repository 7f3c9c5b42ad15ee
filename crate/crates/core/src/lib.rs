//! Two-stage dam-reservoir extraction from RGB rasters.
//!
//! A toy encoder-decoder segments water, a connected-area extractor splits
//! the mask into bodies, and an embedding network with a nearest-neighbour
//! gallery labels each body as a dam reservoir or a natural water body.

pub mod autonet;
pub mod cli;
pub mod clsmodel;
pub mod error;
pub mod extract;
pub mod metrics;
pub mod raster;
pub mod rng;
pub mod segmodel;
pub mod verify;

pub use error::{Error, Result};
