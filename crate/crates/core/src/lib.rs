//! Label bootstrapping for rare object detection over gridded raster scenes.
//!
//! The pipeline splits a scene into a grid of patches, featurizes each patch,
//! clusters the features, and turns the clustering into a sampling surface
//! that a labeler (simulated or human) draws from without replacement.
//! Online strategies reweight the surface whenever a positive is found.

pub mod clustering;
pub mod error;
pub mod features;
pub mod grid;
pub mod hyperopt;
pub mod rce;
pub mod rng;
pub mod session;
pub mod simulate;
pub mod surface;

pub use error::{Error, Result};
