//! Depth-guided video inpainting for RGB + lidar captures.
//!
//! Dynamic objects are masked out of every frame, the static lidar returns are
//! stitched into a world map, and masked pixels are filled with colors warped
//! from other frames (or other drives) through depth rendered from that map.
//! Label selection, gradient-domain blending and flow-based smoothing clean up
//! the result. See `pipeline::run_pipeline` for the whole thing.

pub mod bench;
pub mod bp;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod harmonize;
pub mod io;
pub mod map;
pub mod pipeline;
pub mod raster;
pub mod refine;
pub mod sampling;
pub mod scalar;
pub mod temporal;

pub use error::{Error, Result};
pub use scalar::Real;
