//! Pixel-based machine-learning lithography correction.
//!
//! The flow has two phases. Data preparation runs a toy inverse-lithography
//! optimizer to obtain reference masks, converts them to inverse intensity
//! profile (IIP) maps and pairs every pixel's compressed neighborhood window
//! with its IIP class. Deployment predicts an IIP class for every pixel of a
//! new pattern, reassembles the map, thresholds it and vectorizes the result
//! back to layout polygons.
//!
//! Modules follow the stages of that flow:
//!
//! - [`layout`]: polygons, layout files, rasterization and vectorization
//! - [`grid`]: raster grids and graymap export
//! - [`litho`]: the forward process (optical kernel + threshold resist)
//! - [`ilt`]: sigmoid-relaxed pixel inverse lithography
//! - [`iip`]: inverse intensity kernels, IIP maps and class binning
//! - [`tiling`]: per-pixel windows, directional compression, datasets
//! - [`classifier`]: the small convolutional per-pixel classifier
//! - [`pipeline`]: scaling manager, correction, re-correction, metrics
//! - [`config`]: the aggregated run configuration and profiles
//! - [`flow`]: data preparation and evaluation flows built from the above

pub mod checksum;
pub mod classifier;
pub mod config;
pub mod error;
pub mod flow;
pub mod grid;
pub mod iip;
pub mod ilt;
pub mod layout;
pub mod litho;
pub mod pipeline;
pub mod tiling;

pub use error::{Error, Result};
pub use grid::RasterGrid;
pub use layout::{BBox, LayoutPattern, Point, Polygon};
