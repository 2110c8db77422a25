//! Label-carrying 3D reconstruction.
//!
//! Per-frame integer segmentation masks ride along with color through every
//! reconstruction path: multi-view depth-map fusion, RGBD fragment
//! registration and TSDF integration. The output point clouds, meshes and
//! voxel grids carry a label per element.

// `!(x > 0.0)` is used on purpose so NaN is rejected along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod io;
pub mod mvs;
pub mod oracle;
pub mod rgbd;
pub mod tracker;
pub mod tsdf;

pub use error::{Error, Result};
