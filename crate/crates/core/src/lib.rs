//! Voxel-pixel fusion layer for LiDAR-camera 3D detection, with KITTI I/O,
//! geometry, a small f64 autodiff core and AP@R40 evaluation.

pub mod cli;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod image_ops;
pub mod kitti_io;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod projector;
pub mod rng;
pub mod selftest;
pub mod synthetic;
pub mod tensor;
pub mod voxel_grid;
pub mod vpf_layer;

pub use error::{Error, Result};
pub use par::Execution;
