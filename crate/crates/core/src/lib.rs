//! Tilt-type mirror reflection sensing for occlusion-aware robot vision.
//!
//! A zenith depth sensor on a tilt unit senses the workcell directly and,
//! once tilted, through a fixed planar mirror. This crate simulates that
//! setup and implements the processing around it:
//!
//! - [`geometry`]: frames, the tilt transform and mirror (Householder) transforms.
//! - [`scene`]: boxes, a two-link arm, the mirror patch and random workcells.
//! - [`sensor`]: ray-cast depth captures with one mirror bounce and range noise.
//! - [`pipeline`]: occlusion detection, tilt selection, fusion, box detection, coverage.
//! - [`calibration`]: arm-pose search and reflection-constrained registration of a displaced mirror.
//! - [`evaluation`]: sensing strategies and detection/coverage scoring.
//! - [`config`] and [`io`]: the scene document and PLY/PGM/CSV exports.

pub mod calibration;
pub mod config;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod raycast;
pub mod scene;
pub mod seed;
pub mod sensor;
pub mod spatial;

pub use error::{Error, Result};
