//! Tactile object pose tracking from a stream of gel normal images.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cloud;
pub mod error;
pub mod factors;
pub mod geometry;
pub mod harness;
pub mod image;
pub mod io;
pub mod patchmap;
pub mod reconstruct;
pub mod registration;
pub mod render;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::{Pose, Twist};
pub use cloud::{Frame, PointCloud};
