//! Pairwise depth rankings for lifting 2D human poses to 3D.

pub mod camera;
pub mod dpnet;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod ranking;
pub mod skeleton;

pub use error::{Error, Result};
