//! Depth-augmented lifting of 2D human pose keypoints to 3D.
//!
//! The crate covers synthetic pose data and cameras, a depth-reading
//! simulator, a residual lifting network trained with manual
//! backpropagation, MPJPE evaluation with rigid alignment, and the rank and
//! normality statistics used to study how depth relates to joint z.

pub mod camera;
pub mod dataset;
pub mod depth;
pub mod error;
pub mod eval;
pub mod net;
pub mod skeleton;
pub mod stats;

pub use error::{Error, ErrorCategory, Result};
