//! Self-supervised stereo depth objective: photometric, left-right and
//! smoothness losses in image space, blind masking of out-of-view pixels,
//! and an ICP-based 3D consistency term between the two backprojected
//! point clouds, all with analytic gradients so disparity fields can be
//! optimized against the objective directly.

pub mod error;
pub mod field;
pub mod geometry;
mod kdtree;
pub mod losses;
pub mod metrics;
pub mod objective;
pub mod structured_light;
pub mod warp;

pub use error::{Error, Result};
pub use field::{BinaryMask, CameraRig, DepthMap, DisparityField, Field, ImagePlane};
pub use warp::View;
