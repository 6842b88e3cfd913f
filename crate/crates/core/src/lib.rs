//! Self-supervised depth and ego-motion for a rigidly mounted multi-camera
//! rig, optimized per sample with exact gradients.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod differentiation;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod losses;
pub mod objective;
pub mod optimizer;
pub mod sample;
pub mod synthetic;
pub mod warping;

pub use differentiation::{gradients, GradientBundle, PoseParams};
pub use error::{Error, Result};
pub use geometry::{CameraModel, EulerAngles, Rig, RigidTransform};
pub use grid::{BinaryMask, DepthField, ImagePlane};
pub use losses::{total_loss, LossBreakdown, LossWeights, TermToggles};
pub use sample::{Frame, MultiCamSample};
