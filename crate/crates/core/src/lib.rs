//! Relative object pose estimation from dense descriptor maps and depth.
//!
//! The pipeline matches per-pixel descriptors between an anchor and a query
//! view, lifts the matches to 3D with depth, and registers the two point sets
//! robustly. Supporting modules cover the training losses, pose metrics, a
//! synthetic scene generator and file formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod registration;
pub mod render;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, DepthMap, Point3, PointCloud, RigidTransform};
pub use matching::{FeatureMap, Mask, MatchSet, Pixel};
pub use metrics::{MetricReport, ObjectModel};
pub use registration::{PoseEstimate, RegistrationParams};
pub use synth::{ObjectShape, ScenePair, SyntheticSceneSpec};
