//! Point-cloud container, pinhole camera model, projection, and
//! occlusion-aware visibility testing.

mod camera;
mod cloud;
mod project;

pub use camera::{CameraView, DepthMap, Intrinsics, Pose};
pub use cloud::PointCloud;
pub use project::{
    backproject, nearest_pixel, primitive_visibility, project_points,
    project_points_with_tolerance, visibility_test, Projection, DEFAULT_DEPTH_TOLERANCE,
};
