//! Pinhole cameras, rigid poses, point clouds and depth maps.

mod camera;
mod cloud;
mod depth;
mod pose;

pub use camera::{round_pixel, Intrinsics, Projected, MIN_DEPTH};
pub use cloud::PointCloud;
pub use depth::{
    densify_depth, interpolate_depth, median_filter, project_point, render_depth, unproject_pixel,
    DepthMap,
};
pub use pose::{pitch_yaw_rotation, Pose};
