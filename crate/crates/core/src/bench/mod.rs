//! Synthetic RGB-D benchmark: scene description, renderer, metrics and presets.

pub mod metrics;
pub mod presets;
pub mod render;
pub mod scene;

pub use metrics::{evaluate, evaluate_frame, format_table, MetricsReport};
pub use render::{render_sequence, RenderedFrame, RenderedSequence, Scene};
pub use scene::{
    BoxSpec, CameraKey, Exposure, LidarSpec, OccluderKey, OccluderSpec, PlaneSpec, SceneSpec,
    Texture,
};
