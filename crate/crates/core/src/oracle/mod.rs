//! Analytic synthetic scenes: exact signed distances, ray-cast renders along
//! scripted trajectories, and scoring of reconstructions against ground truth.

mod config;
mod eval;
mod render;
mod scene;

pub use config::{
    default_intrinsics, OrbitSpec, SceneConfig, DEFAULT_ELEVATION_DEG, DEFAULT_ORBIT_RADIUS,
};
pub use eval::{absolute_trajectory_error, evaluate, EvalReport};
pub use render::{add_depth_noise, orbit_trajectory, render_frame, render_normals, Trajectory};
pub use scene::{Primitive, Scene, Shape};
