//! Fixture builders shared by the integration tests.
#![allow(dead_code)]

use nalgebra::Vector3;

use labelfuse::geometry::{ColorImage, DepthImage, Intrinsics, LabelImage, RgbdFrame, RigidPose};
use labelfuse::mvs::FusionView;
use labelfuse::oracle::{
    default_intrinsics, render_frame, render_normals, Scene, SceneConfig, Trajectory,
};

pub struct Rendered {
    pub color: ColorImage,
    pub depth: DepthImage,
    pub labels: LabelImage,
    pub camera_to_world: RigidPose,
}

pub fn render_orbit(scene: &Scene, frames: usize) -> (Intrinsics, Trajectory, Vec<Rendered>) {
    let cfg = SceneConfig::for_scene(scene.clone());
    let traj = cfg.trajectory(frames).unwrap();
    let k = default_intrinsics();
    let renders = traj
        .poses
        .iter()
        .map(|pose| {
            let (color, depth, labels) = render_frame(scene, &k, pose);
            Rendered {
                color,
                depth,
                labels,
                camera_to_world: *pose,
            }
        })
        .collect();
    (k, traj, renders)
}

pub fn fusion_views(scene: &Scene, frames: usize, with_normals: bool) -> Vec<FusionView> {
    let (k, _, renders) = render_orbit(scene, frames);
    renders
        .into_iter()
        .map(|r| {
            let normal = with_normals.then(|| render_normals(scene, &k, &r.camera_to_world));
            FusionView::new(
                r.depth,
                normal,
                r.color,
                r.labels,
                r.camera_to_world.inverse(),
                k,
            )
            .unwrap()
        })
        .collect()
}

pub fn rgbd_frames(renders: &[Rendered], k: &Intrinsics) -> Vec<RgbdFrame> {
    renders
        .iter()
        .map(|r| RgbdFrame::new(r.color.clone(), r.depth.clone(), *k).unwrap())
        .collect()
}

pub fn render_poses(scene: &Scene, k: &Intrinsics, poses: &[RigidPose]) -> Vec<Rendered> {
    poses
        .iter()
        .map(|pose| {
            let (color, depth, labels) = render_frame(scene, k, pose);
            Rendered {
                color,
                depth,
                labels,
                camera_to_world: *pose,
            }
        })
        .collect()
}

/// Cameras on a Fibonacci sphere around `center`, all looking at it, so every
/// side of a compact object is seen.
pub fn surrounding_poses(center: Vector3<f64>, distance: f64, n: usize) -> Vec<RigidPose> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 0.9 - 1.8 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            let eye = center + Vector3::new(r * th.cos(), r * th.sin(), z) * distance;
            RigidPose::look_at(eye, center, Vector3::z()).unwrap()
        })
        .collect()
}
