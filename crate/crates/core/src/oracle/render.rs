use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::scene::Scene;
use crate::error::{Error, Result};
use crate::geometry::{
    ColorImage, DepthImage, Image, Intrinsics, LabelImage, NormalImage, RigidPose,
};

/// Ordered camera→world poses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<RigidPose>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Exact ray-cast render: color, z-depth and label per pixel. Rays that miss
/// every primitive give depth 0 and label 0 on a black background.
pub fn render_frame(
    scene: &Scene,
    k: &Intrinsics,
    camera_to_world: &RigidPose,
) -> (ColorImage, DepthImage, LabelImage) {
    let origin = *camera_to_world.translation();
    let pixels: Vec<([u8; 3], f64, u16)> = (0..k.width * k.height)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % k.width) as f64, (i / k.width) as f64);
            // camera-frame direction with unit z, so the ray parameter is z-depth
            let dir_cam = Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
            let dir = camera_to_world.rotate(&dir_cam);
            match scene.cast(&origin, &dir) {
                Some((t, idx)) => {
                    let prim = &scene.primitives()[idx];
                    (prim.color_at(&(origin + dir * t)), t, prim.label)
                }
                None => ([0, 0, 0], 0.0, 0),
            }
        })
        .collect();
    let (w, h) = (k.width, k.height);
    let color = Image::from_vec(w, h, pixels.iter().map(|p| p.0).collect()).expect("sized");
    let depth = Image::from_vec(w, h, pixels.iter().map(|p| p.1).collect()).expect("sized");
    let labels = Image::from_vec(w, h, pixels.iter().map(|p| p.2).collect()).expect("sized");
    (color, depth, labels)
}

/// Camera-frame unit surface normals for every pixel that hits the scene.
pub fn render_normals(scene: &Scene, k: &Intrinsics, camera_to_world: &RigidPose) -> NormalImage {
    let origin = *camera_to_world.translation();
    let to_camera = camera_to_world.inverse();
    let data = (0..k.width * k.height)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % k.width) as f64, (i / k.width) as f64);
            let dir =
                camera_to_world.rotate(&Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0));
            scene.cast(&origin, &dir).map(|(t, idx)| {
                let n = scene.primitives()[idx].shape.normal_at(&(origin + dir * t));
                to_camera.rotate(&n)
            })
        })
        .collect();
    Image::from_vec(k.width, k.height, data).expect("sized")
}

/// Adds zero-mean Gaussian noise to valid depth pixels, clamping at 0.
pub fn add_depth_noise(depth: &mut DepthImage, sigma: f64, seed: u64) -> Result<()> {
    let normal =
        Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("noise sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for d in depth.data_mut() {
        if *d > 0.0 {
            *d = (*d + normal.sample(&mut rng)).max(0.0);
        }
    }
    Ok(())
}

/// `n` cameras evenly spaced on a horizontal circle (world z up) around
/// `center`, raised by `elevation` radians, all looking at `center`.
pub fn orbit_trajectory(
    center: Vector3<f64>,
    radius: f64,
    n: usize,
    elevation: f64,
) -> Result<Trajectory> {
    if !(radius > 0.0) {
        return Err(Error::invalid("orbit radius must be positive"));
    }
    let poses = (0..n)
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / n as f64;
            let eye = center
                + radius
                    * Vector3::new(
                        elevation.cos() * theta.cos(),
                        elevation.cos() * theta.sin(),
                        elevation.sin(),
                    );
            // near the poles fall back to a horizontal up vector
            let up = if elevation.cos().abs() < 1e-6 {
                Vector3::new(-theta.cos(), -theta.sin(), 0.0)
            } else {
                Vector3::z()
            };
            RigidPose::look_at(eye, center, up)
        })
        .collect::<Result<_>>()?;
    Ok(Trajectory { poses })
}
