//! Frame-to-frame odometry over an image pyramid: projective association,
//! point-to-plane residuals plus a photometric term on intensity, which pins
//! down motions that the geometry alone leaves free (sliding along a sphere).

use nalgebra::{Matrix2x3, Vector2, Vector3, Vector6};

use super::{LinearSystem, RegistrationResult};
use crate::error::{Error, Result};
use crate::geometry::{ColorImage, DepthImage, Image, Intrinsics, RgbdFrame, RigidPose};

pub const PYRAMID_LEVELS: usize = 3;
/// Associations needed at the coarsest level.
pub const MIN_ASSOCIATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct OdometryParams {
    /// Association distance per level, finest first (meters).
    pub max_distance: [f64; PYRAMID_LEVELS],
    pub max_iterations: usize,
    /// Stop once the relative RMSE change falls below this.
    pub relative_rmse: f64,
    /// Largest angle between associated normals (degrees).
    pub normal_angle_deg: f64,
    /// Share of the squared-residual objective given to intensity (0 turns
    /// the photometric term off); the rest goes to point-to-plane distance.
    pub photometric_weight: f64,
}

impl Default for OdometryParams {
    fn default() -> Self {
        OdometryParams {
            max_distance: [0.025, 0.05, 0.1],
            max_iterations: 20,
            relative_rmse: 1e-6,
            normal_angle_deg: 30.0,
            photometric_weight: 0.002,
        }
    }
}

struct Level {
    k: Intrinsics,
    vertices: Image<Option<Vector3<f64>>>,
    normals: Image<Option<Vector3<f64>>>,
    /// Smoothed intensity in [0, 1] and its pixel gradient.
    intensity: Image<f64>,
    gradient: Image<Vector2<f64>>,
}

fn intensity_of(color: &ColorImage) -> Image<f64> {
    color.map(|c| (0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64) / 255.0)
}

fn downsample_intensity(img: &Image<f64>) -> Image<f64> {
    let (w, h) = img.dims();
    Image::from_fn((w / 2).max(1), (h / 2).max(1), |x, y| {
        let at = |dx: usize, dy: usize| *img.get((2 * x + dx).min(w - 1), (2 * y + dy).min(h - 1));
        (at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)) / 4.0
    })
}

/// Separable [1 2 1] / 4 blur with clamped borders.
fn blur(img: &Image<f64>) -> Image<f64> {
    let (w, h) = img.dims();
    let tap = |a: f64, b: f64, c: f64| (a + 2.0 * b + c) / 4.0;
    let horizontal = Image::from_fn(w, h, |x, y| {
        tap(
            *img.get(x.saturating_sub(1), y),
            *img.get(x, y),
            *img.get((x + 1).min(w - 1), y),
        )
    });
    Image::from_fn(w, h, |x, y| {
        tap(
            *horizontal.get(x, y.saturating_sub(1)),
            *horizontal.get(x, y),
            *horizontal.get(x, (y + 1).min(h - 1)),
        )
    })
}

fn gradient(img: &Image<f64>) -> Image<Vector2<f64>> {
    let (w, h) = img.dims();
    Image::from_fn(w, h, |x, y| {
        let (l, r) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (u, d) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let gx = (*img.get(r, y) - *img.get(l, y)) / (r - l).max(1) as f64;
        let gy = (*img.get(x, d) - *img.get(x, u)) / (d - u).max(1) as f64;
        Vector2::new(gx, gy)
    })
}

/// Bilinear sample at a continuous pixel position (pixel centers at integers).
fn bilinear<T>(img: &Image<T>, u: f64, v: f64) -> Option<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let (w, h) = img.dims();
    if u < 0.0 || v < 0.0 || u > (w - 1) as f64 || v > (h - 1) as f64 {
        return None;
    }
    let (x0, y0) = (u.floor() as usize, v.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let top = *img.get(x0, y0) * (1.0 - fx) + *img.get(x1, y0) * fx;
    let bottom = *img.get(x0, y1) * (1.0 - fx) + *img.get(x1, y1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Halves a depth image by averaging each 2x2 block. Blocks mixing depths
/// more than 3% apart straddle an edge and become invalid.
fn downsample_depth(depth: &DepthImage) -> DepthImage {
    let (w, h) = ((depth.width() / 2).max(1), (depth.height() / 2).max(1));
    DepthImage::from_fn(w, h, |x, y| {
        let vals: Vec<f64> = [(0, 0), (1, 0), (0, 1), (1, 1)]
            .iter()
            .filter_map(|&(dx, dy)| {
                let (sx, sy) = (2 * x + dx, 2 * y + dy);
                (sx < depth.width() && sy < depth.height()).then(|| *depth.get(sx, sy))
            })
            .filter(|&d| d > 0.0)
            .collect();
        if vals.is_empty() {
            return 0.0;
        }
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(0.0, f64::max);
        if hi - lo > 0.03 * lo {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    })
}

fn build_level(depth: &DepthImage, raw_intensity: &Image<f64>, k: Intrinsics) -> Level {
    let vertices = Image::from_fn(depth.width(), depth.height(), |x, y| {
        let d = *depth.get(x, y);
        (d > 0.0).then(|| {
            Vector3::new(
                (x as f64 - k.cx) / k.fx * d,
                (y as f64 - k.cy) / k.fy * d,
                d,
            )
        })
    });
    let (w, h) = vertices.dims();
    let normals = Image::from_fn(w, h, |x, y| {
        if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
            return None;
        }
        let c = (*vertices.get(x, y))?;
        let l = (*vertices.get(x - 1, y))?;
        let r = (*vertices.get(x + 1, y))?;
        let u = (*vertices.get(x, y - 1))?;
        let d = (*vertices.get(x, y + 1))?;
        // central differences across a depth edge describe no surface
        if [l, r, u, d].iter().any(|p| (p.z - c.z).abs() > 0.05 * c.z) {
            return None;
        }
        let n = (r - l).cross(&(d - u));
        let norm = n.norm();
        if norm < 1e-12 {
            return None;
        }
        let n = n / norm;
        Some(if n.dot(&c) > 0.0 { -n } else { n })
    });
    let intensity = blur(raw_intensity);
    let gradient = gradient(&intensity);
    Level {
        k,
        vertices,
        normals,
        intensity,
        gradient,
    }
}

fn pyramid(frame: &RgbdFrame) -> Vec<Level> {
    let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
    let mut depth = frame.depth.clone();
    let mut intensity = intensity_of(&frame.color);
    let mut k = frame.intrinsics;
    for i in 0..PYRAMID_LEVELS {
        if i > 0 {
            depth = downsample_depth(&depth);
            intensity = downsample_intensity(&intensity);
            k = k.halved();
            k.width = depth.width();
            k.height = depth.height();
        }
        levels.push(build_level(&depth, &intensity, k));
    }
    levels
}

/// Source pixels with a vertex and a normal: (vertex, normal, intensity).
fn source_points(level: &Level) -> Vec<(Vector3<f64>, Vector3<f64>, f64)> {
    level
        .vertices
        .data()
        .iter()
        .zip(level.normals.data())
        .zip(level.intensity.data())
        .filter_map(|((v, n), i)| Some(((*v)?, (*n)?, *i)))
        .collect()
}

fn associate_system(
    src: &[(Vector3<f64>, Vector3<f64>, f64)],
    target: &Level,
    pose: &RigidPose,
    max_distance: f64,
    cos_normal: f64,
    photometric_weight: f64,
) -> LinearSystem {
    let k = &target.k;
    LinearSystem::accumulate(src, |sys, &(ps, ns, is)| {
        let p = pose.apply(&ps);
        if p.z <= 0.0 {
            return;
        }
        let (u, v) = (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
        let Some((x, y)) = k.pixel_at(u, v) else {
            return;
        };
        let (Some(q), Some(n)) = (*target.vertices.get(x, y), *target.normals.get(x, y)) else {
            return;
        };
        if (p - q).norm() > max_distance || n.dot(&pose.rotate(&ns)) < cos_normal {
            return;
        }
        sys.add_point_to_plane_weighted(&p, &q, &n, 1.0 - photometric_weight);
        if photometric_weight > 0.0 {
            let (Some(it), Some(g)) = (
                bilinear(&target.intensity, u, v),
                bilinear(&target.gradient, u, v),
            ) else {
                return;
            };
            let dpi = Matrix2x3::new(
                k.fx / p.z,
                0.0,
                -k.fx * p.x / (p.z * p.z),
                0.0,
                k.fy / p.z,
                -k.fy * p.y / (p.z * p.z),
            );
            let a = dpi.transpose() * g;
            let pa = p.cross(&a);
            sys.add_residual(
                &Vector6::new(pa.x, pa.y, pa.z, a.x, a.y, a.z),
                it - is,
                photometric_weight,
            );
        }
    })
}

/// Estimates the motion mapping `source` camera coordinates into `target`
/// camera coordinates, starting from `init`.
pub fn rgbd_odometry(
    target: &RgbdFrame,
    source: &RgbdFrame,
    init: &RigidPose,
    params: &OdometryParams,
) -> Result<RegistrationResult> {
    if !(0.0..1.0).contains(&params.photometric_weight) {
        return Err(Error::invalid("photometric weight must lie in [0, 1)"));
    }
    if target.intrinsics != source.intrinsics {
        return Err(Error::invalid("odometry frames must share intrinsics"));
    }
    if !init.is_valid() {
        return Err(Error::invalid(
            "odometry initialization is not a rigid transform",
        ));
    }
    let tgt = pyramid(target);
    let src = pyramid(source);
    let cos_normal = params.normal_angle_deg.to_radians().cos();
    let mut pose = *init;
    let mut last = LinearSystem::default();
    let mut src_count = 0;
    for level in (0..PYRAMID_LEVELS).rev() {
        let points = source_points(&src[level]);
        src_count = points.len();
        let mut prev_rmse: Option<f64> = None;
        for _ in 0..params.max_iterations {
            let sys = associate_system(
                &points,
                &tgt[level],
                &pose,
                params.max_distance[level],
                cos_normal,
                params.photometric_weight,
            );
            if level == PYRAMID_LEVELS - 1 && sys.count() < MIN_ASSOCIATIONS {
                return Err(Error::InsufficientOverlap(format!(
                    "{} associated pixels at the coarsest level, need {MIN_ASSOCIATIONS}",
                    sys.count()
                )));
            }
            if sys.count() < 6 {
                break;
            }
            let rmse = sys.rmse();
            last = sys;
            if rmse < 1e-12
                || prev_rmse.is_some_and(|p| (p - rmse).abs() / p < params.relative_rmse)
            {
                break;
            }
            prev_rmse = Some(rmse);
            let Some(step) = sys.solve() else { break };
            pose = step.compose(&pose).renormalized();
        }
    }
    // report the fit of the final pose at full resolution
    let finest = source_points(&src[0]);
    // fit is reported on geometry alone
    let sys = associate_system(
        &finest,
        &tgt[0],
        &pose,
        params.max_distance[0],
        cos_normal,
        0.0,
    );
    if sys.count() > 0 {
        last = sys;
    }
    Ok(RegistrationResult {
        pose,
        fitness: if src_count == 0 {
            0.0
        } else {
            last.count() as f64 / src_count as f64
        },
        inlier_rmse: last.rmse(),
    })
}
