//! Multi-view depth-map fusion carrying color and label channels together.
//!
//! Depth and normal maps come from an external stereo stage. A reference pixel
//! survives when enough other views agree on its depth; its fused point
//! averages all agreeing back-projections, and color and label are aggregated
//! over exactly the same pixel set.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    backproject_pixel, project_point, ColorImage, DepthImage, Intrinsics, LabelImage,
    LabeledPointCloud, NormalImage, RigidPose,
};

/// One calibrated view with its depth, optional normals, color and labels.
#[derive(Clone, Debug)]
pub struct FusionView {
    pub depth: DepthImage,
    /// Camera-frame unit normals.
    pub normal: Option<NormalImage>,
    pub color: ColorImage,
    pub labels: LabelImage,
    pub world_to_camera: RigidPose,
    pub intrinsics: Intrinsics,
}

impl FusionView {
    pub fn new(
        depth: DepthImage,
        normal: Option<NormalImage>,
        color: ColorImage,
        labels: LabelImage,
        world_to_camera: RigidPose,
        intrinsics: Intrinsics,
    ) -> Result<Self> {
        let view = FusionView {
            depth,
            normal,
            color,
            labels,
            world_to_camera,
            intrinsics,
        };
        view.validate()?;
        Ok(view)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        k.validate()?;
        let dims = (k.width, k.height);
        if self.depth.dims() != dims
            || self.color.dims() != dims
            || self.labels.dims() != dims
            || self.normal.as_ref().is_some_and(|n| n.dims() != dims)
        {
            return Err(Error::invalid(
                "fusion view rasters must match the intrinsics size",
            ));
        }
        self.depth.validate_depth()
    }

    fn world_point(&self, x: usize, y: usize) -> Option<Vector3<f64>> {
        let d = *self.depth.get(x, y);
        let p = backproject_pixel(x as f64, y as f64, d, &self.intrinsics).ok()?;
        Some(self.world_to_camera.apply_inverse(&p))
    }

    fn world_normal(&self, x: usize, y: usize) -> Option<Vector3<f64>> {
        let n = (*self.normal.as_ref()?.get(x, y))?;
        Some(self.world_to_camera.inverse().rotate(&n))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionParams {
    /// Views that must agree, counting the reference view itself.
    pub min_views: usize,
    /// Relative depth tolerance `|d_cand − d_proj| / d_proj`.
    pub depth_tolerance: f64,
    pub normal_tolerance_deg: f64,
    /// Forward-backward reprojection tolerance in pixels.
    pub reprojection_tolerance: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            min_views: 2,
            depth_tolerance: 0.01,
            normal_tolerance_deg: 25.0,
            reprojection_tolerance: 1.0,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_views < 1 {
            return Err(Error::invalid("min_views must be at least 1"));
        }
        if !(self.depth_tolerance > 0.0
            && self.normal_tolerance_deg > 0.0
            && self.reprojection_tolerance > 0.0)
        {
            return Err(Error::invalid("fusion tolerances must be positive"));
        }
        Ok(())
    }
}

/// A supporting pixel in another view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Support {
    pub view: usize,
    pub x: usize,
    pub y: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Consistency {
    pub consistent: bool,
    pub supporters: Vec<Support>,
}

/// Takes a reconstruction frame every `stride` frames.
pub fn select_reconstruction_frames(n_frames: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    Ok((0..n_frames).step_by(stride).collect())
}

/// Bilinear depth at a sub-pixel position; `None` unless all four
/// surrounding pixels are valid (so silhouettes never blend with background).
fn sample_depth(depth: &DepthImage, u: f64, v: f64) -> Option<f64> {
    let (x0, y0) = (u.floor(), v.floor());
    if x0 < 0.0 || y0 < 0.0 {
        return None;
    }
    let (x0, y0) = (x0 as usize, y0 as usize);
    if x0 + 1 >= depth.width() || y0 + 1 >= depth.height() {
        return None;
    }
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let d = [
        *depth.get(x0, y0),
        *depth.get(x0 + 1, y0),
        *depth.get(x0, y0 + 1),
        *depth.get(x0 + 1, y0 + 1),
    ];
    if d.iter().any(|&z| z <= 0.0) {
        return None;
    }
    Some((d[0] * (1.0 - fx) + d[1] * fx) * (1.0 - fy) + (d[2] * (1.0 - fx) + d[3] * fx) * fy)
}

fn supports(
    reference: &FusionView,
    ref_px: (usize, usize),
    world: &Vector3<f64>,
    ref_normal: Option<Vector3<f64>>,
    cand: &FusionView,
    params: &FusionParams,
) -> Option<(usize, usize)> {
    let (u, v, d_proj) =
        project_point(&cand.world_to_camera.apply(world), &cand.intrinsics).ok()?;
    let (cx, cy) = cand.intrinsics.pixel_at(u, v)?;
    let nearest = *cand.depth.get(cx, cy);
    if nearest <= 0.0 {
        return None;
    }
    // interpolation removes grid quantization on smooth surfaces; the nearest
    // sample still wins when interpolation straddles a depth edge
    let d_cand = match sample_depth(&cand.depth, u, v) {
        Some(b) if (b - d_proj).abs() < (nearest - d_proj).abs() => b,
        _ => nearest,
    };
    if (d_cand - d_proj).abs() / d_proj > params.depth_tolerance {
        return None;
    }
    // forward-backward: the candidate's depth placed on the reprojected ray must map back
    // onto the reference pixel (sub-pixel position, so grid quantization is not penalized)
    let back_cam = backproject_pixel(u, v, d_cand, &cand.intrinsics).ok()?;
    let back = cand.world_to_camera.apply_inverse(&back_cam);
    let (ru, rv, _) = project_point(
        &reference.world_to_camera.apply(&back),
        &reference.intrinsics,
    )
    .ok()?;
    let err = ((ru - ref_px.0 as f64).powi(2) + (rv - ref_px.1 as f64).powi(2)).sqrt();
    if err > params.reprojection_tolerance {
        return None;
    }
    if let (Some(nr), Some(nc)) = (ref_normal, cand.world_normal(cx, cy)) {
        let angle = nr.dot(&nc).clamp(-1.0, 1.0).acos().to_degrees();
        if angle > params.normal_tolerance_deg {
            return None;
        }
    }
    Some((cx, cy))
}

/// Checks one reference pixel against candidate views. `supporters` indexes
/// into `candidates`. The reference view counts towards `min_views`.
pub fn check_pixel_consistency(
    reference: &FusionView,
    pixel: (usize, usize),
    candidates: &[FusionView],
    params: &FusionParams,
) -> Consistency {
    let (x, y) = pixel;
    let Some(world) = (x < reference.depth.width() && y < reference.depth.height())
        .then(|| reference.world_point(x, y))
        .flatten()
    else {
        return Consistency {
            consistent: false,
            supporters: Vec::new(),
        };
    };
    let ref_normal = reference.world_normal(x, y);
    let supporters: Vec<Support> = candidates
        .iter()
        .enumerate()
        .filter_map(|(j, cand)| {
            supports(reference, pixel, &world, ref_normal, cand, params).map(|(sx, sy)| Support {
                view: j,
                x: sx,
                y: sy,
            })
        })
        .collect();
    Consistency {
        consistent: 1 + supporters.len() >= params.min_views,
        supporters,
    }
}

/// Fuses all views into one labeled, colored cloud.
///
/// Views are visited in order and pixels row-major; every pixel that
/// contributes to a fused point is consumed and neither seeds nor supports
/// later points. Label = majority over contributing pixels, tie → the
/// reference pixel's label.
pub fn fuse_views(views: &[FusionView], params: &FusionParams) -> Result<LabeledPointCloud> {
    if views.is_empty() {
        return Err(Error::invalid("fusion needs at least one view"));
    }
    params.validate()?;
    for v in views {
        v.validate()?;
    }
    let mut consumed: Vec<Vec<bool>> = views.iter().map(|v| vec![false; v.depth.len()]).collect();
    let mut cloud = LabeledPointCloud::with_colors();
    for (i, reference) in views.iter().enumerate() {
        let w = reference.depth.width();
        // the consistency checks are independent; only claiming is sequential
        let checks: Vec<Option<Vec<Support>>> = (0..reference.depth.len())
            .into_par_iter()
            .map(|idx| {
                let px = (idx % w, idx / w);
                let world = reference.world_point(px.0, px.1)?;
                let ref_normal = reference.world_normal(px.0, px.1);
                Some(
                    views
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .filter_map(|(j, cand)| {
                            supports(reference, px, &world, ref_normal, cand, params)
                                .map(|(x, y)| Support { view: j, x, y })
                        })
                        .collect(),
                )
            })
            .collect();
        for (idx, check) in checks.into_iter().enumerate() {
            let Some(supporters) = check else { continue };
            if consumed[i][idx] {
                continue;
            }
            let live: Vec<Support> = supporters
                .into_iter()
                .filter(|s| !consumed[s.view][s.y * views[s.view].depth.width() + s.x])
                .collect();
            if 1 + live.len() < params.min_views {
                continue;
            }
            let (x, y) = (idx % w, idx / w);
            let mut pos = reference.world_point(x, y).expect("valid depth");
            let mut rgb = reference.color.get(x, y).map(u32::from);
            let mut votes: Vec<(u16, usize)> = vec![(*reference.labels.get(x, y), 1)];
            for s in &live {
                let v = &views[s.view];
                pos += v
                    .world_point(s.x, s.y)
                    .expect("supporters have valid depth");
                let c = v.color.get(s.x, s.y);
                for k in 0..3 {
                    rgb[k] += c[k] as u32;
                }
                let l = *v.labels.get(s.x, s.y);
                match votes.iter_mut().find(|(id, _)| *id == l) {
                    Some(e) => e.1 += 1,
                    None => votes.push((l, 1)),
                }
                consumed[s.view][s.y * v.depth.width() + s.x] = true;
            }
            consumed[i][idx] = true;
            let n = 1 + live.len();
            let color = rgb.map(|s| ((s + n as u32 / 2) / n as u32) as u8);
            // the reference label is first, so max_by_key's last-wins needs the reversed scan
            let label = votes
                .iter()
                .rev()
                .max_by_key(|(_, c)| *c)
                .map(|(l, _)| *l)
                .unwrap_or(0);
            cloud.push(pos / n as f64, Some(color), None, label);
        }
    }
    Ok(cloud)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterPolicy {
    /// Drop points that never received a label.
    KeepLabeled,
    KeepAll,
}

pub fn filter_labeled_cloud(cloud: &LabeledPointCloud, policy: FilterPolicy) -> LabeledPointCloud {
    match policy {
        FilterPolicy::KeepAll => cloud.clone(),
        FilterPolicy::KeepLabeled => {
            let keep: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.labels[i] != 0).collect();
            cloud.select(&keep)
        }
    }
}
