//! Point-to-plane ICP, single-scale and coarse-to-fine.

use nalgebra::Vector3;

use super::features::voxel_downsample;
use super::{correspondences, LinearSystem, RegistrationResult};
use crate::error::{Error, Result};
use crate::geometry::spatial::KdTree;
use crate::geometry::{
    estimate_normals, positions_tree, LabeledPointCloud, NeighborSearch, Orientation, RigidPose,
};

const RELATIVE_CHANGE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpScale {
    /// Downsampling voxel for both clouds.
    pub voxel: f64,
    pub max_correspondence: f64,
    pub max_iterations: usize,
}

/// Three scales around `voxel_down`: twice, once and half the voxel.
pub fn default_icp_scales(voxel_down: f64) -> Vec<IcpScale> {
    [(2.0, 5.0, 50), (1.0, 2.0, 30), (0.5, 1.0, 14)]
        .iter()
        .map(|&(v, d, n)| IcpScale {
            voxel: v * voxel_down,
            max_correspondence: d * voxel_down,
            max_iterations: n,
        })
        .collect()
}

fn fit(
    src: &[Vector3<f64>],
    dst: &KdTree<3>,
    pose: &RigidPose,
    max_dist: f64,
) -> (RegistrationResult, Vec<(usize, usize, f64)>) {
    let corr = correspondences(src, dst, pose, max_dist);
    let sq: f64 = corr.iter().map(|c| c.2).sum();
    let result = RegistrationResult {
        pose: *pose,
        fitness: if src.is_empty() {
            0.0
        } else {
            corr.len() as f64 / src.len() as f64
        },
        inlier_rmse: if corr.is_empty() {
            0.0
        } else {
            (sq / corr.len() as f64).sqrt()
        },
    };
    (result, corr)
}

fn relative_change(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Point-to-plane ICP of `src` onto `dst` (which must carry normals).
///
/// Never returns a pose with a higher inlier RMSE than `init` has under the
/// same correspondence distance: if iterating makes the fit worse, the best
/// pose seen so far is returned.
pub fn point_to_plane_icp(
    src: &[Vector3<f64>],
    dst: &LabeledPointCloud,
    init: &RigidPose,
    max_correspondence: f64,
    max_iterations: usize,
) -> Result<RegistrationResult> {
    let normals = dst
        .normals
        .as_ref()
        .ok_or_else(|| Error::invalid("point-to-plane ICP needs target normals"))?;
    let tree = positions_tree(&dst.positions);
    let (mut current, mut corr) = fit(src, &tree, init, max_correspondence);
    if corr.is_empty() {
        return Err(Error::InsufficientOverlap(format!(
            "no correspondences within {max_correspondence} m"
        )));
    }
    let mut best = current;
    for _ in 0..max_iterations {
        let sys = LinearSystem::accumulate(&corr, |sys, &(i, j, _)| {
            sys.add_point_to_plane(&current.pose.apply(&src[i]), &dst.positions[j], &normals[j]);
        });
        let Some(step) = sys.solve() else { break };
        let pose = step.compose(&current.pose).renormalized();
        let (next, next_corr) = fit(src, &tree, &pose, max_correspondence);
        if next_corr.is_empty() {
            break;
        }
        let converged = relative_change(next.fitness, current.fitness) < RELATIVE_CHANGE
            && relative_change(next.inlier_rmse, current.inlier_rmse) < RELATIVE_CHANGE;
        current = next;
        corr = next_corr;
        if current.inlier_rmse <= best.inlier_rmse {
            best = current;
        }
        if converged {
            break;
        }
    }
    Ok(best)
}

/// Coarse-to-fine point-to-plane ICP; each scale starts from the previous
/// scale's result.
pub fn refine_multiscale_icp(
    src: &LabeledPointCloud,
    dst: &LabeledPointCloud,
    init: &RigidPose,
    scales: &[IcpScale],
) -> Result<RegistrationResult> {
    if scales.is_empty() {
        return Err(Error::invalid("multiscale ICP needs at least one scale"));
    }
    if !init.is_valid() {
        return Err(Error::invalid(
            "ICP initialization is not a rigid transform",
        ));
    }
    let mut pose = *init;
    let mut result = None;
    for (i, scale) in scales.iter().enumerate() {
        let s = voxel_downsample(src, scale.voxel)?;
        let mut d = voxel_downsample(dst, scale.voxel)?;
        let normals = estimate_normals(
            &d.positions,
            NeighborSearch::Hybrid {
                radius: 2.0 * scale.voxel,
                max_nn: 30,
            },
            Orientation::None,
        )?;
        let keep: Vec<usize> = (0..d.len()).filter(|&j| normals[j].is_some()).collect();
        d = d.select(&keep);
        d.normals = Some(keep.iter().map(|&j| normals[j].expect("kept")).collect());
        match point_to_plane_icp(
            &s.positions,
            &d,
            &pose,
            scale.max_correspondence,
            scale.max_iterations,
        ) {
            Ok(r) => {
                pose = r.pose;
                result = Some(r);
            }
            // only the coarsest scale must find overlap; later scales may
            // come up empty when the clouds thin out
            Err(e) if i == 0 => return Err(e),
            Err(_) => {}
        }
    }
    Ok(result.expect("the coarsest scale produced a result"))
}
