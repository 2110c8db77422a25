use rayon::prelude::*;

use super::features::{preprocess_fragment, PreprocessedFragment};
use super::global::{register_pair_fgr, register_pair_ransac};
use super::icp::{default_icp_scales, refine_multiscale_icp};
use super::odometry::{rgbd_odometry, OdometryParams};
use super::{correspondences, RegistrationParams, RegistrationResult};
use crate::error::{Error, Result};
use crate::geometry::{
    depth_to_cloud, positions_tree, LabelImage, LabeledPointCloud, RgbdFrame, RigidPose,
};
pub use crate::io::RegistrationMethod;

/// A run of consecutive frames fused into one local cloud.
#[derive(Clone, Debug)]
pub struct Fragment {
    pub id: usize,
    /// Fragment frame → world.
    pub pose: RigidPose,
    /// Labeled cloud in the fragment frame (the chunk's first camera).
    pub cloud: LabeledPointCloud,
    /// Frame indices `start..end`.
    pub start: usize,
    pub end: usize,
    /// Camera → fragment pose of each frame in the chunk, from odometry.
    pub frame_poses: Vec<RigidPose>,
}

impl Fragment {
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Splits the sequence into chunks of `frames_per_fragment`, chains odometry
/// inside each chunk and across chunk boundaries, and fuses each chunk's
/// labeled clouds in its first camera's frame. World = first camera.
pub fn make_fragments(
    frames: &[RgbdFrame],
    labels: &[LabelImage],
    frames_per_fragment: usize,
    params: &OdometryParams,
) -> Result<Vec<Fragment>> {
    if frames_per_fragment == 0 {
        return Err(Error::invalid("frames per fragment must be at least 1"));
    }
    if frames.is_empty() || frames.len() != labels.len() {
        return Err(Error::invalid(
            "frames and label images must be non-empty and aligned",
        ));
    }
    if let Some(i) = (0..frames.len()).find(|&i| !labels[i].same_dims(&frames[i].depth)) {
        return Err(Error::invalid(format!(
            "label image {i} does not match its frame"
        )));
    }
    let mut fragments: Vec<Fragment> = Vec::new();
    let mut world_pose = RigidPose::identity();
    for (id, start) in (0..frames.len()).step_by(frames_per_fragment).enumerate() {
        let end = (start + frames_per_fragment).min(frames.len());
        let wrap = |e: Error| Error::Fragment {
            fragment: id,
            start,
            end,
            source: Box::new(e),
        };
        if let Some(prev) = fragments.last() {
            // link the previous chunk's last frame to this chunk's first
            let step = rgbd_odometry(
                &frames[start - 1],
                &frames[start],
                &RigidPose::identity(),
                params,
            )
            .map_err(wrap)?;
            let last = prev.frame_poses.last().expect("fragments are non-empty");
            world_pose = prev.pose.compose(last).compose(&step.pose);
        }
        let mut frame_poses = vec![RigidPose::identity()];
        for t in start + 1..end {
            let step = rgbd_odometry(&frames[t - 1], &frames[t], &RigidPose::identity(), params)
                .map_err(wrap)?;
            let prev = *frame_poses.last().expect("seeded");
            frame_poses.push(prev.compose(&step.pose));
        }
        let mut cloud = LabeledPointCloud::with_colors();
        for (t, pose) in (start..end).zip(&frame_poses) {
            let f = &frames[t];
            let part = depth_to_cloud(
                &f.depth,
                &f.intrinsics,
                &pose.inverse(),
                Some(&f.color),
                Some(&labels[t]),
            )
            .map_err(wrap)?;
            cloud.append(&part);
        }
        if cloud.is_empty() {
            return Err(wrap(Error::DegenerateFragment(
                "no valid depth in any frame".into(),
            )));
        }
        fragments.push(Fragment {
            id,
            pose: world_pose,
            cloud,
            start,
            end,
            frame_poses,
        });
    }
    Ok(fragments)
}

/// Largest per-channel difference for two points to count as the same color.
const COLOR_AGREEMENT: u8 = 40;

/// Share of `src` points with a neighbor in `dst` under `pose`. When both
/// clouds are colored, only neighbors of matching color count: on symmetric
/// shapes such as spheres, a wrong rotation can overlap more geometry than
/// the true pose, but it scrambles the surface colors.
fn candidate_fitness(
    src: &LabeledPointCloud,
    dst: &LabeledPointCloud,
    pose: &RigidPose,
    max_dist: f64,
) -> f64 {
    if src.is_empty() || dst.is_empty() {
        return 0.0;
    }
    let corr = correspondences(
        &src.positions,
        &positions_tree(&dst.positions),
        pose,
        max_dist,
    );
    let agreeing = match (&src.colors, &dst.colors) {
        (Some(sc), Some(dc)) => corr
            .iter()
            .filter(|&&(i, j, _)| (0..3).all(|k| sc[i][k].abs_diff(dc[j][k]) <= COLOR_AGREEMENT))
            .count(),
        _ => corr.len(),
    };
    agreeing as f64 / src.len() as f64
}

/// Relative pose for one adjacent pair: the global-registration candidate and
/// the odometry prior are both refined by multiscale ICP and the one with the
/// higher fitness wins (ties keep the prior). Fitness is judged on the
/// downsampled fragments, counting color-consistent correspondences only.
fn register_pair(
    a: &Fragment,
    b: &Fragment,
    pa: &Result<PreprocessedFragment>,
    pb: &Result<PreprocessedFragment>,
    method: RegistrationMethod,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    let prior = a.pose.inverse().compose(&b.pose);
    let scales = default_icp_scales(params.voxel_down);
    let refined_prior = refine_multiscale_icp(&b.cloud, &a.cloud, &prior, &scales);
    let global = match (pb, pa) {
        (Ok(src), Ok(dst)) => match method {
            RegistrationMethod::Ransac => register_pair_ransac(src, dst, params),
            RegistrationMethod::Fgr => register_pair_fgr(src, dst, params),
        },
        (Err(e), _) | (_, Err(e)) => Err(Error::DegenerateFragment(e.to_string())),
    };
    let refined_global =
        global.and_then(|g| refine_multiscale_icp(&b.cloud, &a.cloud, &g.pose, &scales));
    match (refined_prior, refined_global) {
        (Ok(p), Ok(g)) => {
            let (Ok(src), Ok(dst)) = (pb, pa) else {
                unreachable!("a global candidate implies both fragments preprocessed")
            };
            let max = params.max_correspondence();
            let (fp, fg) = (
                candidate_fitness(&src.cloud, &dst.cloud, &p.pose, max),
                candidate_fitness(&src.cloud, &dst.cloud, &g.pose, max),
            );
            log::debug!(
                "fragments {}-{}: prior fitness {fp:.4}, global fitness {fg:.4}",
                a.id,
                b.id
            );
            Ok(if fg > fp { g } else { p })
        }
        (Ok(p), Err(e)) => {
            log::debug!(
                "fragments {}-{}: global registration unusable ({e}); keeping the prior",
                a.id,
                b.id
            );
            Ok(p)
        }
        (Err(_), Ok(g)) => Ok(g),
        (Err(ep), Err(eg)) => Err(Error::PairFailed(
            a.id,
            b.id,
            format!("prior: {ep}; global: {eg}"),
        )),
    }
}

/// Registers adjacent fragment pairs and chains the relative poses from
/// fragment 0's odometry pose. Returns one fragment → world pose each.
pub fn register_fragments(
    fragments: &[Fragment],
    method: RegistrationMethod,
    params: &RegistrationParams,
) -> Result<Vec<RigidPose>> {
    if fragments.is_empty() {
        return Err(Error::invalid("no fragments to register"));
    }
    if fragments.len() == 1 {
        return Ok(vec![fragments[0].pose]);
    }
    let pre: Vec<Result<PreprocessedFragment>> = fragments
        .par_iter()
        .map(|f| preprocess_fragment(f, params.voxel_down, params.feature_radius()))
        .collect();
    let relative: Vec<RegistrationResult> = (0..fragments.len() - 1)
        .into_par_iter()
        .map(|i| {
            register_pair(
                &fragments[i],
                &fragments[i + 1],
                &pre[i],
                &pre[i + 1],
                method,
                params,
            )
        })
        .collect::<Result<_>>()?;
    let mut poses = vec![fragments[0].pose];
    for r in &relative {
        let last = *poses.last().expect("seeded");
        poses.push(last.compose(&r.pose).renormalized());
    }
    Ok(poses)
}
