//! Feature-based global registration: RANSAC over matched FPFH descriptors,
//! and fast global registration (robust IRLS over reciprocal matches).

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::features::{FpfhFeature, PreprocessedFragment};
use super::{correspondences, RegistrationParams, RegistrationResult, CHUNK};
use crate::error::{Error, Result};
use crate::geometry::spatial::KdTree;
use crate::geometry::{positions_tree, rigid_align, RigidPose};

const SAMPLE: usize = 4;
/// RANSAC hypotheses drawn per parallel batch.
const BATCH: usize = 1024;
const FGR_ITERATIONS: usize = 64;
const FGR_HALVING_PERIOD: usize = 4;
const MIN_RECIPROCAL: usize = 10;

/// Fitness and inlier RMSE of `pose` mapping `src` onto `dst` with the given
/// correspondence distance.
pub fn evaluate_registration(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    pose: &RigidPose,
    max_dist: f64,
) -> RegistrationResult {
    let tree = positions_tree(dst);
    score(src, &tree, pose, max_dist)
}

fn score(
    src: &[Vector3<f64>],
    dst: &KdTree<3>,
    pose: &RigidPose,
    max_dist: f64,
) -> RegistrationResult {
    let corr = correspondences(src, dst, pose, max_dist);
    let sq: f64 = corr.iter().map(|c| c.2).sum();
    RegistrationResult {
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
    }
}

fn feature_tree(features: &[FpfhFeature]) -> KdTree<33> {
    KdTree::new(features.to_vec())
}

/// Nearest descriptor in `dst` for every source descriptor.
fn feature_matches(src: &[FpfhFeature], dst: &KdTree<33>) -> Vec<usize> {
    src.par_iter()
        .map(|f| dst.nearest(f).expect("non-empty feature set").index)
        .collect()
}

fn check_inputs(
    src: &PreprocessedFragment,
    dst: &PreprocessedFragment,
    params: &RegistrationParams,
) -> Result<()> {
    if src.features.is_empty() || dst.features.is_empty() {
        return Err(Error::invalid("registration needs features on both sides"));
    }
    if !(params.voxel_down > 0.0) {
        return Err(Error::invalid("voxel_down must be positive"));
    }
    Ok(())
}

/// RANSAC on feature correspondences: 4-point hypotheses pruned by edge-length
/// ratio and post-fit correspondence distance, scored by inlier fitness.
pub fn register_pair_ransac(
    src: &PreprocessedFragment,
    dst: &PreprocessedFragment,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    check_inputs(src, dst, params)?;
    let matches = feature_matches(&src.features, &feature_tree(&dst.features));
    let (sp, dp) = (&src.cloud.positions, &dst.cloud.positions);
    if sp.len() < SAMPLE {
        return Err(Error::RegistrationFailed(format!(
            "only {} source points",
            sp.len()
        )));
    }
    let dst_tree = positions_tree(dp);
    let max_dist = params.max_correspondence();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<RegistrationResult> = None;
    let mut budget = params.max_iterations;
    let mut drawn = 0;
    while drawn < budget {
        let n = BATCH.min(budget - drawn);
        let samples: Vec<[usize; SAMPLE]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(0..sp.len())))
            .collect();
        drawn += n;
        let results: Vec<Option<RegistrationResult>> = samples
            .par_iter()
            .map(|sample| {
                let s: Vec<Vector3<f64>> = sample.iter().map(|&i| sp[i]).collect();
                let d: Vec<Vector3<f64>> = sample.iter().map(|&i| dp[matches[i]]).collect();
                for a in 0..SAMPLE {
                    for b in a + 1..SAMPLE {
                        let (ls, ld) = ((s[a] - s[b]).norm(), (d[a] - d[b]).norm());
                        if ls < params.edge_ratio * ld || ld < params.edge_ratio * ls {
                            return None;
                        }
                    }
                }
                let pose = rigid_align(&s, &d, None).ok()?;
                if s.iter()
                    .zip(&d)
                    .any(|(a, b)| (pose.apply(a) - b).norm() > max_dist)
                {
                    return None;
                }
                Some(score(sp, &dst_tree, &pose, max_dist))
            })
            .collect();
        // sequential reduction in draw order keeps the winner thread-independent
        for r in results.into_iter().flatten() {
            let better = best.is_none_or(|b| {
                r.fitness > b.fitness || (r.fitness == b.fitness && r.inlier_rmse < b.inlier_rmse)
            });
            if better {
                best = Some(r);
            }
        }
        if let Some(b) = best {
            // share of feature matches that agree with the best pose
            let agree = (0..sp.len())
                .filter(|&i| (b.pose.apply(&sp[i]) - dp[matches[i]]).norm() <= max_dist)
                .count() as f64
                / sp.len() as f64;
            let p = agree.powi(SAMPLE as i32);
            if p >= 1.0 {
                break;
            }
            if p > 0.0 {
                let needed = ((1.0 - params.confidence).ln() / (1.0 - p).ln()).ceil();
                if needed.is_finite() && needed >= 0.0 {
                    budget = budget.min(needed as usize);
                }
            }
        }
    }
    match best {
        Some(b) if b.fitness >= params.fitness_floor => Ok(b),
        Some(b) => Err(Error::RegistrationFailed(format!(
            "best RANSAC fitness {:.3} is below the floor {}",
            b.fitness, params.fitness_floor
        ))),
        None => Err(Error::RegistrationFailed(
            "no RANSAC hypothesis passed the checks".into(),
        )),
    }
}

/// Fast global registration: reciprocal descriptor matches aligned by
/// iteratively reweighted least squares on the Geman-McClure penalty, with
/// the penalty scale annealed from 4·v² down to v²/4.
pub fn register_pair_fgr(
    src: &PreprocessedFragment,
    dst: &PreprocessedFragment,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    check_inputs(src, dst, params)?;
    let forward = feature_matches(&src.features, &feature_tree(&dst.features));
    let backward = feature_matches(&dst.features, &feature_tree(&src.features));
    let pairs: Vec<(usize, usize)> = forward
        .iter()
        .enumerate()
        .filter(|&(i, &j)| backward[j] == i)
        .map(|(i, &j)| (i, j))
        .collect();
    if pairs.len() < MIN_RECIPROCAL {
        return Err(Error::RegistrationFailed(format!(
            "{} reciprocal feature matches, need {MIN_RECIPROCAL}",
            pairs.len()
        )));
    }
    let s: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| src.cloud.positions[i]).collect();
    let d: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| dst.cloud.positions[j]).collect();
    let v2 = params.voxel_down * params.voxel_down;
    let mut mu = 4.0 * v2;
    let mut pose = RigidPose::identity();
    for it in 0..FGR_ITERATIONS {
        if it > 0 && it % FGR_HALVING_PERIOD == 0 {
            mu = (mu / 2.0).max(v2 / 4.0);
        }
        let weights: Vec<f64> = s
            .par_chunks(CHUNK)
            .zip(d.par_chunks(CHUNK))
            .flat_map_iter(|(sc, dc)| {
                sc.iter().zip(dc).map(|(a, b)| {
                    let r2 = (pose.apply(a) - b).norm_squared();
                    (mu / (mu + r2)).powi(2)
                })
            })
            .collect();
        match rigid_align(&s, &d, Some(&weights)) {
            Ok(p) => pose = p,
            Err(_) => break,
        }
    }
    let dst_tree = positions_tree(&dst.cloud.positions);
    Ok(score(
        &src.cloud.positions,
        &dst_tree,
        &pose,
        params.max_correspondence(),
    ))
}
