//! RGBD reconstruction front end: frame-to-frame odometry, fragment
//! construction, feature-based global registration and multiscale ICP.
//!
//! Pose conventions: odometry and registration results map source
//! coordinates into target coordinates; fragment poses map fragment
//! coordinates into the world (the first camera of fragment 0).

mod features;
mod fragments;
mod global;
mod icp;
mod odometry;

use nalgebra::{Matrix6, Vector3, Vector6};
use rayon::prelude::*;

use crate::geometry::spatial::KdTree;
use crate::geometry::RigidPose;

pub use features::{
    compute_fpfh, preprocess_fragment, voxel_downsample, FpfhFeature, PreprocessedFragment,
    FPFH_BINS,
};
pub use fragments::{make_fragments, register_fragments, Fragment, RegistrationMethod};
pub use global::{evaluate_registration, register_pair_fgr, register_pair_ransac};
pub use icp::{default_icp_scales, point_to_plane_icp, refine_multiscale_icp, IcpScale};
pub use odometry::{rgbd_odometry, OdometryParams};

/// Outcome of aligning a source onto a target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegistrationResult {
    /// Maps source coordinates into target coordinates.
    pub pose: RigidPose,
    /// Fraction of source elements with a correspondence.
    pub fitness: f64,
    /// RMS correspondence distance in meters.
    pub inlier_rmse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegistrationParams {
    /// Downsampling voxel for registration; sets the correspondence scales.
    pub voxel_down: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    /// RANSAC fails below this fitness.
    pub fitness_floor: f64,
    pub seed: u64,
    /// Minimum ratio between corresponding edge lengths in a RANSAC sample.
    pub edge_ratio: f64,
    /// Correspondence distance as a multiple of `voxel_down`.
    pub distance_factor: f64,
}

impl RegistrationParams {
    pub fn new(voxel_down: f64) -> Self {
        RegistrationParams {
            voxel_down,
            max_iterations: 100_000,
            confidence: 0.999,
            fitness_floor: 0.1,
            seed: 0,
            edge_ratio: 0.9,
            distance_factor: 1.5,
        }
    }

    pub fn max_correspondence(&self) -> f64 {
        self.distance_factor * self.voxel_down
    }

    /// Normal estimation radius.
    pub fn normal_radius(&self) -> f64 {
        2.0 * self.voxel_down
    }

    /// FPFH support radius.
    pub fn feature_radius(&self) -> f64 {
        5.0 * self.voxel_down
    }
}

/// Work items per chunk in parallel reductions. Partial sums are combined in
/// chunk order, so results do not depend on the thread count.
const CHUNK: usize = 2048;

/// Relative eigenvalue below which a twist direction counts as unconstrained.
const WEAK_DIRECTION: f64 = 1e-4;

/// Gauss-Newton normal equations for a twist update `[ω; v]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearSystem {
    jtj: Matrix6<f64>,
    jtr: Vector6<f64>,
    sq: f64,
    count: usize,
}

impl Default for LinearSystem {
    fn default() -> Self {
        LinearSystem {
            jtj: Matrix6::zeros(),
            jtr: Vector6::zeros(),
            sq: 0.0,
            count: 0,
        }
    }
}

impl LinearSystem {
    /// Adds the point-to-plane residual `n·(p - q)` of a transformed point `p`.
    pub(crate) fn add_point_to_plane(
        &mut self,
        p: &Vector3<f64>,
        q: &Vector3<f64>,
        n: &Vector3<f64>,
    ) {
        self.add_point_to_plane_weighted(p, q, n, 1.0);
    }

    /// Point-to-plane residual with weight `w` in the normal equations. The
    /// RMSE and count track the unweighted residual.
    pub(crate) fn add_point_to_plane_weighted(
        &mut self,
        p: &Vector3<f64>,
        q: &Vector3<f64>,
        n: &Vector3<f64>,
        w: f64,
    ) {
        let r = n.dot(&(p - q));
        let pn = p.cross(n);
        self.add_residual(&Vector6::new(pn.x, pn.y, pn.z, n.x, n.y, n.z), r, w);
        self.sq += r * r;
        self.count += 1;
    }

    /// A weighted residual with Jacobian `j` that does not enter the RMSE.
    pub(crate) fn add_residual(&mut self, j: &Vector6<f64>, r: f64, w: f64) {
        self.jtj += w * j * j.transpose();
        self.jtr += w * r * j;
    }

    fn merge(mut self, other: &LinearSystem) -> Self {
        self.jtj += other.jtj;
        self.jtr += other.jtr;
        self.sq += other.sq;
        self.count += other.count;
        self
    }

    pub(crate) fn count(&self) -> usize {
        self.count
    }

    pub(crate) fn rmse(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.sq / self.count as f64).sqrt()
        }
    }

    /// The left-multiplied update `exp(ξ)` minimizing the linearized residuals.
    /// Directions the data barely constrains (eigenvalues below a fraction of
    /// the largest) get no update, so noise cannot push the pose along them.
    pub(crate) fn solve(&self) -> Option<RigidPose> {
        let eig = self.jtj.symmetric_eigen();
        let top = eig.eigenvalues.max();
        if !(top > 0.0) {
            return None;
        }
        let rhs = eig.eigenvectors.transpose() * (-self.jtr);
        let scaled = Vector6::from_fn(|i, _| {
            let l = eig.eigenvalues[i];
            if l > WEAK_DIRECTION * top {
                rhs[i] / l
            } else {
                0.0
            }
        });
        let xi = eig.eigenvectors * scaled;
        xi.iter()
            .all(|v| v.is_finite())
            .then(|| RigidPose::from_twist(&xi))
    }

    /// Builds the system over `items` in parallel with a fixed reduction order.
    pub(crate) fn accumulate<T: Sync>(
        items: &[T],
        f: impl Fn(&mut LinearSystem, &T) + Sync,
    ) -> LinearSystem {
        let parts: Vec<LinearSystem> = items
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut sys = LinearSystem::default();
                for item in chunk {
                    f(&mut sys, item);
                }
                sys
            })
            .collect();
        parts
            .iter()
            .fold(LinearSystem::default(), |acc, p| acc.merge(p))
    }
}

/// Nearest-neighbor correspondences of transformed `src` points in `dst`
/// within `max_dist`, as (src index, dst index, distance²), in source order.
pub(crate) fn correspondences(
    src: &[Vector3<f64>],
    dst: &KdTree<3>,
    pose: &RigidPose,
    max_dist: f64,
) -> Vec<(usize, usize, f64)> {
    let max2 = max_dist * max_dist;
    let parts: Vec<Vec<(usize, usize, f64)>> = src
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            chunk
                .iter()
                .enumerate()
                .filter_map(|(i, p)| {
                    let q = pose.apply(p);
                    let nb = dst.nearest(&[q.x, q.y, q.z])?;
                    (nb.dist2 <= max2).then_some((c * CHUNK + i, nb.index, nb.dist2))
                })
                .collect()
        })
        .collect();
    parts.concat()
}
