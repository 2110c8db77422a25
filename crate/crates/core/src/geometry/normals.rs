use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::spatial::KdTree;
use crate::error::{Error, Result};

/// Default neighborhood size for normal estimation.
pub const DEFAULT_NORMAL_NEIGHBORS: usize = 30;

/// How each point's neighborhood is gathered.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NeighborSearch {
    Knn(usize),
    /// Up to `max_nn` nearest points no farther than `radius`.
    Hybrid {
        radius: f64,
        max_nn: usize,
    },
}

/// Where estimated normals should point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Orientation {
    None,
    /// Flip each normal toward this viewpoint.
    Toward(Vector3<f64>),
}

pub(crate) fn positions_tree(positions: &[Vector3<f64>]) -> KdTree<3> {
    KdTree::new(positions.iter().map(|p| [p.x, p.y, p.z]).collect())
}

/// PCA normal of a neighborhood; `None` when its covariance has rank < 2.
pub fn plane_normal(points: impl Iterator<Item = Vector3<f64>> + Clone) -> Option<Vector3<f64>> {
    let mut n = 0usize;
    let mut mean = Vector3::zeros();
    for p in points.clone() {
        mean += p;
        n += 1;
    }
    if n < 3 {
        return None;
    }
    mean /= n as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[idx[2]];
    let middle = eig.eigenvalues[idx[1]];
    if !(largest > 0.0) || middle <= largest * 1e-12 {
        return None;
    }
    let v = eig.eigenvectors.column(idx[0]).into_owned();
    let norm = v.norm();
    (norm > 0.0).then(|| v / norm)
}

/// Per-point unit normals from neighborhood covariance.
///
/// Fails when the cloud has fewer points than a k-NN neighborhood requests.
/// Degenerate neighborhoods yield `None`.
pub fn estimate_normals(
    positions: &[Vector3<f64>],
    search: NeighborSearch,
    orientation: Orientation,
) -> Result<Vec<Option<Vector3<f64>>>> {
    let k = match search {
        NeighborSearch::Knn(k) => k,
        NeighborSearch::Hybrid { max_nn, .. } => max_nn,
    };
    if k < 3 {
        return Err(Error::invalid(
            "normal estimation needs at least 3 neighbors",
        ));
    }
    if matches!(search, NeighborSearch::Knn(_)) && positions.len() < k {
        return Err(Error::invalid(format!(
            "cloud has {} points, fewer than the {} requested neighbors",
            positions.len(),
            k
        )));
    }
    let tree = positions_tree(positions);
    Ok(positions
        .par_iter()
        .map(|p| {
            let q = [p.x, p.y, p.z];
            let hood = match search {
                NeighborSearch::Knn(k) => tree.knn(&q, k),
                NeighborSearch::Hybrid { radius, max_nn } => tree.knn_within(&q, radius, max_nn),
            };
            let n = plane_normal(hood.iter().map(|nb| positions[nb.index]))?;
            Some(match orientation {
                Orientation::Toward(view) if n.dot(&(view - p)) < 0.0 => -n,
                _ => n,
            })
        })
        .collect())
}
