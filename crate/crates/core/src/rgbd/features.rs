//! Voxel downsampling and FPFH descriptors.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::fragments::Fragment;
use crate::error::{Error, Result};
use crate::geometry::{
    estimate_normals, positions_tree, LabeledPointCloud, NeighborSearch, Orientation,
};

pub const FPFH_BINS: usize = 33;
const SUB_BINS: usize = 11;
/// Each descriptor is scaled to sum to this.
const HISTOGRAM_MASS: f64 = 100.0;
const FEATURE_MAX_NN: usize = 100;
const NORMAL_MAX_NN: usize = 30;
const ORDER_TIE: f64 = 1e-9;

pub type FpfhFeature = [f64; FPFH_BINS];

/// Downsampled fragment ready for global registration.
#[derive(Clone, Debug)]
pub struct PreprocessedFragment {
    /// Points with normals, in fragment coordinates.
    pub cloud: LabeledPointCloud,
    pub features: Vec<FpfhFeature>,
}

/// One point per occupied voxel: centroid position, mean color and normal,
/// majority label (ties go to the lower id). Output is ordered by voxel
/// coordinates.
pub fn voxel_downsample(cloud: &LabeledPointCloud, voxel: f64) -> Result<LabeledPointCloud> {
    if !(voxel > 0.0) {
        return Err(Error::invalid("downsampling voxel must be positive"));
    }
    cloud.validate()?;
    #[derive(Default)]
    struct Cell {
        sum: Vector3<f64>,
        color: [u64; 3],
        normal: Vector3<f64>,
        n: usize,
        labels: BTreeMap<u16, usize>,
    }
    let mut cells: BTreeMap<[i64; 3], Cell> = BTreeMap::new();
    for (i, p) in cloud.positions.iter().enumerate() {
        let key = [p.x, p.y, p.z].map(|c| (c / voxel).floor() as i64);
        let cell = cells.entry(key).or_default();
        cell.sum += p;
        cell.n += 1;
        if let Some(c) = cloud.color(i) {
            for k in 0..3 {
                cell.color[k] += c[k] as u64;
            }
        }
        if let Some(n) = cloud.normal(i) {
            cell.normal += n;
        }
        *cell.labels.entry(cloud.labels[i]).or_default() += 1;
    }
    let mut out = LabeledPointCloud {
        colors: cloud
            .colors
            .as_ref()
            .map(|_| Vec::with_capacity(cells.len())),
        normals: cloud
            .normals
            .as_ref()
            .map(|_| Vec::with_capacity(cells.len())),
        ..Default::default()
    };
    for cell in cells.values() {
        let n = cell.n as u64;
        let label = cell
            .labels
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map_or(0, |(l, _)| *l);
        let normal = cell.normal.try_normalize(1e-12).unwrap_or(cell.normal);
        out.push(
            cell.sum / cell.n as f64,
            out.colors
                .is_some()
                .then(|| cell.color.map(|c| ((c + n / 2) / n) as u8)),
            out.normals.is_some().then_some(normal),
            label,
        );
    }
    Ok(out)
}

/// Angular features of an oriented point pair, ordered so the source is the
/// point whose normal makes the smaller angle with the connecting line.
/// Near-ties (parallel normals) pick the ordering with the larger `f3`, so the
/// choice does not hinge on rounding noise.
fn pair_features(
    p1: &Vector3<f64>,
    n1: &Vector3<f64>,
    p2: &Vector3<f64>,
    n2: &Vector3<f64>,
) -> Option<[f64; 3]> {
    let mut dp = p2 - p1;
    let dist = dp.norm();
    if dist == 0.0 {
        return None;
    }
    let (a1, a2) = (n1.dot(&dp) / dist, n2.dot(&dp) / dist);
    let (t1, t2) = (a1.abs().acos(), a2.abs().acos());
    let swap = if (t1 - t2).abs() <= ORDER_TIE {
        -a2 > a1
    } else {
        t1 > t2
    };
    let (u, n_t, f3) = if swap {
        dp = -dp;
        (n2, n1, -a2)
    } else {
        (n1, n2, a1)
    };
    let v = dp.cross(u);
    let vn = v.norm();
    if vn == 0.0 {
        return None;
    }
    let v = v / vn;
    let w = u.cross(&v);
    let f2 = v.dot(n_t);
    let f1 = w.dot(n_t).atan2(u.dot(n_t));
    Some([f1, f2, f3])
}

fn bin(value: f64, lo: f64, hi: f64) -> usize {
    (((value - lo) / (hi - lo) * SUB_BINS as f64).floor() as i64).clamp(0, SUB_BINS as i64 - 1)
        as usize
}

/// Fast point feature histograms with the given support radius (neighbors
/// capped at the 100 nearest). Points without neighbors get all zeros;
/// every other descriptor sums to 100.
pub fn compute_fpfh(
    positions: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    radius: f64,
) -> Result<Vec<FpfhFeature>> {
    if positions.len() != normals.len() {
        return Err(Error::invalid("FPFH needs one normal per point"));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("feature radius must be positive"));
    }
    let tree = positions_tree(positions);
    let hoods: Vec<Vec<(usize, f64)>> = positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            tree.knn_within(&[p.x, p.y, p.z], radius, FEATURE_MAX_NN + 1)
                .into_iter()
                .filter(|nb| nb.index != i)
                .map(|nb| (nb.index, nb.dist2))
                .collect()
        })
        .collect();
    // simplified histograms: each point against its own neighborhood
    let spfh: Vec<FpfhFeature> = (0..positions.len())
        .into_par_iter()
        .map(|i| {
            let mut h = [0.0; FPFH_BINS];
            let hood = &hoods[i];
            if hood.is_empty() {
                return h;
            }
            let incr = HISTOGRAM_MASS / hood.len() as f64;
            for &(j, _) in hood {
                if let Some([f1, f2, f3]) =
                    pair_features(&positions[i], &normals[i], &positions[j], &normals[j])
                {
                    h[bin(f1, -PI, PI)] += incr;
                    h[SUB_BINS + bin(f2, -1.0, 1.0)] += incr;
                    h[2 * SUB_BINS + bin(f3, -1.0, 1.0)] += incr;
                }
            }
            h
        })
        .collect();
    Ok((0..positions.len())
        .into_par_iter()
        .map(|i| {
            let mut weighted = [0.0; FPFH_BINS];
            for &(j, d2) in &hoods[i] {
                if d2 == 0.0 {
                    continue;
                }
                for b in 0..FPFH_BINS {
                    weighted[b] += spfh[j][b] / d2;
                }
            }
            let mut h = [0.0; FPFH_BINS];
            for s in 0..3 {
                let seg = s * SUB_BINS..(s + 1) * SUB_BINS;
                let sum: f64 = weighted[seg.clone()].iter().sum();
                let scale = if sum > 0.0 { HISTOGRAM_MASS / sum } else { 0.0 };
                for b in seg {
                    h[b] = weighted[b] * scale + spfh[i][b];
                }
            }
            let total: f64 = h.iter().sum();
            if total > 0.0 {
                h.iter_mut().for_each(|v| *v *= HISTOGRAM_MASS / total);
            }
            h
        })
        .collect())
}

/// Downsamples a fragment in its own frame, estimates normals facing the
/// fragment's first camera, and computes FPFH descriptors. Points whose
/// neighborhood is too thin for a normal are dropped.
pub fn preprocess_fragment(
    frag: &Fragment,
    voxel_down: f64,
    feature_radius: f64,
) -> Result<PreprocessedFragment> {
    let down = voxel_downsample(&frag.cloud, voxel_down)?;
    let normals = if down.is_empty() {
        Vec::new()
    } else {
        estimate_normals(
            &down.positions,
            NeighborSearch::Hybrid {
                radius: 2.0 * voxel_down,
                max_nn: NORMAL_MAX_NN,
            },
            Orientation::Toward(Vector3::zeros()),
        )?
    };
    let keep: Vec<usize> = (0..down.len()).filter(|&i| normals[i].is_some()).collect();
    if keep.is_empty() {
        return Err(Error::DegenerateFragment(format!(
            "fragment {} has no usable points after downsampling at {voxel_down} m",
            frag.id
        )));
    }
    let mut cloud = down.select(&keep);
    cloud.normals = Some(keep.iter().map(|&i| normals[i].expect("kept")).collect());
    let features = compute_fpfh(
        &cloud.positions,
        cloud.normals.as_ref().expect("set"),
        feature_radius,
    )?;
    Ok(PreprocessedFragment { cloud, features })
}
