use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::Serialize;

use super::scene::Scene;
use crate::error::{Error, Result};
use crate::geometry::{rigid_align, LabeledPointCloud, RigidPose};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub elements: usize,
    /// Root-mean-square distance of the elements to the scene surface.
    pub surface_rms: f64,
    /// IoU per scene label over the evaluated elements.
    pub iou: BTreeMap<u16, f64>,
    pub unlabeled_fraction: f64,
}

/// Scores predicted elements (cloud points or mesh vertices) against the
/// scene. Each element's true label is that of its nearest primitive.
///
/// A label whose predicted and true sets are both empty scores IoU 0: a scene
/// part that was never reconstructed counts as a miss.
pub fn evaluate(pred: &LabeledPointCloud, scene: &Scene) -> Result<EvalReport> {
    pred.validate()?;
    if scene.is_empty() {
        return Err(Error::invalid("cannot evaluate against an empty scene"));
    }
    let n = pred.len();
    let mut sq = 0.0;
    let mut inter: BTreeMap<u16, usize> = BTreeMap::new();
    let mut union: BTreeMap<u16, usize> = BTreeMap::new();
    let mut unlabeled = 0usize;
    for (p, &label) in pred.positions.iter().zip(&pred.labels) {
        let (d, truth) = scene.sdf(p);
        sq += d * d;
        if label == 0 {
            unlabeled += 1;
        }
        if label == truth {
            *inter.entry(label).or_default() += 1;
            *union.entry(label).or_default() += 1;
        } else {
            *union.entry(label).or_default() += 1;
            *union.entry(truth).or_default() += 1;
        }
    }
    let iou = scene
        .labels()
        .into_iter()
        .map(|l| {
            let u = union.get(&l).copied().unwrap_or(0);
            let i = inter.get(&l).copied().unwrap_or(0);
            (l, if u == 0 { 0.0 } else { i as f64 / u as f64 })
        })
        .collect();
    Ok(EvalReport {
        elements: n,
        surface_rms: if n == 0 { 0.0 } else { (sq / n as f64).sqrt() },
        iou,
        unlabeled_fraction: if n == 0 {
            0.0
        } else {
            unlabeled as f64 / n as f64
        },
    })
}

/// RMS distance between camera positions after the best rigid alignment of
/// the estimate onto the ground truth. Poses are camera(or fragment)→world.
pub fn absolute_trajectory_error(estimate: &[RigidPose], truth: &[RigidPose]) -> Result<f64> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(Error::invalid(
            "trajectories must be non-empty and of equal length",
        ));
    }
    let est: Vec<Vector3<f64>> = estimate.iter().map(|p| *p.translation()).collect();
    let gt: Vec<Vector3<f64>> = truth.iter().map(|p| *p.translation()).collect();
    let align = rigid_align(&est, &gt, None)?;
    let sq: f64 = est
        .iter()
        .zip(&gt)
        .map(|(e, g)| (align.apply(e) - g).norm_squared())
        .sum();
    Ok((sq / est.len() as f64).sqrt())
}
