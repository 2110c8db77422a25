use nalgebra::{Matrix3, Vector3};

use super::pose::RigidPose;
use crate::error::{Error, Result};

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]`, with
/// optional non-negative per-pair weights (Kabsch with reflection guard).
pub fn rigid_align(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: Option<&[f64]>,
) -> Result<RigidPose> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::invalid(format!(
            "alignment needs matching non-empty point sets ({} vs {})",
            src.len(),
            dst.len()
        )));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..src.len()).map(w).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("alignment weights sum to zero"));
    }
    let mut cs = Vector3::zeros();
    let mut cd = Vector3::zeros();
    for i in 0..src.len() {
        cs += src[i] * w(i);
        cd += dst[i] * w(i);
    }
    cs /= total;
    cd /= total;
    let mut h = Matrix3::zeros();
    for i in 0..src.len() {
        h += (src[i] - cs) * (dst[i] - cd).transpose() * w(i);
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * d * u.transpose();
    RigidPose::new(r, cd - r * cs)
}
