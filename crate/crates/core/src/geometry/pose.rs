use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;
const REPAIR_TOL: f64 = 1e-6;

/// A rigid transform `x ↦ R·x + t`.
///
/// When it comes from a sparse SfM model the forward direction maps world to
/// camera coordinates. Other APIs name the direction in their parameter names
/// (`camera_to_world`, `src_to_dst`, ...).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Which way to apply an extrinsic (world→camera) pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    WorldToCamera,
    CameraToWorld,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

fn orthonormality_defect(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let entry = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    entry.max((r.determinant() - 1.0).abs())
}

impl RigidPose {
    pub fn identity() -> Self {
        RigidPose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, projecting slightly non-orthonormal rotations (defect
    /// below 1e-6) onto the nearest rotation and rejecting anything worse.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("pose contains non-finite values"));
        }
        let defect = orthonormality_defect(&rotation);
        let rotation = if defect <= ORTHONORMAL_TOL {
            rotation
        } else if defect < REPAIR_TOL {
            nearest_rotation(&rotation)
        } else {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (defect {defect:.3e})"
            )));
        };
        Ok(RigidPose {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidPose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// From a unit quaternion `(w, x, y, z)`; the norm must be within `tol` of 1.
    pub fn from_quaternion(q: [f64; 4], translation: Vector3<f64>, tol: f64) -> Result<Self> {
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > tol {
            return Err(Error::invalid(format!(
                "quaternion norm {norm} is not unit"
            )));
        }
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        Self::new(*uq.to_rotation_matrix().matrix(), translation)
    }

    /// Rotation part as a unit quaternion `(w, x, y, z)` with `w ≥ 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let uq =
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        let q = uq.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    /// Rotation by the axis-angle vector `omega` followed by translation `t`.
    pub fn from_axis_angle(omega: Vector3<f64>, t: Vector3<f64>) -> Self {
        RigidPose {
            rotation: *Rotation3::new(omega).matrix(),
            translation: t,
        }
    }

    /// Small-motion update `[ω; v]`: rotation `exp(ω)`, translation `v`.
    pub fn from_twist(xi: &Vector6<f64>) -> Self {
        Self::from_axis_angle(
            Vector3::new(xi[0], xi[1], xi[2]),
            Vector3::new(xi[3], xi[4], xi[5]),
        )
    }

    /// Camera-to-world pose of a camera at `eye` looking at `target`.
    /// Camera axes: x right, y down, z forward.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::invalid("eye and target coincide"));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::invalid(
                "up vector is parallel to the viewing direction",
            ));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_columns(&[x, y, z]);
        Self::new(r, eye)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn apply_inverse(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.tr_mul(&(p - self.translation))
    }

    #[inline]
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidPose) -> Self {
        RigidPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Re-projects the rotation onto SO(3); used after iterative optimization.
    pub fn renormalized(&self) -> Self {
        RigidPose {
            rotation: nearest_rotation(&self.rotation),
            translation: self.translation,
        }
    }

    pub fn rotation_angle(&self) -> f64 {
        // atan2 keeps precision near zero, where acos of the trace loses half
        // the digits
        let r = &self.rotation;
        let s = Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        )
        .norm()
            * 0.5;
        let c = (r.trace() - 1.0) * 0.5;
        s.atan2(c)
    }

    /// Rotation angle and translation distance between two poses.
    pub fn difference(&self, other: &RigidPose) -> (f64, f64) {
        let delta = self.inverse().compose(other);
        (
            delta.rotation_angle(),
            (self.translation - other.translation).norm(),
        )
    }

    pub fn is_valid(&self) -> bool {
        orthonormality_defect(&self.rotation) <= ORTHONORMAL_TOL
    }
}

/// Nearest rotation in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * v_t;
    }
    r
}

/// Applies an extrinsic pose (stored world→camera) in the requested direction.
#[inline]
pub fn transform_point(pose: &RigidPose, p: &Vector3<f64>, direction: Direction) -> Vector3<f64> {
    match direction {
        Direction::WorldToCamera => pose.apply(p),
        Direction::CameraToWorld => pose.apply_inverse(p),
    }
}
