use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics. Pixel centers sit at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be at least 1x1"));
        }
        if !(self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64)
        {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Intrinsics of the image downsampled by two in each direction.
    pub fn halved(&self) -> Self {
        Intrinsics {
            fx: self.fx * 0.5,
            fy: self.fy * 0.5,
            cx: (self.cx + 0.5) * 0.5 - 0.5,
            cy: (self.cy + 0.5) * 0.5 - 0.5,
            width: (self.width / 2).max(1),
            height: (self.height / 2).max(1),
        }
    }

    /// Nearest pixel to a real-valued image position, if it lies inside the image.
    #[inline]
    pub fn pixel_at(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let x = (u + 0.5).floor();
        let y = (v + 0.5).floor();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            None
        } else {
            Some((x as usize, y as usize))
        }
    }
}

/// Lifts pixel `(u, v)` with z-depth `depth` into the camera frame.
///
/// The homogeneous form `d·K⁻¹·(u, v, 1)` reduces to this for a pinhole `K`.
/// Bounds are not checked; out-of-image pixels simply extrapolate the ray.
#[inline]
pub fn backproject_pixel(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::invalid(format!(
            "depth must be positive, got {depth}"
        )));
    }
    Ok(Vector3::new(
        depth * (u - k.cx) / k.fx,
        depth * (v - k.cy) / k.fy,
        depth,
    ))
}

/// Projects a camera-frame point, returning `(u, v, depth)`.
#[inline]
pub fn project_point(p: &Vector3<f64>, k: &Intrinsics) -> Result<(f64, f64, f64)> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
}
