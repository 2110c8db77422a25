use nalgebra::Vector3;

use super::camera::{backproject_pixel, Intrinsics};
use super::image::{ColorImage, DepthImage, LabelImage};
use super::pose::RigidPose;
use crate::error::{Error, Result};

/// Point cloud with parallel color, normal and label attributes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledPointCloud {
    pub positions: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub labels: Vec<u16>,
}

impl LabeledPointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_colors() -> Self {
        LabeledPointCloud {
            colors: Some(Vec::new()),
            ..Default::default()
        }
    }

    /// Unlabeled cloud from bare positions.
    pub fn from_positions(positions: Vec<Vector3<f64>>) -> Self {
        let labels = vec![0; positions.len()];
        LabeledPointCloud {
            positions,
            colors: None,
            normals: None,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Appends a point. Attributes the cloud does not carry are ignored; a
    /// missing attribute the cloud does carry is filled with a neutral value.
    pub fn push(
        &mut self,
        position: Vector3<f64>,
        color: Option<[u8; 3]>,
        normal: Option<Vector3<f64>>,
        label: u16,
    ) {
        self.positions.push(position);
        if let Some(c) = self.colors.as_mut() {
            c.push(color.unwrap_or([0, 0, 0]));
        }
        if let Some(n) = self.normals.as_mut() {
            n.push(normal.unwrap_or_else(Vector3::z));
        }
        self.labels.push(label);
    }

    pub fn color(&self, i: usize) -> Option<[u8; 3]> {
        self.colors.as_ref().map(|c| c[i])
    }

    pub fn normal(&self, i: usize) -> Option<Vector3<f64>> {
        self.normals.as_ref().map(|n| n[i])
    }

    /// Checks attribute alignment and unit normals.
    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.labels.len() != n {
            return Err(Error::invalid(format!(
                "{} labels for {} points",
                self.labels.len(),
                n
            )));
        }
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(Error::invalid(format!(
                    "{} colors for {} points",
                    c.len(),
                    n
                )));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::invalid(format!(
                    "{} normals for {} points",
                    normals.len(),
                    n
                )));
            }
            if let Some(i) = normals.iter().position(|v| (v.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::invalid(format!("normal {i} is not unit length")));
            }
        }
        Ok(())
    }

    /// Subset by index, preserving attribute alignment.
    pub fn select(&self, indices: &[usize]) -> Self {
        LabeledPointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Concatenates `other`. Attributes survive only if both clouds carry them,
    /// unless `self` is empty, in which case `other`'s layout is adopted.
    pub fn append(&mut self, other: &LabeledPointCloud) {
        if self.is_empty() {
            if self.colors.is_none() {
                self.colors = other.colors.as_ref().map(|_| Vec::new());
            }
            if self.normals.is_none() {
                self.normals = other.normals.as_ref().map(|_| Vec::new());
            }
        }
        self.positions.extend_from_slice(&other.positions);
        self.colors = match (self.colors.take(), &other.colors) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            _ => None,
        };
        self.normals = match (self.normals.take(), &other.normals) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            _ => None,
        };
        self.labels.extend_from_slice(&other.labels);
    }

    /// Applies `transform` to positions and normals.
    pub fn transformed(&self, transform: &RigidPose) -> Self {
        LabeledPointCloud {
            positions: self.positions.iter().map(|p| transform.apply(p)).collect(),
            colors: self.colors.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|n| n.iter().map(|v| transform.rotate(v)).collect()),
            labels: self.labels.clone(),
        }
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.is_empty() {
            return None;
        }
        let sum: Vector3<f64> = self.positions.iter().sum();
        Some(sum / self.len() as f64)
    }
}

/// One world-frame point per valid depth pixel, in row-major pixel order.
///
/// `world_to_camera` is the view's extrinsic pose. Colors and labels are
/// attached when given; labels default to 0.
pub fn depth_to_cloud(
    depth: &DepthImage,
    k: &Intrinsics,
    world_to_camera: &RigidPose,
    color: Option<&ColorImage>,
    labels: Option<&LabelImage>,
) -> Result<LabeledPointCloud> {
    if depth.dims() != (k.width, k.height) {
        return Err(Error::invalid(format!(
            "depth is {}x{} but intrinsics describe {}x{}",
            depth.width(),
            depth.height(),
            k.width,
            k.height
        )));
    }
    if color.is_some_and(|c| !c.same_dims(depth)) || labels.is_some_and(|l| !l.same_dims(depth)) {
        return Err(Error::invalid(
            "color/label raster dimensions differ from depth",
        ));
    }
    let mut cloud = LabeledPointCloud {
        colors: color.map(|_| Vec::new()),
        ..Default::default()
    };
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            let d = *depth.get(x, y);
            if d <= 0.0 {
                continue;
            }
            let p_cam = backproject_pixel(x as f64, y as f64, d, k)?;
            let p = world_to_camera.apply_inverse(&p_cam);
            cloud.push(
                p,
                color.map(|c| *c.get(x, y)),
                None,
                labels.map_or(0, |l| *l.get(x, y)),
            );
        }
    }
    Ok(cloud)
}
