use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Row-major raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Z-depth in meters; 0 marks an invalid pixel.
pub type DepthImage = Image<f64>;
/// 8-bit RGB.
pub type ColorImage = Image<[u8; 3]>;
/// Label ids; 0 is unlabeled / background.
pub type LabelImage = Image<u16>;
/// Unit normals, `None` where no normal is known.
pub type NormalImage = Image<Option<Vector3<f64>>>;

impl<T: Clone> Image<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Image {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }
}

impl<T> Image<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "raster of {}x{} needs {} pixels, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn same_dims<U>(&self, other: &Image<U>) -> bool {
        self.dims() == other.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl DepthImage {
    /// Checks the depth invariants: finite and non-negative everywhere.
    pub fn validate_depth(&self) -> Result<()> {
        match self.data.iter().position(|d| !d.is_finite() || *d < 0.0) {
            Some(i) => Err(Error::invalid(format!(
                "depth pixel ({}, {}) is {}",
                i % self.width,
                i / self.width,
                self.data[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }
}

impl LabelImage {
    /// Distinct nonzero labels, ascending.
    pub fn labels(&self) -> Vec<u16> {
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &l in &self.data {
            seen[l as usize] = true;
        }
        (1..=u16::MAX).filter(|l| seen[*l as usize]).collect()
    }
}
