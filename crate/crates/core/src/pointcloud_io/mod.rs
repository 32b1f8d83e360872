//! Point clouds, labeled samples, and their on-disk formats.

mod kitti;
pub mod npy;
mod ply;
mod sample;

pub use kitti::{decode_kitti, encode_kitti, read_kitti_bin, write_kitti_bin, ScanStats};
pub use ply::{encode_colored_ply, write_colored_ply};
pub use sample::{decode_labeled_sample, encode_labeled_sample, read_labeled_sample, write_labeled_sample, LabeledSample};

use crate::error::{Error, Result};

/// Ordered 3D points with per-point reflectance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<[f32; 3]>,
    reflectance: Vec<f32>,
}

impl PointCloud {
    /// Validates equal lengths and finiteness.
    pub fn new(points: Vec<[f32; 3]>, reflectance: Vec<f32>) -> Result<Self> {
        if points.len() != reflectance.len() {
            return Err(Error::LengthMismatch(format!(
                "{} points, {} reflectance values",
                points.len(),
                reflectance.len()
            )));
        }
        if let Some(index) = points
            .iter()
            .zip(&reflectance)
            .position(|(p, r)| !(p.iter().all(|v| v.is_finite()) && r.is_finite()))
        {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(PointCloud {
            points,
            reflectance,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn reflectance(&self) -> &[f32] {
        &self.reflectance
    }

    pub fn iter(&self) -> impl Iterator<Item = ([f32; 3], f32)> + '_ {
        self.points.iter().copied().zip(self.reflectance.iter().copied())
    }

    /// Every point shifted by `offset`.
    pub fn translated(&self, offset: [f32; 3]) -> Self {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                .collect(),
            reflectance: self.reflectance.clone(),
        }
    }
}
