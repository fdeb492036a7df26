//! Dense scalar voxel grids with a fan-coverage mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;

/// In-plane Cartesian grid for one slice, centered on the beam apex.
///
/// Voxel `(i, j)` sits at apex-relative `x = (i + ½ − W/2)·s`, `y = (j + ½ − H/2)·s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub spacing_mm: f64,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, spacing_mm: f64) -> Result<Self> {
        if width == 0 || height == 0 || !(spacing_mm > 0.0 && spacing_mm.is_finite()) {
            return Err(Error::Config(format!(
                "grid needs positive dims and spacing, got {width}×{height} at {spacing_mm} mm"
            )));
        }
        Ok(Self {
            width,
            height,
            spacing_mm,
        })
    }

    pub fn voxels(&self) -> usize {
        self.width * self.height
    }

    /// Apex-relative in-plane center of voxel `(i, j)`.
    pub fn voxel_center(&self, i: usize, j: usize) -> (f64, f64) {
        let s = self.spacing_mm;
        (
            (i as f64 + 0.5 - 0.5 * self.width as f64) * s,
            (j as f64 + 0.5 - 0.5 * self.height as f64) * s,
        )
    }
}

/// `W × H × D` voxels, x-fastest. `poses[k]` places plane `k` in the world.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrid {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub data: Vec<f32>,
    pub fan_mask: Vec<bool>,
    pub poses: Vec<Pose>,
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], spacing_mm: f64, data: Vec<f32>, fan_mask: Vec<bool>, poses: Vec<Pose>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if data.len() != n || fan_mask.len() != n {
            return Err(Error::DimMismatch(format!(
                "dims {dims:?} need {n} voxels, got {} values and {} mask entries",
                data.len(),
                fan_mask.len()
            )));
        }
        if !poses.is_empty() && poses.len() != dims[2] {
            return Err(Error::PoseCount(format!(
                "{} poses for {} planes",
                poses.len(),
                dims[2]
            )));
        }
        let mut grid = Self {
            dims,
            spacing_mm,
            data,
            fan_mask,
            poses,
        };
        grid.apply_mask();
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    pub fn plane_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn plane(&self, k: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[k * n..(k + 1) * n]
    }

    /// Forces masked-out voxels to zero.
    pub fn apply_mask(&mut self) {
        for (v, &m) in self.data.iter_mut().zip(&self.fan_mask) {
            if !m {
                *v = 0.0;
            }
        }
    }

    pub fn mask_count(&self) -> usize {
        self.fan_mask.iter().filter(|m| **m).count()
    }

    pub fn data_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| *v as f64).collect()
    }

    /// Planes `planes` re-assembled into a new grid.
    pub fn select_planes(&self, planes: &[usize]) -> Self {
        let n = self.plane_len();
        let mut data = Vec::with_capacity(n * planes.len());
        let mut mask = Vec::with_capacity(n * planes.len());
        for &k in planes {
            data.extend_from_slice(self.plane(k));
            mask.extend_from_slice(&self.fan_mask[k * n..(k + 1) * n]);
        }
        let poses = if self.poses.is_empty() {
            Vec::new()
        } else {
            planes.iter().map(|&k| self.poses[k]).collect()
        };
        Self {
            dims: [self.dims[0], self.dims[1], planes.len()],
            spacing_mm: self.spacing_mm,
            data,
            fan_mask: mask,
            poses,
        }
    }

    pub fn check_same_shape(&self, other: &VolumeGrid) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}
