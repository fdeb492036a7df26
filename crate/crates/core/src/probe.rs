//! Convex / annular probe geometry: polar ray casting and multi-planar stacking.
//!
//! Slice-local frame: the probe face center is the origin, the fan lies in the
//! local `z = 0` plane, and the beam apex (probe center) sits at `(0, −R_in, 0)`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;

const BOUND_EPS: f64 = 1e-9;

/// Convex transducer parameterization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProbeSpec", into = "RawProbeSpec")]
pub struct ProbeSpec {
    pub r_in_mm: f64,
    pub r_out_mm: f64,
    pub opening_angle_deg: f64,
    pub n_rays: usize,
    pub n_samples: usize,
    pub s_lat_mm: f64,
    pub s_dep_mm: f64,
    pub n_slices: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawProbeSpec {
    r_in_mm: f64,
    r_out_mm: f64,
    opening_angle_deg: f64,
    n_rays: usize,
    n_samples: usize,
    s_lat_mm: f64,
    s_dep_mm: f64,
    n_slices: usize,
}

impl TryFrom<RawProbeSpec> for ProbeSpec {
    type Error = Error;

    fn try_from(r: RawProbeSpec) -> Result<Self> {
        let p = ProbeSpec {
            r_in_mm: r.r_in_mm,
            r_out_mm: r.r_out_mm,
            opening_angle_deg: r.opening_angle_deg,
            n_rays: r.n_rays,
            n_samples: r.n_samples,
            s_lat_mm: r.s_lat_mm,
            s_dep_mm: r.s_dep_mm,
            n_slices: r.n_slices,
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<ProbeSpec> for RawProbeSpec {
    fn from(p: ProbeSpec) -> Self {
        RawProbeSpec {
            r_in_mm: p.r_in_mm,
            r_out_mm: p.r_out_mm,
            opening_angle_deg: p.opening_angle_deg,
            n_rays: p.n_rays,
            n_samples: p.n_samples,
            s_lat_mm: p.s_lat_mm,
            s_dep_mm: p.s_dep_mm,
            n_slices: p.n_slices,
        }
    }
}

impl ProbeSpec {
    /// Desk-scale annular probe used by the reference phantom.
    pub fn desk_annular() -> Self {
        let r_in_mm = 2.0;
        let r_out_mm = 24.0;
        let n_rays = 64;
        // lateral resolution follows the angular pitch at mid-depth
        let s_lat_mm = 2.0 * PI * 0.5 * (r_in_mm + r_out_mm) / n_rays as f64;
        Self {
            r_in_mm,
            r_out_mm,
            opening_angle_deg: 360.0,
            n_rays,
            n_samples: 24,
            s_lat_mm,
            s_dep_mm: 1.0,
            n_slices: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.r_in_mm,
            self.r_out_mm,
            self.opening_angle_deg,
            self.s_lat_mm,
            self.s_dep_mm,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("probe contains non-finite values".into()));
        }
        if !(self.r_in_mm >= 0.0 && self.r_in_mm < self.r_out_mm) {
            return Err(Error::Config(format!(
                "probe radii must satisfy 0 <= r_in_mm < r_out_mm (got {} and {})",
                self.r_in_mm, self.r_out_mm
            )));
        }
        if !(self.opening_angle_deg > 0.0 && self.opening_angle_deg <= 360.0) {
            return Err(Error::Config(format!(
                "opening_angle_deg must lie in (0, 360], got {}",
                self.opening_angle_deg
            )));
        }
        if self.n_rays < 2 {
            return Err(Error::Config("n_rays must be at least 2".into()));
        }
        if self.n_samples < 1 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if self.n_slices < 1 {
            return Err(Error::Config("n_slices must be at least 1".into()));
        }
        if !(self.s_lat_mm > 0.0 && self.s_dep_mm > 0.0) {
            return Err(Error::Config(
                "s_lat_mm and s_dep_mm must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn opening_angle_rad(&self) -> f64 {
        self.opening_angle_deg.to_radians()
    }

    pub fn is_full_circle(&self) -> bool {
        self.opening_angle_deg >= 360.0
    }

    /// Axial span of each ray, `R_out − R_in`.
    pub fn ray_length_mm(&self) -> f64 {
        self.r_out_mm - self.r_in_mm
    }

    /// Angular spacing between adjacent rays (radians).
    pub fn angular_pitch(&self) -> f64 {
        if self.is_full_circle() {
            2.0 * PI / self.n_rays as f64
        } else {
            self.opening_angle_rad() / (self.n_rays - 1) as f64
        }
    }

    /// Azimuth of ray `k`.
    pub fn ray_angle(&self, k: usize) -> f64 {
        if self.is_full_circle() {
            -PI + 2.0 * PI * k as f64 / self.n_rays as f64
        } else {
            -0.5 * self.opening_angle_rad() + self.angular_pitch() * k as f64
        }
    }

    /// Length of each axial segment along a ray.
    pub fn segment_length_mm(&self) -> f64 {
        self.ray_length_mm() / self.n_samples as f64
    }

    /// Apex-relative radius of the center of segment `j`.
    pub fn sample_radius(&self, j: usize) -> f64 {
        self.r_in_mm + (j as f64 + 0.5) * self.segment_length_mm()
    }
}

/// A beam with its local orthonormal frame `(d̂, v₁, v₂)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub lateral_axis: Vector3<f64>,
    pub depth_axis: Vector3<f64>,
    pub t_min: f64,
    pub t_max: f64,
    /// Distance from the beam apex to `origin` (the probe's inner radius).
    pub apex_offset: f64,
    pub theta: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }

    /// Largest deviation of `{d̂, v₁, v₂}` from an orthonormal set.
    pub fn frame_error(&self) -> f64 {
        let d = &self.direction;
        let a = &self.lateral_axis;
        let b = &self.depth_axis;
        [
            (d.norm() - 1.0).abs(),
            (a.norm() - 1.0).abs(),
            (b.norm() - 1.0).abs(),
            d.dot(a).abs(),
            d.dot(b).abs(),
            a.dot(b).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Slice-local Cartesian position of polar sample `(r, θ)` at elevation `z`.
pub fn polar_to_cartesian(r: f64, theta: f64, z: f64, probe: &ProbeSpec) -> Result<Vector3<f64>> {
    if !(r >= probe.r_in_mm - BOUND_EPS) {
        return Err(Error::Domain(format!(
            "radius {r} below r_in_mm = {}",
            probe.r_in_mm
        )));
    }
    if !(r <= probe.r_out_mm + BOUND_EPS) {
        return Err(Error::Domain(format!(
            "radius {r} above r_out_mm = {}",
            probe.r_out_mm
        )));
    }
    let half = 0.5 * probe.opening_angle_rad();
    if !(theta.abs() <= half + BOUND_EPS) {
        return Err(Error::Domain(format!(
            "theta {theta} outside opening angle ±{half}"
        )));
    }
    Ok(polar_to_local(r, theta, z, probe.r_in_mm))
}

pub(crate) fn polar_to_local(r: f64, theta: f64, z: f64, r_in: f64) -> Vector3<f64> {
    let (s, c) = theta.sin_cos();
    Vector3::new(r * s, r * c - r_in, z)
}

/// Inverse of the in-plane mapping: `(r, θ)` of a slice-local point.
pub fn cartesian_to_polar(x: f64, y: f64, r_in: f64) -> (f64, f64) {
    let ya = y + r_in;
    (x.hypot(ya), x.atan2(ya))
}

/// Casts the `n_rays` rays of one fan slice and places them with `pose`.
pub fn cast_slice_rays(probe: &ProbeSpec, pose: &Pose) -> Vec<Ray> {
    let normal = Vector3::new(0.0, 0.0, -1.0);
    (0..probe.n_rays)
        .map(|k| {
            let theta = probe.ray_angle(k);
            let (s, c) = theta.sin_cos();
            let origin = polar_to_local(probe.r_in_mm, theta, 0.0, probe.r_in_mm);
            let dir = Vector3::new(s, c, 0.0);
            let tangent = Vector3::new(c, -s, 0.0);
            Ray {
                origin: pose.transform_point(&origin),
                direction: pose.transform_vector(&dir),
                lateral_axis: pose.transform_vector(&tangent),
                depth_axis: pose.transform_vector(&normal),
                t_min: 0.0,
                t_max: probe.ray_length_mm(),
                apex_offset: probe.r_in_mm,
                theta,
            }
        })
        .collect()
}

/// Rays for every slice of a volume, grouped by slice in pose order.
pub fn stack_volume_rays(probe: &ProbeSpec, slice_poses: &[Pose]) -> Result<Vec<Vec<Ray>>> {
    if slice_poses.len() != probe.n_slices {
        return Err(Error::Config(format!(
            "expected {} slice poses, got {}",
            probe.n_slices,
            slice_poses.len()
        )));
    }
    Ok(slice_poses
        .iter()
        .map(|pose| cast_slice_rays(probe, pose))
        .collect())
}

/// Translational displacement between consecutive slice-plane origins.
pub fn elevational_step(slice_poses: &[Pose]) -> Result<Vec<f64>> {
    if slice_poses.len() < 2 {
        return Err(Error::Config(
            "elevational step needs at least two poses".into(),
        ));
    }
    Ok(slice_poses
        .windows(2)
        .map(|w| (w[1].translation() - w[0].translation()).norm())
        .collect())
}
