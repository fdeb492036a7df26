//! Beer–Lambert forward model, scan conversion and volume/panorama assembly.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{AcousticField, AcousticSample};
use crate::frustum::{probe_segments, FrustumGaussian, Sampler};
use crate::pose::Pose;
use crate::probe::{cartesian_to_polar, cast_slice_rays, ProbeSpec, Ray};
use crate::volume::{GridSpec, VolumeGrid};

/// Rendered fan grid, ray-major: `intensities[k · n_samples + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FanImage {
    pub intensities: Vec<f64>,
    pub probe: ProbeSpec,
    pub pose: Pose,
}

impl FanImage {
    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.probe.n_samples;
        &self.intensities[k * n..(k + 1) * n]
    }
}

/// `I_j = T_j · b_j` with `T_j = exp(−Σ_{k<j} α_k Δ)` and `T_0 = 1`.
pub fn integrate_ray(samples: &[AcousticSample], segment_mm: f64, out: &mut [f64]) {
    debug_assert_eq!(samples.len(), out.len());
    let mut optical_depth = 0.0f64;
    for (s, o) in samples.iter().zip(out.iter_mut()) {
        *o = (-optical_depth).exp() * s.backscatter;
        optical_depth += s.attenuation_per_mm * segment_mm;
    }
}

/// Reverse pass of [`integrate_ray`]: given `∂L/∂I_j`, returns
/// `(∂L/∂α_j, ∂L/∂b_j)` for every segment.
pub fn integrate_ray_backward(
    samples: &[AcousticSample],
    segment_mm: f64,
    intensity_grads: &[f64],
    out: &mut [(f64, f64)],
) {
    let n = samples.len();
    let mut optical_depth = 0.0f64;
    let mut transmission = vec![0.0; n];
    for (t, s) in transmission.iter_mut().zip(samples) {
        *t = (-optical_depth).exp();
        optical_depth += s.attenuation_per_mm * segment_mm;
    }
    // suffix of g_j · I_j over j > k
    let mut tail = 0.0;
    for j in (0..n).rev() {
        let intensity = transmission[j] * samples[j].backscatter;
        out[j] = (-segment_mm * tail, intensity_grads[j] * transmission[j]);
        tail += intensity_grads[j] * intensity;
    }
}

pub fn ray_queries(ray: &Ray, probe: &ProbeSpec, sampler: &Sampler) -> Vec<FrustumGaussian> {
    sampler.frustums(ray, &probe_segments(probe))
}

pub fn render_ray(field: &dyn AcousticField, ray: &Ray, probe: &ProbeSpec, sampler: &Sampler) -> Vec<f64> {
    let samples = field.query(&ray_queries(ray, probe, sampler));
    let mut out = vec![0.0; samples.len()];
    integrate_ray(&samples, probe.segment_length_mm(), &mut out);
    out
}

pub fn render_slice(field: &dyn AcousticField, probe: &ProbeSpec, pose: &Pose, sampler: &Sampler) -> FanImage {
    let segments = probe_segments(probe);
    let queries: Vec<FrustumGaussian> = cast_slice_rays(probe, pose)
        .iter()
        .flat_map(|ray| sampler.frustums(ray, &segments))
        .collect();
    let samples = field.query(&queries);
    let mut intensities = vec![0.0; samples.len()];
    let seg = probe.segment_length_mm();
    for (s, o) in samples
        .chunks_exact(probe.n_samples)
        .zip(intensities.chunks_exact_mut(probe.n_samples))
    {
        integrate_ray(s, seg, o);
    }
    FanImage {
        intensities,
        probe: probe.clone(),
        pose: *pose,
    }
}

/// Bilinear taps from each covered Cartesian voxel into the fan grid.
#[derive(Clone, Debug)]
pub struct ScanMap {
    pub grid: GridSpec,
    pub fan_len: usize,
    pub mask: Vec<bool>,
    /// Per voxel (empty when masked): `(fan index, weight)`.
    taps: Vec<[(u32, f64); 4]>,
}

impl ScanMap {
    pub fn new(probe: &ProbeSpec, grid: GridSpec) -> Self {
        let n_rays = probe.n_rays;
        let n_samples = probe.n_samples;
        let seg = probe.segment_length_mm();
        let pitch = probe.angular_pitch();
        let half = 0.5 * probe.opening_angle_rad();
        let full = probe.is_full_circle();
        let mut mask = vec![false; grid.voxels()];
        let mut taps = vec![[(0u32, 0.0f64); 4]; grid.voxels()];
        for j in 0..grid.height {
            for i in 0..grid.width {
                let v = i + grid.width * j;
                let (x, y_apex) = grid.voxel_center(i, j);
                let (r, theta) = cartesian_to_polar(x, y_apex, 0.0);
                if r < probe.r_in_mm || r > probe.r_out_mm {
                    continue;
                }
                if !full && theta.abs() > half {
                    continue;
                }
                let u = ((r - probe.r_in_mm) / seg - 0.5).clamp(0.0, (n_samples - 1) as f64);
                let s0 = (u.floor() as usize).min(n_samples - 1);
                let s1 = (s0 + 1).min(n_samples - 1);
                let fs = u - s0 as f64;
                let (k0, k1, fk) = if full {
                    let a = (theta + PI) / pitch;
                    let base = a.floor();
                    let k0 = (base as isize).rem_euclid(n_rays as isize) as usize;
                    (k0, (k0 + 1) % n_rays, a - base)
                } else {
                    let a = ((theta + half) / pitch).clamp(0.0, (n_rays - 1) as f64);
                    let k0 = (a.floor() as usize).min(n_rays - 1);
                    (k0, (k0 + 1).min(n_rays - 1), a - k0 as f64)
                };
                let idx = |k: usize, s: usize| (k * n_samples + s) as u32;
                taps[v] = [
                    (idx(k0, s0), (1.0 - fk) * (1.0 - fs)),
                    (idx(k0, s1), (1.0 - fk) * fs),
                    (idx(k1, s0), fk * (1.0 - fs)),
                    (idx(k1, s1), fk * fs),
                ];
                mask[v] = true;
            }
        }
        Self {
            grid,
            fan_len: n_rays * n_samples,
            mask,
            taps,
        }
    }

    /// Interpolates a fan grid onto the Cartesian plane; masked voxels get 0.
    pub fn apply(&self, fan: &[f64], out: &mut [f64]) {
        debug_assert_eq!(fan.len(), self.fan_len);
        for ((o, taps), &m) in out.iter_mut().zip(&self.taps).zip(&self.mask) {
            *o = if m {
                taps.iter().map(|&(i, w)| w * fan[i as usize]).sum()
            } else {
                0.0
            };
        }
    }

    /// Adjoint of [`ScanMap::apply`]: accumulates plane gradients into fan gradients.
    pub fn apply_adjoint(&self, plane_grad: &[f64], fan_grad: &mut [f64]) {
        for ((g, taps), &m) in plane_grad.iter().zip(&self.taps).zip(&self.mask) {
            if m {
                for &(i, w) in taps {
                    fan_grad[i as usize] += w * g;
                }
            }
        }
    }
}

/// Scan-converts a fan image into a single-plane grid.
pub fn scan_convert(fan: &FanImage, grid: GridSpec) -> VolumeGrid {
    let map = ScanMap::new(&fan.probe, grid);
    scan_convert_with(&map, fan)
}

pub fn scan_convert_with(map: &ScanMap, fan: &FanImage) -> VolumeGrid {
    let mut plane = vec![0.0; map.grid.voxels()];
    map.apply(&fan.intensities, &mut plane);
    VolumeGrid {
        dims: [map.grid.width, map.grid.height, 1],
        spacing_mm: map.grid.spacing_mm,
        data: plane.iter().map(|v| *v as f32).collect(),
        fan_mask: map.mask.clone(),
        poses: vec![fan.pose],
    }
}

/// Renders and stacks one Cartesian plane per slice pose.
pub fn render_volume(
    field: &dyn AcousticField,
    probe: &ProbeSpec,
    slice_poses: &[Pose],
    sampler: &Sampler,
    grid: GridSpec,
) -> VolumeGrid {
    let map = ScanMap::new(probe, grid);
    let planes: Vec<Vec<f64>> = slice_poses
        .par_iter()
        .map(|pose| {
            let fan = render_slice(field, probe, pose, sampler);
            let mut plane = vec![0.0; grid.voxels()];
            map.apply(&fan.intensities, &mut plane);
            plane
        })
        .collect();
    let data = planes.iter().flatten().map(|v| *v as f32).collect();
    let fan_mask = (0..slice_poses.len()).flat_map(|_| map.mask.iter().copied()).collect();
    VolumeGrid {
        dims: [grid.width, grid.height, slice_poses.len()],
        spacing_mm: grid.spacing_mm,
        data,
        fan_mask,
        poses: slice_poses.to_vec(),
    }
}

/// Uniformly spaced poses along a piecewise trajectory: `planes` poses at
/// arc-length fractions `p / planes`, translation linear and rotation slerped.
pub fn panorama_poses(trajectory: &[Pose], planes: usize) -> Result<Vec<Pose>> {
    if trajectory.len() < 2 {
        return Err(Error::Config(
            "panorama needs at least two trajectory poses".into(),
        ));
    }
    if planes == 0 {
        return Err(Error::Config("panorama needs at least one plane".into()));
    }
    let mut lengths: Vec<f64> = trajectory
        .windows(2)
        .map(|w| (w[1].translation() - w[0].translation()).norm())
        .collect();
    let mut total: f64 = lengths.iter().sum();
    if total <= 0.0 {
        let rotates = trajectory.windows(2).any(|w| w[0].angle_to(&w[1]) > 1e-12);
        if !rotates {
            return Err(Error::Config(
                "degenerate trajectory: all poses are identical".into(),
            ));
        }
        lengths.iter_mut().for_each(|l| *l = 1.0);
        total = lengths.len() as f64;
    }
    let mut poses = Vec::with_capacity(planes);
    let mut seg = 0;
    let mut start = 0.0;
    for p in 0..planes {
        let s = total * p as f64 / planes as f64;
        while seg + 1 < lengths.len() && s >= start + lengths[seg] {
            start += lengths[seg];
            seg += 1;
        }
        let u = if lengths[seg] > 0.0 {
            ((s - start) / lengths[seg]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        poses.push(Pose::interpolate(&trajectory[seg], &trajectory[seg + 1], u));
    }
    Ok(poses)
}

pub fn render_panorama(
    field: &dyn AcousticField,
    probe: &ProbeSpec,
    trajectory: &[Pose],
    sampler: &Sampler,
    planes: usize,
    grid: GridSpec,
) -> Result<VolumeGrid> {
    let poses = panorama_poses(trajectory, planes)?;
    Ok(render_volume(field, probe, &poses, sampler, grid))
}
