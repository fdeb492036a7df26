//! Anisotropic multivariate Gaussian approximation of conical-frustum segments.
//!
//! Distances `t` are measured from the beam apex, not from the probe face, so
//! the cross-section of the frustum grows as `r · t`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::{ProbeSpec, Ray};

const DENOM_FLOOR: f64 = 1e-12;
const FRAME_TOLERANCE: f64 = 1e-9;

/// One axial segment `[t0, t1]` along a ray, apex-relative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentBounds {
    pub t0: f64,
    pub t1: f64,
}

impl SegmentBounds {
    pub fn new(t0: f64, t1: f64) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t1 > t0 && t0 + t1 > 0.0) {
            return Err(Error::Domain(format!(
                "segment needs finite 0 < mu and t1 > t0, got [{t0}, {t1}]"
            )));
        }
        Ok(Self { t0, t1 })
    }

    /// Segment from its midpoint and half-width.
    pub fn from_mu_delta(mu: f64, delta: f64) -> Result<Self> {
        Self::new(mu - delta, mu + delta)
    }

    pub fn mu(&self) -> f64 {
        0.5 * (self.t0 + self.t1)
    }

    pub fn delta(&self) -> f64 {
        0.5 * (self.t1 - self.t0)
    }

    pub fn length(&self) -> f64 {
        self.t1 - self.t0
    }
}

/// Cone slopes for the lateral and elevational footprint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianRadii {
    pub r_lat: f64,
    pub r_dep: f64,
}

impl GaussianRadii {
    pub fn new(r_lat: f64, r_dep: f64) -> Result<Self> {
        if !(r_lat > 0.0 && r_dep > 0.0 && r_lat.is_finite() && r_dep.is_finite()) {
            return Err(Error::Domain(format!(
                "gaussian radii must be positive, got ({r_lat}, {r_dep})"
            )));
        }
        Ok(Self { r_lat, r_dep })
    }

    pub fn for_probe(probe: &ProbeSpec) -> Result<Self> {
        base_radii(probe.s_lat_mm, probe.s_dep_mm)
    }

    pub fn scaled(self, factor: f64) -> Result<Self> {
        Self::new(self.r_lat * factor, self.r_dep * factor)
    }
}

/// Base radii from in-plane and elevational resolution: `r = 2s/√12`.
pub fn base_radii(s_lat_mm: f64, s_dep_mm: f64) -> Result<GaussianRadii> {
    if !(s_lat_mm > 0.0 && s_dep_mm > 0.0) {
        return Err(Error::Domain(format!(
            "resolutions must be positive, got s_lat = {s_lat_mm}, s_dep = {s_dep_mm}"
        )));
    }
    let k = 2.0 / 12f64.sqrt();
    GaussianRadii::new(k * s_lat_mm, k * s_dep_mm)
}

fn mean_distance_raw(mu: f64, delta: f64) -> f64 {
    let d2 = delta * delta;
    mu + 2.0 * mu * d2 / (3.0 * mu * mu + d2).max(DENOM_FLOOR)
}

fn ray_variance_raw(mu: f64, delta: f64) -> f64 {
    let d2 = delta * delta;
    let m2 = mu * mu;
    let denom = (3.0 * m2 + d2).max(DENOM_FLOOR);
    d2 / 3.0 - (4.0 / 15.0) * (d2 * d2 * (12.0 * m2 - d2)) / (denom * denom)
}

fn perpendicular_variance_raw(mu: f64, delta: f64, r: f64) -> f64 {
    let d2 = delta * delta;
    let m2 = mu * mu;
    let denom = (3.0 * m2 + d2).max(DENOM_FLOOR);
    r * r * (m2 / 4.0 + 5.0 * d2 / 12.0 - 4.0 * d2 * d2 / (15.0 * denom))
}

/// Expected apex distance of a point uniformly distributed in the frustum.
pub fn mean_distance(seg: &SegmentBounds) -> f64 {
    mean_distance_raw(seg.mu(), seg.delta())
}

/// Variance of the apex distance within the frustum.
pub fn ray_variance(seg: &SegmentBounds) -> f64 {
    ray_variance_raw(seg.mu(), seg.delta())
}

/// Variance perpendicular to the ray along an axis with cone slope `r_axis`.
pub fn perpendicular_variance(seg: &SegmentBounds, r_axis: f64) -> f64 {
    perpendicular_variance_raw(seg.mu(), seg.delta(), r_axis)
}

/// A frustum sample: world mean, world covariance, and its ray-aligned moments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrustumGaussian {
    pub mean_point: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    /// Columns `d̂, v₁, v₂`.
    pub frame: Matrix3<f64>,
    /// `(σ²_ray, σ²_lateral, σ²_depth)`.
    pub variances: Vector3<f64>,
}

impl FrustumGaussian {
    /// Zero-footprint sample at `point`.
    pub fn point(point: Vector3<f64>, ray: &Ray) -> Self {
        Self {
            mean_point: point,
            covariance: Matrix3::zeros(),
            frame: ray_frame(ray),
            variances: Vector3::zeros(),
        }
    }

    /// Diagonal of the world-frame covariance.
    pub fn world_diag(&self) -> Vector3<f64> {
        self.covariance.diagonal()
    }
}

fn ray_frame(ray: &Ray) -> Matrix3<f64> {
    Matrix3::from_columns(&[ray.direction, ray.lateral_axis, ray.depth_axis])
}

fn gaussian_from_moments(ray: &Ray, mu: f64, delta: f64, r_lat: f64, r_dep: f64) -> FrustumGaussian {
    let mean_t = mean_distance_raw(mu, delta);
    let variances = Vector3::new(
        ray_variance_raw(mu, delta),
        perpendicular_variance_raw(mu, delta, r_lat),
        perpendicular_variance_raw(mu, delta, r_dep),
    );
    let frame = ray_frame(ray);
    let covariance = frame * Matrix3::from_diagonal(&variances) * frame.transpose();
    FrustumGaussian {
        mean_point: ray.origin + ray.direction * (mean_t - ray.apex_offset),
        // exact symmetry, independent of rounding in the triple product
        covariance: 0.5 * (covariance + covariance.transpose()),
        frame,
        variances,
    }
}

/// Builds the world-frame Gaussian `N(o + μ_t d̂, B diag(σ²) Bᵀ)` for a segment.
pub fn build_covariance(seg: &SegmentBounds, radii: &GaussianRadii, ray: &Ray) -> Result<FrustumGaussian> {
    let err = ray.frame_error();
    if !(err <= FRAME_TOLERANCE) {
        return Err(Error::Invariant(format!(
            "ray frame is not orthonormal (error {err:.3e})"
        )));
    }
    Ok(gaussian_from_moments(
        ray,
        seg.mu(),
        seg.delta(),
        radii.r_lat,
        radii.r_dep,
    ))
}

/// Apex-relative segments of a probe ray: equal splits of `[R_in, R_out]`.
pub fn probe_segments(probe: &ProbeSpec) -> Vec<SegmentBounds> {
    let step = probe.segment_length_mm();
    (0..probe.n_samples)
        .map(|j| SegmentBounds {
            t0: probe.r_in_mm + j as f64 * step,
            t1: probe.r_in_mm + (j + 1) as f64 * step,
        })
        .collect()
}

/// How each segment is turned into a network query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Multivariate Gaussian frustum footprint.
    #[default]
    Mvg,
    /// Zero-footprint sample at the segment midpoint.
    Point,
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mvg" => Ok(Self::Mvg),
            "point" => Ok(Self::Point),
            other => Err(Error::Config(format!(
                "unknown sampling mode {other:?} (expected mvg or point)"
            ))),
        }
    }
}

/// Turns probe rays into per-segment Gaussian queries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sampler {
    pub mode: SamplingMode,
    pub radii: GaussianRadii,
    /// Scales every segment half-width and radius in the moment evaluation.
    /// `0` collapses each frustum onto its midpoint with zero variance.
    pub footprint_scale: f64,
}

impl Sampler {
    pub fn new(mode: SamplingMode, radii: GaussianRadii) -> Self {
        Self {
            mode,
            radii,
            footprint_scale: 1.0,
        }
    }

    pub fn frustums(&self, ray: &Ray, segments: &[SegmentBounds]) -> Vec<FrustumGaussian> {
        segments
            .iter()
            .map(|seg| match self.mode {
                SamplingMode::Point => {
                    FrustumGaussian::point(ray.at(seg.mu() - ray.apex_offset), ray)
                }
                SamplingMode::Mvg => {
                    let k = self.footprint_scale;
                    gaussian_from_moments(
                        ray,
                        seg.mu(),
                        k * seg.delta(),
                        k * self.radii.r_lat,
                        k * self.radii.r_dep,
                    )
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Pose;
    use crate::probe::cast_slice_rays;
    use proptest::prelude::*;

    fn seg(mu: f64, delta: f64) -> SegmentBounds {
        SegmentBounds::from_mu_delta(mu, delta).unwrap()
    }

    fn x_ray() -> Ray {
        Ray {
            origin: Vector3::zeros(),
            direction: Vector3::x(),
            lateral_axis: Vector3::y(),
            depth_axis: Vector3::z(),
            t_min: 0.0,
            t_max: 10.0,
            apex_offset: 0.0,
            theta: 0.0,
        }
    }

    #[test]
    fn base_radii_examples() {
        let r = base_radii(0.3, 0.6).unwrap();
        assert!((r.r_lat - 0.173205).abs() < 1e-6);
        assert!((r.r_dep - 0.346410).abs() < 1e-6);
        let unit = base_radii(12f64.sqrt() / 2.0, 1.0).unwrap();
        assert!((unit.r_lat - 1.0).abs() < 1e-15);
        assert!(base_radii(0.0, 1.0).is_err());
        assert!(base_radii(1.0, -1.0).is_err());
    }

    #[test]
    fn mean_distance_examples() {
        assert!((mean_distance(&seg(1.0, 1e-9)) - 1.0).abs() < 1e-12);
        assert!((mean_distance(&seg(2.0, 1.0)) - (2.0 + 4.0 / 13.0)).abs() < 1e-12);
        assert!((mean_distance(&seg(10.0, 0.1)) - 10.000666).abs() < 1e-6);
    }

    #[test]
    fn ray_variance_examples() {
        let v = ray_variance(&seg(2.0, 1.0));
        assert!((v - (1.0 / 3.0 - (4.0 / 15.0) * (47.0 / 169.0))).abs() < 1e-12);
        assert!((v - 0.259172).abs() < 1e-6);
        assert!(ray_variance(&seg(1.0, 1e-9)).abs() < 1e-17);
        assert!((ray_variance(&seg(100.0, 1.0)) - 0.333298).abs() < 1e-6);
    }

    #[test]
    fn perpendicular_variance_examples() {
        let s = seg(2.0, 1.0);
        assert!((perpendicular_variance(&s, 1.0) - (1.0 + 5.0 / 12.0 - 4.0 / 195.0)).abs() < 1e-12);
        assert!((perpendicular_variance(&s, 0.1) - 0.01396154).abs() < 1e-8);
        let z = seg(10.0, 1e-9);
        assert!((perpendicular_variance(&z, 0.7) - 25.0 * 0.49).abs() < 1e-9);
    }

    #[test]
    fn axis_aligned_covariance() {
        let radii = GaussianRadii::new(1.0, 1.0).unwrap();
        let g = build_covariance(&seg(2.0, 1.0), &radii, &x_ray()).unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new(0.2591716, 1.396154, 1.396154));
        assert!((g.covariance - expected).abs().max() < 1e-6);
        assert!((g.mean_point.x - 2.307692).abs() < 1e-6);

        let radii = GaussianRadii::new(0.5, 0.2).unwrap();
        let g = build_covariance(&seg(2.0, 1.0), &radii, &x_ray()).unwrap();
        let ratio = g.covariance[(1, 1)] / g.covariance[(2, 2)];
        assert!((ratio - 0.25 / 0.04).abs() < 1e-12);
    }

    #[test]
    fn non_orthonormal_frame_is_rejected() {
        let mut ray = x_ray();
        ray.lateral_axis = Vector3::new(0.1, 1.0, 0.0);
        let radii = GaussianRadii::new(1.0, 1.0).unwrap();
        assert!(matches!(
            build_covariance(&seg(2.0, 1.0), &radii, &ray),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn segments_cover_the_probe_span() {
        let probe = ProbeSpec::desk_annular();
        let segs = probe_segments(&probe);
        assert_eq!(segs.len(), probe.n_samples);
        assert_eq!(segs[0].t0, probe.r_in_mm);
        assert!((segs.last().unwrap().t1 - probe.r_out_mm).abs() < 1e-12);
    }

    #[test]
    fn zero_footprint_matches_point_mode() {
        let probe = ProbeSpec::desk_annular();
        let rays = cast_slice_rays(&probe, &Pose::from_translation(Vector3::new(1.0, 2.0, 3.0)));
        let segs = probe_segments(&probe);
        let radii = GaussianRadii::for_probe(&probe).unwrap();
        let mut mvg = Sampler::new(SamplingMode::Mvg, radii);
        mvg.footprint_scale = 0.0;
        let point = Sampler::new(SamplingMode::Point, radii);
        for ray in &rays {
            let a = mvg.frustums(ray, &segs);
            let b = point.frustums(ray, &segs);
            for (ga, gb) in a.iter().zip(&b) {
                assert!((ga.mean_point - gb.mean_point).norm() < 1e-12);
                assert_eq!(ga.world_diag().abs(), gb.world_diag());
            }
        }
    }

    proptest! {
        #[test]
        fn covariance_invariants(
            mu in 0.5f64..50.0, frac in 0.01f64..0.9,
            r_lat in 0.01f64..2.0, r_dep in 0.01f64..2.0,
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0, angle in -3.0f64..3.0,
        ) {
            let s = seg(mu, frac * mu);
            let radii = GaussianRadii::new(r_lat, r_dep).unwrap();
            let pose = Pose::from_axis_angle(Vector3::new(ax, ay, az), angle, Vector3::zeros());
            let base = build_covariance(&s, &radii, &x_ray()).unwrap();
            let mut ray = x_ray();
            ray.direction = pose.transform_vector(&ray.direction);
            ray.lateral_axis = pose.transform_vector(&ray.lateral_axis);
            ray.depth_axis = pose.transform_vector(&ray.depth_axis);
            let g = build_covariance(&s, &radii, &ray).unwrap();

            let r = pose.rotation();
            let conj = r * base.covariance * r.transpose();
            prop_assert!((conj - g.covariance).abs().max() < 1e-10 * (1.0 + g.covariance.abs().max()));
            prop_assert!((g.covariance - g.covariance.transpose()).abs().max() < 1e-12);
            prop_assert!((g.covariance.trace() - g.variances.sum()).abs() < 1e-10 * (1.0 + g.variances.sum()));

            let mut eig: Vec<f64> = g.covariance.symmetric_eigenvalues().iter().copied().collect();
            let mut var: Vec<f64> = g.variances.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            var.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&var) {
                prop_assert!(*a >= -1e-12);
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
            }

            prop_assert!(ray_variance(&s) <= s.delta().powi(2) / 3.0 + 1e-15);
            prop_assert!(ray_variance(&s) > 0.0);
            prop_assert!(mean_distance(&s) >= s.mu());
            let c = 1.7;
            prop_assert_eq!(
                perpendicular_variance(&s, c * r_lat),
                // exact: both sides compute (c·r)² times the same bracket
                (c * r_lat) * (c * r_lat) * perpendicular_variance(&s, 1.0)
            );
        }
    }
}
