//! Integrated positional encoding of Gaussian footprints.
//!
//! Feature layout for `L` bands: `[sin block | cos block]`, each block ordered
//! band-major, axis-minor: `(ℓ=0: x, y, z), (ℓ=1: x, y, z), …`.

use nalgebra::Vector3;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frustum::FrustumGaussian;

/// Encoded network input, length `6 · num_bands`.
#[derive(Clone, Debug, PartialEq)]
pub struct IpeFeatures {
    pub values: Vec<f64>,
}

pub fn feature_len(num_bands: usize) -> usize {
    6 * num_bands
}

/// Expected `sin`/`cos` features of `X ~ N(mean, diag(diag_variance))`.
pub fn encode(mean_point: &Vector3<f64>, diag_variance: &Vector3<f64>, num_bands: usize) -> Result<IpeFeatures> {
    if num_bands == 0 {
        return Err(Error::Domain("num_bands must be at least 1".into()));
    }
    if diag_variance.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain(format!(
            "variances must be non-negative, got {:?}",
            diag_variance.as_slice()
        )));
    }
    let mut values = vec![0.0; feature_len(num_bands)];
    encode_into(mean_point, diag_variance, num_bands, &mut values);
    Ok(IpeFeatures { values })
}

/// Unchecked encoder used on hot paths; `out.len()` must equal `6 · num_bands`.
pub fn encode_into<T: Float>(mean: &Vector3<f64>, var: &Vector3<f64>, num_bands: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), feature_len(num_bands));
    let half = 3 * num_bands;
    let mut freq = 1.0f64;
    for band in 0..num_bands {
        let freq2 = freq * freq;
        for axis in 0..3 {
            let damp = (-0.5 * freq2 * var[axis]).exp();
            let (s, c) = (freq * mean[axis]).sin_cos();
            let i = 3 * band + axis;
            out[i] = T::from(s * damp).unwrap();
            out[half + i] = T::from(c * damp).unwrap();
        }
        freq *= 2.0;
    }
}

/// Diagonal of the world-frame covariance.
pub fn world_diag(gaussian: &FrustumGaussian) -> Vector3<f64> {
    gaussian.world_diag()
}

/// Affine map from the scene bounding box onto `[−π, π]³`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneBounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for axis in 0..3 {
            if !(max[axis] > min[axis]) || !min[axis].is_finite() || !max[axis].is_finite() {
                return Err(Error::Config(format!(
                    "scene bounds must have positive finite extent on axis {axis}"
                )));
            }
        }
        Ok(Self { min, max })
    }

    /// Smallest box containing `points`, padded by `margin_mm` on every side.
    pub fn enclosing(points: impl IntoIterator<Item = Vector3<f64>>, margin_mm: f64) -> Result<Self> {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for axis in 0..3 {
                min[axis] = min[axis].min(p[axis]);
                max[axis] = max[axis].max(p[axis]);
            }
        }
        for axis in 0..3 {
            min[axis] -= margin_mm;
            max[axis] += margin_mm;
        }
        Self::new(min, max)
    }

    pub fn scale(&self) -> Vector3<f64> {
        Vector3::from_fn(|i, _| 2.0 * std::f64::consts::PI / (self.max[i] - self.min[i]))
    }

    /// Maps a world mean and world-diagonal variance into encoder coordinates.
    pub fn normalize(&self, mean: &Vector3<f64>, var: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let s = self.scale();
        let m = Vector3::from_fn(|i, _| (mean[i] - self.min[i]) * s[i] - std::f64::consts::PI);
        let v = Vector3::from_fn(|i, _| var[i] * s[i] * s[i]);
        (m, v)
    }

    /// Normalizes and encodes a frustum into `out`.
    pub fn encode_gaussian<T: Float>(&self, g: &FrustumGaussian, num_bands: usize, out: &mut [T]) {
        let (m, v) = self.normalize(&g.mean_point, &g.world_diag());
        encode_into(&m, &v, num_bands, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frustum::{build_covariance, GaussianRadii, SegmentBounds};
    use crate::probe::Ray;
    use proptest::prelude::*;

    #[test]
    fn zero_variance_is_plain_positional_encoding() {
        let x = Vector3::new(0.3, -1.2, 2.5);
        let f = encode(&x, &Vector3::zeros(), 4).unwrap();
        for band in 0..4 {
            for axis in 0..3 {
                let w = 2f64.powi(band as i32) * x[axis];
                assert_eq!(f.values[3 * band + axis], w.sin());
                assert_eq!(f.values[12 + 3 * band + axis], w.cos());
            }
        }
    }

    #[test]
    fn closed_form_attenuation() {
        let f = encode(&Vector3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0), &Vector3::new(1.0, 0.0, 0.0), 1).unwrap();
        assert!((f.values[0] - 0.606531).abs() < 1e-6);
        let f = encode(&Vector3::new(0.1, 0.2, 0.3), &Vector3::repeat(10.0), 10).unwrap();
        for axis in 0..3 {
            assert!(f.values[27 + axis].abs() < 1e-300);
            assert!(f.values[57 + axis].abs() < 1e-300);
        }
    }

    #[test]
    fn negative_variance_is_rejected() {
        assert!(encode(&Vector3::zeros(), &Vector3::new(0.0, -1e-3, 0.0), 2).is_err());
        assert!(encode(&Vector3::zeros(), &Vector3::zeros(), 0).is_err());
    }

    #[test]
    fn world_diag_permutes_with_frame() {
        let seg = SegmentBounds::from_mu_delta(2.0, 1.0).unwrap();
        let radii = GaussianRadii::new(1.0, 0.5).unwrap();
        let mut ray = Ray {
            origin: Vector3::zeros(),
            direction: Vector3::x(),
            lateral_axis: Vector3::y(),
            depth_axis: Vector3::z(),
            t_min: 0.0,
            t_max: 4.0,
            apex_offset: 0.0,
            theta: 0.0,
        };
        let g = build_covariance(&seg, &radii, &ray).unwrap();
        let d = world_diag(&g);
        assert!((d - g.variances).norm() < 1e-12);

        // rotate 90° about z
        ray.direction = Vector3::y();
        ray.lateral_axis = -Vector3::x();
        let g = build_covariance(&seg, &radii, &ray).unwrap();
        let d = world_diag(&g);
        let v = g.variances;
        assert!((d - Vector3::new(v[1], v[0], v[2])).norm() < 1e-12);
    }

    #[test]
    fn bounds_map_corners_to_pi() {
        let b = SceneBounds::new([-1.0, 0.0, 10.0], [1.0, 4.0, 30.0]).unwrap();
        let (lo, _) = b.normalize(&Vector3::new(-1.0, 0.0, 10.0), &Vector3::zeros());
        let (hi, v) = b.normalize(&Vector3::new(1.0, 4.0, 30.0), &Vector3::repeat(1.0));
        assert!((lo + Vector3::repeat(std::f64::consts::PI)).norm() < 1e-12);
        assert!((hi - Vector3::repeat(std::f64::consts::PI)).norm() < 1e-12);
        let s = b.scale();
        assert!((v - s.component_mul(&s)).norm() < 1e-12);
        assert!(SceneBounds::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_axis_separable(
            x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0,
            vx in 0.0f64..2.0, vy in 0.0f64..2.0, vz in 0.0f64..2.0, extra in 0.01f64..3.0,
        ) {
            let mean = Vector3::new(x, y, z);
            let var = Vector3::new(vx, vy, vz);
            let bands = 6;
            let f = encode(&mean, &var, bands).unwrap();
            for band in 0..bands {
                for axis in 0..3 {
                    let bound = (-0.5 * 4f64.powi(band as i32) * var[axis]).exp();
                    prop_assert!(f.values[3 * band + axis].abs() <= bound + 1e-15);
                    prop_assert!(f.values[3 * bands + 3 * band + axis].abs() <= bound + 1e-15);
                }
            }
            let mut var2 = var;
            var2.z += extra;
            let g = encode(&mean, &var2, bands).unwrap();
            for i in 0..f.values.len() {
                let axis = i % 3;
                if axis == 2 {
                    prop_assert!(g.values[i].abs() <= f.values[i].abs());
                } else {
                    prop_assert_eq!(g.values[i], f.values[i]);
                }
            }
        }
    }
}
