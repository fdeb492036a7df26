//! Rigid SE(3) poses placing slice planes in the world frame (millimeters).

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the orthonormality and determinant checks on rotation blocks.
pub const RIGID_TOLERANCE: f64 = 1e-9;

/// A rigid transform `p_world = R · p_local + t`.
///
/// Serialized as a 16-element row-major 4×4 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Builds a pose from a rotation block and translation, validating rigidity.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("pose translation is not finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Rotation by `angle` radians about a unit `axis`, followed by a translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self {
            rotation: *rot.matrix(),
            translation,
        }
    }

    /// Parses a row-major 4×4 matrix.
    pub fn from_row_major(m: &[f64]) -> Result<Self> {
        if m.len() != 16 {
            return Err(Error::Domain(format!(
                "pose needs 16 numbers, got {}",
                m.len()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("pose contains non-finite values".into()));
        }
        let last = [m[12], m[13], m[14], m[15]];
        let expected = [0.0, 0.0, 0.0, 1.0];
        if last
            .iter()
            .zip(expected)
            .any(|(a, b)| (a - b).abs() > RIGID_TOLERANCE)
        {
            return Err(Error::Domain(format!(
                "pose last row must be (0,0,0,1), got {last:?}"
            )));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        Self::from_parts(rotation, translation)
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        Matrix4::from_row_slice(&self.to_row_major())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Linear translation and spherical rotation interpolation, `u ∈ [0, 1]`.
    pub fn interpolate(a: &Pose, b: &Pose, u: f64) -> Pose {
        let qa = quaternion(&a.rotation);
        let qb = quaternion(&b.rotation);
        let q = qa.try_slerp(&qb, u, 1e-12).unwrap_or(qa);
        let rotation = *q.to_rotation_matrix().matrix();
        let translation = a.translation + (b.translation - a.translation) * u;
        Pose {
            rotation,
            translation,
        }
    }

    /// Rotation angle (radians) of `self⁻¹ ∘ other`.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }
}

fn quaternion(r: &Matrix3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r))
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("pose rotation is not finite".into()));
    }
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > RIGID_TOLERANCE {
        return Err(Error::Domain(format!(
            "pose rotation is not orthonormal (|RᵀR − I| = {err:.3e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > RIGID_TOLERANCE {
        return Err(Error::Domain(format!(
            "pose rotation determinant is {det}, expected +1"
        )));
    }
    Ok(())
}

impl TryFrom<Vec<f64>> for Pose {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Pose::from_row_major(&v)
    }
}

impl From<Pose> for Vec<f64> {
    fn from(p: Pose) -> Self {
        p.to_row_major().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_scaled_rotation() {
        let mut m = Pose::identity().to_row_major();
        m[0] = 1.1;
        assert!(matches!(Pose::from_row_major(&m), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_reflection() {
        let mut m = Pose::identity().to_row_major();
        m[0] = -1.0;
        let err = Pose::from_row_major(&m).unwrap_err().to_string();
        assert!(err.contains("determinant"), "{err}");
    }

    #[test]
    fn rejects_projective_row() {
        let mut m = Pose::identity().to_row_major();
        m[14] = 0.5;
        assert!(Pose::from_row_major(&m).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = Pose::from_axis_angle(Vector3::new(0.3, -1.0, 0.2), 0.7, Vector3::new(1.5, 2.0, -3.25));
        let s = serde_json::to_string(&p).unwrap();
        let q: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn interpolation_midpoint_halves_angle() {
        let a = Pose::identity();
        let b = Pose::from_axis_angle(Vector3::z(), 0.8, Vector3::new(0.0, 0.0, 10.0));
        let m = Pose::interpolate(&a, &b, 0.5);
        assert!((a.angle_to(&m) - 0.4).abs() < 1e-12);
        assert!((m.translation().z - 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn inverse_composition_is_identity(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0,
            angle in -3.0f64..3.0,
            tx in -50.0f64..50.0, ty in -50.0f64..50.0, tz in -50.0f64..50.0,
            px in -100.0f64..100.0, py in -100.0f64..100.0, pz in -100.0f64..100.0,
        ) {
            let pose = Pose::from_axis_angle(Vector3::new(ax, ay, az), angle, Vector3::new(tx, ty, tz));
            let p = Vector3::new(px, py, pz);
            let back = pose.transform_point(&pose.inverse().transform_point(&p));
            prop_assert!((back - p).norm() < 1e-9);
        }
    }
}
