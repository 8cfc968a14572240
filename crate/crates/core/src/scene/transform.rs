use nalgebra::{Matrix4, Point3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Quaternions whose norm drifts further than this from 1 are renormalized.
pub const QUAT_NORM_TOLERANCE: f64 = 1e-9;

/// Scale-then-rotate-then-translate rigid-plus-scale transform.
///
/// A point `p` maps to `translation + rotation * (scale ⊙ p)`. Composition
/// `parent.compose(&child)` yields the transform that applies `child` first
/// and then `parent`. The composition is exact whenever `parent` has a
/// uniform scale; with a non-uniform parent scale and a rotated child the
/// true product contains shear, which this representation cannot hold, so
/// the scale factors are multiplied component-wise instead.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "TransformRepr", into = "TransformRepr")]
pub struct Transform {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scale: Vector3<f64>,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
            scale: Vector3::new(1.0, 1.0, 1.0),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self {
            rotation,
            ..Self::identity()
        }
    }

    pub fn from_uniform_scale(s: f64) -> Self {
        Self {
            scale: Vector3::new(s, s, s),
            ..Self::identity()
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>, scale: Vector3<f64>) -> Self {
        Self {
            translation,
            rotation: renormalize(rotation),
            scale,
        }
    }

    pub fn is_uniform_scale(&self) -> bool {
        self.scale.x == self.scale.y && self.scale.y == self.scale.z
    }

    /// `self ∘ child`: apply `child`, then `self`.
    pub fn compose(&self, child: &Transform) -> Transform {
        let translation =
            self.translation + self.rotation * self.scale.component_mul(&child.translation);
        Transform {
            translation,
            rotation: renormalize(self.rotation * child.rotation),
            scale: self.scale.component_mul(&child.scale),
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.translation + self.rotation * self.scale.component_mul(&p.coords))
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * self.scale.component_mul(v)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = self.rotation.to_homogeneous();
        for c in 0..3 {
            for r in 0..3 {
                m[(r, c)] *= self.scale[c];
            }
        }
        m[(0, 3)] = self.translation.x;
        m[(1, 3)] = self.translation.y;
        m[(2, 3)] = self.translation.z;
        m
    }

    /// Exact inverse for uniform scale; per-axis scale is inverted component-wise.
    pub fn inverse(&self) -> Transform {
        let inv_rot = self.rotation.inverse();
        let inv_scale = Vector3::new(1.0 / self.scale.x, 1.0 / self.scale.y, 1.0 / self.scale.z);
        let translation = -inv_scale.component_mul(&(inv_rot * self.translation));
        Transform {
            translation,
            rotation: inv_rot,
            scale: inv_scale,
        }
    }

    pub fn quat_norm_error(&self) -> f64 {
        (self.rotation.quaternion().norm() - 1.0).abs()
    }
}

pub(crate) fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let n = q.quaternion().norm();
    if (n - 1.0).abs() > QUAT_NORM_TOLERANCE * 0.5 {
        UnitQuaternion::new_normalize(q.into_inner())
    } else {
        q
    }
}

/// Builds a unit quaternion from raw `[x, y, z, w]` components, keeping the
/// value verbatim when it is already unit length so replayed values stay
/// bit-identical.
pub fn quat_from_xyzw(c: [f64; 4]) -> UnitQuaternion<f64> {
    let q = Quaternion::new(c[3], c[0], c[1], c[2]);
    let n = q.norm();
    if n == 0.0 || !n.is_finite() {
        UnitQuaternion::identity()
    } else if (n - 1.0).abs() <= QUAT_NORM_TOLERANCE * 0.5 {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::new_normalize(q)
    }
}

pub fn quat_to_xyzw(q: &UnitQuaternion<f64>) -> [f64; 4] {
    let c = q.quaternion().coords;
    [c.x, c.y, c.z, c.w]
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    t: [f64; 3],
    r: [f64; 4],
    s: [f64; 3],
}

impl From<TransformRepr> for Transform {
    fn from(r: TransformRepr) -> Self {
        Transform {
            translation: Vector3::from(r.t),
            rotation: quat_from_xyzw(r.r),
            scale: Vector3::from(r.s),
        }
    }
}

impl From<Transform> for TransformRepr {
    fn from(t: Transform) -> Self {
        TransformRepr {
            t: t.translation.into(),
            r: quat_to_xyzw(&t.rotation),
            s: t.scale.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn compose_matches_matrix_product_for_uniform_parent() {
        let parent = Transform::new(
            Vector3::new(1.0, -2.0, 0.5),
            UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1),
            Vector3::new(2.0, 2.0, 2.0),
        );
        let child = Transform::new(
            Vector3::new(-0.3, 0.7, 4.0),
            UnitQuaternion::from_euler_angles(-1.0, 0.4, 0.1),
            Vector3::new(0.5, 1.5, 3.0),
        );
        let composed = parent.compose(&child).to_matrix();
        let product = parent.to_matrix() * child.to_matrix();
        assert!((composed - product).abs().max() < 1e-12);
    }

    #[test]
    fn inverse_round_trips() {
        let t = Transform::new(
            Vector3::new(3.0, 1.0, -2.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2),
            Vector3::new(0.25, 0.25, 0.25),
        );
        let id = t.compose(&t.inverse());
        assert!((id.to_matrix() - Matrix4::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn compose_keeps_unit_norm() {
        let mut t = Transform::identity();
        let step = Transform::from_rotation(UnitQuaternion::from_euler_angles(0.001, 0.002, 0.003));
        for _ in 0..100_000 {
            t = step.compose(&t);
        }
        assert!(t.quat_norm_error() <= QUAT_NORM_TOLERANCE);
    }

    #[test]
    fn serde_keeps_unit_quaternion_bits() {
        let t = Transform::from_rotation(UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3));
        let json = serde_json::to_string(&t).unwrap();
        let back: Transform = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
    }
}
