use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use orbitcad_core::Transform;
use serde::{Deserialize, Serialize};

/// Rigid transform. From PnP it maps marker coordinates into the camera
/// frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Pose::new(iso.rotation, iso.translation.vector)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_isometry(&(self.to_isometry() * other.to_isometry()))
    }

    pub fn inverse(&self) -> Pose {
        Pose::from_isometry(&self.to_isometry().inverse())
    }

    pub fn to_transform(&self) -> Transform {
        Transform::new(self.translation, self.rotation, Vector3::repeat(1.0))
    }

    /// Angle of the relative rotation, radians.
    pub fn rotation_error(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_error(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.to_isometry() * p
    }
}

/// Whole-model transform that puts the model's virtual marker onto the
/// physical one: `physical ∘ virtual⁻¹`.
///
/// `physical` is the marker pose in the shared tracking frame and
/// `virtual_placement` the pose of the virtual marker in model coordinates.
/// Sending the result as a `transform_whole` op aligns every client.
pub fn marker_to_session_transform(physical: &Pose, virtual_placement: &Pose) -> Transform {
    physical.compose(&virtual_placement.inverse()).to_transform()
}

/// Marker pose in the tracking frame from a device's camera pose in that
/// frame and a PnP solution (marker in camera).
pub fn marker_in_tracking(camera_in_tracking: &Pose, marker_in_camera: &Pose) -> Pose {
    camera_in_tracking.compose(marker_in_camera)
}
