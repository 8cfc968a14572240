use nalgebra::{UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("near/far must satisfy 0 < near < far (near {near}, far {far})")]
    Planes { near: f64, far: f64 },
    #[error("vertical field of view must be in (0, pi), got {0}")]
    Fov(f64),
    #[error("aspect ratio must be positive, got {0}")]
    Aspect(f64),
    #[error("degenerate camera basis")]
    Basis,
}

/// Pinhole camera. The camera looks along its local -Z with +Y up; the basis
/// is stored as explicit world-space vectors so mirrored setups project
/// exactly mirrored.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub eye: Vector3<f64>,
    pub right: Vector3<f64>,
    pub up: Vector3<f64>,
    /// Unit vector pointing backwards (away from the view direction).
    pub back: Vector3<f64>,
    pub fov_y: f64,
    pub aspect: f64,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up_hint: Vector3<f64>,
        fov_y: f64,
        aspect: f64,
        near: f64,
        far: f64,
    ) -> Result<Camera, CameraError> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(CameraError::Basis);
        }
        let forward = forward.normalize();
        let mut right = forward.cross(&up_hint);
        if right.norm() < 1e-12 {
            // Looking straight along the hint; any perpendicular will do.
            let alt = if forward.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let up = right.cross(&forward);
        let cam = Camera {
            eye,
            right,
            up,
            back: -forward,
            fov_y,
            aspect,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera from a camera-to-world rotation and position.
    pub fn from_pose(
        eye: Vector3<f64>,
        rotation: &UnitQuaternion<f64>,
        fov_y: f64,
        aspect: f64,
        near: f64,
        far: f64,
    ) -> Result<Camera, CameraError> {
        let cam = Camera {
            eye,
            right: rotation * Vector3::x(),
            up: rotation * Vector3::y(),
            back: rotation * Vector3::z(),
            fov_y,
            aspect,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(CameraError::Planes {
                near: self.near,
                far: self.far,
            });
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(CameraError::Fov(self.fov_y));
        }
        if !(self.aspect > 0.0 && self.aspect.is_finite()) {
            return Err(CameraError::Aspect(self.aspect));
        }
        Ok(())
    }

    /// World point to view space (x right, y up, z negative in front).
    pub fn to_view(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.eye;
        Vector3::new(self.right.dot(&d), self.up.dot(&d), self.back.dot(&d))
    }

    /// `1 / tan(fov_y / 2)`.
    pub fn focal(&self) -> f64 {
        1.0 / libm::tan(self.fov_y * 0.5)
    }

    /// Focal length in pixels for an image `height` pixels tall.
    pub fn focal_px(&self, height: u32) -> f64 {
        self.focal() * height as f64 * 0.5
    }

    /// Outward-facing frustum planes `(n, d)` with `n·p + d <= 0` inside:
    /// near, far, left, right, bottom, top.
    pub fn frustum_planes(&self) -> [(Vector3<f64>, f64); 6] {
        let f = self.focal();
        let fx = f / self.aspect;
        let fwd = -self.back;
        let plane = |n_view: Vector3<f64>| {
            // n_view is in view coordinates; plane passes through the eye.
            let n = (self.right * n_view.x + self.up * n_view.y + self.back * n_view.z).normalize();
            (n, -n.dot(&self.eye))
        };
        [
            (-fwd, fwd.dot(&self.eye) + self.near),
            (fwd, -fwd.dot(&self.eye) - self.far),
            plane(Vector3::new(-fx, 0.0, 1.0)),
            plane(Vector3::new(fx, 0.0, 1.0)),
            plane(Vector3::new(0.0, -f, 1.0)),
            plane(Vector3::new(0.0, f, 1.0)),
        ]
    }
}

/// Sine and cosine of an angle in degrees, exact at multiples of 90°.
pub fn sin_cos_deg(deg: f64) -> (f64, f64) {
    // Fold into [0, 90] so mirrored and opposed angles give bit-exact
    // negations of each other.
    let r = deg.rem_euclid(360.0);
    let (r, s_sign) = if r > 180.0 { (360.0 - r, -1.0) } else { (r, 1.0) };
    let (r, c_sign) = if r > 90.0 { (180.0 - r, -1.0) } else { (r, 1.0) };
    let (s, c) = if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else {
        let rad = r.to_radians();
        (libm::sin(rad), libm::cos(rad))
    };
    (s_sign * s, c_sign * c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_basis_is_orthonormal() {
        let c = Camera::look_at(Vector3::new(3.0, 2.0, 1.0), Vector3::zeros(), Vector3::y(), 1.0, 1.5, 0.1, 100.0).unwrap();
        assert!((c.right.dot(&c.up)).abs() < 1e-12);
        assert!((c.right.cross(&c.up) - c.back).norm() < 1e-12);
        let v = c.to_view(&Vector3::zeros());
        assert!(v.x.abs() < 1e-12 && v.y.abs() < 1e-12 && v.z < 0.0);
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        let bad = Camera::look_at(Vector3::z(), Vector3::zeros(), Vector3::y(), 1.0, 1.0, 1.0, 0.5);
        assert!(matches!(bad, Err(CameraError::Planes { .. })));
        let bad = Camera::look_at(Vector3::z(), Vector3::zeros(), Vector3::y(), 4.0, 1.0, 0.1, 1.0);
        assert!(matches!(bad, Err(CameraError::Fov(_))));
    }

    #[test]
    fn frustum_planes_contain_the_axis() {
        let c = Camera::look_at(Vector3::new(0.0, 0.0, 5.0), Vector3::zeros(), Vector3::y(), 1.0, 1.0, 0.1, 10.0).unwrap();
        let inside = |p: Vector3<f64>| c.frustum_planes().iter().all(|(n, d)| n.dot(&p) + d <= 0.0);
        assert!(inside(Vector3::zeros()));
        assert!(!inside(Vector3::new(0.0, 0.0, 6.0)));
        assert!(!inside(Vector3::new(0.0, 0.0, -6.0)));
        // tan(0.5) * 5 ≈ 2.73 is the half height at the origin.
        assert!(inside(Vector3::new(2.7, 0.0, 0.0)) && !inside(Vector3::new(2.8, 0.0, 0.0)));
        assert!(inside(Vector3::new(0.0, -2.7, 0.0)) && !inside(Vector3::new(0.0, -2.8, 0.0)));
    }

    #[test]
    fn quadrant_angles_are_exact() {
        assert_eq!(sin_cos_deg(180.0), (0.0, -1.0));
        assert_eq!(sin_cos_deg(-90.0), (-1.0, 0.0));
        let (s, c) = sin_cos_deg(15.0);
        assert!((s * s + c * c - 1.0).abs() < 1e-15);
    }
}
