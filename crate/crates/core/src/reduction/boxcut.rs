use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxMode {
    /// Retain only triangles touching the box.
    Keep,
    /// Remove triangles touching the box.
    Cut,
}

/// Box given by its extents in a frame rotated by `rotation` about the box
/// center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub center: Vector3<f64>,
    pub half: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl OrientedBox {
    pub fn new(min: [f64; 3], max: [f64; 3], rotation: UnitQuaternion<f64>) -> Self {
        let (min, max) = (Vector3::from(min), Vector3::from(max));
        OrientedBox {
            center: (min + max) * 0.5,
            half: (max - min) * 0.5,
            rotation,
        }
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half.x * self.half.y * self.half.z
    }

    fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(p - self.center))
    }

    /// Whether a world-space triangle touches the box (boundary contact
    /// counts).
    pub fn touches(&self, tri: &[Vector3<f64>; 3]) -> bool {
        let v = tri.map(|p| self.to_local(&p));
        triangle_box_overlap(&v, &self.half)
    }
}

/// Separating-axis test between a triangle and the box `[-h, h]`.
pub fn triangle_box_overlap(v: &[Vector3<f64>; 3], h: &Vector3<f64>) -> bool {
    let e = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let separated = |axis: Vector3<f64>| {
        if axis.norm_squared() == 0.0 {
            return false;
        }
        let p = v.map(|x| x.dot(&axis));
        let r = h.x * axis.x.abs() + h.y * axis.y.abs() + h.z * axis.z.abs();
        p.iter().cloned().fold(f64::INFINITY, f64::min) > r || p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) < -r
    };
    for k in 0..3 {
        let mut a = Vector3::zeros();
        a[k] = 1.0;
        if separated(a) {
            return false;
        }
    }
    if separated(e[0].cross(&e[1])) {
        return false;
    }
    for edge in &e {
        for k in 0..3 {
            let mut a = Vector3::zeros();
            a[k] = 1.0;
            if separated(edge.cross(&a)) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [Vector3<f64>; 3] {
        [a.into(), b.into(), c.into()]
    }

    #[test]
    fn inside_outside_and_straddling() {
        let h = Vector3::repeat(1.0);
        assert!(triangle_box_overlap(&tri([0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.5, 0.0]), &h));
        assert!(!triangle_box_overlap(&tri([2.0, 2.0, 2.0], [3.0, 2.0, 2.0], [2.0, 3.0, 2.0]), &h));
        assert!(triangle_box_overlap(&tri([-3.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0]), &h));
        // Big triangle whose plane misses the box corner region.
        assert!(!triangle_box_overlap(&tri([1.5, 3.0, 0.0], [3.0, 1.5, 0.0], [3.0, 3.0, 0.0]), &h));
        // Separated only along an edge cross product.
        assert!(!triangle_box_overlap(&tri([2.05, 0.0, -1.0], [0.0, 2.05, 1.0], [2.1, 0.05, -1.0]), &h));
    }

    #[test]
    fn rotated_box() {
        let b = OrientedBox::new(
            [-1.0, -0.1, -1.0],
            [1.0, 0.1, 1.0],
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2),
        );
        // After rotation the thin slab extends along Y instead of X.
        let near_y = tri([0.0, 0.9, 0.0], [0.05, 0.9, 0.0], [0.0, 0.95, 0.0]);
        let near_x = tri([0.9, 0.0, 0.0], [0.95, 0.0, 0.0], [0.9, 0.05, 0.0]);
        assert!(b.touches(&near_y));
        assert!(!b.touches(&near_x));
        assert!((b.volume() - 0.8).abs() < 1e-12);
    }
}
