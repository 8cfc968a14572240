//! Scene generators and a ray-casting visibility oracle shared by the
//! integration and acceptance tests. The oracle never touches the
//! rasterizer: it intersects one ray per pixel center with each box
//! analytically.

#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::{UnitQuaternion, Vector3};
use orbitcad_core::render::Camera;
use orbitcad_core::synth::{box_mesh, SplitMix64};
use orbitcad_core::{NodeId, SceneModel, Transform};
use rayon::prelude::*;

/// World-space oriented box: `rotation * local + center`, local in `[-half, half]`.
#[derive(Clone, Debug)]
pub struct OracleBox {
    pub node: NodeId,
    pub center: Vector3<f64>,
    pub half: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl OracleBox {
    /// Entry distance along the ray, if it hits.
    pub fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let o = self.rotation.inverse_transform_vector(&(origin - self.center));
        let d = self.rotation.inverse_transform_vector(dir);
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if d[k].abs() < 1e-300 {
                if o[k].abs() > self.half[k] {
                    return None;
                }
                continue;
            }
            let a = (-self.half[k] - o[k]) / d[k];
            let b = (self.half[k] - o[k]) / d[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }

    pub fn corners(&self) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    out.push(self.center + self.rotation * Vector3::new(sx * self.half.x, sy * self.half.y, sz * self.half.z));
                }
            }
        }
        out
    }
}

pub struct NestedScene {
    pub model: SceneModel,
    pub boxes: Vec<OracleBox>,
    /// Boxes sealed inside another closed opaque box.
    pub enclosed: BTreeSet<NodeId>,
    pub sphere_radius: f64,
}

fn add_box(model: &mut SceneModel, boxes: &mut Vec<OracleBox>, name: &str, center: Vector3<f64>, half: Vector3<f64>, rotation: UnitQuaternion<f64>) -> NodeId {
    let mesh = model.add_mesh(box_mesh((-half).into(), half.into()));
    let id = model.add_node(model.root(), name).unwrap();
    model.set_node_mesh(id, Some(mesh)).unwrap();
    model.node_mut(id).unwrap().local_transform = Transform::new(center, rotation, Vector3::repeat(1.0));
    boxes.push(OracleBox {
        node: id,
        center,
        half,
        rotation,
    });
    id
}

fn rotation(rng: &mut SplitMix64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(rng.range(-3.1, 3.1), rng.range(-1.5, 1.5), rng.range(-3.1, 3.1))
}

/// One to three closed shells, each hiding a smaller box (sometimes a shell
/// inside a shell), plus a few free boxes that partly hide each other.
pub fn nested_box_scene(seed: u64) -> NestedScene {
    let mut rng = SplitMix64::new(seed);
    let mut model = SceneModel::new(format!("nested-{seed}"), "root");
    let mut boxes = Vec::new();
    let mut enclosed = BTreeSet::new();
    let shells = 1 + rng.below(3);
    for s in 0..shells {
        let center = Vector3::new(rng.range(-2.0, 2.0), rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));
        let half = Vector3::new(rng.range(0.6, 1.2), rng.range(0.6, 1.2), rng.range(0.6, 1.2));
        let rot = rotation(&mut rng);
        add_box(&mut model, &mut boxes, &format!("shell_{s}"), center, half, rot);
        let inner_half = half * rng.range(0.3, 0.6);
        let inner = add_box(&mut model, &mut boxes, &format!("inner_{s}"), center, inner_half, rot);
        enclosed.insert(inner);
        if rng.unit() < 0.4 {
            let core = add_box(&mut model, &mut boxes, &format!("core_{s}"), center, inner_half * 0.4, rot);
            enclosed.insert(core);
        }
    }
    let free = 2 + rng.below(4);
    for f in 0..free {
        let center = Vector3::new(rng.range(-3.0, 3.0), rng.range(-3.0, 3.0), rng.range(-3.0, 3.0));
        let half = Vector3::new(rng.range(0.1, 0.6), rng.range(0.1, 0.6), rng.range(0.1, 0.6));
        let rot = rotation(&mut rng);
        add_box(&mut model, &mut boxes, &format!("free_{f}"), center, half, rot);
    }
    let reach = boxes.iter().flat_map(|b| b.corners()).map(|c| c.norm()).fold(0.0, f64::max);
    NestedScene {
        model,
        boxes,
        enclosed,
        sphere_radius: reach * 1.25,
    }
}

/// Boxes hit first by at least one pixel-center ray of the camera.
pub fn raycast_visible(boxes: &[OracleBox], camera: &Camera, width: u32, height: u32) -> BTreeSet<NodeId> {
    let f = 1.0 / (camera.fov_y * 0.5).tan();
    let (fx, fy) = (f / camera.aspect, f);
    (0..height)
        .into_par_iter()
        .map(|py| {
            let mut seen = BTreeSet::new();
            let ny = 1.0 - 2.0 * (py as f64 + 0.5) / height as f64;
            for px in 0..width {
                let nx = 2.0 * (px as f64 + 0.5) / width as f64 - 1.0;
                let view = Vector3::new(nx / fx, ny / fy, -1.0);
                let dir = camera.right * view.x + camera.up * view.y + camera.back * view.z;
                let mut best: Option<(f64, NodeId)> = None;
                for b in boxes {
                    if let Some(t) = b.hit(&camera.eye, &dir) {
                        // `t` is view depth because dir has unit forward component.
                        if t >= camera.near && t <= camera.far && best.is_none_or(|(bt, _)| t < bt) {
                            best = Some((t, b.node));
                        }
                    }
                }
                if let Some((_, n)) = best {
                    seen.insert(n);
                }
            }
            seen
        })
        .reduce(BTreeSet::new, |mut a, b| {
            a.extend(b);
            a
        })
}
