//! Procedural geometry and seeded model generators for fixtures, benchmarks
//! and the simulator.

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};

use crate::scene::{Mesh, MeshId, NodeId, SceneModel, Transform};

/// SplitMix64; small, seedable and stable across platforms.
#[derive(Clone, Debug)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n.max(1)
    }
}

/// Axis-aligned box mesh: 8 shared vertices, 12 outward-wound triangles.
pub fn box_mesh(min: [f64; 3], max: [f64; 3]) -> Mesh {
    let [a, b, c] = min;
    let [x, y, z] = max;
    let positions = vec![
        [a, b, c],
        [x, b, c],
        [x, y, c],
        [a, y, c],
        [a, b, z],
        [x, b, z],
        [x, y, z],
        [a, y, z],
    ];
    let indices = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [3, 7, 6],
        [3, 6, 2],
        [0, 4, 7],
        [0, 7, 3],
        [1, 2, 6],
        [1, 6, 5],
    ];
    Mesh::new(positions, indices).expect("static indices")
}

/// Cube of edge `edge` centered on the origin.
pub fn cube_mesh(edge: f64) -> Mesh {
    let h = edge * 0.5;
    box_mesh([-h, -h, -h], [h, h, h])
}

/// UV sphere with `2 * slices * (stacks - 1)` triangles.
pub fn uv_sphere(radius: f64, slices: u32, stacks: u32) -> Mesh {
    assert!(slices >= 3 && stacks >= 2);
    let mut positions = vec![[0.0, 0.0, radius]];
    for i in 1..stacks {
        let theta = PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let phi = 2.0 * PI * j as f64 / slices as f64;
            positions.push([
                radius * libm::sin(theta) * libm::cos(phi),
                radius * libm::sin(theta) * libm::sin(phi),
                radius * libm::cos(theta),
            ]);
        }
    }
    positions.push([0.0, 0.0, -radius]);
    let south = positions.len() as u32 - 1;
    let ring = |i: u32, j: u32| 1 + (i - 1) * slices + (j % slices);
    let mut indices = Vec::new();
    for j in 0..slices {
        indices.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
            indices.push([a, c, d]);
            indices.push([a, d, b]);
        }
    }
    for j in 0..slices {
        indices.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    Mesh::new(positions, indices).expect("generated indices")
}

/// Flat `nx × ny` quad grid in the XY plane, `2 * nx * ny` triangles.
pub fn grid(width: f64, height: f64, nx: u32, ny: u32) -> Mesh {
    let mut positions = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            positions.push([
                width * (i as f64 / nx as f64 - 0.5),
                height * (j as f64 / ny as f64 - 0.5),
                0.0,
            ]);
        }
    }
    let idx = |i: u32, j: u32| j * (nx + 1) + i;
    let mut indices = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            indices.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            indices.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    Mesh::new(positions, indices).expect("generated indices")
}

/// Open cylinder along +Z with `2 * segments * rings` triangles.
pub fn tube(radius: f64, length: f64, segments: u32, rings: u32) -> Mesh {
    let mut positions = Vec::new();
    for r in 0..=rings {
        let z = length * r as f64 / rings as f64;
        for s in 0..segments {
            let a = 2.0 * PI * s as f64 / segments as f64;
            positions.push([radius * libm::cos(a), radius * libm::sin(a), z]);
        }
    }
    let idx = |r: u32, s: u32| r * segments + s % segments;
    let mut indices = Vec::new();
    for r in 0..rings {
        for s in 0..segments {
            indices.push([idx(r, s), idx(r, s + 1), idx(r + 1, s + 1)]);
            indices.push([idx(r, s), idx(r + 1, s + 1), idx(r + 1, s)]);
        }
    }
    Mesh::new(positions, indices).expect("generated indices")
}

fn random_rotation(rng: &mut SplitMix64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(rng.range(-PI, PI), rng.range(-1.5, 1.5), rng.range(-PI, PI))
}

/// Random tree of `n` nodes (plus the root) with uniform-scale transforms,
/// three shared meshes and mixed styles.
pub fn random_tree(seed: u64, n: usize) -> SceneModel {
    let mut rng = SplitMix64::new(seed);
    let mut model = SceneModel::new(format!("random-{seed}"), "root");
    let meshes: Vec<MeshId> = vec![
        model.add_mesh(cube_mesh(1.0)),
        model.add_mesh(uv_sphere(0.5, 8, 5)),
        model.add_mesh(box_mesh([0.0, 0.0, 0.0], [0.3, 0.1, 2.0])),
    ];
    let mut ids = vec![model.root()];
    for i in 0..n {
        let parent = ids[rng.below(ids.len() as u64) as usize];
        let id = model.add_node(parent, &format!("N{i}")).unwrap();
        let node = model.node_mut(id).unwrap();
        node.local_transform = Transform::new(
            Vector3::new(rng.range(-3.0, 3.0), rng.range(-3.0, 3.0), rng.range(-3.0, 3.0)),
            random_rotation(&mut rng),
            Vector3::repeat(rng.range(0.5, 1.5)),
        );
        node.node_type = ["part", "assembly", ""][rng.below(3) as usize].to_string();
        if rng.unit() < 0.3 {
            node.style.color = Some([rng.unit(), rng.unit(), rng.unit()]);
        }
        if rng.unit() < 0.1 {
            node.style.occlusion_only = true;
        }
        if rng.unit() < 0.7 {
            let m = meshes[rng.below(3) as usize];
            model.set_node_mesh(id, Some(m)).unwrap();
        }
        ids.push(id);
    }
    model
}

/// Layout of the synthetic spacecraft-like assembly.
#[derive(Clone, Debug)]
pub struct AssemblySpec {
    pub instruments: u32,
    pub fasteners: u32,
    pub blankets: u32,
    pub harnesses: u32,
}

impl Default for AssemblySpec {
    /// Roughly 3.5 million triangles.
    fn default() -> Self {
        Self {
            instruments: 100,
            fasteners: 1000,
            blankets: 40,
            harnesses: 50,
        }
    }
}

pub const INSTRUMENT_TRIANGLES: u64 = 12_000;
pub const FASTENER_TRIANGLES: u64 = 960;
pub const BLANKET_TRIANGLES: u64 = 20_000;
pub const HARNESS_TRIANGLES: u64 = 10_800;
pub const STRUCTURE_TRIANGLES: u64 = 6 * 12;

impl AssemblySpec {
    pub fn expected_triangles(&self) -> u64 {
        STRUCTURE_TRIANGLES
            + self.instruments as u64 * INSTRUMENT_TRIANGLES
            + self.fasteners as u64 * FASTENER_TRIANGLES
            + self.blankets as u64 * BLANKET_TRIANGLES
            + self.harnesses as u64 * HARNESS_TRIANGLES
    }
}

/// A dense instanced assembly: structural panels, instruments, fasteners
/// (tiny), insulation blankets (`MLI_*`) and cable harnesses. Each part
/// family shares one mesh.
pub fn assembly(seed: u64, spec: &AssemblySpec) -> SceneModel {
    let mut rng = SplitMix64::new(seed);
    let mut model = SceneModel::new(format!("assembly-{seed}"), "SPACECRAFT");
    let root = model.root();

    let structure = model.add_node(root, "STRUCTURE").unwrap();
    model.node_mut(structure).unwrap().node_type = "assembly".into();
    let panel_specs = [
        ([-1.5, -1.5, -1.5], [1.5, -1.45, 1.5]),
        ([-1.5, 1.45, -1.5], [1.5, 1.5, 1.5]),
        ([-1.5, -1.5, -1.5], [-1.45, 1.5, 1.5]),
        ([1.45, -1.5, -1.5], [1.5, 1.5, 1.5]),
        ([-1.5, -1.5, -1.5], [1.5, 1.5, -1.45]),
        ([-1.5, -1.5, 1.45], [1.5, 1.5, 1.5]),
    ];
    for (i, (lo, hi)) in panel_specs.iter().enumerate() {
        let mesh = model.add_mesh(box_mesh(*lo, *hi));
        let id = model.add_node(structure, &format!("PANEL_{i:02}")).unwrap();
        model.set_node_mesh(id, Some(mesh)).unwrap();
        model.node_mut(id).unwrap().node_type = "panel".into();
    }

    let place = |rng: &mut SplitMix64, spread: f64| {
        Vector3::new(rng.range(-spread, spread), rng.range(-spread, spread), rng.range(-spread, spread))
    };

    let family = |model: &mut SceneModel, rng: &mut SplitMix64, group: &str, prefix: &str, ty: &str, count: u32, mesh: Mesh, spread: f64| {
        let g = model.add_node(root, group).unwrap();
        model.node_mut(g).unwrap().node_type = "assembly".into();
        let m = model.add_mesh(mesh);
        for i in 0..count {
            let id = model.add_node(g, &format!("{prefix}_{i:04}")).unwrap();
            model.set_node_mesh(id, Some(m)).unwrap();
            let node = model.node_mut(id).unwrap();
            node.node_type = ty.into();
            node.local_transform = Transform::new(place(rng, spread), random_rotation(rng), Vector3::repeat(1.0));
        }
    };

    family(&mut model, &mut rng, "INSTRUMENTS", "INSTR", "instrument", spec.instruments, uv_sphere(0.2, 100, 61), 1.1);
    family(&mut model, &mut rng, "FASTENERS", "FASTENER", "fastener", spec.fasteners, uv_sphere(0.005, 24, 21), 1.4);
    family(&mut model, &mut rng, "THERMAL", "MLI_BLANKET", "blanket", spec.blankets, grid(0.8, 0.8, 100, 100), 1.0);
    family(&mut model, &mut rng, "HARNESS", "HARNESS", "cable", spec.harnesses, tube(0.01, 1.0, 36, 150), 1.0);
    model
}

/// Two disjoint meshes under the root: one with bounding diagonal `small`,
/// one with diagonal `large` (cubes scaled to match).
pub fn two_size_fixture(small: f64, large: f64) -> (SceneModel, NodeId, NodeId) {
    let mut model = SceneModel::new("two-size", "root");
    let edge = |diag: f64| diag / 3f64.sqrt();
    let ms = model.add_mesh(cube_mesh(edge(small)));
    let ml = model.add_mesh(cube_mesh(edge(large)));
    let a = model.add_node(model.root(), "small").unwrap();
    let b = model.add_node(model.root(), "large").unwrap();
    model.set_node_mesh(a, Some(ms)).unwrap();
    model.set_node_mesh(b, Some(ml)).unwrap();
    model.node_mut(b).unwrap().local_transform = Transform::from_translation(Vector3::new(2.0, 0.0, 0.0));
    (model, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{total_triangles, LodPolicy};

    #[test]
    fn generator_triangle_counts() {
        assert_eq!(uv_sphere(1.0, 25, 21).triangle_count(), 1000);
        assert_eq!(uv_sphere(1.0, 100, 61).triangle_count() as u64, INSTRUMENT_TRIANGLES);
        assert_eq!(uv_sphere(1.0, 24, 21).triangle_count() as u64, FASTENER_TRIANGLES);
        assert_eq!(grid(1.0, 1.0, 100, 100).triangle_count() as u64, BLANKET_TRIANGLES);
        assert_eq!(tube(1.0, 1.0, 36, 150).triangle_count() as u64, HARNESS_TRIANGLES);
    }

    #[test]
    fn assembly_matches_its_spec() {
        let spec = AssemblySpec {
            instruments: 3,
            fasteners: 5,
            blankets: 2,
            harnesses: 1,
        };
        let m = assembly(1, &spec);
        m.validate().unwrap();
        assert_eq!(total_triangles(&m, LodPolicy::Level0), spec.expected_triangles());
        assert_eq!(AssemblySpec::default().expected_triangles(), 3_500_072);
    }
}
