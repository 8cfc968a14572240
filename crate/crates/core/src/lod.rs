//! Level-of-detail generation by quadric-error edge collapse.
//!
//! Each collapse merges one endpoint of an edge into the other, so reduced
//! levels reference a subset of the original vertices and never add new
//! ones. All levels come from one collapse sequence, which makes them nested
//! and guarantees non-increasing triangle counts.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::Vector3;
use thiserror::Error;

use crate::scene::{LodLevel, Mesh, SceneError};

/// Boundary edges get a constraint plane with this weight (relative to face
/// area) so open borders are not eaten away.
const BOUNDARY_WEIGHT: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum LodError {
    #[error("LOD ratios must be strictly decreasing within (0, 1], got {0:?}")]
    BadRatios(Vec<f64>),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn plane(n: Vector3<f64>, d: f64, w: f64) -> Quadric {
        let (a, b, c) = (n.x, n.y, n.z);
        Quadric([
            w * a * a,
            w * a * b,
            w * a * c,
            w * a * d,
            w * b * b,
            w * b * c,
            w * b * d,
            w * c * c,
            w * c * d,
            w * d * d,
        ])
    }

    fn add(&mut self, o: &Quadric) {
        for (a, b) in self.0.iter_mut().zip(o.0.iter()) {
            *a += b;
        }
    }

    fn eval(&self, p: &[f64; 3]) -> f64 {
        let q = &self.0;
        let (x, y, z) = (p[0], p[1], p[2]);
        q[0] * x * x + 2.0 * q[1] * x * y + 2.0 * q[2] * x * z + 2.0 * q[3] * x + q[4] * y * y + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }
}

#[derive(PartialEq)]
struct Candidate {
    cost: f64,
    from: u32,
    to: u32,
    stamps: (u32, u32),
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Min-heap on cost, then on vertex ids for a deterministic order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.from.cmp(&self.from))
            .then_with(|| other.to.cmp(&self.to))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Decimator<'a> {
    pos: &'a [[f64; 3]],
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    live: usize,
    vert_faces: Vec<Vec<u32>>,
    vert_alive: Vec<bool>,
    stamp: Vec<u32>,
    quadric: Vec<Quadric>,
    heap: BinaryHeap<Candidate>,
}

fn v3(p: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

impl<'a> Decimator<'a> {
    fn new(pos: &'a [[f64; 3]], faces: &[[u32; 3]]) -> Self {
        let n = pos.len();
        let mut vert_faces = vec![Vec::new(); n];
        let mut quadric = vec![Quadric::default(); n];
        let mut edge_use: HashMap<(u32, u32), (u32, usize)> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                vert_faces[v as usize].push(fi as u32);
            }
            let cross = (v3(&pos[f[1] as usize]) - v3(&pos[f[0] as usize])).cross(&(v3(&pos[f[2] as usize]) - v3(&pos[f[0] as usize])));
            let area = 0.5 * cross.norm();
            if area > 0.0 {
                let nrm = cross / (2.0 * area);
                let q = Quadric::plane(nrm, -nrm.dot(&v3(&pos[f[0] as usize])), area);
                for &v in f {
                    quadric[v as usize].add(&q);
                }
            }
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let e = edge_use.entry((a.min(b), a.max(b))).or_insert((0, fi));
                e.0 += 1;
            }
        }
        let mut boundary: Vec<_> = edge_use.into_iter().filter(|(_, (c, _))| *c == 1).collect();
        boundary.sort_unstable_by_key(|(e, _)| *e);
        for ((a, b), (_, fi)) in boundary {
            let f = faces[fi];
            let (pa, pb) = (v3(&pos[a as usize]), v3(&pos[b as usize]));
            let face_n = (v3(&pos[f[1] as usize]) - v3(&pos[f[0] as usize])).cross(&(v3(&pos[f[2] as usize]) - v3(&pos[f[0] as usize])));
            let side = (pb - pa).cross(&face_n);
            let len2 = (pb - pa).norm_squared();
            if side.norm() > 0.0 {
                let nrm = side.normalize();
                let q = Quadric::plane(nrm, -nrm.dot(&pa), BOUNDARY_WEIGHT * len2);
                quadric[a as usize].add(&q);
                quadric[b as usize].add(&q);
            }
        }
        let mut d = Decimator {
            pos,
            faces: faces.to_vec(),
            face_alive: vec![true; faces.len()],
            live: faces.len(),
            vert_faces,
            vert_alive: vec![true; n],
            stamp: vec![0; n],
            quadric,
            heap: BinaryHeap::new(),
        };
        d.seed();
        d
    }

    fn seed(&mut self) {
        let mut edges: Vec<(u32, u32)> = Vec::with_capacity(self.live * 3);
        for (fi, f) in self.faces.iter().enumerate() {
            if self.face_alive[fi] {
                for k in 0..3 {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    edges.push((a.min(b), a.max(b)));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        for (a, b) in edges {
            self.push(a, b);
        }
    }

    fn push(&mut self, a: u32, b: u32) {
        if a == b {
            return;
        }
        let mut q = self.quadric[a as usize];
        q.add(&self.quadric[b as usize]);
        let ca = q.eval(&self.pos[a as usize]).max(0.0);
        let cb = q.eval(&self.pos[b as usize]).max(0.0);
        let (from, to, cost) = if cb < ca || (cb == ca && b < a) { (a, b, cb) } else { (b, a, ca) };
        self.heap.push(Candidate {
            cost,
            from,
            to,
            stamps: (self.stamp[from as usize], self.stamp[to as usize]),
        });
    }

    fn normal(&self, f: [u32; 3], moved: u32, to: u32) -> (Vector3<f64>, Vector3<f64>) {
        let p = |v: u32| v3(&self.pos[v as usize]);
        let q = |v: u32| if v == moved { p(to) } else { p(v) };
        let before = (p(f[1]) - p(f[0])).cross(&(p(f[2]) - p(f[0])));
        let after = (q(f[1]) - q(f[0])).cross(&(q(f[2]) - q(f[0])));
        (before, after)
    }

    fn flips(&self, from: u32, to: u32) -> bool {
        self.vert_faces[from as usize].iter().any(|&fi| {
            let f = self.faces[fi as usize];
            if !self.face_alive[fi as usize] || f.contains(&to) {
                return false;
            }
            let (before, after) = self.normal(f, from, to);
            before.dot(&after) <= 0.0
        })
    }

    fn shares_face(&self, a: u32, b: u32) -> bool {
        self.vert_faces[a as usize]
            .iter()
            .any(|&fi| self.face_alive[fi as usize] && self.faces[fi as usize].contains(&b))
    }

    fn collapse(&mut self, from: u32, to: u32) {
        let moved = std::mem::take(&mut self.vert_faces[from as usize]);
        for fi in moved {
            let i = fi as usize;
            if !self.face_alive[i] {
                continue;
            }
            if self.faces[i].contains(&to) {
                self.face_alive[i] = false;
                self.live -= 1;
            } else {
                for v in self.faces[i].iter_mut() {
                    if *v == from {
                        *v = to;
                    }
                }
                self.vert_faces[to as usize].push(fi);
            }
        }
        let qf = self.quadric[from as usize];
        self.quadric[to as usize].add(&qf);
        self.vert_alive[from as usize] = false;
        self.stamp[to as usize] += 1;

        let alive = &self.face_alive;
        let list = &mut self.vert_faces[to as usize];
        list.retain(|fi| alive[*fi as usize]);
        list.sort_unstable();
        list.dedup();

        let mut neighbours: Vec<u32> = self.vert_faces[to as usize]
            .iter()
            .flat_map(|fi| self.faces[*fi as usize])
            .filter(|v| *v != to)
            .collect();
        neighbours.sort_unstable();
        neighbours.dedup();
        for n in neighbours {
            self.push(to, n);
        }
    }

    /// Collapses until at most `target` faces remain or no edge is left.
    fn run_to(&mut self, target: usize) {
        let mut check_flips = true;
        while self.live > target {
            let Some(c) = self.heap.pop() else {
                if !check_flips {
                    break;
                }
                // Every remaining collapse folds a face over; accept folds
                // rather than miss the requested budget.
                check_flips = false;
                self.seed();
                continue;
            };
            let (f, t) = (c.from as usize, c.to as usize);
            if !self.vert_alive[f] || !self.vert_alive[t] || c.stamps != (self.stamp[f], self.stamp[t]) {
                continue;
            }
            if !self.shares_face(c.from, c.to) {
                continue;
            }
            if check_flips && self.flips(c.from, c.to) {
                continue;
            }
            self.collapse(c.from, c.to);
        }
    }

    fn snapshot(&self) -> Vec<[u32; 3]> {
        self.faces
            .iter()
            .zip(&self.face_alive)
            .filter(|(_, a)| **a)
            .map(|(f, _)| *f)
            .collect()
    }
}

/// Triangle target for a ratio of `base` triangles: `ceil(ratio × base)`,
/// never below one.
pub fn target_for(ratio: f64, base: usize) -> usize {
    ((ratio * base as f64).ceil() as usize).max(1)
}

/// Reduces `mesh` level 0 to at most `target` triangles (clamped to ≥ 1).
pub fn decimate(mesh: &Mesh, target: usize) -> Vec<[u32; 3]> {
    let mut d = Decimator::new(mesh.positions(), mesh.indices());
    d.run_to(target.max(1));
    d.snapshot()
}

/// Returns a copy of `mesh` whose reduced levels hit each ratio of the level 0
/// triangle count. Level 0 is always the original geometry, so a leading
/// ratio of 1.0 adds no level.
pub fn generate_lods(mesh: &Mesh, ratios: &[f64]) -> Result<Mesh, LodError> {
    let valid = ratios.iter().all(|r| *r > 0.0 && *r <= 1.0) && ratios.windows(2).all(|w| w[0] > w[1]);
    if !valid {
        return Err(LodError::BadRatios(ratios.to_vec()));
    }
    let base = mesh.triangle_count();
    let mut out = mesh.clone();
    let mut d = Decimator::new(mesh.positions(), mesh.indices());
    let mut lods = Vec::new();
    for &r in ratios {
        if r == 1.0 {
            continue;
        }
        d.run_to(target_for(r, base));
        lods.push(LodLevel { indices: d.snapshot() });
    }
    out.set_lods(lods)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use nalgebra::Point3;

    fn closest_on_triangle(p: Point3<f64>, a: Point3<f64>, b: Point3<f64>, c: Point3<f64>) -> Point3<f64> {
        // Ericson, real-time collision detection, region tests.
        let ab = b - a;
        let ac = c - a;
        let ap = p - a;
        let d1 = ab.dot(&ap);
        let d2 = ac.dot(&ap);
        if d1 <= 0.0 && d2 <= 0.0 {
            return a;
        }
        let bp = p - b;
        let d3 = ab.dot(&bp);
        let d4 = ac.dot(&bp);
        if d3 >= 0.0 && d4 <= d3 {
            return b;
        }
        let vc = d1 * d4 - d3 * d2;
        if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
            return a + ab * (d1 / (d1 - d3));
        }
        let cp = p - c;
        let d5 = ab.dot(&cp);
        let d6 = ac.dot(&cp);
        if d6 >= 0.0 && d5 <= d6 {
            return c;
        }
        let vb = d5 * d2 - d1 * d6;
        if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
            return a + ac * (d2 / (d2 - d6));
        }
        let va = d3 * d6 - d5 * d4;
        if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
            return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
        }
        let denom = 1.0 / (va + vb + vc);
        a + ab * (vb * denom) + ac * (vc * denom)
    }

    fn samples(mesh: &Mesh, tris: &[[u32; 3]]) -> Vec<Point3<f64>> {
        let mut out = Vec::new();
        for t in tris {
            let [a, b, c] = mesh.triangle(t);
            for (u, v) in [(1.0 / 3.0, 1.0 / 3.0), (0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5), (0.2, 0.6), (0.6, 0.2)] {
                out.push(a + (b - a) * u + (c - a) * v);
            }
        }
        out
    }

    fn one_sided(mesh: &Mesh, from: &[[u32; 3]], to: &[[u32; 3]]) -> f64 {
        samples(mesh, from)
            .iter()
            .map(|p| {
                to.iter()
                    .map(|t| {
                        let [a, b, c] = mesh.triangle(t);
                        (closest_on_triangle(*p, a, b, c) - p).norm()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_ratio_adds_nothing() {
        let m = synth::uv_sphere(1.0, 12, 8);
        let l = generate_lods(&m, &[1.0]).unwrap();
        assert_eq!(l.level_count(), 1);
        assert_eq!(l.level(0), m.indices());
    }

    #[test]
    fn ratios_are_validated() {
        let m = synth::cube_mesh(1.0);
        assert!(generate_lods(&m, &[0.5, 0.5]).is_err());
        assert!(generate_lods(&m, &[0.0]).is_err());
        assert!(generate_lods(&m, &[1.5]).is_err());
    }

    #[test]
    fn sphere_counts_respect_targets() {
        let m = synth::uv_sphere(1.0, 25, 21);
        assert_eq!(m.triangle_count(), 1000);
        let l = generate_lods(&m, &[0.5, 0.1]).unwrap();
        assert!(l.level_triangle_count(1) <= 500);
        assert!(l.level_triangle_count(2) <= 100);
        assert!(l.level_triangle_count(1) >= l.level_triangle_count(2));
        assert_eq!(l.vertex_count(), m.vertex_count());
    }

    #[test]
    fn half_sphere_stays_within_five_percent_hausdorff() {
        let m = synth::uv_sphere(1.0, 25, 21);
        let l = generate_lods(&m, &[0.5]).unwrap();
        let radius = m.local_bounds().bounding_radius();
        let h = one_sided(&l, l.level(0), l.level(1)).max(one_sided(&l, l.level(1), l.level(0)));
        assert!(h <= 0.05 * radius, "hausdorff {h} vs radius {radius}");
    }

    #[test]
    fn tiny_targets_clamp_to_one() {
        let m = synth::cube_mesh(1.0);
        let l = generate_lods(&m, &[0.01]).unwrap();
        assert!(l.level_triangle_count(1) <= 1);
        assert_eq!(target_for(0.01, 12), 1);
    }

    #[test]
    fn flat_grid_keeps_its_outline() {
        let m = synth::grid(0.8, 0.8, 20, 20);
        let l = generate_lods(&m, &[0.1]).unwrap();
        let reduced = l.subset(l.level(1).iter().copied());
        let (a, b) = (m.local_bounds(), reduced.local_bounds());
        assert!((a.min - b.min).norm() < 1e-12 && (a.max - b.max).norm() < 1e-12);
    }
}
