use nalgebra::{Point3, Vector3};

use super::{Aabb, SceneError};

/// One reduced level of detail. Indices refer to the owning mesh's vertex
/// buffer; decimation never adds vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct LodLevel {
    pub indices: Vec<[u32; 3]>,
}

impl LodLevel {
    pub fn triangle_count(&self) -> usize {
        self.indices.len()
    }
}

/// Indexed triangle mesh in model units.
///
/// Level 0 is the base index buffer (`indices`); `lods` holds the reduced
/// levels 1.. in non-increasing triangle order.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    positions: Vec<[f64; 3]>,
    indices: Vec<[u32; 3]>,
    lods: Vec<LodLevel>,
}

impl Mesh {
    pub fn new(positions: Vec<[f64; 3]>, indices: Vec<[u32; 3]>) -> Result<Self, SceneError> {
        check_indices(positions.len(), &indices)?;
        Ok(Self {
            positions,
            indices,
            lods: Vec::new(),
        })
    }

    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            indices: Vec::new(),
            lods: Vec::new(),
        }
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn indices(&self) -> &[[u32; 3]] {
        &self.indices
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.indices.len()
    }

    pub fn vertex(&self, i: u32) -> Point3<f64> {
        Point3::from(self.positions[i as usize])
    }

    pub fn triangle(&self, tri: &[u32; 3]) -> [Point3<f64>; 3] {
        [self.vertex(tri[0]), self.vertex(tri[1]), self.vertex(tri[2])]
    }

    /// Number of detail levels including level 0.
    pub fn level_count(&self) -> usize {
        1 + self.lods.len()
    }

    pub fn reduced_levels(&self) -> &[LodLevel] {
        &self.lods
    }

    /// Index buffer of `level`, clamped to the coarsest level.
    pub fn level(&self, level: usize) -> &[[u32; 3]] {
        match level {
            0 => &self.indices,
            n => &self.lods[(n - 1).min(self.lods.len() - 1)].indices,
        }
    }

    pub fn level_triangle_count(&self, level: usize) -> usize {
        if level == 0 || self.lods.is_empty() {
            self.indices.len()
        } else {
            self.level(level).len()
        }
    }

    /// Replaces the reduced levels. Each level must index existing vertices
    /// and the chain must be non-increasing in triangle count.
    pub fn set_lods(&mut self, lods: Vec<LodLevel>) -> Result<(), SceneError> {
        let mut prev = self.indices.len();
        for (i, lod) in lods.iter().enumerate() {
            check_indices(self.positions.len(), &lod.indices)?;
            if lod.triangle_count() > prev {
                return Err(SceneError::LodOrder { level: i + 1 });
            }
            prev = lod.triangle_count();
        }
        self.lods = lods;
        Ok(())
    }

    pub fn clear_lods(&mut self) {
        self.lods.clear();
    }

    pub fn local_bounds(&self) -> Aabb {
        let mut b = Aabb::EMPTY;
        for p in &self.positions {
            b.include(&Vector3::from(*p));
        }
        b
    }

    /// A copy of this mesh restricted to the given triangles, with unused
    /// vertices dropped (first-use order) and LODs discarded.
    pub fn subset(&self, triangles: impl IntoIterator<Item = [u32; 3]>) -> Mesh {
        let mut remap = vec![u32::MAX; self.positions.len()];
        let mut positions = Vec::new();
        let mut indices = Vec::new();
        for tri in triangles {
            let mut out = [0u32; 3];
            for (k, &v) in tri.iter().enumerate() {
                let slot = &mut remap[v as usize];
                if *slot == u32::MAX {
                    *slot = positions.len() as u32;
                    positions.push(self.positions[v as usize]);
                }
                out[k] = *slot;
            }
            indices.push(out);
        }
        Mesh {
            positions,
            indices,
            lods: Vec::new(),
        }
    }
}

fn check_indices(vertex_count: usize, indices: &[[u32; 3]]) -> Result<(), SceneError> {
    for (t, tri) in indices.iter().enumerate() {
        for &i in tri {
            if i as usize >= vertex_count {
                return Err(SceneError::IndexOutOfRange {
                    triangle: t,
                    index: i,
                    vertex_count,
                });
            }
        }
    }
    Ok(())
}
