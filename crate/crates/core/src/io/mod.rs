//! Import and export of open mesh formats.
//!
//! Import maps format structure onto the scene graph: OBJ `g`/`o`
//! statements and glTF nodes become scene nodes with their names, STL and
//! PLY yield a single node. Export writes each mesh-bearing node at its
//! selected detail level; formats without hierarchy (OBJ, STL, PLY) get
//! world-baked geometry in meters.

mod gltf;
mod obj;
mod ply;
mod stl;

use std::fmt;
use std::str::FromStr;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{flatten, total_triangles, LodPolicy, Mesh, SceneError, SceneModel, Transform};

pub use gltf::EXTRAS_NODE_TYPE;
pub use stl::export_ascii as export_stl_ascii;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Obj,
    Stl,
    Ply,
    Gltf,
}

impl Format {
    pub fn from_extension(ext: &str) -> Option<Format> {
        match ext.to_ascii_lowercase().as_str() {
            "obj" => Some(Format::Obj),
            "stl" => Some(Format::Stl),
            "ply" => Some(Format::Ply),
            "gltf" | "glb" => Some(Format::Gltf),
            _ => None,
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Format::Obj => "obj",
            Format::Stl => "stl",
            Format::Ply => "ply",
            Format::Gltf => "glb",
        }
    }

    pub fn has_hierarchy(&self) -> bool {
        matches!(self, Format::Gltf)
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Obj => "obj",
            Format::Stl => "stl",
            Format::Ply => "ply",
            Format::Gltf => "gltf",
        })
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Format::from_extension(s).ok_or_else(|| format!("unknown format '{s}' (expected obj, stl, ply, gltf)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Byte(b) => write!(f, "byte {b}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{format} parse error at {location}: {message}")]
    Parse {
        format: Format,
        location: Location,
        message: String,
    },
    #[error("unsupported {format} content: {message}")]
    Unsupported { format: Format, message: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
}

impl IoError {
    pub(crate) fn parse(format: Format, location: Location, message: impl Into<String>) -> Self {
        IoError::Parse {
            format,
            location,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub node_count: usize,
    pub mesh_count: usize,
    pub triangle_count: u64,
    pub warnings: Vec<String>,
}

/// Resolves an external glTF buffer URI to its bytes.
pub type UriResolver<'a> = &'a dyn Fn(&str) -> Option<Vec<u8>>;

#[derive(Default)]
pub struct ImportOptions<'a> {
    pub model_id: Option<String>,
    /// Meters per file unit; OBJ/STL/PLY default to 1, glTF is always meters.
    pub unit_scale: Option<f64>,
    pub resolver: Option<UriResolver<'a>>,
}

pub fn import_model(bytes: &[u8], format: Format) -> Result<(SceneModel, ImportReport), IoError> {
    import_model_with(bytes, format, &ImportOptions::default())
}

pub fn import_model_with(
    bytes: &[u8],
    format: Format,
    options: &ImportOptions<'_>,
) -> Result<(SceneModel, ImportReport), IoError> {
    let mut warnings = Vec::new();
    let mut model = match format {
        Format::Obj => obj::import(bytes, &mut warnings)?,
        Format::Stl => stl::import(bytes, &mut warnings)?,
        Format::Ply => ply::import(bytes, &mut warnings)?,
        Format::Gltf => gltf::import(bytes, options.resolver, &mut warnings)?,
    };
    model.model_id = options
        .model_id
        .clone()
        .unwrap_or_else(|| format!("m-{:08x}", crc32fast::hash(bytes)));
    if let Some(s) = options.unit_scale {
        if format == Format::Gltf {
            warnings.push("glTF is defined in meters; unit scale override applied anyway".into());
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(IoError::Unsupported {
                format,
                message: format!("unit scale must be positive, got {s}"),
            });
        }
        model.unit_scale = s;
    }
    model.validate()?;
    let triangle_count = total_triangles(&model, LodPolicy::Level0);
    if triangle_count == 0 {
        warnings.push("file contains no triangles".into());
    }
    let report = ImportReport {
        node_count: model.node_count(),
        mesh_count: model.mesh_count(),
        triangle_count,
        warnings,
    };
    Ok((model, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exported {
    pub bytes: Vec<u8>,
    pub warnings: Vec<String>,
}

pub fn export_model(model: &SceneModel, format: Format) -> Result<Exported, IoError> {
    let mut warnings = Vec::new();
    let bytes = match format {
        Format::Obj => obj::export(model),
        Format::Stl => {
            if flatten(model).len() > 1 {
                warnings.push("STL has no hierarchy; nodes were merged into one solid".into());
            }
            stl::export(model)
        }
        Format::Ply => {
            if flatten(model).len() > 1 {
                warnings.push("PLY has no hierarchy; nodes were merged into one mesh".into());
            }
            ply::export(model)
        }
        Format::Gltf => gltf::export(model),
    };
    if format == Format::Obj && model.nodes().any(|n| n.parent().is_some_and(|p| p != model.root())) {
        warnings.push("OBJ has no hierarchy; nested nodes were flattened with world transforms".into());
    }
    Ok(Exported { bytes, warnings })
}

/// Per mesh-bearing node in flatten order: name and the world-space (meters)
/// triangle soup of its selected level, with vertices compacted in first-use
/// order.
pub(crate) struct BakedNode {
    pub name: String,
    pub mesh: Mesh,
}

pub(crate) fn bake_world(model: &SceneModel) -> Vec<BakedNode> {
    flatten(model)
        .into_iter()
        .map(|e| {
            let node = model.node(e.node).expect("flattened node exists");
            let mesh = model.mesh(e.mesh).expect("referenced mesh exists");
            let level = mesh.subset(mesh.level(node.lod_level as usize).iter().copied());
            let positions = level
                .positions()
                .iter()
                .map(|p| e.world.transform_point(&Point3::from(*p)).coords.into())
                .collect();
            BakedNode {
                name: node.name.clone(),
                mesh: Mesh::new(positions, level.indices().to_vec()).expect("subset indices are valid"),
            }
        })
        .collect()
}

pub(crate) fn merged(nodes: &[BakedNode]) -> Mesh {
    let mut positions = Vec::new();
    let mut indices = Vec::new();
    for n in nodes {
        let base = positions.len() as u32;
        positions.extend_from_slice(n.mesh.positions());
        indices.extend(n.mesh.indices().iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }
    Mesh::new(positions, indices).expect("offset indices are valid")
}

/// Builds a single-node model (root → one named mesh node) from a soup.
pub(crate) fn single_node_model(name: &str, mesh: Mesh) -> SceneModel {
    let mut model = SceneModel::new("", "root");
    let id = model.add_node(model.root(), name).expect("root exists");
    let m = model.add_mesh(mesh);
    model.set_node_mesh(id, Some(m)).expect("mesh exists");
    model
}

/// Collapses bit-identical positions, keeping first-use order.
pub(crate) fn weld(positions: &[[f64; 3]], indices: &[[u32; 3]]) -> Mesh {
    use std::collections::HashMap;
    let mut map: HashMap<[u64; 3], u32> = HashMap::new();
    let mut out_pos = Vec::new();
    let mut remap = Vec::with_capacity(positions.len());
    for p in positions {
        let key = [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()];
        let idx = *map.entry(key).or_insert_with(|| {
            out_pos.push(*p);
            out_pos.len() as u32 - 1
        });
        remap.push(idx);
    }
    let out_idx = indices
        .iter()
        .map(|t| [remap[t[0] as usize], remap[t[1] as usize], remap[t[2] as usize]])
        .collect();
    Mesh::new(out_pos, out_idx).expect("welded indices are valid")
}

/// World-space vertex positions of every triangle corner, in flatten order.
/// Handy for comparing geometry across formats.
pub fn world_triangle_corners(model: &SceneModel) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for e in flatten(model) {
        let node = model.node(e.node).unwrap();
        let mesh = model.mesh(e.mesh).unwrap();
        for tri in mesh.level(node.lod_level as usize) {
            for &v in tri {
                out.push(world_point(&e.world, mesh.positions()[v as usize]));
            }
        }
    }
    out
}

fn world_point(t: &Transform, p: [f64; 3]) -> [f64; 3] {
    t.transform_point(&Point3::from(p)).coords.into()
}
