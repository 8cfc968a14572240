//! glTF 2.0 reader/writer covering node hierarchy, triangle primitives and
//! node extras. Writes `.glb`; reads `.glb` and `.gltf` (data URIs or
//! external buffers through a resolver).
//!
//! Node metadata travels in `extras`: `node_type` (string), `color`
//! (`[r,g,b]`), `opacity` (number), `occlusion_only` (bool) and `lod_level`.

use std::collections::{BTreeMap, HashMap};

use base64::Engine;
use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{Format, IoError, Location, UriResolver};
use crate::scene::{quat_from_xyzw, quat_to_xyzw, Mesh, MeshId, NodeId, SceneModel, Transform};

pub const EXTRAS_NODE_TYPE: &str = "node_type";
const EXTRAS_OCCLUSION_ONLY: &str = "occlusion_only";
const EXTRAS_COLOR: &str = "color";
const EXTRAS_OPACITY: &str = "opacity";

const GLB_MAGIC: u32 = 0x4654_6C67;
const CHUNK_JSON: u32 = 0x4E4F_534A;
const CHUNK_BIN: u32 = 0x004E_4942;

#[derive(Deserialize, Default)]
#[serde(default)]
struct Doc {
    scene: Option<usize>,
    scenes: Vec<SceneDef>,
    nodes: Vec<NodeDef>,
    meshes: Vec<MeshDef>,
    accessors: Vec<AccessorDef>,
    #[serde(rename = "bufferViews")]
    buffer_views: Vec<ViewDef>,
    buffers: Vec<BufferDef>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct SceneDef {
    nodes: Vec<usize>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct NodeDef {
    name: Option<String>,
    children: Vec<usize>,
    mesh: Option<usize>,
    matrix: Option<[f64; 16]>,
    translation: Option<[f64; 3]>,
    rotation: Option<[f64; 4]>,
    scale: Option<[f64; 3]>,
    extras: Option<Value>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct MeshDef {
    primitives: Vec<PrimitiveDef>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct PrimitiveDef {
    attributes: BTreeMap<String, usize>,
    indices: Option<usize>,
    mode: Option<u32>,
}

#[derive(Deserialize)]
struct AccessorDef {
    #[serde(rename = "bufferView")]
    buffer_view: Option<usize>,
    #[serde(rename = "byteOffset", default)]
    byte_offset: usize,
    #[serde(rename = "componentType")]
    component_type: u32,
    count: usize,
    #[serde(rename = "type")]
    kind: String,
    sparse: Option<Value>,
}

#[derive(Deserialize)]
struct ViewDef {
    buffer: usize,
    #[serde(rename = "byteOffset", default)]
    byte_offset: usize,
    #[serde(rename = "byteLength")]
    byte_length: usize,
    #[serde(rename = "byteStride")]
    byte_stride: Option<usize>,
}

#[derive(Deserialize)]
struct BufferDef {
    uri: Option<String>,
    #[serde(rename = "byteLength")]
    byte_length: usize,
}

fn bad(msg: impl Into<String>) -> IoError {
    IoError::parse(Format::Gltf, Location::Byte(0), msg)
}

fn split_glb(bytes: &[u8]) -> Result<(&[u8], Option<&[u8]>), IoError> {
    let u32_at = |o: usize| -> Result<u32, IoError> {
        bytes
            .get(o..o + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| IoError::parse(Format::Gltf, Location::Byte(o), "truncated GLB"))
    };
    if u32_at(4)? != 2 {
        return Err(IoError::Unsupported {
            format: Format::Gltf,
            message: format!("GLB container version {}", u32_at(4)?),
        });
    }
    let total = (u32_at(8)? as usize).min(bytes.len());
    let mut off = 12;
    let mut json = None;
    let mut bin = None;
    while off + 8 <= total {
        let len = u32_at(off)? as usize;
        let ty = u32_at(off + 4)?;
        let data = bytes
            .get(off + 8..off + 8 + len)
            .ok_or_else(|| IoError::parse(Format::Gltf, Location::Byte(off), "chunk extends past end of file"))?;
        match ty {
            CHUNK_JSON => json = Some(data),
            CHUNK_BIN => bin = Some(data),
            _ => {}
        }
        off += 8 + len;
    }
    Ok((json.ok_or_else(|| IoError::parse(Format::Gltf, Location::Byte(12), "GLB has no JSON chunk"))?, bin))
}

pub(super) fn import(bytes: &[u8], resolver: Option<UriResolver<'_>>, warnings: &mut Vec<String>) -> Result<SceneModel, IoError> {
    let is_glb = bytes.len() >= 4 && u32::from_le_bytes(bytes[0..4].try_into().unwrap()) == GLB_MAGIC;
    let (json, glb_bin) = if is_glb { split_glb(bytes)? } else { (bytes, None) };
    let doc: Doc = serde_json::from_slice(json).map_err(|e| {
        IoError::parse(Format::Gltf, Location::Line(e.line()), format!("invalid glTF JSON: {e}"))
    })?;

    let mut buffers: Vec<Vec<u8>> = Vec::with_capacity(doc.buffers.len());
    for (i, b) in doc.buffers.iter().enumerate() {
        let data = match &b.uri {
            None => glb_bin
                .ok_or_else(|| bad(format!("buffer {i} has no uri and there is no GLB binary chunk")))?
                .to_vec(),
            Some(uri) if uri.starts_with("data:") => {
                let (_, payload) = uri.split_once(";base64,").ok_or_else(|| bad(format!("buffer {i}: only base64 data URIs are supported")))?;
                base64::engine::general_purpose::STANDARD
                    .decode(payload)
                    .map_err(|e| bad(format!("buffer {i}: {e}")))?
            }
            Some(uri) => resolver
                .and_then(|r| r(uri))
                .ok_or_else(|| bad(format!("buffer {i}: cannot resolve external uri '{uri}'")))?,
        };
        if data.len() < b.byte_length {
            return Err(bad(format!("buffer {i} holds {} bytes, declared {}", data.len(), b.byte_length)));
        }
        buffers.push(data);
    }

    let read_accessor = |idx: usize| -> Result<(Vec<f64>, usize), IoError> {
        let acc = doc.accessors.get(idx).ok_or_else(|| bad(format!("accessor {idx} missing")))?;
        if acc.sparse.is_some() {
            return Err(IoError::Unsupported {
                format: Format::Gltf,
                message: "sparse accessors".into(),
            });
        }
        let comps = match acc.kind.as_str() {
            "SCALAR" => 1,
            "VEC3" => 3,
            other => return Err(bad(format!("accessor {idx}: unexpected type {other}"))),
        };
        let size = match acc.component_type {
            5121 => 1,
            5123 => 2,
            5125 | 5126 => 4,
            t => return Err(bad(format!("accessor {idx}: unsupported component type {t}"))),
        };
        let view_idx = acc.buffer_view.ok_or_else(|| bad(format!("accessor {idx} has no bufferView")))?;
        let view = doc.buffer_views.get(view_idx).ok_or_else(|| bad(format!("bufferView {view_idx} missing")))?;
        let buf = buffers.get(view.buffer).ok_or_else(|| bad(format!("buffer {} missing", view.buffer)))?;
        let stride = view.byte_stride.unwrap_or(comps * size);
        let base = view.byte_offset + acc.byte_offset;
        let mut out = Vec::with_capacity(acc.count * comps);
        for e in 0..acc.count {
            for c in 0..comps {
                let o = base + e * stride + c * size;
                if o + size > view.byte_offset + view.byte_length || o + size > buf.len() {
                    return Err(bad(format!("accessor {idx} reads past its bufferView")));
                }
                let b = &buf[o..o + size];
                out.push(match acc.component_type {
                    5121 => b[0] as f64,
                    5123 => u16::from_le_bytes([b[0], b[1]]) as f64,
                    5125 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
                    _ => f32::from_le_bytes(b.try_into().unwrap()) as f64,
                });
            }
        }
        Ok((out, acc.count))
    };

    let mut model = SceneModel::new("", "root");
    let mut mesh_ids: HashMap<usize, MeshId> = HashMap::new();
    for (mi, m) in doc.meshes.iter().enumerate() {
        let mut positions = Vec::new();
        let mut indices = Vec::new();
        for (pi, prim) in m.primitives.iter().enumerate() {
            if prim.mode.unwrap_or(4) != 4 {
                warnings.push(format!("mesh {mi} primitive {pi}: non-triangle mode skipped"));
                continue;
            }
            let pos_acc = *prim
                .attributes
                .get("POSITION")
                .ok_or_else(|| bad(format!("mesh {mi} primitive {pi} has no POSITION")))?;
            let (pos, count) = read_accessor(pos_acc)?;
            let base = positions.len() as u32;
            positions.extend(pos.chunks(3).map(|c| [c[0], c[1], c[2]]));
            let idx: Vec<u32> = match prim.indices {
                Some(a) => read_accessor(a)?.0.iter().map(|v| *v as u32).collect(),
                None => (0..count as u32).collect(),
            };
            if idx.len() % 3 != 0 {
                return Err(bad(format!("mesh {mi} primitive {pi}: index count not a multiple of 3")));
            }
            for t in idx.chunks(3) {
                if t.iter().any(|i| *i as usize >= count) {
                    return Err(bad(format!("mesh {mi} primitive {pi}: index out of range")));
                }
                indices.push([base + t[0], base + t[1], base + t[2]]);
            }
        }
        mesh_ids.insert(mi, model.add_mesh(Mesh::new(positions, indices)?));
    }

    let scene_roots: Vec<usize> = match doc.scenes.get(doc.scene.unwrap_or(0)) {
        Some(s) => s.nodes.clone(),
        None => {
            let mut is_child = vec![false; doc.nodes.len()];
            for n in &doc.nodes {
                for c in &n.children {
                    if let Some(f) = is_child.get_mut(*c) {
                        *f = true;
                    }
                }
            }
            (0..doc.nodes.len()).filter(|i| !is_child[*i]).collect()
        }
    };

    let mut visited = vec![false; doc.nodes.len()];
    let fill = |model: &mut SceneModel, id: NodeId, gi: usize| -> Result<(), IoError> {
        let def = &doc.nodes[gi];
        let mesh = match def.mesh {
            Some(m) => Some(*mesh_ids.get(&m).ok_or_else(|| bad(format!("node {gi} references missing mesh {m}")))?),
            None => None,
        };
        model.set_node_mesh(id, mesh)?;
        let node = model.node_mut(id).unwrap();
        node.name = def.name.clone().unwrap_or_default();
        node.local_transform = node_transform(def);
        if let Some(Value::Object(extras)) = &def.extras {
            if let Some(Value::String(t)) = extras.get(EXTRAS_NODE_TYPE) {
                node.node_type = t.clone();
            }
            if let Some(Value::Bool(b)) = extras.get(EXTRAS_OCCLUSION_ONLY) {
                node.style.occlusion_only = *b;
            }
            if let Some(o) = extras.get(EXTRAS_OPACITY).and_then(Value::as_f64) {
                node.style.opacity = o.clamp(0.0, 1.0);
            }
            if let Some(Value::Array(c)) = extras.get(EXTRAS_COLOR) {
                if let [r, g, b] = c.as_slice() {
                    if let (Some(r), Some(g), Some(b)) = (r.as_f64(), g.as_f64(), b.as_f64()) {
                        node.style.color = Some([r, g, b]);
                    }
                }
            }
            if let Some(l) = extras.get("lod_level").and_then(Value::as_u64) {
                node.lod_level = l as u32;
            }
        }
        Ok(())
    };

    let mut stack: Vec<(usize, NodeId)> = Vec::new();
    if scene_roots.len() == 1 {
        let r = scene_roots[0];
        visited[r] = true;
        let root = model.root();
        fill(&mut model, root, r)?;
        stack.extend(doc.nodes[r].children.iter().rev().map(|c| (*c, model.root())));
    } else {
        stack.extend(scene_roots.iter().rev().map(|c| (*c, model.root())));
    }
    while let Some((gi, parent)) = stack.pop() {
        if gi >= doc.nodes.len() {
            return Err(bad(format!("node index {gi} out of range")));
        }
        if std::mem::replace(&mut visited[gi], true) {
            return Err(bad(format!("node {gi} has more than one parent")));
        }
        let id = model.add_node(parent, "")?;
        fill(&mut model, id, gi)?;
        stack.extend(doc.nodes[gi].children.iter().rev().map(|c| (*c, id)));
    }
    let orphans = visited.iter().filter(|v| !**v).count();
    if orphans > 0 {
        warnings.push(format!("{orphans} nodes not reachable from the scene were ignored"));
    }
    Ok(model)
}

fn node_transform(def: &NodeDef) -> Transform {
    if let Some(m) = def.matrix {
        let m = Matrix4::from_column_slice(&m);
        let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        let lin: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let mut s = Vector3::new(lin.column(0).norm(), lin.column(1).norm(), lin.column(2).norm());
        if lin.determinant() < 0.0 {
            s.x = -s.x;
        }
        let mut r = lin;
        for c in 0..3 {
            if s[c] != 0.0 {
                r.set_column(c, &(lin.column(c) / s[c]));
            }
        }
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(&r));
        return Transform::new(t, q, s);
    }
    Transform {
        translation: Vector3::from(def.translation.unwrap_or([0.0; 3])),
        rotation: quat_from_xyzw(def.rotation.unwrap_or([0.0, 0.0, 0.0, 1.0])),
        scale: Vector3::from(def.scale.unwrap_or([1.0; 3])),
    }
}

#[derive(Serialize)]
struct OutAccessor {
    #[serde(rename = "bufferView")]
    buffer_view: usize,
    #[serde(rename = "componentType")]
    component_type: u32,
    count: usize,
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    min: Option<[f32; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max: Option<[f32; 3]>,
}

pub(super) fn export(model: &SceneModel) -> Vec<u8> {
    let mut bin: Vec<u8> = Vec::new();
    let mut views = Vec::new();
    let mut accessors = Vec::new();
    let mut meshes = Vec::new();
    let mut mesh_index: HashMap<(MeshId, usize), usize> = HashMap::new();

    // Preorder so the scene root is node 0.
    let order = model.subtree(model.root()).expect("root exists");
    let gltf_index: HashMap<NodeId, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();

    let mut nodes = Vec::with_capacity(order.len());
    for id in &order {
        let node = model.node(*id).unwrap();
        let mut obj = Map::new();
        obj.insert("name".into(), json!(node.name));
        let t = if *id == model.root() {
            model.base_transform().compose(&node.local_transform)
        } else {
            node.local_transform
        };
        if t.translation != Vector3::zeros() {
            obj.insert("translation".into(), json!(<[f64; 3]>::from(t.translation)));
        }
        if t.rotation != UnitQuaternion::identity() {
            obj.insert("rotation".into(), json!(quat_to_xyzw(&t.rotation)));
        }
        if t.scale != Vector3::repeat(1.0) {
            obj.insert("scale".into(), json!(<[f64; 3]>::from(t.scale)));
        }
        if !node.children().is_empty() {
            obj.insert(
                "children".into(),
                json!(node.children().iter().map(|c| gltf_index[c]).collect::<Vec<_>>()),
            );
        }
        if let (Some(mid), Some(mesh)) = (node.mesh(), model.node_mesh(*id)) {
            let level = (node.lod_level as usize).min(mesh.level_count() - 1);
            let gi = *mesh_index.entry((mid, level)).or_insert_with(|| {
                let sub = mesh.subset(mesh.level(level).iter().copied());
                let pos_view = push_view(&mut bin, &mut views, sub.positions().iter().flat_map(|p| p.map(|v| (v as f32).to_le_bytes())).flatten());
                let b = sub.local_bounds();
                let (lo, hi) = if b.is_empty() {
                    ([0.0f32; 3], [0.0f32; 3])
                } else {
                    (b.min.map(|v| v as f32).into(), b.max.map(|v| v as f32).into())
                };
                accessors.push(OutAccessor {
                    buffer_view: pos_view,
                    component_type: 5126,
                    count: sub.vertex_count(),
                    kind: "VEC3",
                    min: Some(lo),
                    max: Some(hi),
                });
                let idx_view = push_view(&mut bin, &mut views, sub.indices().iter().flat_map(|t| t.map(u32::to_le_bytes)).flatten());
                accessors.push(OutAccessor {
                    buffer_view: idx_view,
                    component_type: 5125,
                    count: sub.triangle_count() * 3,
                    kind: "SCALAR",
                    min: None,
                    max: None,
                });
                meshes.push(json!({
                    "primitives": [{
                        "attributes": {"POSITION": accessors.len() - 2},
                        "indices": accessors.len() - 1,
                        "mode": 4
                    }]
                }));
                meshes.len() - 1
            });
            obj.insert("mesh".into(), json!(gi));
        }
        let mut extras = Map::new();
        if !node.node_type.is_empty() {
            extras.insert(EXTRAS_NODE_TYPE.into(), json!(node.node_type));
        }
        if node.style.occlusion_only {
            extras.insert(EXTRAS_OCCLUSION_ONLY.into(), json!(true));
        }
        if let Some(c) = node.style.color {
            extras.insert(EXTRAS_COLOR.into(), json!(c));
        }
        if node.style.opacity != 1.0 {
            extras.insert(EXTRAS_OPACITY.into(), json!(node.style.opacity));
        }
        if !extras.is_empty() {
            obj.insert("extras".into(), Value::Object(extras));
        }
        nodes.push(Value::Object(obj));
    }

    let mut doc = json!({
        "asset": {"version": "2.0", "generator": "orbitcad"},
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": nodes,
        "meshes": meshes,
        "accessors": accessors,
        "bufferViews": views,
    });
    if !bin.is_empty() {
        doc["buffers"] = json!([{"byteLength": bin.len()}]);
    }
    let mut json_bytes = serde_json::to_vec(&doc).expect("serializable");
    while json_bytes.len() % 4 != 0 {
        json_bytes.push(b' ');
    }
    while bin.len() % 4 != 0 {
        bin.push(0);
    }
    let total = 12 + 8 + json_bytes.len() + if bin.is_empty() { 0 } else { 8 + bin.len() };
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&GLB_MAGIC.to_le_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(total as u32).to_le_bytes());
    out.extend_from_slice(&(json_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&CHUNK_JSON.to_le_bytes());
    out.extend_from_slice(&json_bytes);
    if !bin.is_empty() {
        out.extend_from_slice(&(bin.len() as u32).to_le_bytes());
        out.extend_from_slice(&CHUNK_BIN.to_le_bytes());
        out.extend_from_slice(&bin);
    }
    out
}

fn push_view(bin: &mut Vec<u8>, views: &mut Vec<Value>, bytes: impl Iterator<Item = u8>) -> usize {
    while bin.len() % 4 != 0 {
        bin.push(0);
    }
    let start = bin.len();
    bin.extend(bytes);
    views.push(json!({"buffer": 0, "byteOffset": start, "byteLength": bin.len() - start}));
    views.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{export_model, import_model, import_model_with, ImportOptions};
    use crate::synth;

    const THREE_NODES: &str = r#"{
      "asset": {"version": "2.0"},
      "scene": 0,
      "scenes": [{"nodes": [0]}],
      "nodes": [
        {"name": "Spacecraft", "children": [1]},
        {"name": "Bus", "children": [2], "translation": [0, 1, 0], "extras": {"node_type": "assembly"}},
        {"name": "Antenna", "mesh": 0, "scale": [2, 2, 2]}
      ],
      "meshes": [{"primitives": [{"attributes": {"POSITION": 0}}]}],
      "accessors": [{"bufferView": 0, "componentType": 5126, "count": 3, "type": "VEC3"}],
      "bufferViews": [{"buffer": 0, "byteLength": 36}],
      "buffers": [{"byteLength": 36, "uri": "data:application/octet-stream;base64,AAAAAAAAAAAAAAAAAACAPwAAAAAAAAAAAAAAAAAAgD8AAAAA"}]
    }"#;

    #[test]
    fn hierarchy_and_names_preserved() {
        let (m, r) = import_model(THREE_NODES.as_bytes(), Format::Gltf).unwrap();
        assert_eq!(r.node_count, 3);
        assert_eq!(r.triangle_count, 1);
        let root = m.node(m.root()).unwrap();
        assert_eq!(root.name, "Spacecraft");
        let bus = m.node(root.children()[0]).unwrap();
        assert_eq!((bus.name.as_str(), bus.node_type.as_str()), ("Bus", "assembly"));
        let antenna = m.node(bus.children()[0]).unwrap();
        assert_eq!(antenna.name, "Antenna");
        assert_eq!(antenna.local_transform.scale, Vector3::repeat(2.0));
    }

    #[test]
    fn external_buffers_go_through_the_resolver() {
        let external = THREE_NODES.replace(
            "data:application/octet-stream;base64,AAAAAAAAAAAAAAAAAACAPwAAAAAAAAAAAAAAAAAAgD8AAAAA",
            "model.bin",
        );
        assert!(import_model(external.as_bytes(), Format::Gltf).is_err());
        let bin = base64::engine::general_purpose::STANDARD
            .decode("AAAAAAAAAAAAAAAAAACAPwAAAAAAAAAAAAAAAAAAgD8AAAAA")
            .unwrap();
        let resolver = |uri: &str| (uri == "model.bin").then(|| bin.clone());
        let opts = ImportOptions {
            resolver: Some(&resolver),
            ..Default::default()
        };
        let (_, r) = import_model_with(external.as_bytes(), Format::Gltf, &opts).unwrap();
        assert_eq!(r.triangle_count, 1);
    }

    #[test]
    fn matrix_nodes_decompose() {
        let def = NodeDef {
            matrix: Some([2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, -2.0, 0.0, 0.0, 1.0, 2.0, 3.0, 1.0]),
            ..Default::default()
        };
        let t = node_transform(&def);
        assert_eq!(t.translation, Vector3::new(1.0, 2.0, 3.0));
        assert!((t.scale - Vector3::repeat(2.0)).norm() < 1e-12);
        let expected = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2);
        assert!(t.rotation.angle_to(&expected) < 1e-12);
    }

    #[test]
    fn style_extras_survive_round_trip() {
        let mut m = synth::random_tree(11, 12);
        let target = m.node_ids().nth(3).unwrap();
        {
            let n = m.node_mut(target).unwrap();
            n.style.occlusion_only = true;
            n.style.opacity = 0.25;
            n.style.color = Some([0.5, 0.25, 1.0]);
        }
        let bytes = export_model(&m, Format::Gltf).unwrap().bytes;
        let (back, _) = import_model(&bytes, Format::Gltf).unwrap();
        let pre: Vec<_> = m.subtree(m.root()).unwrap();
        let post: Vec<_> = back.subtree(back.root()).unwrap();
        let idx = pre.iter().position(|id| *id == target).unwrap();
        let n = back.node(post[idx]).unwrap();
        assert!(n.style.occlusion_only);
        assert_eq!(n.style.opacity, 0.25);
        assert_eq!(n.style.color, Some([0.5, 0.25, 1.0]));
    }
}
