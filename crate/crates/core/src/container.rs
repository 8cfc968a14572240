//! The `.ocm` internal model container.
//!
//! Little-endian, chunked. After an 8-byte preamble (`b"OCMF"`, `u16`
//! version, `u16` flags) come chunks of the form `tag[4] len:u64 payload`:
//!
//! | tag    | payload |
//! |--------|---------|
//! | `HEAD` | model-id string index `u32`, unit scale `f64`, root `u32`, node count `u32`, mesh count `u32` |
//! | `STRS` | count `u32`, then `len:u32 bytes` UTF-8 strings |
//! | `NODE` | per node in id order: id, name idx, type idx, parent (`u32::MAX` = none), mesh (`u32::MAX` = none), transform (10 × `f64`: t.xyz r.xyzw s.xyz), style flags `u8` (bit0 color, bit1 occlusion-only), color 3 × `f64`, opacity `f64`, lod level `u32`, child count `u32`, child ids |
//! | `MESH` | per mesh in id order: id, vertex count, positions (3 × `f64` each), triangle count, indices (3 × `u32` each), lod count, then per lod a triangle count and indices |
//! | `TAIL` | CRC-32 (IEEE) of every byte before this chunk |
//!
//! Unknown chunk tags between `HEAD` and `TAIL` are skipped. Encoding is
//! canonical: equal models produce identical bytes.

use std::collections::HashMap;
use std::io::{Cursor, Read};
use std::sync::Arc;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use thiserror::Error;

use crate::scene::{quat_from_xyzw, quat_to_xyzw, raw_node, LodLevel, Mesh, MeshId, NodeId, RenderStyle, SceneError, SceneModel, Transform};

pub const MAGIC: &[u8; 4] = b"OCMF";
pub const VERSION: u16 = 1;
const NONE: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a model container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u16),
    #[error("checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("truncated or malformed container: {0}")]
    Malformed(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

impl From<std::io::Error> for ContainerError {
    fn from(e: std::io::Error) -> Self {
        ContainerError::Malformed(e.to_string())
    }
}

struct Strings {
    list: Vec<String>,
    index: HashMap<String, u32>,
}

impl Strings {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(i) = self.index.get(s) {
            return *i;
        }
        let i = self.list.len() as u32;
        self.list.push(s.to_string());
        self.index.insert(s.to_string(), i);
        i
    }
}

fn chunk(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.write_u64::<LE>(payload.len() as u64).unwrap();
    out.extend_from_slice(payload);
}

pub fn encode(model: &SceneModel) -> Vec<u8> {
    let mut strings = Strings {
        list: Vec::new(),
        index: HashMap::new(),
    };
    let model_id_idx = strings.intern(&model.model_id);

    let mut nodes = Vec::new();
    for n in model.nodes() {
        let name = strings.intern(&n.name);
        let ty = strings.intern(&n.node_type);
        nodes.write_u32::<LE>(n.id.0).unwrap();
        nodes.write_u32::<LE>(name).unwrap();
        nodes.write_u32::<LE>(ty).unwrap();
        nodes.write_u32::<LE>(n.parent().map_or(NONE, |p| p.0)).unwrap();
        nodes.write_u32::<LE>(n.mesh().map_or(NONE, |m| m.0)).unwrap();
        let t = &n.local_transform;
        for v in t.translation.iter().chain(quat_to_xyzw(&t.rotation).iter()).chain(t.scale.iter()) {
            nodes.write_f64::<LE>(*v).unwrap();
        }
        let mut flags = 0u8;
        if n.style.color.is_some() {
            flags |= 1;
        }
        if n.style.occlusion_only {
            flags |= 2;
        }
        nodes.push(flags);
        for c in n.style.color.unwrap_or([0.0; 3]) {
            nodes.write_f64::<LE>(c).unwrap();
        }
        nodes.write_f64::<LE>(n.style.opacity).unwrap();
        nodes.write_u32::<LE>(n.lod_level).unwrap();
        nodes.write_u32::<LE>(n.children().len() as u32).unwrap();
        for c in n.children() {
            nodes.write_u32::<LE>(c.0).unwrap();
        }
    }

    let mut meshes = Vec::new();
    for (id, mesh) in model.meshes() {
        meshes.write_u32::<LE>(id.0).unwrap();
        meshes.write_u32::<LE>(mesh.vertex_count() as u32).unwrap();
        for p in mesh.positions() {
            for v in p {
                meshes.write_f64::<LE>(*v).unwrap();
            }
        }
        write_indices(&mut meshes, mesh.indices());
        meshes.write_u32::<LE>(mesh.reduced_levels().len() as u32).unwrap();
        for lod in mesh.reduced_levels() {
            write_indices(&mut meshes, &lod.indices);
        }
    }

    let mut head = Vec::new();
    head.write_u32::<LE>(model_id_idx).unwrap();
    head.write_f64::<LE>(model.unit_scale).unwrap();
    head.write_u32::<LE>(model.root().0).unwrap();
    head.write_u32::<LE>(model.node_count() as u32).unwrap();
    head.write_u32::<LE>(model.mesh_count() as u32).unwrap();

    let mut strs = Vec::new();
    strs.write_u32::<LE>(strings.list.len() as u32).unwrap();
    for s in &strings.list {
        strs.write_u32::<LE>(s.len() as u32).unwrap();
        strs.extend_from_slice(s.as_bytes());
    }

    let mut out = Vec::with_capacity(nodes.len() + meshes.len() + strs.len() + 64);
    out.extend_from_slice(MAGIC);
    out.write_u16::<LE>(VERSION).unwrap();
    out.write_u16::<LE>(0).unwrap();
    chunk(&mut out, b"HEAD", &head);
    chunk(&mut out, b"STRS", &strs);
    chunk(&mut out, b"NODE", &nodes);
    chunk(&mut out, b"MESH", &meshes);
    let crc = crc32fast::hash(&out);
    chunk(&mut out, b"TAIL", &crc.to_le_bytes());
    out
}

fn write_indices(out: &mut Vec<u8>, tris: &[[u32; 3]]) {
    out.write_u32::<LE>(tris.len() as u32).unwrap();
    for t in tris {
        for i in t {
            out.write_u32::<LE>(*i).unwrap();
        }
    }
}

fn read_indices(r: &mut Cursor<&[u8]>) -> Result<Vec<[u32; 3]>, ContainerError> {
    let n = r.read_u32::<LE>()? as usize;
    check_remaining(r, n * 12)?;
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        v.push([r.read_u32::<LE>()?, r.read_u32::<LE>()?, r.read_u32::<LE>()?]);
    }
    Ok(v)
}

fn check_remaining(r: &Cursor<&[u8]>, need: usize) -> Result<(), ContainerError> {
    let left = r.get_ref().len() as u64 - r.position();
    if (need as u64) > left {
        return Err(ContainerError::Malformed(format!("need {need} bytes, {left} left")));
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<SceneModel, ContainerError> {
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(ContainerError::Version(version));
    }
    let mut r = Cursor::new(bytes);
    r.set_position(8);

    let mut head: Option<(u32, f64, u32)> = None;
    let mut strings: Vec<String> = Vec::new();
    let mut node_chunk: Option<&[u8]> = None;
    let mut mesh_chunk: Option<&[u8]> = None;
    loop {
        let start = r.position() as usize;
        let mut tag = [0u8; 4];
        r.read_exact(&mut tag)?;
        let len = r.read_u64::<LE>()? as usize;
        check_remaining(&r, len)?;
        let body_start = r.position() as usize;
        let body = &bytes[body_start..body_start + len];
        r.set_position((body_start + len) as u64);
        match &tag {
            b"HEAD" => {
                let mut h = Cursor::new(body);
                let id = h.read_u32::<LE>()?;
                let scale = h.read_f64::<LE>()?;
                let root = h.read_u32::<LE>()?;
                head = Some((id, scale, root));
            }
            b"STRS" => {
                let mut s = Cursor::new(body);
                let n = s.read_u32::<LE>()?;
                for _ in 0..n {
                    let len = s.read_u32::<LE>()? as usize;
                    check_remaining(&s, len)?;
                    let mut buf = vec![0u8; len];
                    s.read_exact(&mut buf)?;
                    strings.push(String::from_utf8(buf).map_err(|e| ContainerError::Malformed(e.to_string()))?);
                }
            }
            b"NODE" => node_chunk = Some(body),
            b"MESH" => mesh_chunk = Some(body),
            b"TAIL" => {
                let stored = u32::from_le_bytes(
                    body.try_into().map_err(|_| ContainerError::Malformed("bad TAIL".into()))?,
                );
                let computed = crc32fast::hash(&bytes[..start]);
                if stored != computed {
                    return Err(ContainerError::Checksum { stored, computed });
                }
                break;
            }
            _ => {}
        }
    }

    let (id_idx, unit_scale, root) = head.ok_or_else(|| ContainerError::Malformed("missing HEAD".into()))?;
    let string = |i: u32| -> Result<String, ContainerError> {
        strings
            .get(i as usize)
            .cloned()
            .ok_or_else(|| ContainerError::Malformed(format!("string index {i} out of range")))
    };
    let mut model = SceneModel::empty_with_root(string(id_idx)?, unit_scale, NodeId(root));

    if let Some(body) = mesh_chunk {
        let mut m = Cursor::new(body);
        while (m.position() as usize) < body.len() {
            let id = MeshId(m.read_u32::<LE>()?);
            let vc = m.read_u32::<LE>()? as usize;
            check_remaining(&m, vc * 24)?;
            let mut positions = Vec::with_capacity(vc);
            for _ in 0..vc {
                positions.push([m.read_f64::<LE>()?, m.read_f64::<LE>()?, m.read_f64::<LE>()?]);
            }
            let indices = read_indices(&mut m)?;
            let mut mesh = Mesh::new(positions, indices)?;
            let lod_count = m.read_u32::<LE>()?;
            let mut lods = Vec::with_capacity(lod_count as usize);
            for _ in 0..lod_count {
                lods.push(LodLevel {
                    indices: read_indices(&mut m)?,
                });
            }
            mesh.set_lods(lods)?;
            model.insert_mesh(id, Arc::new(mesh));
        }
    }

    if let Some(body) = node_chunk {
        let mut n = Cursor::new(body);
        while (n.position() as usize) < body.len() {
            let id = NodeId(n.read_u32::<LE>()?);
            let name = string(n.read_u32::<LE>()?)?;
            let ty = string(n.read_u32::<LE>()?)?;
            let parent = opt(n.read_u32::<LE>()?).map(NodeId);
            let mesh = opt(n.read_u32::<LE>()?).map(MeshId);
            let mut f = [0f64; 10];
            for v in f.iter_mut() {
                *v = n.read_f64::<LE>()?;
            }
            let flags = n.read_u8()?;
            let color = [n.read_f64::<LE>()?, n.read_f64::<LE>()?, n.read_f64::<LE>()?];
            let opacity = n.read_f64::<LE>()?;
            let lod_level = n.read_u32::<LE>()?;
            let cc = n.read_u32::<LE>()? as usize;
            check_remaining(&n, cc * 4)?;
            let mut children = Vec::with_capacity(cc);
            for _ in 0..cc {
                children.push(NodeId(n.read_u32::<LE>()?));
            }
            let mut node = raw_node(id, name, ty, parent, children, mesh);
            node.local_transform = Transform {
                translation: Vector3::new(f[0], f[1], f[2]),
                rotation: quat_from_xyzw([f[3], f[4], f[5], f[6]]),
                scale: Vector3::new(f[7], f[8], f[9]),
            };
            node.style = RenderStyle {
                color: (flags & 1 != 0).then_some(color),
                opacity,
                occlusion_only: flags & 2 != 0,
            };
            node.lod_level = lod_level;
            model.raw_insert(node);
        }
    }
    model.set_root(NodeId(root));
    model.validate()?;
    Ok(model)
}

fn opt(v: u32) -> Option<u32> {
    (v != NONE).then_some(v)
}
