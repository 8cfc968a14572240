use std::fmt::Write as _;

use super::{bake_world, Format, IoError, Location};
use crate::scene::{Mesh, SceneModel};

struct Group {
    name: String,
    faces: Vec<[u32; 3]>,
}

fn parse_index(tok: &str, vertex_count: usize, line: usize) -> Result<u32, IoError> {
    let head = tok.split('/').next().unwrap_or("");
    let raw: i64 = head
        .parse()
        .map_err(|_| IoError::parse(Format::Obj, Location::Line(line), format!("bad face index '{tok}'")))?;
    let idx = match raw {
        0 => None,
        r if r > 0 => Some(r - 1),
        r => Some(vertex_count as i64 + r),
    };
    match idx {
        Some(i) if i >= 0 && (i as usize) < vertex_count => Ok(i as u32),
        _ => Err(IoError::parse(
            Format::Obj,
            Location::Line(line),
            format!("face index {raw} out of range ({vertex_count} vertices so far)"),
        )),
    }
}

pub(super) fn import(bytes: &[u8], warnings: &mut Vec<String>) -> Result<SceneModel, IoError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        IoError::parse(Format::Obj, Location::Byte(e.valid_up_to()), "file is not valid UTF-8")
    })?;
    let mut positions: Vec<[f64; 3]> = Vec::new();
    let mut groups: Vec<Group> = Vec::new();
    let mut skipped = 0usize;

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (kw, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match kw {
            "v" => {
                let mut it = rest.split_whitespace();
                let mut p = [0.0; 3];
                for c in p.iter_mut() {
                    let tok = it.next().ok_or_else(|| {
                        IoError::parse(Format::Obj, Location::Line(line_no), "vertex needs three coordinates")
                    })?;
                    *c = tok.parse().map_err(|_| {
                        IoError::parse(Format::Obj, Location::Line(line_no), format!("bad coordinate '{tok}'"))
                    })?;
                }
                positions.push(p);
            }
            "f" => {
                let idx: Vec<u32> = rest
                    .split_whitespace()
                    .map(|t| parse_index(t, positions.len(), line_no))
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(IoError::parse(Format::Obj, Location::Line(line_no), "face needs at least three vertices"));
                }
                if groups.is_empty() {
                    groups.push(Group {
                        name: "unnamed".into(),
                        faces: Vec::new(),
                    });
                }
                let g = groups.last_mut().unwrap();
                for k in 1..idx.len() - 1 {
                    g.faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            "g" | "o" => groups.push(Group {
                name: if rest.is_empty() { "unnamed".into() } else { rest.to_string() },
                faces: Vec::new(),
            }),
            "vt" | "vn" | "vp" | "s" | "usemtl" | "mtllib" => {}
            "l" | "p" => skipped += 1,
            other => {
                return Err(IoError::parse(Format::Obj, Location::Line(line_no), format!("unknown statement '{other}'")));
            }
        }
    }
    if skipped > 0 {
        warnings.push(format!("{skipped} line/point elements ignored"));
    }

    let mut model = SceneModel::new("", "root");
    let root = model.root();
    for g in groups {
        let id = model.add_node(root, &g.name)?;
        if g.faces.is_empty() {
            continue;
        }
        let mut remap = vec![u32::MAX; positions.len()];
        let mut local = Vec::new();
        let faces = g
            .faces
            .iter()
            .map(|f| {
                f.map(|v| {
                    let slot = &mut remap[v as usize];
                    if *slot == u32::MAX {
                        *slot = local.len() as u32;
                        local.push(positions[v as usize]);
                    }
                    *slot
                })
            })
            .collect();
        let mesh = model.add_mesh(Mesh::new(local, faces)?);
        model.set_node_mesh(id, Some(mesh))?;
    }
    Ok(model)
}

pub(super) fn export(model: &SceneModel) -> Vec<u8> {
    let mut out = String::new();
    let _ = writeln!(out, "# orbitcad export of {}", model.model_id);
    let mut base = 1u64;
    for node in bake_world(model) {
        let name = node.name.replace(['\n', '\r', '#'], "_");
        let _ = writeln!(out, "o {}", if name.trim().is_empty() { "unnamed" } else { name.trim() });
        for p in node.mesh.positions() {
            let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
        }
        for t in node.mesh.indices() {
            let _ = writeln!(
                out,
                "f {} {} {}",
                base + t[0] as u64,
                base + t[1] as u64,
                base + t[2] as u64
            );
        }
        base += node.mesh.vertex_count() as u64;
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::import_model;
    use crate::scene::{total_triangles, LodPolicy};

    #[test]
    fn single_triangle() {
        let (m, r) = import_model(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", Format::Obj).unwrap();
        assert_eq!(r.triangle_count, 1);
        assert_eq!(r.node_count, 2);
        let node = m.node(m.node(m.root()).unwrap().children()[0]).unwrap();
        assert_eq!(node.name, "unnamed");
    }

    #[test]
    fn groups_open_nodes_and_quads_fan() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\ng panel A\nf 1/1 2/2 3/3 4/4\no bracket\nf -4//1 -3//1 -2//1\n";
        let (m, _) = import_model(src.as_bytes(), Format::Obj).unwrap();
        let names: Vec<_> = m.nodes().map(|n| n.name.as_str()).collect();
        assert_eq!(names, ["root", "panel A", "bracket"]);
        assert_eq!(total_triangles(&m, LodPolicy::Level0), 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = import_model(b"v 0 0 0\nv 1 x 0\n", Format::Obj).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = import_model(b"v 0 0 0\nf 1 2 3\n", Format::Obj).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn empty_geometry_warns() {
        let (_, r) = import_model(b"# nothing\n", Format::Obj).unwrap();
        assert_eq!(r.triangle_count, 0);
        assert!(!r.warnings.is_empty());
    }
}
