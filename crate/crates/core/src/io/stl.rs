use std::fmt::Write as _;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{bake_world, merged, single_node_model, weld, Format, IoError, Location};
use crate::scene::SceneModel;

const HEADER: usize = 80;
const RECORD: usize = 50;

fn looks_ascii(bytes: &[u8]) -> bool {
    let trimmed = bytes.iter().position(|b| !b.is_ascii_whitespace()).map_or(&bytes[..0], |i| &bytes[i..]);
    if !trimmed.starts_with(b"solid") {
        return false;
    }
    // Some binary writers also start their header with "solid"; trust the
    // record count when it matches the file size exactly.
    if bytes.len() >= HEADER + 4 {
        let n = u32::from_le_bytes(bytes[HEADER..HEADER + 4].try_into().unwrap()) as usize;
        if HEADER + 4 + n * RECORD == bytes.len() {
            return false;
        }
    }
    std::str::from_utf8(bytes).is_ok()
}

pub(super) fn import(bytes: &[u8], warnings: &mut Vec<String>) -> Result<SceneModel, IoError> {
    let (name, soup) = if looks_ascii(bytes) {
        import_ascii(bytes)?
    } else {
        import_binary(bytes, warnings)?
    };
    let indices: Vec<[u32; 3]> = (0..soup.len() as u32 / 3).map(|t| [3 * t, 3 * t + 1, 3 * t + 2]).collect();
    Ok(single_node_model(&name, weld(&soup, &indices)))
}

fn import_binary(bytes: &[u8], warnings: &mut Vec<String>) -> Result<(String, Vec<[f64; 3]>), IoError> {
    if bytes.len() < HEADER + 4 {
        return Err(IoError::parse(Format::Stl, Location::Byte(bytes.len()), "file shorter than the 84-byte binary header"));
    }
    let declared = u32::from_le_bytes(bytes[HEADER..HEADER + 4].try_into().unwrap()) as usize;
    let body = bytes.len() - HEADER - 4;
    if body / RECORD != declared || body % RECORD != 0 {
        return Err(IoError::parse(
            Format::Stl,
            Location::Byte(HEADER),
            format!("header declares {declared} triangles but the file holds {} bytes of records ({} records)", body, body / RECORD),
        ));
    }
    let mut r = &bytes[HEADER + 4..];
    let mut soup = Vec::with_capacity(declared * 3);
    let mut attr = 0usize;
    for _ in 0..declared {
        for _ in 0..3 {
            r.read_f32::<LE>().unwrap();
        }
        for _ in 0..3 {
            soup.push([r.read_f32::<LE>().unwrap() as f64, r.read_f32::<LE>().unwrap() as f64, r.read_f32::<LE>().unwrap() as f64]);
        }
        if r.read_u16::<LE>().unwrap() != 0 {
            attr += 1;
        }
    }
    if attr > 0 {
        warnings.push(format!("{attr} triangles carry attribute bytes, ignored"));
    }
    let header = String::from_utf8_lossy(&bytes[..HEADER]);
    let name = header.trim_matches(|c: char| c == '\0' || c.is_whitespace());
    let name = name.strip_prefix("solid").unwrap_or(name).trim();
    Ok((if name.is_empty() { "stl".into() } else { name.to_string() }, soup))
}

fn import_ascii(bytes: &[u8]) -> Result<(String, Vec<[f64; 3]>), IoError> {
    let text = std::str::from_utf8(bytes).expect("checked by looks_ascii");
    let mut name = String::from("stl");
    let mut soup = Vec::new();
    let mut in_loop = 0usize;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("solid") => {
                let rest = line["solid".len()..].trim();
                if !rest.is_empty() {
                    name = rest.to_string();
                }
            }
            Some("vertex") => {
                let mut p = [0.0; 3];
                for c in p.iter_mut() {
                    let tok = toks
                        .next()
                        .ok_or_else(|| IoError::parse(Format::Stl, Location::Line(line_no), "vertex needs three coordinates"))?;
                    *c = tok
                        .parse()
                        .map_err(|_| IoError::parse(Format::Stl, Location::Line(line_no), format!("bad coordinate '{tok}'")))?;
                }
                soup.push(p);
                in_loop += 1;
            }
            Some("outer") => in_loop = 0,
            Some("endloop") => {
                if in_loop != 3 {
                    return Err(IoError::parse(
                        Format::Stl,
                        Location::Line(line_no),
                        format!("facet has {in_loop} vertices, expected 3"),
                    ));
                }
            }
            Some("facet") | Some("endfacet") | Some("endsolid") | None => {}
            Some(other) => {
                return Err(IoError::parse(Format::Stl, Location::Line(line_no), format!("unexpected keyword '{other}'")));
            }
        }
    }
    if soup.len() % 3 != 0 {
        return Err(IoError::parse(Format::Stl, Location::Line(text.lines().count()), "truncated facet"));
    }
    Ok((name, soup))
}

pub(super) fn export(model: &SceneModel) -> Vec<u8> {
    let mesh = merged(&bake_world(model));
    let mut out = Vec::with_capacity(HEADER + 4 + mesh.triangle_count() * RECORD);
    let mut header = format!("solid {}", model.model_id).into_bytes();
    header.resize(HEADER, b' ');
    out.extend_from_slice(&header);
    out.write_u32::<LE>(mesh.triangle_count() as u32).unwrap();
    for tri in mesh.indices() {
        let [a, b, c] = mesh.triangle(tri);
        let n = (b - a).cross(&(c - a));
        let n = if n.norm() > 0.0 { n.normalize() } else { n };
        for v in [n.x, n.y, n.z] {
            out.write_f32::<LE>(v as f32).unwrap();
        }
        for p in [a, b, c] {
            for v in [p.x, p.y, p.z] {
                out.write_f32::<LE>(v as f32).unwrap();
            }
        }
        out.write_u16::<LE>(0).unwrap();
    }
    out
}

/// ASCII STL text for the same geometry as [`export`].
pub fn export_ascii(model: &SceneModel) -> String {
    let mesh = merged(&bake_world(model));
    let mut out = format!("solid {}\n", model.model_id);
    for tri in mesh.indices() {
        let [a, b, c] = mesh.triangle(tri);
        let n = (b - a).cross(&(c - a));
        let n = if n.norm() > 0.0 { n.normalize() } else { n };
        let _ = writeln!(out, "  facet normal {} {} {}\n    outer loop", n.x, n.y, n.z);
        for p in [a, b, c] {
            let _ = writeln!(out, "      vertex {} {} {}", p.x, p.y, p.z);
        }
        out.push_str("    endloop\n  endfacet\n");
    }
    let _ = writeln!(out, "endsolid {}", model.model_id);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{export_model, import_model};
    use crate::scene::{total_triangles, LodPolicy};
    use crate::synth;

    fn binary_with(n_records: usize, declared: u32) -> Vec<u8> {
        let mut out = vec![b' '; HEADER];
        out.write_u32::<LE>(declared).unwrap();
        for t in 0..n_records {
            for _ in 0..3 {
                out.write_f32::<LE>(0.0).unwrap();
            }
            for k in 0..3 {
                out.write_f32::<LE>(t as f32).unwrap();
                out.write_f32::<LE>(k as f32).unwrap();
                out.write_f32::<LE>((k == 2) as u8 as f32).unwrap();
            }
            out.write_u16::<LE>(0).unwrap();
        }
        out
    }

    #[test]
    fn binary_count_matches_header_and_records() {
        let bytes = binary_with(17, 17);
        let declared = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
        let records = (bytes.len() - 84) / 50;
        assert_eq!(declared, records);
        let (_, report) = import_model(&bytes, Format::Stl).unwrap();
        assert_eq!(report.triangle_count, 17);
        assert_eq!(report.node_count, 2);
    }

    #[test]
    fn header_record_mismatch_is_an_error() {
        let err = import_model(&binary_with(5, 6), Format::Stl).unwrap_err();
        assert!(err.to_string().contains("byte 80"), "{err}");
    }

    #[test]
    fn ascii_round_trip_welds_vertices() {
        let mut model = synth::two_size_fixture(0.5, 1.0).0;
        model.model_id = "cubes".into();
        let text = export_ascii(&model);
        let (back, report) = import_model(text.as_bytes(), Format::Stl).unwrap();
        assert_eq!(report.triangle_count, 24);
        assert_eq!(back.meshes().next().unwrap().1.vertex_count(), 16);
        let bin = export_model(&model, Format::Stl).unwrap();
        assert!(!bin.warnings.is_empty());
        let (back, _) = import_model(&bin.bytes, Format::Stl).unwrap();
        assert_eq!(total_triangles(&back, LodPolicy::Level0), 24);
    }
}
