use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{bake_world, merged, single_node_model, Format, IoError, Location};
use crate::scene::{Mesh, SceneModel};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(PartialEq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    body_offset: usize,
    lines: usize,
}

fn err(loc: Location, msg: impl Into<String>) -> IoError {
    IoError::parse(Format::Ply, loc, msg)
}

fn parse_header(bytes: &[u8]) -> Result<Header, IoError> {
    let mut offset = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut line_no = 0;
    loop {
        let end = bytes[offset..]
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| err(Location::Byte(offset), "header is not terminated by end_header"))?;
        let line = std::str::from_utf8(&bytes[offset..offset + end])
            .map_err(|_| err(Location::Byte(offset), "header is not ASCII"))?
            .trim();
        line_no += 1;
        offset += end + 1;
        let loc = Location::Line(line_no);
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["ply"] if line_no == 1 => {}
            _ if line_no == 1 => return Err(err(loc, "missing 'ply' magic")),
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::BinaryLe),
            ["format", other, _] => {
                return Err(IoError::Unsupported {
                    format: Format::Ply,
                    message: format!("encoding {other}"),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| err(loc, format!("bad element count '{count}'")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements.last_mut().ok_or_else(|| err(loc, "property before element"))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count).ok_or_else(|| err(loc, format!("unknown type '{count}'")))?,
                    item: Scalar::parse(item).ok_or_else(|| err(loc, format!("unknown type '{item}'")))?,
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| err(loc, "property before element"))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty).ok_or_else(|| err(loc, format!("unknown type '{ty}'")))?,
                });
            }
            ["end_header"] => break,
            _ => return Err(err(loc, format!("unrecognized header line '{line}'"))),
        }
    }
    Ok(Header {
        encoding: encoding.ok_or_else(|| err(Location::Line(2), "missing format line"))?,
        elements,
        body_offset: offset,
        lines: line_no,
    })
}

/// Sequential value reader over either encoding.
enum Body<'a> {
    Ascii { tokens: std::iter::Peekable<Tokens<'a>> },
    Binary { data: &'a [u8], pos: usize, start: usize },
}

struct Tokens<'a> {
    lines: std::str::Lines<'a>,
    current: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl<'a> Iterator for Tokens<'a> {
    type Item = (usize, &'a str);
    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(t) = self.current.next() {
                return Some((self.line, t));
            }
            self.current = self.lines.next()?.split_whitespace();
            self.line += 1;
        }
    }
}

impl Body<'_> {
    fn read(&mut self, ty: Scalar) -> Result<f64, IoError> {
        match self {
            Body::Ascii { tokens } => {
                let (line, tok) = tokens.next().ok_or_else(|| err(Location::Line(0), "unexpected end of data"))?;
                tok.parse::<f64>()
                    .map_err(|_| err(Location::Line(line), format!("bad number '{tok}'")))
            }
            Body::Binary { data, pos, start } => {
                let size = match ty {
                    Scalar::I8 | Scalar::U8 => 1,
                    Scalar::I16 | Scalar::U16 => 2,
                    Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
                    Scalar::F64 => 8,
                };
                if *pos + size > data.len() {
                    return Err(err(Location::Byte(*start + *pos), "unexpected end of binary data"));
                }
                let mut r = &data[*pos..*pos + size];
                *pos += size;
                Ok(match ty {
                    Scalar::I8 => r.read_i8().unwrap() as f64,
                    Scalar::U8 => r.read_u8().unwrap() as f64,
                    Scalar::I16 => r.read_i16::<LE>().unwrap() as f64,
                    Scalar::U16 => r.read_u16::<LE>().unwrap() as f64,
                    Scalar::I32 => r.read_i32::<LE>().unwrap() as f64,
                    Scalar::U32 => r.read_u32::<LE>().unwrap() as f64,
                    Scalar::F32 => r.read_f32::<LE>().unwrap() as f64,
                    Scalar::F64 => r.read_f64::<LE>().unwrap(),
                })
            }
        }
    }

    fn location(&mut self) -> Location {
        match self {
            Body::Ascii { tokens } => Location::Line(tokens.peek().map_or(0, |t| t.0)),
            Body::Binary { pos, start, .. } => Location::Byte(*start + *pos),
        }
    }
}

pub(super) fn import(bytes: &[u8], warnings: &mut Vec<String>) -> Result<SceneModel, IoError> {
    let header = parse_header(bytes)?;
    let data = &bytes[header.body_offset..];
    let mut body = match header.encoding {
        Encoding::Ascii => {
            let text = std::str::from_utf8(data).map_err(|_| err(Location::Byte(header.body_offset), "ASCII body is not UTF-8"))?;
            Body::Ascii {
                tokens: Tokens {
                    lines: text.lines(),
                    current: "".split_whitespace(),
                    line: header.lines,
                }
                .peekable(),
            }
        }
        Encoding::BinaryLe => Body::Binary {
            data,
            pos: 0,
            start: header.body_offset,
        },
    };

    let mut positions = Vec::new();
    let mut faces = Vec::new();
    for el in &header.elements {
        if el.name != "vertex" && el.name != "face" {
            warnings.push(format!("element '{}' ignored", el.name));
        }
        for _ in 0..el.count {
            let mut p = [0.0f64; 3];
            for prop in &el.props {
                match prop {
                    Property::Scalar { name, ty } => {
                        let v = body.read(*ty)?;
                        if el.name == "vertex" {
                            match name.as_str() {
                                "x" => p[0] = v,
                                "y" => p[1] = v,
                                "z" => p[2] = v,
                                _ => {}
                            }
                        }
                    }
                    Property::List { name, count, item } => {
                        let loc = body.location();
                        let n = body.read(*count)? as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(body.read(*item)?);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            if n < 3 {
                                return Err(err(loc, "face with fewer than three vertices"));
                            }
                            let idx: Vec<u32> = idx.iter().map(|v| *v as u32).collect();
                            for k in 1..n - 1 {
                                faces.push(([idx[0], idx[k], idx[k + 1]], loc));
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                positions.push(p);
            }
        }
    }
    let vc = positions.len();
    let mut indices = Vec::with_capacity(faces.len());
    for (f, loc) in faces {
        if f.iter().any(|i| *i as usize >= vc) {
            return Err(err(loc, format!("face index out of range ({vc} vertices)")));
        }
        indices.push(f);
    }
    Ok(single_node_model("ply", Mesh::new(positions, indices)?))
}

pub(super) fn export(model: &SceneModel) -> Vec<u8> {
    let mesh = merged(&bake_world(model));
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\ncomment orbitcad export of {}\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        model.model_id.replace('\n', " "),
        mesh.vertex_count(),
        mesh.triangle_count()
    )
    .into_bytes();
    for p in mesh.positions() {
        for v in p {
            out.write_f64::<LE>(*v).unwrap();
        }
    }
    for t in mesh.indices() {
        out.write_u8(3).unwrap();
        for i in t {
            out.write_u32::<LE>(*i).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::import_model;

    const ASCII_QUAD: &str = "ply\nformat ascii 1.0\ncomment quad\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255\n1 0 0 0\n1 1 0 0\n0 1 0 0\n4 0 1 2 3\n";

    #[test]
    fn ascii_quad_is_fanned() {
        let (m, r) = import_model(ASCII_QUAD.as_bytes(), Format::Ply).unwrap();
        assert_eq!(r.triangle_count, 2);
        assert_eq!(m.meshes().next().unwrap().1.vertex_count(), 4);
    }

    #[test]
    fn out_of_range_face_reports_location() {
        let bad = ASCII_QUAD.replace("4 0 1 2 3", "3 0 1 9");
        let e = import_model(bad.as_bytes(), Format::Ply).unwrap_err();
        assert!(e.to_string().contains("line 16"), "{e}");
    }

    #[test]
    fn big_endian_is_unsupported() {
        let bad = ASCII_QUAD.replace("ascii", "binary_big_endian");
        assert!(matches!(import_model(bad.as_bytes(), Format::Ply), Err(IoError::Unsupported { .. })));
    }
}
