//! Labeled PLY 1.0 reader and writer (ASCII and binary little-endian).
//!
//! Vertices carry `x y z` (float), `red green blue` (uchar) and `label`
//! (ushort). Meshes add a `vertex_indices` face list. The header lists the
//! display color of every label present as `comment label <id> <r> <g> <b>`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::LabeledPointCloud;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Display colors for labels 1..=16, repeating for larger ids.
pub const LABEL_PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [0, 0, 128],
];

/// Color used for label 0.
pub const BACKGROUND_COLOR: [u8; 3] = [128, 128, 128];

pub fn label_color(label: u16) -> [u8; 3] {
    match label {
        0 => BACKGROUND_COLOR,
        l => LABEL_PALETTE[(l as usize - 1) % LABEL_PALETTE.len()],
    }
}

/// Serializes a cloud, or a mesh when `faces` is given. Vertex colors fall
/// back to the label palette when the cloud has none.
pub fn encode_ply(
    cloud: &LabeledPointCloud,
    faces: Option<&[[u32; 3]]>,
    format: PlyFormat,
) -> Result<Vec<u8>> {
    cloud.validate()?;
    if let Some(faces) = faces {
        let n = cloud.len() as u32;
        if faces.iter().flatten().any(|&i| i >= n) {
            return Err(Error::invalid("face index out of range"));
        }
    }
    let mut header = String::from("ply\n");
    header.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let mut labels = cloud.labels.clone();
    labels.sort_unstable();
    labels.dedup();
    for l in labels {
        let [r, g, b] = label_color(l);
        let _ = writeln!(header, "comment label {l} {r} {g} {b}");
    }
    let _ = writeln!(header, "element vertex {}", cloud.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(header, "property float {p}");
    }
    for p in ["red", "green", "blue"] {
        let _ = writeln!(header, "property uchar {p}");
    }
    header.push_str("property ushort label\n");
    if let Some(faces) = faces {
        let _ = writeln!(header, "element face {}", faces.len());
        header.push_str("property list uchar int vertex_indices\n");
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    for i in 0..cloud.len() {
        let p = cloud.positions[i].map(|c| c as f32);
        let c = cloud
            .color(i)
            .unwrap_or_else(|| label_color(cloud.labels[i]));
        let l = cloud.labels[i];
        match format {
            PlyFormat::Ascii => {
                let _ = writeln!(
                    out,
                    "{} {} {} {} {} {} {}",
                    p.x, p.y, p.z, c[0], c[1], c[2], l
                );
            }
            PlyFormat::BinaryLittleEndian => {
                for v in p.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&c);
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
    }
    for f in faces.unwrap_or(&[]) {
        match format {
            PlyFormat::Ascii => {
                let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
            }
            PlyFormat::BinaryLittleEndian => {
                out.push(3);
                for &i in f {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn write_labeled_ply(
    path: &Path,
    cloud: &LabeledPointCloud,
    faces: Option<&[[u32; 3]]>,
    format: PlyFormat,
) -> Result<()> {
    let bytes = encode_ply(cloud, faces, format)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
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

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar(n, _) | Property::List(n, _, _) => n,
        }
    }
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Parsed PLY contents: the vertex cloud (colors always present) and faces.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyData {
    pub cloud: LabeledPointCloud,
    pub faces: Vec<[u32; 3]>,
}

/// Yields values of one element row, from ASCII tokens or binary bytes.
enum Body<'a> {
    Ascii {
        lines: Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
        line_offset: usize,
    },
    Binary {
        bytes: &'a [u8],
        pos: usize,
    },
}

impl Body<'_> {
    /// Reads one row; returns scalar values and list values per property.
    fn row(&mut self, props: &[Property]) -> Result<(usize, Vec<Vec<f64>>)> {
        match self {
            Body::Ascii { lines, line_offset } => {
                let (idx, text) = lines
                    .next()
                    .ok_or_else(|| Error::parse(*line_offset, "unexpected end of data"))?;
                let line = *line_offset + idx + 1;
                let mut toks = text.split_whitespace();
                let mut num = |what: &str, ty: Scalar| -> Result<f64> {
                    let t = toks
                        .next()
                        .ok_or_else(|| Error::parse(line, format!("missing value for {what}")))?;
                    let v = t
                        .parse::<f64>()
                        .map_err(|_| Error::parse(line, format!("bad value `{t}` for {what}")))?;
                    // match what a binary file of the same declared type would hold
                    Ok(if ty == Scalar::F32 {
                        v as f32 as f64
                    } else {
                        v
                    })
                };
                let mut values = Vec::with_capacity(props.len());
                for p in props {
                    match p {
                        Property::Scalar(n, ty) => values.push(vec![num(n, *ty)?]),
                        Property::List(n, lt, vt) => {
                            let len = num(n, *lt)?;
                            if len < 0.0 || len.fract() != 0.0 {
                                return Err(Error::parse(line, format!("bad list length for {n}")));
                            }
                            let mut list = Vec::with_capacity(len as usize);
                            for _ in 0..len as usize {
                                list.push(num(n, *vt)?);
                            }
                            values.push(list);
                        }
                    }
                }
                if toks.next().is_some() {
                    return Err(Error::parse(line, "trailing values"));
                }
                Ok((line, values))
            }
            Body::Binary { bytes, pos } => {
                let start = *pos;
                let mut take = |s: Scalar| -> Result<f64> {
                    let end = *pos + s.size();
                    if end > bytes.len() {
                        return Err(Error::parse(
                            0,
                            format!("binary data truncated at byte {}", *pos),
                        ));
                    }
                    let v = s.read_le(&bytes[*pos..end]);
                    *pos = end;
                    Ok(v)
                };
                let mut values = Vec::with_capacity(props.len());
                for p in props {
                    match *p {
                        Property::Scalar(_, s) => values.push(vec![take(s)?]),
                        Property::List(_, ls, vs) => {
                            let len = take(ls)? as usize;
                            let mut list = Vec::with_capacity(len);
                            for _ in 0..len {
                                list.push(take(vs)?);
                            }
                            values.push(list);
                        }
                    }
                }
                Ok((start, values))
            }
        }
    }
}

fn parse_header(text: &str) -> Result<(PlyFormat, Vec<Element>, usize)> {
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t: Vec<&str> = raw.split_whitespace().collect();
        match t.first().copied() {
            _ if line == 1 => {
                if raw.trim() != "ply" {
                    return Err(Error::parse(1, "missing `ply` magic"));
                }
            }
            Some("format") => {
                format = Some(match (t.get(1).copied(), t.get(2).copied()) {
                    (Some("ascii"), Some("1.0")) => PlyFormat::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => PlyFormat::BinaryLittleEndian,
                    _ => {
                        return Err(Error::parse(
                            line,
                            format!("unsupported format `{}`", raw.trim()),
                        ))
                    }
                })
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                if t.len() != 3 {
                    return Err(Error::parse(line, "element needs a name and a count"));
                }
                let count = t[2]
                    .parse()
                    .map_err(|_| Error::parse(line, format!("bad element count `{}`", t[2])))?;
                elements.push(Element {
                    name: t[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(line, "property before any element"))?;
                let ty = |s: &str| {
                    Scalar::parse(s)
                        .ok_or_else(|| Error::parse(line, format!("unknown type `{s}`")))
                };
                let prop = match t.as_slice() {
                    ["property", "list", len, val, name] => {
                        Property::List(name.to_string(), ty(len)?, ty(val)?)
                    }
                    ["property", s, name] => Property::Scalar(name.to_string(), ty(s)?),
                    _ => return Err(Error::parse(line, "malformed property")),
                };
                el.properties.push(prop);
            }
            Some("end_header") => {
                let format = format.ok_or_else(|| Error::parse(line, "no format line"))?;
                return Ok((format, elements, line));
            }
            Some(other) => {
                return Err(Error::parse(
                    line,
                    format!("unexpected header keyword `{other}`"),
                ))
            }
        }
    }
    Err(Error::parse(text.lines().count(), "missing end_header"))
}

/// Parses PLY bytes produced by this module or any compatible writer.
/// Missing color properties default to the label palette, missing labels to 0.
pub fn decode_ply(bytes: &[u8]) -> Result<PlyData> {
    const END: &[u8] = b"end_header";
    let hdr_end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::parse(1, "missing end_header"))?;
    let body_start = bytes[hdr_end..]
        .iter()
        .position(|&b| b == b'\n')
        .map_or(bytes.len(), |p| hdr_end + p + 1);
    let header = std::str::from_utf8(&bytes[..body_start])
        .map_err(|_| Error::parse(1, "header is not UTF-8"))?;
    let (format, elements, header_lines) = parse_header(header)?;
    let payload = &bytes[body_start..];
    let mut body = match format {
        PlyFormat::Ascii => Body::Ascii {
            lines: Box::new(
                std::str::from_utf8(payload)
                    .map_err(|_| Error::parse(header_lines + 1, "ASCII body is not UTF-8"))?
                    .lines()
                    .enumerate()
                    .filter(|(_, l)| !l.trim().is_empty()),
            ) as Box<dyn Iterator<Item = _>>,
            line_offset: header_lines,
        },
        PlyFormat::BinaryLittleEndian => Body::Binary {
            bytes: payload,
            pos: 0,
        },
    };

    let mut data = PlyData {
        cloud: LabeledPointCloud::with_colors(),
        faces: Vec::new(),
    };
    for el in &elements {
        let idx = |name: &str| el.properties.iter().position(|p| p.name() == name);
        match el.name.as_str() {
            "vertex" => {
                let (Some(x), Some(y), Some(z)) = (idx("x"), idx("y"), idx("z")) else {
                    return Err(Error::parse(header_lines, "vertex element lacks x/y/z"));
                };
                let rgb = match (idx("red"), idx("green"), idx("blue")) {
                    (Some(r), Some(g), Some(b)) => Some([r, g, b]),
                    _ => None,
                };
                let label = idx("label");
                for _ in 0..el.count {
                    let (at, v) = body.row(&el.properties)?;
                    let label = match label {
                        Some(l) => {
                            let l = v[l][0];
                            if !(0.0..=u16::MAX as f64).contains(&l) || l.fract() != 0.0 {
                                return Err(Error::parse(
                                    at,
                                    format!("label {l} is not a 16-bit id"),
                                ));
                            }
                            l as u16
                        }
                        None => 0,
                    };
                    let color = rgb.map_or_else(
                        || label_color(label),
                        |c| c.map(|i| v[i][0].clamp(0.0, 255.0) as u8),
                    );
                    data.cloud.push(
                        Vector3::new(v[x][0], v[y][0], v[z][0]),
                        Some(color),
                        None,
                        label,
                    );
                }
            }
            "face" => {
                let list = el
                    .properties
                    .iter()
                    .position(|p| matches!(p, Property::List(n, _, _) if n == "vertex_indices" || n == "vertex_index"))
                    .ok_or_else(|| Error::parse(header_lines, "face element lacks vertex_indices"))?;
                for _ in 0..el.count {
                    let (at, v) = body.row(&el.properties)?;
                    let f = &v[list];
                    if f.len() != 3 {
                        return Err(Error::parse(
                            at,
                            format!("face with {} vertices, expected 3", f.len()),
                        ));
                    }
                    data.faces.push([f[0] as u32, f[1] as u32, f[2] as u32]);
                }
            }
            _ => {
                for _ in 0..el.count {
                    body.row(&el.properties)?;
                }
            }
        }
    }
    let n = data.cloud.len() as u32;
    if data.faces.iter().flatten().any(|&i| i >= n) {
        return Err(Error::parse(header_lines, "face index out of range"));
    }
    Ok(data)
}

pub fn read_labeled_ply(path: &Path) -> Result<PlyData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ply(&bytes).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}
