//! OFF and PLY readers/writers.
//!
//! PLY files written here are `binary_little_endian` with `double` positions
//! and one `double` property per channel, so scalar payloads round-trip
//! exactly. Declared channel ranges travel in header comments of the form
//! `comment morphofuse channel <name> <range>`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use super::{ChannelRange, Colormap, ScalarField, TriangleMesh};
use crate::error::{Error, Result};
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("off") | Some("OFF") => Some(MeshFormat::Off),
            Some("ply") | Some("PLY") => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

const COLOR_PROPS: [&str; 7] = ["red", "green", "blue", "alpha", "nx", "ny", "nz"];
const RANGE_COMMENT: &str = "morphofuse channel";

fn parse_err(msg: impl Into<String>) -> Error {
    Error::MeshParse(msg.into())
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        MeshFormat::Off => parse_off(&bytes),
        MeshFormat::Ply => parse_ply(&bytes),
    }
}

/// Write `mesh` with all its channels. OFF carries geometry only.
pub fn save_mesh(mesh: &TriangleMesh, path: &Path, format: MeshFormat) -> Result<()> {
    let bytes = match format {
        MeshFormat::Off => write_off(mesh).into_bytes(),
        MeshFormat::Ply => write_ply(mesh, None)?,
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Binary PLY with per-vertex RGB from `colormap` applied to `channel`, the
/// raw channel value as `quality`, and every channel as its own property.
pub fn save_colored_mesh(mesh: &TriangleMesh, channel: &str, colormap: Colormap, path: &Path) -> Result<()> {
    let field = mesh.channel(channel)?;
    let bytes = write_ply(mesh, Some((field, colormap)))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_off(bytes: &[u8]) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(bytes).map_err(|_| parse_err("OFF file is not text"))?;
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    let magic = tokens.next().ok_or_else(|| parse_err("empty OFF file"))?;
    if magic != "OFF" {
        return Err(parse_err(format!("expected OFF magic, got '{magic}'")));
    }
    let mut next_num = |what: &str| -> Result<f64> {
        tokens
            .next()
            .ok_or_else(|| parse_err(format!("unexpected end of file reading {what}")))?
            .parse::<f64>()
            .map_err(|_| parse_err(format!("bad number for {what}")))
    };
    let nv = next_num("vertex count")? as usize;
    let nf = next_num("face count")? as usize;
    let _edges = next_num("edge count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        vertices.push(Point::new(next_num("x")?, next_num("y")?, next_num("z")?));
    }
    let mut triangles = Vec::with_capacity(nf);
    for f in 0..nf {
        let k = next_num("face arity")? as usize;
        if k != 3 {
            return Err(parse_err(format!(
                "face {f} has {k} vertices; only triangles are supported"
            )));
        }
        let mut tri = [0usize; 3];
        for slot in &mut tri {
            let v = next_num("face index")?;
            if v < 0.0 {
                return Err(parse_err(format!("negative index in face {f}")));
            }
            *slot = v as usize;
        }
        triangles.push(tri);
    }
    TriangleMesh::new(vertices, triangles)
}

fn write_off(mesh: &TriangleMesh) -> String {
    let mut s = format!("OFF\n{} {} 0\n", mesh.vertex_count(), mesh.face_count());
    for p in mesh.vertices() {
        let _ = writeln!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Ascii,
    Little,
    Big,
}

#[derive(Debug, Clone, Copy)]
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
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(parse_err(format!("unknown PLY type '{other}'"))),
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

    fn read<B: ByteOrder>(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => B::read_i16(b) as f64,
            Scalar::U16 => B::read_u16(b) as f64,
            Scalar::I32 => B::read_i32(b) as f64,
            Scalar::U32 => B::read_u32(b) as f64,
            Scalar::F32 => B::read_f32(b) as f64,
            Scalar::F64 => B::read_f64(b),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

#[derive(Debug)]
struct ElementDef {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Rows of one element: scalar values and list values, in property order.
struct ElementData {
    scalars: Vec<Vec<f64>>,
    lists: Vec<Vec<Vec<f64>>>,
}

struct Body<'a> {
    bytes: &'a [u8],
    pos: usize,
    encoding: Encoding,
}

impl Body<'_> {
    fn next_token(&mut self) -> Result<&str> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err("unexpected end of PLY body"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| parse_err("non-ASCII PLY body"))
    }

    fn read(&mut self, ty: Scalar) -> Result<f64> {
        match self.encoding {
            Encoding::Ascii => self
                .next_token()?
                .parse::<f64>()
                .map_err(|_| parse_err("bad number in PLY body")),
            enc => {
                let n = ty.size();
                if self.pos + n > self.bytes.len() {
                    return Err(parse_err("unexpected end of PLY body"));
                }
                let b = &self.bytes[self.pos..self.pos + n];
                self.pos += n;
                Ok(if enc == Encoding::Little {
                    ty.read::<LittleEndian>(b)
                } else {
                    ty.read::<BigEndian>(b)
                })
            }
        }
    }

    fn read_element(&mut self, def: &ElementDef) -> Result<ElementData> {
        let n_scalar = def.props.iter().filter(|p| matches!(p, Property::Scalar(..))).count();
        let n_list = def.props.len() - n_scalar;
        let mut data = ElementData {
            scalars: vec![Vec::with_capacity(def.count); n_scalar],
            lists: vec![Vec::with_capacity(def.count); n_list],
        };
        for _ in 0..def.count {
            let (mut si, mut li) = (0, 0);
            for p in &def.props {
                match p {
                    Property::Scalar(_, ty) => {
                        data.scalars[si].push(self.read(*ty)?);
                        si += 1;
                    }
                    Property::List(count_ty, item_ty) => {
                        let k = self.read(*count_ty)?;
                        if k < 0.0 {
                            return Err(parse_err("negative list length"));
                        }
                        let items = (0..k as usize)
                            .map(|_| self.read(*item_ty))
                            .collect::<Result<Vec<_>>>()?;
                        data.lists[li].push(items);
                        li += 1;
                    }
                }
            }
        }
        Ok(data)
    }
}

fn parse_ply(bytes: &[u8]) -> Result<TriangleMesh> {
    let marker = b"end_header";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| parse_err("missing end_header"))?;
    let mut body_start = end + marker.len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| parse_err("non-ASCII PLY header"))?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(parse_err("missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<ElementDef> = Vec::new();
    let mut declared: Vec<(String, ChannelRange)> = Vec::new();
    let mut bone_id = None;
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["format", fmt, _] => {
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Little,
                    "binary_big_endian" => Encoding::Big,
                    other => return Err(parse_err(format!("unknown PLY format '{other}'"))),
                })
            }
            ["comment", "bone_id", id] => bone_id = id.parse().ok(),
            ["comment", "morphofuse", "channel", name, range] => {
                if let Some(r) = ChannelRange::parse(range) {
                    declared.push((name.to_string(), r));
                }
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(ElementDef {
                name: name.to_string(),
                count: count.parse().map_err(|_| parse_err("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", count_ty, item_ty, _] => elements
                .last_mut()
                .ok_or_else(|| parse_err("property before element"))?
                .props
                .push(Property::List(Scalar::parse(count_ty)?, Scalar::parse(item_ty)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| parse_err("property before element"))?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            _ => return Err(parse_err(format!("unrecognised header line '{line}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| parse_err("missing format line"))?;
    let mut body = Body {
        bytes: &bytes[body_start..],
        pos: 0,
        encoding,
    };

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut fields: Vec<(String, Vec<f64>)> = Vec::new();
    for def in &elements {
        let data = body.read_element(def)?;
        match def.name.as_str() {
            "vertex" => {
                let names: Vec<&str> = def
                    .props
                    .iter()
                    .filter_map(|p| match p {
                        Property::Scalar(n, _) => Some(n.as_str()),
                        Property::List(..) => None,
                    })
                    .collect();
                let col = |axis: &str| {
                    names
                        .iter()
                        .position(|n| *n == axis)
                        .ok_or_else(|| parse_err(format!("vertex element lacks '{axis}'")))
                };
                let (xi, yi, zi) = (col("x")?, col("y")?, col("z")?);
                vertices = (0..def.count)
                    .map(|r| Point::new(data.scalars[xi][r], data.scalars[yi][r], data.scalars[zi][r]))
                    .collect();
                for (i, name) in names.iter().enumerate() {
                    if ["x", "y", "z"].contains(name) || COLOR_PROPS.contains(name) {
                        continue;
                    }
                    fields.push((name.to_string(), data.scalars[i].clone()));
                }
            }
            "face" => {
                let list = data
                    .lists
                    .first()
                    .ok_or_else(|| parse_err("face element has no index list"))?;
                for (f, items) in list.iter().enumerate() {
                    if items.len() != 3 {
                        return Err(parse_err(format!(
                            "face {f} has {} vertices; only triangles are supported",
                            items.len()
                        )));
                    }
                    if items.iter().any(|v| *v < 0.0) {
                        return Err(parse_err(format!("negative index in face {f}")));
                    }
                    triangles.push([items[0] as usize, items[1] as usize, items[2] as usize]);
                }
            }
            _ => {}
        }
    }

    let mut mesh = TriangleMesh::new(vertices, triangles)?;
    for (name, values) in fields {
        let declared_range = declared.iter().find(|(n, _)| *n == name).map(|(_, r)| *r);
        let range = declared_range
            .filter(|r| values.iter().all(|v| r.admits(*v)))
            .unwrap_or(ChannelRange::Unbounded);
        mesh.set_channel(ScalarField::new(name, values, range)?)?;
    }
    mesh.bone_id = bone_id;
    Ok(mesh)
}

fn write_ply(mesh: &TriangleMesh, colored: Option<(&ScalarField, Colormap)>) -> Result<Vec<u8>> {
    let channels: Vec<&ScalarField> = mesh
        .channels()
        .filter(|c| !(colored.is_some() && c.name() == super::channel::QUALITY))
        .collect();
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    if let Some(id) = mesh.bone_id {
        let _ = writeln!(h, "comment bone_id {id}");
    }
    if let Some((field, _)) = colored {
        let _ = writeln!(
            h,
            "comment {RANGE_COMMENT} {} {}",
            super::channel::QUALITY,
            field.range()
        );
    }
    for c in &channels {
        let _ = writeln!(h, "comment {RANGE_COMMENT} {} {}", c.name(), c.range());
    }
    let _ = writeln!(h, "element vertex {}", mesh.vertex_count());
    h.push_str("property double x\nproperty double y\nproperty double z\n");
    if colored.is_some() {
        h.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nproperty double quality\n");
    }
    for c in &channels {
        let _ = writeln!(h, "property double {}", c.name());
    }
    let _ = writeln!(h, "element face {}", mesh.face_count());
    h.push_str("property list uchar int vertex_indices\nend_header\n");

    let colors = colored.map(|(field, cmap)| cmap.colorize(field));
    let mut out = h.into_bytes();
    let mut buf8 = [0u8; 8];
    let mut push_f64 = |out: &mut Vec<u8>, v: f64| {
        LittleEndian::write_f64(&mut buf8, v);
        out.extend_from_slice(&buf8);
    };
    for (i, p) in mesh.vertices().iter().enumerate() {
        push_f64(&mut out, p.x);
        push_f64(&mut out, p.y);
        push_f64(&mut out, p.z);
        if let (Some(colors), Some((field, _))) = (&colors, colored) {
            out.extend_from_slice(&colors[i]);
            push_f64(&mut out, field.values()[i]);
        }
        for c in &channels {
            push_f64(&mut out, c.values()[i]);
        }
    }
    let mut buf4 = [0u8; 4];
    for t in mesh.triangles() {
        out.push(3);
        for &i in t {
            let i = i32::try_from(i).map_err(|_| parse_err("vertex index exceeds PLY int range"))?;
            LittleEndian::write_i32(&mut buf4, i);
            out.extend_from_slice(&buf4);
        }
    }
    Ok(out)
}

/// ASCII PLY writer (geometry and channels, `double` precision text).
#[cfg(test)]
fn ply_ascii(mesh: &TriangleMesh) -> String {
    let mut s = String::from("ply\nformat ascii 1.0\n");
    for c in mesh.channels() {
        let _ = writeln!(s, "comment {RANGE_COMMENT} {} {}", c.name(), c.range());
    }
    let _ = writeln!(s, "element vertex {}", mesh.vertex_count());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    for c in mesh.channels() {
        let _ = writeln!(s, "property double {}", c.name());
    }
    let _ = writeln!(s, "element face {}", mesh.face_count());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, p) in mesh.vertices().iter().enumerate() {
        let _ = write!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
        for c in mesh.channels() {
            let _ = write!(s, " {:?}", c.values()[i]);
        }
        s.push('\n');
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}
