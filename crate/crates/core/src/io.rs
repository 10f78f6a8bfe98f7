//! File formats: meshes (OBJ, PLY, STL), point clouds (CSV, PLY), landmark
//! pairs, transforms, registration results and trial artifacts.
//!
//! All lengths are millimetres; no unit metadata is read. CSV files use `,`
//! delimiters, `.` decimals and LF line endings.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{IoError, Location};
use crate::geometry::{RigidTransform, Vec3};
use crate::mesh::TriangleMesh;
use crate::metrics::EvalReport;
use crate::registration::{transform_serde, RegistrationResult, RobustConfig};
use crate::simulate::{ExperimentSpec, SyntheticTrial};

/// Version of the JSON result and manifest layouts.
pub const SCHEMA_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, location: Location, message: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        location,
        message: message.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(io_err(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

// ---------------------------------------------------------------- meshes

/// A loaded mesh and the number of zero-area faces removed from it.
#[derive(Clone, Debug)]
pub struct LoadedMesh {
    pub mesh: TriangleMesh,
    pub dropped_faces: usize,
}

/// Loads an `.obj`, `.ply` or `.stl` mesh and drops degenerate faces.
pub fn load_mesh(path: &Path) -> Result<LoadedMesh, IoError> {
    let ext = extension(path);
    if !matches!(ext.as_str(), "obj" | "ply" | "stl") {
        return Err(IoError::UnsupportedFormat(format!(
            "{}: expected .obj, .ply or .stl",
            path.display()
        )));
    }
    let bytes = read_bytes(path)?;
    let mut mesh = match ext.as_str() {
        "obj" => parse_obj(&bytes, path)?,
        "ply" => parse_ply(&bytes, path)?.into_mesh(path)?,
        _ => parse_stl(&bytes, path)?,
    };
    validate_mesh(&mesh, path)?;
    let dropped_faces = mesh.drop_degenerate_faces();
    Ok(LoadedMesh { mesh, dropped_faces })
}

fn validate_mesh(mesh: &TriangleMesh, path: &Path) -> Result<(), IoError> {
    if let Some(i) = mesh.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(parse_err(path, Location::Row(i + 1), "non-finite vertex coordinate"));
    }
    let n = mesh.vertices.len() as u32;
    if let Some(f) = mesh.faces.iter().position(|t| t.iter().any(|&i| i >= n)) {
        return Err(parse_err(path, Location::Row(f + 1), "face references a missing vertex"));
    }
    Ok(())
}

/// Parses Wavefront OBJ `v` and `f` records; polygons are fan-triangulated.
pub fn parse_obj(bytes: &[u8], path: &Path) -> Result<TriangleMesh, IoError> {
    let text = std::str::from_utf8(bytes).map_err(|e| parse_err(path, Location::Offset(e.valid_up_to() as u64), "invalid UTF-8"))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let at = Location::Line(n + 1);
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for x in c.iter_mut() {
                    let t = tok.next().ok_or_else(|| parse_err(path, at, "vertex needs three coordinates"))?;
                    *x = t.parse().map_err(|_| parse_err(path, at, format!("bad coordinate {t:?}")))?;
                }
                vertices.push(Vec3::from(c));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    let head = t.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| parse_err(path, at, format!("bad face index {t:?}")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        -1
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(parse_err(path, at, format!("face index {i} out of range")));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(parse_err(path, at, "face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(TriangleMesh::new(vertices, faces))
}

/// Writes vertices and triangles as OBJ.
pub fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<(), IoError> {
    let mut s = String::new();
    for v in &mesh.vertices {
        s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in &mesh.faces {
        s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    write_bytes(path, s.as_bytes())
}

/// Parses a binary (or ASCII) STL; vertices are welded by exact coordinates.
pub fn parse_stl(bytes: &[u8], path: &Path) -> Result<TriangleMesh, IoError> {
    if bytes.len() >= 84 {
        let n = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as u64;
        if 84 + 50 * n == bytes.len() as u64 {
            return Ok(parse_stl_binary(bytes, n as usize));
        }
    }
    if bytes.trim_ascii_start().starts_with(b"solid") {
        if let Ok(text) = std::str::from_utf8(bytes) {
            if text.contains("facet") || !text.contains('\0') {
                return parse_stl_ascii(text, path);
            }
        }
    }
    if bytes.len() < 84 {
        return Err(parse_err(path, Location::Offset(bytes.len() as u64), "file ends inside the 84-byte STL header"));
    }
    let n = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as u64;
    Err(parse_err(
        path,
        Location::Offset(bytes.len() as u64),
        format!("binary STL declares {n} triangles ({} bytes) but has {} bytes", 84 + 50 * n, bytes.len()),
    ))
}

struct Welder {
    index: HashMap<[u64; 3], u32>,
    vertices: Vec<Vec3>,
}

impl Welder {
    fn new() -> Self {
        Self {
            index: HashMap::new(),
            vertices: Vec::new(),
        }
    }

    fn add(&mut self, p: Vec3) -> u32 {
        // +0.0 and -0.0 weld together
        let key = [p.x + 0.0, p.y + 0.0, p.z + 0.0].map(f64::to_bits);
        let vertices = &mut self.vertices;
        *self.index.entry(key).or_insert_with(|| {
            vertices.push(p);
            (vertices.len() - 1) as u32
        })
    }
}

fn parse_stl_binary(bytes: &[u8], n: usize) -> TriangleMesh {
    let mut w = Welder::new();
    let mut faces = Vec::with_capacity(n);
    for t in 0..n {
        let rec = &bytes[84 + 50 * t..84 + 50 * (t + 1)];
        let mut ids = [0u32; 3];
        for (k, id) in ids.iter_mut().enumerate() {
            let at = 12 + 12 * k;
            let c = [0, 1, 2].map(|j| f32::from_le_bytes(rec[at + 4 * j..at + 4 * j + 4].try_into().expect("4 bytes")) as f64);
            *id = w.add(Vec3::from(c));
        }
        faces.push(ids);
    }
    TriangleMesh::new(w.vertices, faces)
}

fn parse_stl_ascii(text: &str, path: &Path) -> Result<TriangleMesh, IoError> {
    let mut w = Welder::new();
    let mut faces = Vec::new();
    let mut pending = Vec::with_capacity(3);
    for (n, line) in text.lines().enumerate() {
        let at = Location::Line(n + 1);
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("vertex") => {
                let mut c = [0.0; 3];
                for x in c.iter_mut() {
                    let t = tok.next().ok_or_else(|| parse_err(path, at, "vertex needs three coordinates"))?;
                    *x = t.parse().map_err(|_| parse_err(path, at, format!("bad coordinate {t:?}")))?;
                }
                pending.push(w.add(Vec3::from(c)));
            }
            Some("endfacet") => {
                if pending.len() != 3 {
                    return Err(parse_err(path, at, format!("facet has {} vertices", pending.len())));
                }
                faces.push([pending[0], pending[1], pending[2]]);
                pending.clear();
            }
            _ => {}
        }
    }
    Ok(TriangleMesh::new(w.vertices, faces))
}

/// Writes a binary STL (84 + 50·N bytes).
pub fn save_stl(mesh: &TriangleMesh, path: &Path) -> Result<(), IoError> {
    write_bytes(path, &stl_bytes(mesh))
}

pub fn stl_bytes(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = vec![0u8; 80];
    out.extend_from_slice(&(mesh.faces.len() as u32).to_le_bytes());
    for f in 0..mesh.faces.len() {
        let n = mesh.face_normal(f);
        for v in std::iter::once(n).chain(mesh.triangle(f)) {
            for c in v.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&[0, 0]);
    }
    out
}

// ---------------------------------------------------------------- PLY

#[derive(Clone, Copy, Debug, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
    BinaryBe,
}

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
    fn parse(name: &str) -> Option<Self> {
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
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Vertex positions, optional per-vertex labels and faces from a PLY file.
#[derive(Clone, Debug, Default)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub labels: Option<Vec<bool>>,
    pub faces: Vec<[u32; 3]>,
}

impl PlyData {
    fn into_mesh(self, path: &Path) -> Result<TriangleMesh, IoError> {
        if self.faces.is_empty() {
            return Err(parse_err(path, Location::Offset(0), "PLY file has no faces"));
        }
        Ok(TriangleMesh::new(self.vertices, self.faces))
    }
}

/// Source of PLY values in either encoding.
struct PlyCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: PlyFormat,
    line: usize,
    path: &'a Path,
}

impl PlyCursor<'_> {
    fn location(&self) -> Location {
        match self.format {
            PlyFormat::Ascii => Location::Line(self.line),
            _ => Location::Offset(self.pos as u64),
        }
    }

    fn err(&self, msg: impl Into<String>) -> IoError {
        parse_err(self.path, self.location(), msg)
    }

    fn next_token(&mut self) -> Result<&str, IoError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            if self.bytes[self.pos] == b'\n' {
                self.line += 1;
            }
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("unexpected end of data"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| self.err("invalid UTF-8 in ASCII body"))
    }

    fn read(&mut self, ty: Scalar) -> Result<f64, IoError> {
        if self.format == PlyFormat::Ascii {
            let t = self.next_token()?.to_string();
            return t.parse::<f64>().map_err(|_| self.err(format!("bad number {t:?}")));
        }
        let n = ty.size();
        if self.pos + n > self.bytes.len() {
            return Err(self.err(format!("truncated: need {n} more bytes")));
        }
        let raw = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        let le = self.format == PlyFormat::BinaryLe;
        macro_rules! num {
            ($t:ty) => {{
                let a = raw.try_into().expect("sized");
                (if le { <$t>::from_le_bytes(a) } else { <$t>::from_be_bytes(a) }) as f64
            }};
        }
        Ok(match ty {
            Scalar::I8 => raw[0] as i8 as f64,
            Scalar::U8 => raw[0] as f64,
            Scalar::I16 => num!(i16),
            Scalar::U16 => num!(u16),
            Scalar::I32 => num!(i32),
            Scalar::U32 => num!(u32),
            Scalar::F32 => num!(f32),
            Scalar::F64 => num!(f64),
        })
    }
}

/// Parses ASCII or binary PLY. Polygons are fan-triangulated; unknown
/// elements and properties are skipped.
pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<PlyData, IoError> {
    let header_end = find_subslice(bytes, b"end_header")
        .ok_or_else(|| parse_err(path, Location::Offset(bytes.len() as u64), "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| parse_err(path, Location::Offset(0), "header is not UTF-8"))?;
    let mut body = header_end + b"end_header".len();
    while body < bytes.len() && bytes[body] != b'\n' {
        body += 1;
    }
    body += 1;

    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, Location::Line(1), "missing 'ply' magic")),
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for (n, line) in lines {
        let at = Location::Line(n + 1);
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLe,
                    "binary_big_endian" => PlyFormat::BinaryBe,
                    other => return Err(parse_err(path, at, format!("unknown format {other:?}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| parse_err(path, at, "bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", "list", c, i, name] => {
                let (c, i) = (
                    Scalar::parse(c).ok_or_else(|| parse_err(path, at, "bad list count type"))?,
                    Scalar::parse(i).ok_or_else(|| parse_err(path, at, "bad list item type"))?,
                );
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, at, "property before element"))?
                    .properties
                    .push(Property::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| parse_err(path, at, format!("bad property type {ty:?}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, at, "property before element"))?
                    .properties
                    .push(Property::Scalar(name.to_string(), ty));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(parse_err(path, at, format!("unrecognised header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| parse_err(path, Location::Line(2), "missing format line"))?;
    let mut cur = PlyCursor {
        bytes,
        pos: body.min(bytes.len()),
        format,
        line: header.lines().count() + 1,
        path,
    };
    let mut data = PlyData::default();
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        if is_vertex {
            let names: Vec<&str> = el
                .properties
                .iter()
                .map(|p| match p {
                    Property::Scalar(n, _) | Property::List(n, _, _) => n.as_str(),
                })
                .collect();
            for axis in ["x", "y", "z"] {
                if !names.contains(&axis) {
                    return Err(parse_err(path, Location::Line(1), format!("vertex element lacks property {axis}")));
                }
            }
            if names.contains(&"label") {
                data.labels = Some(Vec::with_capacity(el.count));
            }
        }
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            for prop in &el.properties {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = cur.read(*ty)?;
                        if is_vertex {
                            match name.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                "label" => data.labels.as_mut().expect("label vec").push(v != 0.0),
                                _ => {}
                            }
                        }
                    }
                    Property::List(name, cty, ity) => {
                        let count = cur.read(*cty)?;
                        if !(count >= 0.0) || count > 1e6 {
                            return Err(cur.err(format!("bad list length {count}")));
                        }
                        let mut items = Vec::with_capacity(count as usize);
                        for _ in 0..count as usize {
                            items.push(cur.read(*ity)?);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            if items.len() < 3 {
                                return Err(cur.err("face needs at least three vertices"));
                            }
                            if items.iter().any(|i| *i < 0.0 || i.fract() != 0.0) {
                                return Err(cur.err("bad vertex index"));
                            }
                            for k in 1..items.len() - 1 {
                                data.faces.push([items[0] as u32, items[k] as u32, items[k + 1] as u32]);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                data.vertices.push(Vec3::from(xyz));
            }
        }
    }
    Ok(data)
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Binary little-endian PLY with float vertices, optional `uchar label`, and
/// triangles when `faces` is non-empty.
pub fn ply_bytes(vertices: &[Vec3], labels: Option<&[bool]>, faces: &[[u32; 3]]) -> Vec<u8> {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    h.push_str(&format!("element vertex {}\nproperty float x\nproperty float y\nproperty float z\n", vertices.len()));
    if labels.is_some() {
        h.push_str("property uchar label\n");
    }
    if !faces.is_empty() {
        h.push_str(&format!("element face {}\nproperty list uchar int vertex_indices\n", faces.len()));
    }
    h.push_str("end_header\n");
    let mut out = h.into_bytes();
    for (i, v) in vertices.iter().enumerate() {
        for c in v.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        if let Some(l) = labels {
            out.push(l[i] as u8);
        }
    }
    for f in faces {
        out.push(3);
        for i in f {
            out.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    out
}

pub fn save_ply_mesh(mesh: &TriangleMesh, path: &Path) -> Result<(), IoError> {
    write_bytes(path, &ply_bytes(&mesh.vertices, None, &mesh.faces))
}

/// Writes a mesh in the format named by the file extension.
pub fn save_mesh(mesh: &TriangleMesh, path: &Path) -> Result<(), IoError> {
    match extension(path).as_str() {
        "obj" => save_obj(mesh, path),
        "ply" => save_ply_mesh(mesh, path),
        "stl" => save_stl(mesh, path),
        _ => Err(IoError::UnsupportedFormat(format!(
            "{}: expected .obj, .ply or .stl",
            path.display()
        ))),
    }
}

// ---------------------------------------------------------------- point clouds

/// Ordered points with optional inlier labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub labels: Option<Vec<bool>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points, labels: None }
    }

    pub fn with_labels(points: Vec<Vec3>, labels: Vec<bool>) -> Self {
        assert_eq!(points.len(), labels.len(), "one label per point");
        Self {
            points,
            labels: Some(labels),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Loads a `.csv` (`x,y,z[,label]`, header optional) or `.ply` point cloud.
pub fn load_points(path: &Path) -> Result<PointCloud, IoError> {
    match extension(path).as_str() {
        "csv" | "txt" => {
            let bytes = read_bytes(path)?;
            let text = std::str::from_utf8(&bytes).map_err(|e| parse_err(path, Location::Offset(e.valid_up_to() as u64), "invalid UTF-8"))?;
            parse_points_csv(text, path)
        }
        "ply" => {
            let data = parse_ply(&read_bytes(path)?, path)?;
            if let Some(i) = data.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
                return Err(parse_err(path, Location::Row(i + 1), "non-finite coordinate"));
            }
            Ok(PointCloud {
                points: data.vertices,
                labels: data.labels,
            })
        }
        other => Err(IoError::UnsupportedFormat(format!(
            "{}: point clouds must be .csv or .ply, not {other:?}",
            path.display()
        ))),
    }
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" | "inlier" => Some(true),
        "0" | "false" | "outlier" => Some(false),
        _ => None,
    }
}

/// Parses CSV rows `x,y,z` or `x,y,z,label` (label `1`/`0`). A first line
/// whose leading field is not numeric is taken as a header.
pub fn parse_points_csv(text: &str, path: &Path) -> Result<PointCloud, IoError> {
    let mut points = Vec::new();
    let mut labels: Vec<bool> = Vec::new();
    let mut columns = None;
    for (n, line) in text.lines().enumerate() {
        let row = Location::Row(n + 1);
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if n == 0 && fields[0].parse::<f64>().is_err() {
            continue;
        }
        if !(fields.len() == 3 || fields.len() == 4) {
            return Err(parse_err(path, row, format!("expected 3 or 4 fields, found {}", fields.len())));
        }
        if *columns.get_or_insert(fields.len()) != fields.len() {
            return Err(parse_err(path, row, "inconsistent column count"));
        }
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = fields[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, row, format!("field {} is not a finite number: {:?}", k + 1, fields[k])))?;
        }
        points.push(Vec3::from(c));
        if fields.len() == 4 {
            labels.push(parse_label(fields[3]).ok_or_else(|| parse_err(path, row, format!("bad label {:?}", fields[3])))?);
        }
    }
    Ok(PointCloud {
        points,
        labels: (columns == Some(4)).then_some(labels),
    })
}

/// CSV text with a header; coordinates use the shortest exact decimal form.
pub fn points_csv(cloud: &PointCloud) -> String {
    let mut s = String::from(if cloud.labels.is_some() { "x,y,z,label\n" } else { "x,y,z\n" });
    for (i, p) in cloud.points.iter().enumerate() {
        s.push_str(&format!("{:?},{:?},{:?}", p.x, p.y, p.z));
        if let Some(l) = &cloud.labels {
            s.push_str(if l[i] { ",1" } else { ",0" });
        }
        s.push('\n');
    }
    s
}

/// Saves as CSV (f64-exact) or binary PLY (f32) by extension.
pub fn save_points(cloud: &PointCloud, path: &Path) -> Result<(), IoError> {
    match extension(path).as_str() {
        "csv" | "txt" => write_bytes(path, points_csv(cloud).as_bytes()),
        "ply" => write_bytes(path, &ply_bytes(&cloud.points, cloud.labels.as_deref(), &[])),
        other => Err(IoError::UnsupportedFormat(format!(
            "{}: point clouds must be .csv or .ply, not {other:?}",
            path.display()
        ))),
    }
}

// ---------------------------------------------------------------- landmarks and transforms

/// Paired landmarks: model-frame points and the same points in the probe frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LandmarkPairs {
    pub model: Vec<Vec3>,
    pub probe: Vec<Vec3>,
}

/// Rows `model_x,model_y,model_z,probe_x,probe_y,probe_z`, header optional.
pub fn load_landmark_pairs(path: &Path) -> Result<LandmarkPairs, IoError> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| parse_err(path, Location::Offset(e.valid_up_to() as u64), "invalid UTF-8"))?;
    let mut out = LandmarkPairs::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if n == 0 && fields[0].parse::<f64>().is_err() {
            continue;
        }
        let row = Location::Row(n + 1);
        if fields.len() != 6 {
            return Err(parse_err(path, row, format!("expected 6 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 6];
        for k in 0..6 {
            v[k] = fields[k]
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(path, row, format!("field {} is not a finite number: {:?}", k + 1, fields[k])))?;
        }
        out.model.push(Vec3::new(v[0], v[1], v[2]));
        out.probe.push(Vec3::new(v[3], v[4], v[5]));
    }
    Ok(out)
}

pub fn save_landmark_pairs(pairs: &LandmarkPairs, path: &Path) -> Result<(), IoError> {
    let mut s = String::from("model_x,model_y,model_z,probe_x,probe_y,probe_z\n");
    for (m, p) in pairs.model.iter().zip(&pairs.probe) {
        s.push_str(&format!("{:?},{:?},{:?},{:?},{:?},{:?}\n", m.x, m.y, m.z, p.x, p.y, p.z));
    }
    write_bytes(path, s.as_bytes())
}

#[derive(Serialize, Deserialize)]
struct TransformDoc(#[serde(with = "transform_serde")] RigidTransform);

/// Reads a transform as JSON `{"rotation": [9], "translation": [3]}` or as
/// 12 or 16 numbers (row-major 3×4 or 4×4) separated by commas or whitespace.
pub fn load_transform(path: &Path) -> Result<RigidTransform, IoError> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8_lossy(&bytes);
    if text.trim_start().starts_with('{') {
        let doc: TransformDoc = serde_json::from_str(&text)?;
        return Ok(doc.0);
    }
    let nums: Result<Vec<f64>, _> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::parse::<f64>)
        .collect();
    let nums = nums.map_err(|e| parse_err(path, Location::Offset(0), format!("bad matrix entry: {e}")))?;
    if nums.len() != 12 && nums.len() != 16 {
        return Err(parse_err(path, Location::Offset(0), format!("expected 12 or 16 numbers, found {}", nums.len())));
    }
    let r = [nums[0], nums[1], nums[2], nums[4], nums[5], nums[6], nums[8], nums[9], nums[10]];
    let t = [nums[3], nums[7], nums[11]];
    Ok(RigidTransform::from_row_major(&r, &t))
}

pub fn save_transform(x: &RigidTransform, path: &Path) -> Result<(), IoError> {
    let json = serde_json::to_string_pretty(&TransformDoc(*x))?;
    write_bytes(path, json.as_bytes())
}

// ---------------------------------------------------------------- results

/// Everything a registration run produced, as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    /// Library version that wrote the file.
    pub version: String,
    pub seed: Option<u64>,
    pub config: RobustConfig,
    #[serde(flatten)]
    pub result: RegistrationResult,
    pub metrics: Option<EvalReport>,
}

impl ResultDocument {
    pub fn new(result: RegistrationResult, config: RobustConfig, seed: Option<u64>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            version: crate::VERSION.to_string(),
            seed,
            config,
            result,
            metrics: None,
        }
    }
}

pub fn save_result(doc: &ResultDocument, path: &Path) -> Result<(), IoError> {
    write_bytes(path, serde_json::to_string_pretty(doc)?.as_bytes())
}

pub fn load_result(path: &Path) -> Result<ResultDocument, IoError> {
    Ok(serde_json::from_slice(&read_bytes(path)?)?)
}

pub fn save_report(report: &EvalReport, path: &Path) -> Result<(), IoError> {
    write_bytes(path, serde_json::to_string_pretty(report)?.as_bytes())
}

// ---------------------------------------------------------------- trials

/// File names inside a trial directory.
pub const TRIAL_POINTS_CSV: &str = "points.csv";
pub const TRIAL_POINTS_PLY: &str = "points.ply";
pub const TRIAL_CLEAN_CSV: &str = "clean_points.csv";
pub const TRIAL_LANDMARKS_CSV: &str = "landmarks.csv";
pub const TRIAL_MANIFEST: &str = "manifest.json";

/// Ground truth and bookkeeping for a written trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub schema_version: u32,
    pub version: String,
    pub spec: ExperimentSpec,
    /// Maps the probe frame onto the model.
    #[serde(with = "transform_serde")]
    pub gt_transform: RigidTransform,
    pub n_inliers: usize,
    pub n_outliers: usize,
    pub achieved_ratio: f64,
    /// `true` where the row of `points.csv` is a surface point.
    pub labels: Vec<bool>,
    pub points: String,
    pub clean_points: String,
    pub landmarks: String,
}

/// Writes points (CSV and PLY, labelled), model-frame clean points,
/// landmark pairs and the manifest into `dir`.
pub fn write_trial(dir: &Path, trial: &SyntheticTrial, spec: &ExperimentSpec) -> Result<TrialManifest, IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let combined = PointCloud::with_labels(trial.combined.clone(), trial.labels.clone());
    save_points(&combined, &dir.join(TRIAL_POINTS_CSV))?;
    save_points(&combined, &dir.join(TRIAL_POINTS_PLY))?;
    save_points(&PointCloud::new(trial.clean_points.clone()), &dir.join(TRIAL_CLEAN_CSV))?;
    save_landmark_pairs(
        &LandmarkPairs {
            model: trial.landmarks_model.clone(),
            probe: trial.landmarks_moved.clone(),
        },
        &dir.join(TRIAL_LANDMARKS_CSV),
    )?;
    let manifest = TrialManifest {
        schema_version: SCHEMA_VERSION,
        version: crate::VERSION.to_string(),
        spec: spec.clone(),
        gt_transform: trial.gt_transform,
        n_inliers: trial.noisy_points.len(),
        n_outliers: trial.outlier_points.len(),
        achieved_ratio: trial.achieved_ratio(),
        labels: trial.labels.clone(),
        points: TRIAL_POINTS_CSV.into(),
        clean_points: TRIAL_CLEAN_CSV.into(),
        landmarks: TRIAL_LANDMARKS_CSV.into(),
    };
    write_bytes(&dir.join(TRIAL_MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<TrialManifest, IoError> {
    Ok(serde_json::from_slice(&read_bytes(path)?)?)
}

/// Path of a sibling file named in a manifest.
pub fn manifest_sibling(manifest_path: &Path, name: &str) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).join(name)
}

/// Reassembles a trial written by [`write_trial`] from its manifest.
///
/// The stroke points and outliers are recovered from the labelled point file
/// in their shuffled order, so `combined` and `labels` match the original.
pub fn load_trial(manifest_path: &Path) -> Result<(TrialManifest, SyntheticTrial), IoError> {
    let manifest = load_manifest(manifest_path)?;
    let cloud = load_points(&manifest_sibling(manifest_path, &manifest.points))?;
    if cloud.len() != manifest.labels.len() {
        return Err(parse_err(
            manifest_path,
            Location::Offset(0),
            format!("{} labels for {} points in {}", manifest.labels.len(), cloud.len(), manifest.points),
        ));
    }
    let clean = load_points(&manifest_sibling(manifest_path, &manifest.clean_points))?;
    let pairs = load_landmark_pairs(&manifest_sibling(manifest_path, &manifest.landmarks))?;
    let (mut noisy, mut outliers) = (Vec::new(), Vec::new());
    for (p, inlier) in cloud.points.iter().zip(&manifest.labels) {
        if *inlier {
            noisy.push(*p);
        } else {
            outliers.push(*p);
        }
    }
    let trial = SyntheticTrial {
        clean_points: clean.points,
        noisy_points: noisy,
        outlier_points: outliers,
        combined: cloud.points,
        labels: manifest.labels.clone(),
        gt_transform: manifest.gt_transform,
        landmarks_model: pairs.model,
        landmarks_moved: pairs.probe,
    };
    Ok((manifest, trial))
}
