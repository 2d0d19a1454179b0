//! File formats: binary PLY point clouds, OBJ meshes with vertex colors, JSON documents.
//!
//! OBJ vertex colors use the common extended form `v x y z r g b` with channels in
//! `[0, 1]`; readers that ignore the extra columns still see valid geometry. Faces are
//! written as `f a//a b//b c//c` referencing both position and normal.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::treegeom::{PointCloud, SkinnedMesh};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("PLY: {0}")]
    Ply(String),
    #[error("OBJ line {line}: {msg}")]
    Obj { line: usize, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so readers
/// never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    atomic_write(path, &to_json_bytes(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------- PLY

/// Binary little-endian PLY with `float x, y, z` and `uchar red, green, blue` per vertex.
pub fn ply_bytes(cloud: &PointCloud) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    );
    let mut out = header.into_bytes();
    out.reserve(cloud.len() * 15);
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend_from_slice(c);
    }
    out
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    atomic_write(path, &ply_bytes(cloud))
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => f64::from(b[0] as i8),
            Self::U8 => f64::from(b[0]),
            Self::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Self::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Self::I32 => f64::from(i32::from_le_bytes(b[..4].try_into().unwrap())),
            Self::U32 => f64::from(u32::from_le_bytes(b[..4].try_into().unwrap())),
            Self::F32 => f64::from(f32::from_le_bytes(b[..4].try_into().unwrap())),
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// Reads a binary little-endian PLY whose first element is `vertex` with scalar `x`,
/// `y`, `z` and optional `red`, `green`, `blue` properties (missing colors read as
/// gray). Later elements are ignored.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud, IoError> {
    let err = |m: &str| IoError::Ply(m.to_owned());
    let end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| err("missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| err("header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(err("missing magic"));
    }
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    let mut format_ok = false;
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", f, _] => return Err(IoError::Ply(format!("unsupported format {f}"))),
            ["element", "vertex", n] if count.is_none() => {
                count = Some(n.parse::<usize>().map_err(|_| err("bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => {
                if count.is_none() {
                    return Err(err("vertex must be the first element"));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => return Err(err("list property on vertex")),
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| IoError::Ply(format!("unknown type {ty}")))?;
                props.push(((*name).to_owned(), s));
            }
            _ => {}
        }
    }
    if !format_ok {
        return Err(err("missing format line"));
    }
    let n = count.ok_or_else(|| err("no vertex element"))?;
    let stride: usize = props.iter().map(|p| p.1.size()).sum();
    let mut offsets = std::collections::HashMap::new();
    let mut off = 0;
    for (name, s) in &props {
        offsets.insert(name.as_str(), (off, *s));
        off += s.size();
    }
    let field = |name: &str| offsets.get(name).copied();
    let (fx, fy, fz) = match (field("x"), field("y"), field("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(err("vertex needs x, y, z")),
    };
    let rgb = [field("red"), field("green"), field("blue")];
    let body = &bytes[end + 11..];
    if body.len() < n * stride {
        return Err(IoError::Ply(format!("body holds {} bytes, need {}", body.len(), n * stride)));
    }
    let mut points = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for rec in body.chunks_exact(stride.max(1)).take(n) {
        let get = |(o, s): (usize, Scalar)| s.read(&rec[o..]);
        points.push([get(fx), get(fy), get(fz)]);
        let mut c = [128u8; 3];
        for (k, f) in rgb.iter().enumerate() {
            if let Some(f) = f {
                c[k] = get(*f).clamp(0.0, 255.0) as u8;
            }
        }
        colors.push(c);
    }
    Ok(PointCloud::new(points, colors))
}

pub fn read_ply(path: &Path) -> Result<PointCloud, IoError> {
    parse_ply(&fs::read(path).map_err(io_err(path))?)
}

// ---------------------------------------------------------------- OBJ

/// Geometry read back from an OBJ file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjMesh {
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<Option<[u8; 3]>>,
    pub normals: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

pub fn obj_string(mesh: &SkinnedMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 80 + mesh.triangles.len() * 30);
    s.push_str("# vertices carry RGB in [0, 1] after the position\n");
    for v in &mesh.vertices {
        let [r, g, b] = v.color.map(|c| f64::from(c) / 255.0);
        let _ = writeln!(s, "v {} {} {} {r} {g} {b}", v.pos[0], v.pos[1], v.pos[2]);
    }
    for v in &mesh.vertices {
        let _ = writeln!(s, "vn {} {} {}", v.normal[0], v.normal[1], v.normal[2]);
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
    }
    s
}

pub fn write_obj(path: &Path, mesh: &SkinnedMesh) -> Result<(), IoError> {
    atomic_write(path, obj_string(mesh).as_bytes())
}

/// Parses `v`, `vn` and triangular or polygonal `f` records (polygons are fanned).
pub fn parse_obj(text: &str) -> Result<ObjMesh, IoError> {
    let mut out = ObjMesh::default();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let bad = |msg: &str| IoError::Obj {
            line: line_no,
            msg: msg.to_owned(),
        };
        let mut toks = line.split_whitespace();
        let Some(tag) = toks.next() else { continue };
        let nums = |toks: std::str::SplitWhitespace| -> Result<Vec<f64>, IoError> {
            toks.map(|t| t.parse::<f64>().map_err(|_| bad("bad number"))).collect()
        };
        match tag {
            "v" => {
                let n = nums(toks)?;
                match n.len() {
                    3 | 4 => {
                        out.positions.push([n[0], n[1], n[2]]);
                        out.colors.push(None);
                    }
                    6 | 7 => {
                        out.positions.push([n[0], n[1], n[2]]);
                        let c = [n[3], n[4], n[5]].map(|x| (x * 255.0).round().clamp(0.0, 255.0) as u8);
                        out.colors.push(Some(c));
                    }
                    _ => return Err(bad("vertex needs 3 or 6 values")),
                }
            }
            "vn" => {
                let n = nums(toks)?;
                if n.len() != 3 {
                    return Err(bad("normal needs 3 values"));
                }
                out.normals.push([n[0], n[1], n[2]]);
            }
            "f" => {
                let idx: Vec<usize> = toks
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| bad("bad face index"))?;
                        let n = out.positions.len() as i64;
                        let i = if i < 0 { n + i } else { i - 1 };
                        if i < 0 || i >= n {
                            return Err(bad("face index out of range"));
                        }
                        Ok(i as usize)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(bad("face needs 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    out.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

pub fn read_obj(path: &Path) -> Result<ObjMesh, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_obj(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::grid_mesh;

    #[test]
    fn ply_round_trip() {
        let cloud = PointCloud::new(vec![[0.5, -1.25, 3.0], [1e-3, 2.0, -7.5]], vec![[1, 2, 3], [250, 128, 0]]);
        let bytes = ply_bytes(&cloud);
        assert_eq!(bytes.len(), ply_bytes(&PointCloud::default()).len() + 2 * 15);
        let back = parse_ply(&bytes).unwrap();
        assert_eq!(back.colors, cloud.colors);
        for (a, b) in back.points.iter().zip(&cloud.points) {
            for k in 0..3 {
                assert_eq!(a[k], f64::from(b[k] as f32));
            }
        }
    }

    #[test]
    fn ply_rejects_ascii_and_truncation() {
        let ascii = b"ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nend_header\n";
        assert!(parse_ply(ascii).is_err());
        let mut bytes = ply_bytes(&PointCloud::new(vec![[0.0; 3]], vec![[0; 3]]));
        bytes.pop();
        assert!(parse_ply(&bytes).is_err());
    }

    #[test]
    fn obj_round_trip() {
        let mut mesh = grid_mesh(3, 2, 0.5);
        mesh.vertices[4].color = [255, 7, 0];
        mesh.vertices[1].pos = [0.1, -2.0 / 3.0, 1e-17];
        let back = parse_obj(&obj_string(&mesh)).unwrap();
        assert_eq!(back.triangles, mesh.triangles);
        for (v, (p, c)) in mesh.vertices.iter().zip(back.positions.iter().zip(&back.colors)) {
            assert_eq!(v.pos, *p);
            assert_eq!(Some(v.color), *c);
        }
        assert_eq!(back.normals.len(), mesh.vertices.len());
    }

    #[test]
    fn obj_polygons_fan_and_errors() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\nf -1 -2 -3\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3], [3, 2, 1]]);
        assert!(matches!(parse_obj("v 0 0\n"), Err(IoError::Obj { line: 1, .. })));
        assert!(matches!(parse_obj("v 0 0 0\nf 1 2 3\n"), Err(IoError::Obj { line: 2, .. })));
    }

    #[test]
    fn atomic_json() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.json");
        write_json(&p, &vec![1.5, 2.0]).unwrap();
        let back: Vec<f64> = read_json(&p).unwrap();
        assert_eq!(back, vec![1.5, 2.0]);
        assert_eq!(fs::read_dir(dir.path().join("sub")).unwrap().count(), 1);
    }
}
