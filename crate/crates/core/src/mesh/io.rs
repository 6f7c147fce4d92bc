//! OFF and PLY readers/writers.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{TriMesh, Vec3};
use crate::error::{Error, Result};

/// Raw polygon soup as read from disk, before validation.
struct RawMesh {
    vertices: Vec<Vec3>,
    faces: Vec<Vec<usize>>,
    colors: Option<Vec<Vec3>>,
}

/// Loads an OFF or PLY (ASCII / binary little-endian) triangle mesh.
///
/// Degenerate faces and unreferenced vertices are removed.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    load_mesh_with_colors(path).map(|(m, _)| m)
}

/// Like [`load_mesh`], additionally returning per-vertex RGB in `[0, 1]`
/// when the file carries color properties.
pub fn load_mesh_with_colors(path: impl AsRef<Path>) -> Result<(TriMesh, Option<Vec<Vec3>>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = if bytes.starts_with(b"ply") {
        parse_ply(&bytes)?
    } else if bytes.starts_with(b"OFF") || bytes.starts_with(b"COFF") {
        parse_off(&String::from_utf8_lossy(&bytes))?
    } else {
        return Err(Error::Parse(format!(
            "{}: unrecognized mesh format (expected OFF or PLY)",
            path.display()
        )));
    };
    let mut faces = Vec::with_capacity(raw.faces.len());
    for (fi, f) in raw.faces.into_iter().enumerate() {
        if f.len() != 3 {
            return Err(Error::NonTriangleFace {
                face: fi,
                count: f.len(),
            });
        }
        faces.push([f[0], f[1], f[2]]);
    }
    if raw.vertices.is_empty() || faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let (mesh, remap) = TriMesh::cleaned(raw.vertices, faces)?;
    let colors = raw.colors.map(|c| {
        let mut out = vec![[0.0; 3]; mesh.num_vertices()];
        for (old, new) in remap.iter().enumerate() {
            if let Some(new) = new {
                out[*new] = c[old];
            }
        }
        out
    });
    Ok((mesh, colors))
}

fn parse_off(text: &str) -> Result<RawMesh> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    let header = tokens.next().unwrap_or("");
    if header != "OFF" && header != "COFF" {
        return Err(Error::Parse("missing OFF header".into()));
    }
    let mut next_usize = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::Parse(format!("unexpected end of file reading {what}")))?
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("bad {what}: {e}")))
    };
    let nv = next_usize("vertex count")?;
    let nf = next_usize("face count")?;
    let _ne = next_usize("edge count")?;
    // Re-tokenize by line for the body, so trailing per-face colors are skipped.
    let mut lines = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty());
    // skip header lines until the counts have been consumed
    let mut consumed = 0;
    for l in lines.by_ref() {
        consumed += l.split_whitespace().count();
        if consumed >= 4 {
            break;
        }
    }
    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let l = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing vertex {i}")))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("vertex {i}: {e}")))?;
        if v.len() != 3 {
            return Err(Error::Parse(format!("vertex {i}: expected 3 coordinates")));
        }
        vertices.push([v[0], v[1], v[2]]);
    }
    let mut faces = Vec::with_capacity(nf);
    for i in 0..nf {
        let l = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing face {i}")))?;
        let mut it = l.split_whitespace();
        let k: usize = it
            .next()
            .unwrap_or("")
            .parse()
            .map_err(|e| Error::Parse(format!("face {i}: {e}")))?;
        let idx: Vec<usize> = it
            .take(k)
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("face {i}: {e}")))?;
        if idx.len() != k {
            return Err(Error::Parse(format!("face {i}: expected {k} indices")));
        }
        faces.push(idx);
    }
    Ok(RawMesh {
        vertices,
        faces,
        colors: None,
    })
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
            other => return Err(Error::Parse(format!("unknown PLY scalar type {other}"))),
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

/// One parsed element record: scalar values, plus list values for list props.
type Record = (Vec<f64>, Vec<Vec<f64>>);

fn parse_ply(bytes: &[u8]) -> Result<RawMesh> {
    let header_end = find_subslice(bytes, b"end_header")
        .ok_or_else(|| Error::Parse("PLY header missing end_header".into()))?;
    let mut body_start = header_end + b"end_header".len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = String::from_utf8_lossy(&bytes[..header_end]);
    let mut binary = false;
    let mut elements: Vec<Element> = Vec::new();
    for line in header.lines().skip(1) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "ascii", ..] => binary = false,
            ["format", "binary_little_endian", ..] => binary = true,
            ["format", other, ..] => {
                return Err(Error::Parse(format!("unsupported PLY format {other}")))
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|e| Error::Parse(format!("element count: {e}")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Parse("property before element".into()))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Parse("property before element".into()))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty)?,
                });
            }
            _ => {}
        }
    }

    let body = &bytes[body_start..];
    let mut reader: Box<dyn FnMut(&Element) -> Result<Record>> = if binary {
        let mut pos = 0usize;
        Box::new(move |el: &Element| {
            let mut scalars = Vec::new();
            let mut lists = Vec::new();
            let mut take = |ty: Scalar| -> Result<f64> {
                let end = pos + ty.size();
                let chunk = body
                    .get(pos..end)
                    .ok_or_else(|| Error::Parse("truncated binary PLY body".into()))?;
                pos = end;
                Ok(ty.read_le(chunk))
            };
            for p in &el.props {
                match p {
                    Property::Scalar { ty, .. } => scalars.push(take(*ty)?),
                    Property::List { count, item, .. } => {
                        let k = take(*count)? as usize;
                        let mut vals = Vec::with_capacity(k);
                        for _ in 0..k {
                            vals.push(take(*item)?);
                        }
                        lists.push(vals);
                    }
                }
            }
            Ok((scalars, lists))
        })
    } else {
        let text = String::from_utf8_lossy(body).into_owned();
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect::<Vec<_>>()
            .into_iter();
        Box::new(move |el: &Element| {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("truncated ASCII PLY in {}", el.name)))?;
            let mut toks = line.split_whitespace().map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad number {t:?}: {e}")))
            });
            let mut next = || {
                toks.next()
                    .unwrap_or_else(|| Err(Error::Parse(format!("short record in {}", el.name))))
            };
            let mut scalars = Vec::new();
            let mut lists = Vec::new();
            for p in &el.props {
                match p {
                    Property::Scalar { .. } => scalars.push(next()?),
                    Property::List { .. } => {
                        let k = next()? as usize;
                        let mut vals = Vec::with_capacity(k);
                        for _ in 0..k {
                            vals.push(next()?);
                        }
                        lists.push(vals);
                    }
                }
            }
            Ok((scalars, lists))
        })
    };

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut colors: Option<Vec<Vec3>> = None;
    for el in &elements {
        let scalar_names: Vec<(&str, Scalar)> = el
            .props
            .iter()
            .filter_map(|p| match p {
                Property::Scalar { name, ty } => Some((name.as_str(), *ty)),
                _ => None,
            })
            .collect();
        let find = |n: &str| scalar_names.iter().position(|(s, _)| *s == n);
        match el.name.as_str() {
            "vertex" => {
                let (x, y, z) = match (find("x"), find("y"), find("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(Error::Parse("PLY vertex lacks x/y/z".into())),
                };
                let rgb = match (find("red"), find("green"), find("blue")) {
                    (Some(r), Some(g), Some(b)) => Some([r, g, b]),
                    _ => None,
                };
                let scale = |i: usize| match scalar_names[i].1 {
                    Scalar::U8 => 1.0 / 255.0,
                    Scalar::U16 => 1.0 / 65535.0,
                    _ => 1.0,
                };
                let mut cols = Vec::new();
                for _ in 0..el.count {
                    let (s, _) = reader(el)?;
                    vertices.push([s[x], s[y], s[z]]);
                    if let Some(rgb) = rgb {
                        cols.push([
                            s[rgb[0]] * scale(rgb[0]),
                            s[rgb[1]] * scale(rgb[1]),
                            s[rgb[2]] * scale(rgb[2]),
                        ]);
                    }
                }
                if rgb.is_some() {
                    colors = Some(cols);
                }
            }
            "face" => {
                let list_idx = el
                    .props
                    .iter()
                    .filter(|p| matches!(p, Property::List { .. }))
                    .position(|p| {
                        matches!(p, Property::List { name, .. }
                            if name == "vertex_indices" || name == "vertex_index")
                    })
                    .ok_or_else(|| Error::Parse("PLY face lacks vertex_indices".into()))?;
                for _ in 0..el.count {
                    let (_, lists) = reader(el)?;
                    let idx = lists[list_idx]
                        .iter()
                        .map(|&v| {
                            if v < 0.0 || v.fract() != 0.0 {
                                Err(Error::Parse(format!("bad vertex index {v}")))
                            } else {
                                Ok(v as usize)
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    faces.push(idx);
                }
            }
            _ => {
                for _ in 0..el.count {
                    reader(el)?;
                }
            }
        }
    }
    Ok(RawMesh {
        vertices,
        faces,
        colors,
    })
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Writes the mesh as OFF or ASCII PLY depending on the file extension.
pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_off = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("off"))
        .unwrap_or(false);
    let mut out = String::new();
    if is_off {
        out.push_str(&format!(
            "OFF\n{} {} 0\n",
            mesh.num_vertices(),
            mesh.num_faces()
        ));
        for v in mesh.vertices() {
            out.push_str(&format!("{} {} {}\n", v[0], v[1], v[2]));
        }
        for f in mesh.faces() {
            out.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
        }
    } else {
        write_ply(&mut out, mesh, None);
    }
    write_file(path, out.as_bytes())
}

/// Writes an ASCII PLY with per-vertex `uchar` RGB colors.
pub fn save_mesh_with_colors(mesh: &TriMesh, colors: &[Vec3], path: impl AsRef<Path>) -> Result<()> {
    if colors.len() != mesh.num_vertices() {
        return Err(Error::dims(format!(
            "{} colors for {} vertices",
            colors.len(),
            mesh.num_vertices()
        )));
    }
    let mut out = String::new();
    write_ply(&mut out, mesh, Some(colors));
    write_file(path.as_ref(), out.as_bytes())
}

fn write_ply(out: &mut String, mesh: &TriMesh, colors: Option<&[Vec3]>) {
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", mesh.num_vertices()));
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if colors.is_some() {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.push_str(&format!("element face {}\n", mesh.num_faces()));
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, v) in mesh.vertices().iter().enumerate() {
        out.push_str(&format!("{} {} {}", v[0], v[1], v[2]));
        if let Some(c) = colors {
            let q = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
            out.push_str(&format!(" {} {} {}", q(c[i][0]), q(c[i][1]), q(c[i][2])));
        }
        out.push('\n');
    }
    for f in mesh.faces() {
        out.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    fn write(dir: &Path, name: &str, body: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn off_unit_square() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "sq.off",
            b"OFF\n# unit square\n4 2 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2\n3 0 2 3\n",
        );
        let m = load_mesh(&p).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert!((m.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quad_face_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "quad.off",
            b"OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n",
        );
        let err = load_mesh(&p).unwrap_err();
        assert!(err.to_string().contains("non-triangle face"), "{err}");
    }

    #[test]
    fn empty_and_garbage_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.off", b"OFF\n0 0 0\n");
        assert!(matches!(load_mesh(&p), Err(Error::EmptyMesh)));
        let p = write(dir.path(), "g.obj", b"v 0 0 0\n");
        assert!(matches!(load_mesh(&p), Err(Error::Parse(_))));
        assert!(matches!(
            load_mesh(dir.path().join("missing.off")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn binary_ply_with_extra_props() {
        let mut b = Vec::new();
        b.extend_from_slice(
            b"ply\nformat binary_little_endian 1.0\ncomment hi\nelement vertex 3\n\
              property float x\nproperty float y\nproperty float z\nproperty float nx\n\
              element face 1\nproperty list uchar int vertex_indices\nend_header\n",
        );
        for v in [[0f32, 0., 0., 9.], [1., 0., 0., 9.], [0., 1., 0., 9.]] {
            for c in v {
                b.extend_from_slice(&c.to_le_bytes());
            }
        }
        b.push(3);
        for i in [0i32, 1, 2] {
            b.extend_from_slice(&i.to_le_bytes());
        }
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.ply", &b);
        let m = load_mesh(&p).unwrap();
        assert_eq!(m.num_faces(), 1);
        assert!((m.total_area() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn color_roundtrip() {
        let m = shapes::icosphere(1, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        let red = vec![[1.0, 0.0, 0.0]; m.num_vertices()];
        save_mesh_with_colors(&m, &red, &p).unwrap();
        let (back, colors) = load_mesh_with_colors(&p).unwrap();
        assert_eq!(back.faces(), m.faces());
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 1e-6);
            }
        }
        assert!(colors.unwrap().iter().all(|c| *c == [1.0, 0.0, 0.0]));
        assert!(save_mesh_with_colors(&m, &red[1..], &p).is_err());
    }

    #[test]
    fn off_roundtrip() {
        let m = shapes::icosphere(1, 2.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.off");
        save_mesh(&m, &p).unwrap();
        assert_eq!(load_mesh(&p).unwrap(), m);
    }
}
