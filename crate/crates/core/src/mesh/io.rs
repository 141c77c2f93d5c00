//! OBJ and PLY (ascii, binary little/big endian) ingestion, OBJ export.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Point3;

use super::{MeshError, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(Self::Obj),
            "ply" => Some(Self::Ply),
            _ => None,
        }
    }
}

pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<TriangleMesh, MeshError> {
    let bytes = fs::read(path.as_ref())?;
    let (vertices, polygons) = match format {
        MeshFormat::Obj => parse_obj(&String::from_utf8_lossy(&bytes))?,
        MeshFormat::Ply => parse_ply(&bytes)?,
    };
    if vertices.is_empty() || polygons.is_empty() {
        return Err(MeshError::Empty);
    }
    let mut faces = Vec::with_capacity(polygons.len());
    for poly in polygons {
        for k in 1..poly.len() - 1 {
            faces.push([poly[0], poly[k], poly[k + 1]]);
        }
    }
    TriangleMesh::new(vertices, faces)
}

fn obj_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        format: "OBJ",
        line,
        message: message.into(),
    }
}

type Soup = (Vec<Point3<f64>>, Vec<Vec<usize>>);

fn parse_obj(text: &str) -> Result<Soup, MeshError> {
    let mut vertices = Vec::new();
    let mut polygons = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let t = tok
                        .next()
                        .ok_or_else(|| obj_err(line_no, "vertex needs 3 coordinates"))?;
                    *slot = t
                        .parse()
                        .map_err(|_| obj_err(line_no, format!("bad coordinate '{t}'")))?;
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let idx: i64 = first
                        .parse()
                        .map_err(|_| obj_err(line_no, format!("bad face index '{t}'")))?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        return Err(obj_err(line_no, "face index 0 is invalid"));
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(obj_err(line_no, format!("face index {idx} out of range")));
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(obj_err(line_no, "face needs at least 3 vertices"));
                }
                polygons.push(poly);
            }
            _ => {}
        }
    }
    Ok((vertices, polygons))
}

fn ply_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        format: "PLY",
        line,
        message: message.into(),
    }
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

    fn read(self, b: &[u8], big: bool) -> f64 {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                (if big {
                    <$t>::from_be_bytes(a)
                } else {
                    <$t>::from_le_bytes(a)
                }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => rd!(i16, 2),
            Self::U16 => rd!(u16, 2),
            Self::I32 => rd!(i32, 4),
            Self::U32 => rd!(u32, 4),
            Self::F32 => rd!(f32, 4),
            Self::F64 => rd!(f64, 8),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Ascii,
    BinaryLe,
    BinaryBe,
}

fn parse_ply(bytes: &[u8]) -> Result<Soup, MeshError> {
    // Header is ascii and ends with an "end_header" line.
    let mut elements: Vec<Element> = Vec::new();
    let mut encoding = None;
    let mut pos = 0;
    let mut line_no = 0;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| ply_err(line_no + 1, "unterminated header"))?;
        line_no += 1;
        let line = String::from_utf8_lossy(&bytes[pos..pos + end]).trim().to_string();
        pos += end + 1;
        let tok: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line != "ply" {
                return Err(ply_err(1, "missing 'ply' magic"));
            }
            continue;
        }
        match tok.first().copied() {
            Some("format") => {
                encoding = Some(match tok.get(1).copied() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLe,
                    Some("binary_big_endian") => Encoding::BinaryBe,
                    other => return Err(ply_err(line_no, format!("unknown format {other:?}"))),
                })
            }
            Some("element") => {
                let name = tok.get(1).ok_or_else(|| ply_err(line_no, "element needs a name"))?;
                let count = tok
                    .get(2)
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| ply_err(line_no, "element needs a count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| ply_err(line_no, "property before element"))?;
                let prop = if tok.get(1) == Some(&"list") {
                    let (c, i, n) = match (tok.get(2), tok.get(3), tok.get(4)) {
                        (Some(c), Some(i), Some(n)) => (*c, *i, *n),
                        _ => return Err(ply_err(line_no, "malformed list property")),
                    };
                    Property::List(
                        n.to_string(),
                        Scalar::parse(c).ok_or_else(|| ply_err(line_no, format!("bad type {c}")))?,
                        Scalar::parse(i).ok_or_else(|| ply_err(line_no, format!("bad type {i}")))?,
                    )
                } else {
                    let (t, n) = match (tok.get(1), tok.get(2)) {
                        (Some(t), Some(n)) => (*t, *n),
                        _ => return Err(ply_err(line_no, "malformed property")),
                    };
                    Property::Scalar(
                        n.to_string(),
                        Scalar::parse(t).ok_or_else(|| ply_err(line_no, format!("bad type {t}")))?,
                    )
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(ply_err(line_no, format!("unexpected header keyword '{other}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| ply_err(line_no, "missing format line"))?;

    let mut vertices = Vec::new();
    let mut polygons = Vec::new();
    let mut reader: Box<dyn ValueReader> = match encoding {
        Encoding::Ascii => Box::new(AsciiReader::new(&bytes[pos..], line_no)),
        Encoding::BinaryLe | Encoding::BinaryBe => Box::new(BinaryReader {
            data: &bytes[pos..],
            pos: 0,
            big: encoding == Encoding::BinaryBe,
            header_lines: line_no,
        }),
    };
    for el in &elements {
        for _ in 0..el.count {
            reader.start_record()?;
            let mut xyz = [0.0; 3];
            let mut poly: Option<Vec<usize>> = None;
            for p in &el.props {
                match p {
                    Property::Scalar(name, t) => {
                        let v = reader.value(*t)?;
                        if el.name == "vertex" {
                            match name.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                _ => {}
                            }
                        }
                    }
                    Property::List(name, ct, it) => {
                        let n = reader.value(*ct)? as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(reader.value(*it)?);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            let line = reader.line();
                            let mut idx = Vec::with_capacity(n);
                            for v in items {
                                if v < 0.0 || v.fract() != 0.0 {
                                    return Err(ply_err(line, format!("bad vertex index {v}")));
                                }
                                idx.push(v as usize);
                            }
                            poly = Some(idx);
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            } else if let Some(poly) = poly {
                if poly.len() < 3 {
                    return Err(ply_err(reader.line(), "face needs at least 3 vertices"));
                }
                if let Some(&bad) = poly
                    .iter()
                    .find(|&&i| i >= vertices.len().max(count_of(&elements, "vertex")))
                {
                    return Err(ply_err(reader.line(), format!("face index {bad} out of range")));
                }
                polygons.push(poly);
            }
        }
    }
    Ok((vertices, polygons))
}

fn count_of(elements: &[Element], name: &str) -> usize {
    elements.iter().find(|e| e.name == name).map_or(0, |e| e.count)
}

trait ValueReader {
    fn start_record(&mut self) -> Result<(), MeshError>;
    fn value(&mut self, t: Scalar) -> Result<f64, MeshError>;
    fn line(&self) -> usize;
}

struct AsciiReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    tokens: Vec<&'a str>,
    cursor: usize,
    first_line: usize,
    current: usize,
}

impl<'a> AsciiReader<'a> {
    fn new(data: &'a [u8], header_lines: usize) -> Self {
        let text = std::str::from_utf8(data).unwrap_or("");
        Self {
            lines: text.lines().enumerate(),
            tokens: Vec::new(),
            cursor: 0,
            first_line: header_lines + 1,
            current: header_lines,
        }
    }
}

impl ValueReader for AsciiReader<'_> {
    fn start_record(&mut self) -> Result<(), MeshError> {
        loop {
            let (i, l) = self
                .lines
                .next()
                .ok_or_else(|| ply_err(self.current + 1, "unexpected end of data"))?;
            self.current = self.first_line + i;
            let t: Vec<&str> = l.split_whitespace().collect();
            if !t.is_empty() {
                self.tokens = t;
                self.cursor = 0;
                return Ok(());
            }
        }
    }

    fn value(&mut self, _t: Scalar) -> Result<f64, MeshError> {
        let tok = self
            .tokens
            .get(self.cursor)
            .ok_or_else(|| ply_err(self.current, "record has too few values"))?;
        self.cursor += 1;
        tok.parse()
            .map_err(|_| ply_err(self.current, format!("bad number '{tok}'")))
    }

    fn line(&self) -> usize {
        self.current
    }
}

struct BinaryReader<'a> {
    data: &'a [u8],
    pos: usize,
    big: bool,
    header_lines: usize,
}

impl ValueReader for BinaryReader<'_> {
    fn start_record(&mut self) -> Result<(), MeshError> {
        Ok(())
    }

    fn value(&mut self, t: Scalar) -> Result<f64, MeshError> {
        let n = t.size();
        if self.pos + n > self.data.len() {
            return Err(ply_err(
                self.header_lines + 1,
                format!("binary body truncated at byte {}", self.pos),
            ));
        }
        let v = t.read(&self.data[self.pos..], self.big);
        self.pos += n;
        Ok(v)
    }

    fn line(&self) -> usize {
        self.header_lines + 1
    }
}

/// Write `mesh` as OBJ (1-based indices).
pub fn write_obj(mesh: &TriangleMesh, mut out: impl Write) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(&mut out);
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn write_tmp(name: &str, bytes: &[u8]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        fs::write(&path, bytes).unwrap();
        (dir, path)
    }

    #[test]
    fn obj_single_triangle_either_winding() {
        for f in ["f 1 2 3", "f 1 3 2", "f -3 -2 -1"] {
            let text = format!("# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\n{f}\n");
            let (_d, p) = write_tmp("t.obj", text.as_bytes());
            let m = load_mesh(&p, MeshFormat::Obj).unwrap();
            assert_eq!(m.num_faces(), 1);
            let n = m.face_normals()[0];
            assert_abs_diff_eq!(n.z, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn obj_quad_is_fan_triangulated() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3 4/4/4\n";
        let (_d, p) = write_tmp("q.obj", text.as_bytes());
        let m = load_mesh(&p, MeshFormat::Obj).unwrap();
        assert_eq!(m.num_faces(), 2);
        assert_abs_diff_eq!(m.total_area(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn obj_errors_carry_line_numbers() {
        let (_d, p) = write_tmp("bad.obj", b"v 0 0 0\nv 1 0 0\nv 0 x 0\n");
        match load_mesh(&p, MeshFormat::Obj) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let (_d, p) = write_tmp("bad2.obj", b"v 0 0 0\nf 1 2 3\n");
        assert!(matches!(
            load_mesh(&p, MeshFormat::Obj),
            Err(MeshError::Parse { line: 2, .. })
        ));
        let (_d, p) = write_tmp("empty.obj", b"# nothing\n");
        assert!(matches!(load_mesh(&p, MeshFormat::Obj), Err(MeshError::Empty)));
    }

    fn grid_ply(n: usize, binary: bool) -> Vec<u8> {
        let mut verts = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                verts.push([i as f32 * 0.5, j as f32 * 0.5, 0.0f32]);
            }
        }
        let mut quads = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let a = (j * (n + 1) + i) as i32;
                quads.push([a, a + 1, a + n as i32 + 2, a + n as i32 + 1]);
            }
        }
        let fmt = if binary { "binary_little_endian" } else { "ascii" };
        let mut out = format!(
            "ply\nformat {fmt} 1.0\ncomment grid\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            verts.len(),
            quads.len()
        )
        .into_bytes();
        if binary {
            for v in &verts {
                for c in v {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            for q in &quads {
                out.push(4);
                for c in q {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        } else {
            for v in &verts {
                out.extend(format!("{} {} {}\n", v[0], v[1], v[2]).bytes());
            }
            for q in &quads {
                out.extend(format!("4 {} {} {} {}\n", q[0], q[1], q[2], q[3]).bytes());
            }
        }
        out
    }

    #[test]
    fn ply_grid_area_ascii_and_binary() {
        for binary in [false, true] {
            let (_d, p) = write_tmp("g.ply", &grid_ply(10, binary));
            let m = load_mesh(&p, MeshFormat::Ply).unwrap();
            assert_eq!(m.num_faces(), 200);
            assert_abs_diff_eq!(m.total_area(), 25.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn ply_truncated_body_is_an_error() {
        let mut bytes = grid_ply(2, true);
        bytes.truncate(bytes.len() - 3);
        let (_d, p) = write_tmp("t.ply", &bytes);
        assert!(matches!(load_mesh(&p, MeshFormat::Ply), Err(MeshError::Parse { .. })));
        let (_d, p) = write_tmp(
            "a.ply",
            b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\nabc\n",
        );
        assert!(matches!(
            load_mesh(&p, MeshFormat::Ply),
            Err(MeshError::Parse { line: 6, .. })
        ));
    }

    #[test]
    fn obj_export_roundtrip() {
        let spec = super::super::TerrainSpec::grid(4, 1.0);
        let m = super::super::generate_terrain(&spec).unwrap();
        let mut buf = Vec::new();
        write_obj(&m, &mut buf).unwrap();
        let (_d, p) = write_tmp("e.obj", &buf);
        let back = load_mesh(&p, MeshFormat::Obj).unwrap();
        assert_eq!(back.faces(), m.faces());
        assert_eq!(back.num_vertices(), m.num_vertices());
    }
}
