use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Mesh, MeshError, Result};
use crate::rotmath::Vec3;

/// Supported ASCII mesh formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Off,
    StlAscii,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        match ext.as_str() {
            "obj" => Ok(Self::Obj),
            "off" => Ok(Self::Off),
            "stl" => Ok(Self::StlAscii),
            other => Err(MeshError::UnsupportedFormat(other.to_string())),
        }
    }
}

/// A parsed mesh plus the number of degenerate faces that were dropped.
#[derive(Debug, Clone)]
pub struct ParsedMesh {
    pub mesh: Mesh,
    pub dropped_faces: usize,
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("invalid number {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite number {tok:?}")));
    }
    Ok(v)
}

fn parse_vec3<'a>(mut toks: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec3> {
    let mut v = [0.0; 3];
    for c in v.iter_mut() {
        let tok = toks
            .next()
            .ok_or_else(|| parse_err(line, "expected three coordinates"))?;
        *c = parse_f64(tok, line)?;
    }
    Ok(v)
}

/// Fan-triangulates a polygon.
fn fan(poly: &[usize], out: &mut Vec<[usize; 3]>) {
    for k in 1..poly.len() - 1 {
        out.push([poly[0], poly[k], poly[k + 1]]);
    }
}

/// Parses an ASCII mesh. File-provided normals are ignored; face normals
/// are recomputed from geometry.
pub fn parse_mesh(bytes: &[u8], format: MeshFormat) -> Result<ParsedMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        parse_err(line, "input is not valid UTF-8")
    })?;
    let (vertices, faces) = match format {
        MeshFormat::Obj => parse_obj(text)?,
        MeshFormat::Off => parse_off(text)?,
        MeshFormat::StlAscii => parse_stl(text)?,
    };
    let (mesh, dropped_faces) = Mesh::new("mesh", vertices, faces)?;
    Ok(ParsedMesh {
        mesh,
        dropped_faces,
    })
}

/// Reads a mesh file, picking the format from the extension and the name
/// from the file stem.
pub fn load_mesh(path: &Path) -> Result<ParsedMesh> {
    let format = MeshFormat::from_path(path)?;
    let bytes = std::fs::read(path)?;
    let mut parsed = parse_mesh(&bytes, format)?;
    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
        parsed.mesh = parsed.mesh.with_name(stem);
    }
    Ok(parsed)
}

fn parse_obj(text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => vertices.push(parse_vec3(toks, line)?),
            Some("f") => {
                let mut poly = Vec::new();
                for tok in toks {
                    let idx_tok = tok.split('/').next().unwrap_or("");
                    let idx: i64 = idx_tok
                        .parse()
                        .map_err(|_| parse_err(line, format!("invalid face index {tok:?}")))?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        return Err(parse_err(line, "face index 0 (OBJ indices are 1-based)"));
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(parse_err(
                            line,
                            format!("face index {idx} out of range ({} vertices)", vertices.len()),
                        ));
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(parse_err(line, "face needs at least three vertices"));
                }
                fan(&poly, &mut faces);
            }
            // vn, vt, o, g, s, usemtl, mtllib and blanks carry nothing we use
            _ => {}
        }
    }
    Ok((vertices, faces))
}

fn parse_off(text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    // (line number, tokens) of every non-empty, non-comment line
    let mut lines = text.lines().enumerate().filter_map(|(i, raw)| {
        let content = raw.split('#').next().unwrap_or("").trim();
        (!content.is_empty()).then(|| (i + 1, content.split_whitespace().collect::<Vec<_>>()))
    });

    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty OFF file"))?;
    if header[0] != "OFF" {
        return Err(parse_err(hline, format!("expected OFF header, found {:?}", header[0])));
    }
    let (cline, counts) = if header.len() > 1 {
        (hline, header[1..].to_vec())
    } else {
        lines
            .next()
            .ok_or_else(|| parse_err(hline + 1, "missing counts line"))?
    };
    if counts.len() < 2 {
        return Err(parse_err(cline, "counts line needs vertex and face counts"));
    }
    let parse_count = |tok: &str| {
        tok.parse::<usize>()
            .map_err(|_| parse_err(cline, format!("invalid count {tok:?}")))
    };
    let nv = parse_count(counts[0])?;
    let nf = parse_count(counts[1])?;

    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let (line, toks) = lines
            .next()
            .ok_or_else(|| parse_err(cline, format!("missing vertex {k}")))?;
        vertices.push(parse_vec3(toks.into_iter(), line)?);
    }
    let mut faces = Vec::with_capacity(nf);
    for k in 0..nf {
        let (line, toks) = lines
            .next()
            .ok_or_else(|| parse_err(cline, format!("missing face {k}")))?;
        let n: usize = toks[0]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid polygon size {:?}", toks[0])))?;
        if n < 3 || toks.len() < n + 1 {
            return Err(parse_err(line, "polygon needs at least three indices"));
        }
        let mut poly = Vec::with_capacity(n);
        for tok in &toks[1..=n] {
            let idx: usize = tok
                .parse()
                .map_err(|_| parse_err(line, format!("invalid index {tok:?}")))?;
            if idx >= nv {
                return Err(parse_err(line, format!("index {idx} out of range ({nv} vertices)")));
            }
            poly.push(idx);
        }
        // trailing tokens are per-face colors
        fan(&poly, &mut faces);
    }
    Ok((vertices, faces))
}

fn parse_stl(text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    // STL repeats shared vertices; merge bit-identical coordinates
    let mut index: HashMap<[u64; 3], usize> = HashMap::new();
    let mut current: Vec<usize> = Vec::new();
    let mut saw_solid = false;
    let mut in_facet = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("solid") => saw_solid = true,
            Some("facet") => {
                if !saw_solid {
                    return Err(parse_err(line, "facet before 'solid'"));
                }
                in_facet = true;
                current.clear();
            }
            Some("vertex") => {
                if !in_facet {
                    return Err(parse_err(line, "vertex outside facet"));
                }
                let v = parse_vec3(toks, line)?;
                let key = v.map(f64::to_bits);
                let id = *index.entry(key).or_insert_with(|| {
                    vertices.push(v);
                    vertices.len() - 1
                });
                current.push(id);
            }
            Some("endfacet") => {
                if current.len() < 3 {
                    return Err(parse_err(line, "facet has fewer than three vertices"));
                }
                fan(&current, &mut faces);
                in_facet = false;
            }
            Some("outer") | Some("endloop") | Some("endsolid") | None => {}
            Some(other) => {
                return Err(parse_err(line, format!("unexpected keyword {other:?}")));
            }
        }
    }
    if !saw_solid {
        return Err(parse_err(1, "missing 'solid' header"));
    }
    Ok((vertices, faces))
}

/// Serializes to OBJ. Coordinates use the shortest round-trip decimal form,
/// so parsing the output reproduces vertices bit-exactly.
pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "o {}", mesh.name());
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::norm3;

    const CUBE_OFF: &str = "OFF
# unit cube
8 6 12
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
4 0 3 2 1
4 4 5 6 7
4 0 1 5 4
4 2 3 7 6
4 1 2 6 5
4 3 0 4 7
";

    #[test]
    fn single_triangle_obj() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 -1\nf 1//1 2//1 3//1\n";
        let p = parse_mesh(src.as_bytes(), MeshFormat::Obj).unwrap();
        assert_eq!(p.mesh.faces().len(), 1);
        assert_eq!(p.mesh.face_normals()[0], [0.0, 0.0, 1.0]);
        assert_eq!(p.dropped_faces, 0);
    }

    #[test]
    fn off_cube_is_triangulated() {
        let p = parse_mesh(CUBE_OFF.as_bytes(), MeshFormat::Off).unwrap();
        assert_eq!(p.mesh.faces().len(), 12);
        assert_eq!(p.mesh.aabb().extents(), [1.0, 1.0, 1.0]);
        assert!((p.mesh.volume() - 1.0).abs() < 1e-12);
        for n in p.mesh.face_normals() {
            assert!((norm3(n) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn off_header_with_inline_counts() {
        let src = "OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2 255 0 0\n";
        let p = parse_mesh(src.as_bytes(), MeshFormat::Off).unwrap();
        assert_eq!(p.mesh.faces().len(), 1);
    }

    #[test]
    fn obj_zero_index_is_rejected() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n";
        match parse_mesh(src.as_bytes(), MeshFormat::Obj) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn obj_negative_indices_are_relative() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n";
        let p = parse_mesh(src.as_bytes(), MeshFormat::Obj).unwrap();
        assert_eq!(p.mesh.faces()[0], [0, 1, 2]);
    }

    #[test]
    fn bad_number_reports_line() {
        let src = "v 0 0 0\nv 1 x 0\n";
        match parse_mesh(src.as_bytes(), MeshFormat::Obj) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn obj_without_faces_is_empty() {
        let src = "v 0 0 0\nv 1 0 0\n";
        assert!(matches!(
            parse_mesh(src.as_bytes(), MeshFormat::Obj),
            Err(MeshError::EmptyMesh)
        ));
    }

    #[test]
    fn ascii_stl_merges_shared_vertices() {
        let src = "solid tri
facet normal 0 0 1
 outer loop
  vertex 0 0 0
  vertex 1 0 0
  vertex 0 1 0
 endloop
endfacet
facet normal 0 0 1
 outer loop
  vertex 1 0 0
  vertex 1 1 0
  vertex 0 1 0
 endloop
endfacet
endsolid tri
";
        let p = parse_mesh(src.as_bytes(), MeshFormat::StlAscii).unwrap();
        assert_eq!(p.mesh.vertices().len(), 4);
        assert_eq!(p.mesh.faces().len(), 2);
        assert!((p.mesh.surface_area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stl_without_header_fails() {
        let src = "facet normal 0 0 1\n";
        assert!(matches!(
            parse_mesh(src.as_bytes(), MeshFormat::StlAscii),
            Err(MeshError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn obj_round_trip_is_bit_exact() {
        let p = parse_mesh(CUBE_OFF.as_bytes(), MeshFormat::Off).unwrap();
        let m = p.mesh.transformed([0.1, -1.0 / 3.0, 1e-7], 0.057).unwrap();
        let text = write_obj(&m);
        let back = parse_mesh(text.as_bytes(), MeshFormat::Obj).unwrap().mesh;
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.faces(), m.faces());
    }
}
