//! ASCII point cloud and mesh formats: XYZ, OFF and PLY.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::cloud::{Point3, PointCloud, TriangleMesh};
use crate::error::{Error, Result};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("invalid number {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid integer {tok:?}")))
}

/// Reads one point per line, three whitespace-separated numbers. Blank lines are skipped.
pub fn read_xyz<R: Read>(reader: R) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(
                lineno,
                format!("expected 3 coordinates, found {}", toks.len()),
            ));
        }
        points.push([
            parse_f64(toks[0], lineno)?,
            parse_f64(toks[1], lineno)?,
            parse_f64(toks[2], lineno)?,
        ]);
    }
    PointCloud::new(points)
}

pub fn read_xyz_file(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_xyz(fs::File::open(path)?)
}

/// Writes `x y z\n` per point using the shortest exact decimal form.
pub fn write_xyz<W: Write>(mut writer: W, cloud: &PointCloud) -> Result<()> {
    for p in cloud.points() {
        writeln!(writer, "{} {} {}", p[0], p[1], p[2])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_xyz_file(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let f = fs::File::create(path)?;
    write_xyz(std::io::BufWriter::new(f), cloud)
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines<R: Read>(reader: R) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if !body.is_empty() {
            out.push((i + 1, body.to_string()));
        }
    }
    Ok(out)
}

fn parse_face(toks: &[&str], lineno: usize) -> Result<[usize; 3]> {
    let count = parse_usize(toks.first().copied().unwrap_or(""), lineno)?;
    if count != 3 {
        return Err(parse_err(
            lineno,
            format!("only triangles are supported, face has {count} vertices"),
        ));
    }
    if toks.len() < 4 {
        return Err(parse_err(lineno, "face line has fewer than 3 indices"));
    }
    Ok([
        parse_usize(toks[1], lineno)?,
        parse_usize(toks[2], lineno)?,
        parse_usize(toks[3], lineno)?,
    ])
}

fn build_mesh(
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
    lineno: usize,
) -> Result<TriangleMesh> {
    TriangleMesh::new(vertices, faces).map_err(|e| parse_err(lineno, e.to_string()))
}

/// Reads an ASCII OFF triangle mesh.
pub fn read_off<R: Read>(reader: R) -> Result<TriangleMesh> {
    let lines = content_lines(reader)?;
    let mut it = lines.iter();
    let (hline, header) = it.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut head_toks = header.split_whitespace();
    if head_toks.next() != Some("OFF") {
        return Err(parse_err(*hline, "missing OFF header"));
    }
    // Counts may share the header line ("OFF 8 12 0").
    let rest: Vec<&str> = head_toks.collect();
    let (count_line, counts): (usize, Vec<&str>) = if rest.is_empty() {
        let (l, s) = it
            .next()
            .ok_or_else(|| parse_err(*hline + 1, "missing counts line"))?;
        (*l, s.split_whitespace().collect())
    } else {
        (*hline, rest)
    };
    if counts.len() < 2 {
        return Err(parse_err(
            count_line,
            "counts line needs vertex and face counts",
        ));
    }
    let nv = parse_usize(counts[0], count_line)?;
    let nf = parse_usize(counts[1], count_line)?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, s) = it.next().ok_or_else(|| {
            parse_err(
                count_line,
                format!("expected {nv} vertices, found {}", vertices.len()),
            )
        })?;
        let toks: Vec<&str> = s.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(*l, "vertex line needs 3 coordinates"));
        }
        vertices.push([
            parse_f64(toks[0], *l)?,
            parse_f64(toks[1], *l)?,
            parse_f64(toks[2], *l)?,
        ]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, s) = it.next().ok_or_else(|| {
            parse_err(
                count_line,
                format!("expected {nf} faces, found {}", faces.len()),
            )
        })?;
        let toks: Vec<&str> = s.split_whitespace().collect();
        faces.push(parse_face(&toks, *l)?);
    }
    if let Some((l, _)) = it.next() {
        return Err(parse_err(
            *l,
            format!("unexpected data after {nf} faces declared on line {count_line}"),
        ));
    }
    build_mesh(vertices, faces, count_line)
}

pub fn read_off_file(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    read_off(fs::File::open(path)?)
}

pub fn write_off<W: Write>(mut writer: W, mesh: &TriangleMesh) -> Result<()> {
    writeln!(writer, "OFF")?;
    writeln!(writer, "{} {} 0", mesh.vertices().len(), mesh.faces().len())?;
    for v in mesh.vertices() {
        writeln!(writer, "{} {} {}", v[0], v[1], v[2])?;
    }
    for f in mesh.faces() {
        writeln!(writer, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    writer.flush()?;
    Ok(())
}

/// Vertices and optional triangle faces from an ASCII PLY file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyData {
    pub vertices: PointCloud,
    pub faces: Vec<[usize; 3]>,
}

impl PlyData {
    pub fn into_mesh(self) -> Result<TriangleMesh> {
        TriangleMesh::new(self.vertices.into_points(), self.faces)
    }
}

/// Reads an ASCII PLY file. Vertex elements must carry `x`, `y` and `z`
/// properties; other scalar vertex properties are ignored.
pub fn read_ply_ascii<R: Read>(reader: R) -> Result<PlyData> {
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        lines.push((i + 1, line?.trim().to_string()));
    }
    let mut it = lines.into_iter().filter(|(_, s)| !s.is_empty());
    match it.next() {
        Some((_, s)) if s == "ply" => {}
        Some((l, _)) => return Err(parse_err(l, "missing ply magic")),
        None => return Err(parse_err(1, "empty file")),
    }

    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
        line: usize,
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut ended = false;
    for (l, s) in it.by_ref() {
        let toks: Vec<&str> = s.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(parse_err(l, "only ascii PLY is supported"));
                }
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                if toks.len() != 3 {
                    return Err(parse_err(l, "malformed element line"));
                }
                elements.push(Element {
                    name: toks[1].to_string(),
                    count: parse_usize(toks[2], l)?,
                    props: Vec::new(),
                    line: l,
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(l, "property before any element"))?;
                let name = toks.last().copied().unwrap_or("");
                el.props.push(name.to_string());
            }
            Some("end_header") => {
                ended = true;
                break;
            }
            _ => return Err(parse_err(l, format!("unknown header line {s:?}"))),
        }
    }
    if !ended {
        return Err(parse_err(0, "missing end_header"));
    }

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut last_line = 0;
    for el in &elements {
        match el.name.as_str() {
            "vertex" => {
                let pos = |axis: &str| {
                    el.props.iter().position(|p| p == axis).ok_or_else(|| {
                        parse_err(el.line, format!("vertex element lacks property {axis}"))
                    })
                };
                let (xi, yi, zi) = (pos("x")?, pos("y")?, pos("z")?);
                for _ in 0..el.count {
                    let (l, s) = it.next().ok_or_else(|| {
                        parse_err(el.line, format!("expected {} vertices", el.count))
                    })?;
                    let toks: Vec<&str> = s.split_whitespace().collect();
                    if toks.len() != el.props.len() {
                        return Err(parse_err(
                            l,
                            format!("expected {} values, found {}", el.props.len(), toks.len()),
                        ));
                    }
                    vertices.push([
                        parse_f64(toks[xi], l)?,
                        parse_f64(toks[yi], l)?,
                        parse_f64(toks[zi], l)?,
                    ]);
                    last_line = l;
                }
            }
            "face" => {
                for _ in 0..el.count {
                    let (l, s) = it.next().ok_or_else(|| {
                        parse_err(el.line, format!("expected {} faces", el.count))
                    })?;
                    let toks: Vec<&str> = s.split_whitespace().collect();
                    faces.push(parse_face(&toks, l)?);
                    last_line = l;
                }
            }
            other => {
                for _ in 0..el.count {
                    it.next()
                        .ok_or_else(|| parse_err(el.line, format!("truncated element {other}")))?;
                }
            }
        }
    }
    if let Some((l, _)) = it.next() {
        return Err(parse_err(l, "unexpected data after declared elements"));
    }
    if let Some(bad) = faces.iter().flatten().find(|&&i| i >= vertices.len()) {
        return Err(parse_err(
            last_line,
            format!("face index {bad} out of range"),
        ));
    }
    Ok(PlyData {
        vertices: PointCloud::new(vertices)?,
        faces,
    })
}

pub fn read_ply_file(path: impl AsRef<Path>) -> Result<PlyData> {
    read_ply_ascii(fs::File::open(path)?)
}

/// Reads a point cloud from `.xyz`, `.ply` or `.off` (vertices only).
pub fn read_cloud_file(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("ply") => Ok(read_ply_file(path)?.vertices),
        Some("off") => PointCloud::new(read_off_file(path)?.vertices().to_vec()),
        _ => read_xyz_file(path),
    }
}

/// Reads a triangle mesh from `.off` or `.ply`.
pub fn read_mesh_file(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("ply") => read_ply_file(path)?.into_mesh(),
        _ => read_off_file(path),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}
