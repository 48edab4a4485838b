//! On-disk formats.
//!
//! Arrays live in a directory next to an `arrays.json` manifest that records
//! each array's name, file, shape and dtype. Every binary file is raw
//! little-endian `float32` in row-major order with no header.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PointCloud, SdfSampleSet, TriangleMesh, Vec3};
use crate::error::{Error, Result};

pub const ARRAY_MANIFEST: &str = "arrays.json";
pub const DTYPE_F32: &str = "float32";

/// Columns of a packed SDF sample row: query xyz, sdf, surface mask, normal xyz.
pub const SDF_ROW: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArrayManifest {
    pub arrays: Vec<ArrayEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<Vec3>,
}

/// Directory of named float32 arrays.
pub struct ArrayStore {
    dir: PathBuf,
    pub manifest: ArrayManifest,
}

impl ArrayStore {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ArrayStore {
            dir,
            manifest: ArrayManifest::default(),
        })
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(ARRAY_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        Ok(ArrayStore { dir, manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn put(&mut self, name: &str, file: &str, shape: &[usize], data: &[f32]) -> Result<()> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "array {name}: shape {shape:?} but {} values",
                data.len()
            )));
        }
        write_f32(&self.dir.join(file), data)?;
        self.manifest.arrays.retain(|a| a.name != name);
        self.manifest.arrays.push(ArrayEntry {
            name: name.to_string(),
            file: file.to_string(),
            shape: shape.to_vec(),
            dtype: DTYPE_F32.to_string(),
        });
        Ok(())
    }

    /// Reads an array and checks its size against the recorded shape.
    pub fn get(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let entry = self
            .manifest
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::format(self.dir.join(ARRAY_MANIFEST), format!("no array {name}")))?;
        if entry.dtype != DTYPE_F32 {
            return Err(Error::format(
                self.dir.join(&entry.file),
                format!("unsupported dtype {}", entry.dtype),
            ));
        }
        let path = self.dir.join(&entry.file);
        let data = read_f32(&path)?;
        let expected: usize = entry.shape.iter().product();
        if expected != data.len() {
            return Err(Error::format(
                &path,
                format!("shape {:?} needs {expected} values, file has {}", entry.shape, data.len()),
            ));
        }
        Ok((entry.shape.clone(), data))
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.arrays.iter().any(|a| a.name == name)
    }

    pub fn finish(&self) -> Result<()> {
        let path = self.dir.join(ARRAY_MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn put_cloud(&mut self, name: &str, file: &str, cloud: &PointCloud) -> Result<()> {
        let pts = flatten(&cloud.points);
        self.put(name, file, &[cloud.len(), 3], &pts)?;
        if let Some(normals) = &cloud.normals {
            let stem = file.trim_end_matches(".bin");
            self.put(
                &format!("{name}_normals"),
                &format!("{stem}_normals.bin"),
                &[normals.len(), 3],
                &flatten(normals),
            )?;
        }
        self.manifest.frame_scale = Some(cloud.frame_scale);
        Ok(())
    }

    pub fn get_cloud(&self, name: &str) -> Result<PointCloud> {
        let (shape, data) = self.get(name)?;
        check_cols(&self.dir, name, &shape, 3)?;
        let points = unflatten(&data);
        let normals_name = format!("{name}_normals");
        let mut cloud = if self.has(&normals_name) {
            let (nshape, ndata) = self.get(&normals_name)?;
            check_cols(&self.dir, &normals_name, &nshape, 3)?;
            // float32 storage loses a little of the unit length
            let normals = unflatten(&ndata)
                .into_iter()
                .map(|n| super::vec3::normalize(n).unwrap_or(n))
                .collect();
            PointCloud::with_normals(points, normals)?
        } else {
            PointCloud::new(points)?
        };
        cloud.frame_scale = self.manifest.frame_scale.unwrap_or(1.0);
        Ok(cloud)
    }

    pub fn put_samples(&mut self, name: &str, file: &str, s: &SdfSampleSet) -> Result<()> {
        let mut packed = Vec::with_capacity(s.len() * SDF_ROW);
        for i in 0..s.len() {
            let q = s.queries[i];
            let n = s.normals[i];
            packed.extend_from_slice(&[
                q[0] as f32,
                q[1] as f32,
                q[2] as f32,
                s.sdf[i] as f32,
                if s.surface_mask[i] { 1.0 } else { 0.0 },
                n[0] as f32,
                n[1] as f32,
                n[2] as f32,
            ]);
        }
        self.put(name, file, &[s.len(), SDF_ROW], &packed)
    }

    pub fn get_samples(&self, name: &str) -> Result<SdfSampleSet> {
        let (shape, data) = self.get(name)?;
        check_cols(&self.dir, name, &shape, SDF_ROW)?;
        let mut s = SdfSampleSet {
            queries: Vec::with_capacity(shape[0]),
            sdf: Vec::with_capacity(shape[0]),
            surface_mask: Vec::with_capacity(shape[0]),
            normals: Vec::with_capacity(shape[0]),
        };
        for row in data.chunks(SDF_ROW) {
            s.queries.push([row[0] as f64, row[1] as f64, row[2] as f64]);
            s.sdf.push(row[3] as f64);
            let on = row[4] != 0.0;
            s.surface_mask.push(on);
            let n = [row[5] as f64, row[6] as f64, row[7] as f64];
            s.normals.push(if on {
                super::vec3::normalize(n).unwrap_or(n)
            } else {
                n
            });
        }
        Ok(s)
    }
}

fn check_cols(dir: &Path, name: &str, shape: &[usize], cols: usize) -> Result<()> {
    if shape.len() != 2 || shape[1] != cols {
        return Err(Error::format(
            dir.join(ARRAY_MANIFEST),
            format!("array {name} has shape {shape:?}, expected [n, {cols}]"),
        ));
    }
    Ok(())
}

pub fn flatten(v: &[Vec3]) -> Vec<f32> {
    v.iter().flatten().map(|&c| c as f32).collect()
}

pub fn unflatten(v: &[f32]) -> Vec<Vec3> {
    v.chunks_exact(3)
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect()
}

pub fn write_f32(path: &Path, data: &[f32]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(path, "length is not a multiple of 4 bytes"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    write_text(path, &s)
}

/// Reads vertices and faces; polygons are fan-triangulated, texture and
/// normal indices ignored.
pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it.take(3).map(str::parse).collect::<Result<_, _>>().map_err(
                    |e| Error::format(path, format!("line {}: {e}", lineno + 1)),
                )?;
                if c.len() != 3 {
                    return Err(Error::format(path, format!("line {}: short vertex", lineno + 1)));
                }
                vertices.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|e| {
                            Error::format(path, format!("line {}: {e}", lineno + 1))
                        })?;
                        let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        u32::try_from(resolved).map_err(|_| {
                            Error::format(path, format!("line {}: bad index {i}", lineno + 1))
                        })
                    })
                    .collect::<Result<_>>()?;
                for k in 1..idx.len().saturating_sub(1) {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// ASCII PLY with an optional per-vertex scalar named `value`.
pub fn write_ply(path: &Path, mesh: &TriangleMesh, scalars: Option<&[f64]>) -> Result<()> {
    if let Some(s) = scalars {
        if s.len() != mesh.vertices.len() {
            return Err(Error::Shape("one scalar per vertex required".into()));
        }
    }
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertices.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if scalars.is_some() {
        s.push_str("property float value\n");
    }
    let _ = writeln!(s, "element face {}", mesh.faces.len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, v) in mesh.vertices.iter().enumerate() {
        match scalars {
            Some(sc) => {
                let _ = writeln!(s, "{} {} {} {}", v[0], v[1], v[2], sc[i]);
            }
            None => {
                let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
            }
        }
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    write_text(path, &s)
}

/// ASCII PLY point cloud with normals when present.
pub fn write_cloud_ply(path: &Path, cloud: &PointCloud, scalars: Option<&[f64]>) -> Result<()> {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.normals.is_some() {
        s.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    if scalars.is_some() {
        s.push_str("property float value\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
        if let Some(n) = &cloud.normals {
            let _ = write!(s, " {} {} {}", n[i][0], n[i][1], n[i][2]);
        }
        if let Some(sc) = scalars {
            let _ = write!(s, " {}", sc[i]);
        }
        s.push('\n');
    }
    write_text(path, &s)
}

/// Reads ASCII PLY meshes: the first three vertex properties must be x, y, z.
pub fn read_ply(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::format(path, "missing ply magic"));
    }
    let mut n_vertices = 0usize;
    let mut n_faces = 0usize;
    let mut current = "";
    let mut vertex_props = Vec::new();
    loop {
        let line = lines
            .next()
            .ok_or_else(|| Error::format(path, "unterminated header"))?
            .trim();
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(Error::format(path, format!("unsupported PLY format {fmt}")));
            }
            ["element", "vertex", n] => {
                n_vertices = n.parse().map_err(|_| Error::format(path, "bad vertex count"))?;
                current = "vertex";
            }
            ["element", "face", n] => {
                n_faces = n.parse().map_err(|_| Error::format(path, "bad face count"))?;
                current = "face";
            }
            ["element", ..] => current = "other",
            ["property", _, name] if current == "vertex" => vertex_props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    if vertex_props.len() < 3 || vertex_props[..3] != ["x", "y", "z"] {
        return Err(Error::format(path, "vertex properties must start with x y z"));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::format(path, format!("bad number {s}")))
    };
    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let line = lines.next().ok_or_else(|| Error::format(path, "truncated vertices"))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 3 {
            return Err(Error::format(path, "short vertex row"));
        }
        vertices.push([parse(tok[0])?, parse(tok[1])?, parse(tok[2])?]);
    }
    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let line = lines.next().ok_or_else(|| Error::format(path, "truncated faces"))?;
        let idx: Vec<u32> = line
            .split_whitespace()
            .skip(1)
            .map(|t| t.parse().map_err(|_| Error::format(path, format!("bad index {t}"))))
            .collect::<Result<_>>()?;
        for k in 1..idx.len().saturating_sub(1) {
            faces.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    TriangleMesh::new(vertices, faces)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
