//! Triangle meshes, the OBJ subset reader, and exact signed distance to
//! watertight meshes via angle-weighted pseudonormals.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[f];
        let n = (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]));
        n.normalize()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        0.5 * (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a])).norm()
    }

    pub fn max_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Centers the bounding box at the origin and scales the largest vertex
    /// norm to 1.
    pub fn normalize_nocs(&mut self) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let center = 0.5 * (lo + hi);
        for v in self.vertices.iter_mut() {
            *v -= center;
        }
        let r = self.max_radius();
        if r > 0.0 {
            for v in self.vertices.iter_mut() {
                *v /= r;
            }
        }
    }

    /// Flips faces so normals point away from the vertex centroid. Only
    /// meaningful for star-shaped meshes such as the built-in solids.
    pub(crate) fn orient_outward(&mut self) {
        let centroid = self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64;
        for f in 0..self.faces.len() {
            let [a, b, c] = self.faces[f];
            let mid = (self.vertices[a] + self.vertices[b] + self.vertices[c]) / 3.0;
            if self.face_normal(f).dot(&(mid - centroid)) < 0.0 {
                self.faces[f] = [a, c, b];
            }
        }
    }
}

/// Reads `v` and `f` records from an OBJ file. Polygons are fan-triangulated,
/// texture/normal indices (`f 1/2/3`) and negative indices are accepted, and
/// every other record type is ignored. The result is normalized to NOCS.
pub fn load_obj(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text, path)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let coords: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| err(lineno, format!("bad vertex coordinate `{t}`: {e}"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(err(lineno, "vertex needs three finite coordinates".into()));
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let k: i64 = first
                            .parse()
                            .map_err(|e| err(lineno, format!("bad face index `{t}`: {e}")))?;
                        let n = vertices.len() as i64;
                        let resolved = if k > 0 { k - 1 } else { n + k };
                        if k == 0 || resolved < 0 || resolved >= n {
                            return Err(err(lineno, format!("face index {k} out of range")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err(lineno, "face needs at least three vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut mesh = TriMesh { vertices, faces };
    mesh.normalize_nocs();
    Ok(mesh)
}

pub fn write_obj(mesh: &TriMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in &mesh.faces {
        s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    s
}

/// Feature of a triangle that holds the closest point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Region {
    Face,
    Vertex(usize),
    Edge(usize, usize),
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision
/// Detection) with the feature containing it. Vertex/edge ids are local 0..3.
pub(crate) fn closest_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> (Vector3<f64>, Region) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Region::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Region::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + v * ab, Region::Edge(0, 1));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Region::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + w * ac, Region::Edge(0, 2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + w * (c - b), Region::Edge(1, 2));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Region::Face)
}

/// Signed distance to a closed, consistently oriented triangle mesh.
#[derive(Debug, Clone)]
pub struct MeshSdf {
    mesh: TriMesh,
    face_normals: Vec<Vector3<f64>>,
    vertex_normals: Vec<Vector3<f64>>,
    edge_normals: HashMap<(usize, usize), Vector3<f64>>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl MeshSdf {
    /// Fails unless every edge is shared by exactly two faces traversed in
    /// opposite directions.
    pub fn new(mesh: TriMesh) -> Result<Self> {
        if mesh.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in mesh.faces.iter().enumerate() {
            if mesh.face_area(fi) <= 1e-14 {
                return Err(Error::DegenerateMesh(format!("face {fi} has zero area")));
            }
            for k in 0..3 {
                let e = (f[k], f[(k + 1) % 3]);
                if directed.insert(e, fi).is_some() {
                    return Err(Error::NotWatertight(format!(
                        "directed edge {}-{} used twice (inconsistent orientation or non-manifold)",
                        e.0, e.1
                    )));
                }
            }
        }
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                return Err(Error::NotWatertight(format!("boundary edge {a}-{b}")));
            }
        }
        let face_normals: Vec<_> = (0..mesh.faces.len()).map(|f| mesh.face_normal(f)).collect();
        let mut vertex_normals = vec![Vector3::zeros(); mesh.vertices.len()];
        let mut edge_normals: HashMap<(usize, usize), Vector3<f64>> = HashMap::new();
        for (fi, f) in mesh.faces.iter().enumerate() {
            let n = face_normals[fi];
            for k in 0..3 {
                let (i, j, l) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                let u = (mesh.vertices[j] - mesh.vertices[i]).normalize();
                let v = (mesh.vertices[l] - mesh.vertices[i]).normalize();
                let angle = u.dot(&v).clamp(-1.0, 1.0).acos();
                vertex_normals[i] += angle * n;
                *edge_normals.entry(edge_key(i, j)).or_insert_with(Vector3::zeros) += n;
            }
        }
        Ok(MeshSdf { mesh, face_normals, vertex_normals, edge_normals })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    /// Unsigned distance and the pseudonormal of the closest feature.
    fn closest(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>, Vector3<f64>) {
        let mut best = (f64::INFINITY, Vector3::zeros(), Vector3::zeros());
        for (fi, f) in self.mesh.faces.iter().enumerate() {
            let v = [self.mesh.vertices[f[0]], self.mesh.vertices[f[1]], self.mesh.vertices[f[2]]];
            let (q, region) = closest_on_triangle(p, &v[0], &v[1], &v[2]);
            let d2 = (p - q).norm_squared();
            if d2 < best.0 {
                let normal = match region {
                    Region::Face => self.face_normals[fi],
                    Region::Vertex(k) => self.vertex_normals[f[k]],
                    Region::Edge(i, j) => self.edge_normals[&edge_key(f[i], f[j])],
                };
                best = (d2, q, normal);
            }
        }
        (best.0.sqrt(), best.1, best.2)
    }

    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        let (d, q, n) = self.closest(p);
        if (p - q).dot(&n) < 0.0 {
            -d
        } else {
            d
        }
    }
}
