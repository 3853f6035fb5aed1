//! Exact signed distance for convex polytopes and solids of revolution.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::Rng;

use super::mesh::{closest_on_triangle, TriMesh};

/// Convex polytope given by its hull mesh and supporting planes.
#[derive(Debug, Clone)]
pub struct ConvexPolytope {
    mesh: TriMesh,
    /// Outward unit normal and offset: `n . x <= d` inside.
    planes: Vec<(Vector3<f64>, f64)>,
    /// Plane index of each mesh triangle.
    face_planes: Vec<usize>,
}

impl ConvexPolytope {
    /// Builds the convex hull of a small point set. Coplanar hull faces are
    /// fan-triangulated around their centroid ordering.
    pub fn from_vertices(vertices: Vec<Vector3<f64>>) -> Self {
        let n = vertices.len();
        let eps = 1e-9;
        let mut planes: Vec<(Vector3<f64>, f64)> = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let normal = (vertices[j] - vertices[i]).cross(&(vertices[k] - vertices[i]));
                    if normal.norm() < eps {
                        continue;
                    }
                    let mut normal = normal.normalize();
                    let mut d = normal.dot(&vertices[i]);
                    let above = vertices.iter().filter(|v| normal.dot(v) > d + eps).count();
                    let below = vertices.iter().filter(|v| normal.dot(v) < d - eps).count();
                    if above > 0 && below > 0 {
                        continue;
                    }
                    if above > 0 {
                        normal = -normal;
                        d = -d;
                    }
                    if !planes.iter().any(|(m, e)| (m - normal).norm() < 1e-7 && (e - d).abs() < 1e-7) {
                        planes.push((normal, d));
                    }
                }
            }
        }
        let mut faces = Vec::new();
        let mut face_planes = Vec::new();
        for (pi, (normal, d)) in planes.iter().enumerate() {
            let on: Vec<usize> = (0..n).filter(|&v| (normal.dot(&vertices[v]) - d).abs() < eps).collect();
            let center = on.iter().map(|&v| vertices[v]).sum::<Vector3<f64>>() / on.len() as f64;
            let u = (vertices[on[0]] - center).normalize();
            let w = normal.cross(&u);
            let mut ordered = on.clone();
            ordered.sort_by(|&a, &b| {
                let pa = vertices[a] - center;
                let pb = vertices[b] - center;
                pa.dot(&w).atan2(pa.dot(&u)).total_cmp(&pb.dot(&w).atan2(pb.dot(&u)))
            });
            for t in 1..ordered.len() - 1 {
                faces.push([ordered[0], ordered[t], ordered[t + 1]]);
                face_planes.push(pi);
            }
        }
        let mut mesh = TriMesh { vertices, faces };
        mesh.orient_outward();
        ConvexPolytope { mesh, planes, face_planes }
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn plane_count(&self) -> usize {
        self.planes.len()
    }

    pub fn face_plane(&self, face: usize) -> usize {
        self.face_planes[face]
    }

    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        let mut plane_dist = [0.0f64; 32];
        let mut inside = f64::NEG_INFINITY;
        for (i, (n, d)) in self.planes.iter().enumerate() {
            let s = n.dot(p) - d;
            if i < plane_dist.len() {
                plane_dist[i] = s;
            }
            inside = inside.max(s);
        }
        if inside <= 0.0 {
            return inside;
        }
        // the closest point lies on a face whose plane separates it from p
        let mut best = f64::INFINITY;
        for (fi, f) in self.mesh.faces.iter().enumerate() {
            let pi = self.face_planes[fi];
            if pi < plane_dist.len() && plane_dist[pi] <= 0.0 {
                continue;
            }
            let v = &self.mesh.vertices;
            let (q, _) = closest_on_triangle(p, &v[f[0]], &v[f[1]], &v[f[2]]);
            best = best.min((p - q).norm_squared());
        }
        best.sqrt()
    }
}

/// Solid of revolution about the z axis. The meridian profile is a simple
/// polygon in the `(r, z)` half plane, listed counter-clockwise, whose first
/// and last vertices lie on the axis.
#[derive(Debug, Clone)]
pub struct Revolution {
    profile: Vec<Vector2<f64>>,
}

impl Revolution {
    pub fn new(profile: Vec<Vector2<f64>>) -> Self {
        assert!(profile.len() >= 3);
        assert!(profile[0].x == 0.0 && profile[profile.len() - 1].x == 0.0);
        Revolution { profile }
    }

    pub fn profile(&self) -> &[Vector2<f64>] {
        &self.profile
    }

    /// Edges of the profile off the axis, i.e. the parts that sweep a surface.
    pub fn surface_edges(&self) -> impl Iterator<Item = (Vector2<f64>, Vector2<f64>)> + '_ {
        self.profile.windows(2).map(|w| (w[0], w[1]))
    }

    fn inside_2d(&self, q: &Vector2<f64>) -> bool {
        // even-odd test on the polygon closed along the axis
        let n = self.profile.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.profile[i];
            let b = self.profile[(i + 1) % n];
            if (a.y > q.y) != (b.y > q.y) {
                let x = a.x + (q.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if q.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        let q = Vector2::new((p.x * p.x + p.y * p.y).sqrt(), p.z);
        let mut best = f64::INFINITY;
        for (a, b) in self.surface_edges() {
            let ab = b - a;
            let t = ((q - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            best = best.min((q - (a + t * ab)).norm_squared());
        }
        let d = best.sqrt();
        if self.inside_2d(&q) {
            -d
        } else {
            d
        }
    }

    /// Closest point on the surface, keeping the azimuth of `p`.
    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let rho = (p.x * p.x + p.y * p.y).sqrt();
        let q = Vector2::new(rho, p.z);
        let mut best = (f64::INFINITY, q);
        for (a, b) in self.surface_edges() {
            let ab = b - a;
            let t = ((q - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            let c = a + t * ab;
            let d = (q - c).norm_squared();
            if d < best.0 {
                best = (d, c);
            }
        }
        let c = best.1;
        let (cos, sin) = if rho > 0.0 { (p.x / rho, p.y / rho) } else { (1.0, 0.0) };
        Vector3::new(c.x * cos, c.x * sin, c.y)
    }

    pub fn surface_area(&self) -> f64 {
        self.surface_edges().map(|(a, b)| PI * (a.x + b.x) * (b - a).norm()).sum()
    }

    /// Area-weighted point on the swept surface; returns the point and the
    /// index of the profile edge it came from.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vector3<f64>, usize) {
        let areas: Vec<f64> = self.surface_edges().map(|(a, b)| PI * (a.x + b.x) * (b - a).norm()).collect();
        let total: f64 = areas.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut edge = areas.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if u < *a {
                edge = i;
                break;
            }
            u -= a;
        }
        let (a, b) = self.surface_edges().nth(edge).unwrap();
        // position along the edge with density proportional to the radius
        let s = rng.gen::<f64>();
        let t = if (b.x - a.x).abs() < 1e-15 {
            s
        } else {
            let (r0, r1) = (a.x, b.x);
            // solve r0 t + (r1 - r0) t^2 / 2 = s (r0 + r1) / 2
            let qa = 0.5 * (r1 - r0);
            let qc = -0.5 * s * (r0 + r1);
            (-r0 + (r0 * r0 - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
        };
        let m = a + t.clamp(0.0, 1.0) * (b - a);
        let angle = rng.gen::<f64>() * 2.0 * PI;
        (Vector3::new(m.x * angle.cos(), m.x * angle.sin(), m.y), edge)
    }

    /// Triangulates the solid with `segments` steps around the axis.
    pub fn mesh(&self, segments: usize) -> TriMesh {
        let mut vertices = Vec::new();
        let mut rings: Vec<Vec<usize>> = Vec::new();
        for p in &self.profile {
            if p.x == 0.0 {
                vertices.push(Vector3::new(0.0, 0.0, p.y));
                rings.push(vec![vertices.len() - 1; segments]);
            } else {
                let start = vertices.len();
                for s in 0..segments {
                    let a = 2.0 * PI * s as f64 / segments as f64;
                    vertices.push(Vector3::new(p.x * a.cos(), p.x * a.sin(), p.y));
                }
                rings.push((start..start + segments).collect());
            }
        }
        let mut faces = Vec::new();
        for w in rings.windows(2) {
            let (lo, hi) = (&w[0], &w[1]);
            for s in 0..segments {
                let t = (s + 1) % segments;
                let quad = [lo[s], lo[t], hi[t], hi[s]];
                if quad[0] != quad[1] {
                    faces.push([quad[0], quad[1], quad[2]]);
                }
                if quad[2] != quad[3] {
                    faces.push([quad[0], quad[2], quad[3]]);
                }
            }
        }
        // Profile runs counter-clockwise in (r, z); make normals point outward.
        let mut mesh = TriMesh { vertices, faces };
        let probe = mesh.faces[0];
        let n = mesh.face_normal(0);
        let mid = (mesh.vertices[probe[0]] + mesh.vertices[probe[1]] + mesh.vertices[probe[2]]) / 3.0;
        if self.sdf(&(mid + 1e-3 * n)) < self.sdf(&(mid - 1e-3 * n)) {
            for f in mesh.faces.iter_mut() {
                f.swap(1, 2);
            }
        }
        mesh
    }
}
