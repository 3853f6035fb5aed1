//! Shape models: the five analytic solids and watertight OBJ meshes, with
//! exact signed distance, surface sampling, symmetry groups and features.

pub mod features;
pub mod mesh;
pub mod solid;
pub mod symmetry;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

pub use features::{FeatureField, FeatureTable, FEATURE_DIM};
pub use mesh::{load_obj, MeshSdf, TriMesh};
pub use solid::{ConvexPolytope, Revolution};
pub use symmetry::SymmetryGroup;

use crate::error::{Error, Result};

/// Angular steps used to mesh solids of revolution for rendering.
pub const REVOLUTION_SEGMENTS: usize = 96;
pub const CYLINDER_RADIUS: f64 = 0.6;
pub const CYLINDER_HALF_HEIGHT: f64 = 0.8;
pub const CONE_BASE_RADIUS: f64 = 0.6;
pub const CONE_HALF_HEIGHT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Cone,
    Cube,
    Cylinder,
    Icosahedron,
    Tetrahedron,
    Mesh,
}

impl ShapeKind {
    pub const ANALYTIC: [ShapeKind; 5] =
        [ShapeKind::Cone, ShapeKind::Cube, ShapeKind::Cylinder, ShapeKind::Icosahedron, ShapeKind::Tetrahedron];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Cone => "cone",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Icosahedron => "icosahedron",
            ShapeKind::Tetrahedron => "tetrahedron",
            ShapeKind::Mesh => "mesh",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ShapeKind::Cone => 0,
            ShapeKind::Cube => 1,
            ShapeKind::Cylinder => 2,
            ShapeKind::Icosahedron => 3,
            ShapeKind::Tetrahedron => 4,
            ShapeKind::Mesh => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ANALYTIC.into_iter().chain([ShapeKind::Mesh]).find(|k| k.code() == code)
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "cone" => ShapeKind::Cone,
            "cube" => ShapeKind::Cube,
            "cyl" | "cylinder" => ShapeKind::Cylinder,
            "ico" | "icosahedron" => ShapeKind::Icosahedron,
            "tet" | "tetra" | "tetrahedron" => ShapeKind::Tetrahedron,
            "mesh" => ShapeKind::Mesh,
            _ => return Err(Error::UnknownKind(s.to_string())),
        })
    }
}

#[derive(Debug, Clone)]
enum Body {
    Polytope(ConvexPolytope),
    Revolution(Revolution),
    Mesh(MeshSdf),
}

/// A point on the surface with the index of the face (or profile edge) it
/// lies on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub point: Vector3<f64>,
    pub part: usize,
}

/// A solid in normalized object coordinates (bounding radius 1).
#[derive(Debug, Clone)]
pub struct ShapeModel {
    kind: ShapeKind,
    body: Body,
    render_mesh: TriMesh,
    symmetry: Option<SymmetryGroup>,
}

impl ShapeModel {
    /// Built-in solid in its canonical orientation: cone and cylinder about
    /// z (cone apex up), cube axis-aligned, tetrahedron on alternate cube
    /// corners, icosahedron at cyclic permutations of `(0, ±1, ±φ)`.
    pub fn analytic(kind: ShapeKind) -> Result<Self> {
        let body = match kind {
            ShapeKind::Cube => {
                let h = 1.0 / 3f64.sqrt();
                let v = (0..8)
                    .map(|i| {
                        let s = |bit: usize| if i & bit != 0 { h } else { -h };
                        Vector3::new(s(4), s(2), s(1))
                    })
                    .collect();
                Body::Polytope(ConvexPolytope::from_vertices(v))
            }
            ShapeKind::Tetrahedron => {
                let v = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
                    .iter()
                    .map(|c| Vector3::from(*c) / 3f64.sqrt())
                    .collect();
                Body::Polytope(ConvexPolytope::from_vertices(v))
            }
            ShapeKind::Icosahedron => {
                let phi = (1.0 + 5f64.sqrt()) / 2.0;
                let norm = (1.0 + phi * phi).sqrt();
                let mut v = Vec::with_capacity(12);
                for a in [-1.0, 1.0] {
                    for b in [-phi, phi] {
                        v.push(Vector3::new(0.0, a, b) / norm);
                        v.push(Vector3::new(a, b, 0.0) / norm);
                        v.push(Vector3::new(b, 0.0, a) / norm);
                    }
                }
                Body::Polytope(ConvexPolytope::from_vertices(v))
            }
            ShapeKind::Cylinder => {
                let (r, h) = (CYLINDER_RADIUS, CYLINDER_HALF_HEIGHT);
                Body::Revolution(Revolution::new(vec![
                    Vector2::new(0.0, -h),
                    Vector2::new(r, -h),
                    Vector2::new(r, h),
                    Vector2::new(0.0, h),
                ]))
            }
            ShapeKind::Cone => {
                let (r, h) = (CONE_BASE_RADIUS, CONE_HALF_HEIGHT);
                Body::Revolution(Revolution::new(vec![
                    Vector2::new(0.0, -h),
                    Vector2::new(r, -h),
                    Vector2::new(0.0, h),
                ]))
            }
            ShapeKind::Mesh => return Err(Error::UnknownKind("mesh (load it from an OBJ file)".into())),
        };
        let render_mesh = match &body {
            Body::Polytope(p) => p.mesh().clone(),
            Body::Revolution(r) => r.mesh(REVOLUTION_SEGMENTS),
            Body::Mesh(m) => m.mesh().clone(),
        };
        let symmetry = Some(match kind {
            ShapeKind::Cone => SymmetryGroup::cone(),
            ShapeKind::Cube => SymmetryGroup::octahedral(),
            ShapeKind::Cylinder => SymmetryGroup::cylinder(),
            ShapeKind::Icosahedron => SymmetryGroup::icosahedral(),
            ShapeKind::Tetrahedron => SymmetryGroup::tetrahedral(),
            ShapeKind::Mesh => unreachable!(),
        });
        Ok(ShapeModel { kind, body, render_mesh, symmetry })
    }

    /// Normalizes `mesh` to NOCS; fails unless it is closed and consistently
    /// oriented.
    pub fn from_mesh(mut mesh: TriMesh) -> Result<Self> {
        mesh.normalize_nocs();
        let sdf = MeshSdf::new(mesh.clone())?;
        Ok(ShapeModel { kind: ShapeKind::Mesh, body: Body::Mesh(sdf), render_mesh: mesh, symmetry: None })
    }

    pub fn from_obj(path: &Path) -> Result<Self> {
        Self::from_mesh(load_obj(path)?)
    }

    /// Analytic kind by name, or a mesh when `spec` names an `.obj` file.
    pub fn from_spec(spec: &str) -> Result<Self> {
        if spec.to_ascii_lowercase().ends_with(".obj") {
            Self::from_obj(Path::new(spec))
        } else {
            Self::analytic(spec.parse()?)
        }
    }

    pub fn with_symmetry(mut self, group: SymmetryGroup) -> Self {
        self.symmetry = Some(group);
        self
    }

    pub fn kind(&self) -> ShapeKind {
        self.kind
    }

    pub fn render_mesh(&self) -> &TriMesh {
        &self.render_mesh
    }

    pub fn bounding_radius(&self) -> f64 {
        self.render_mesh.max_radius()
    }

    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        match &self.body {
            Body::Polytope(b) => b.sdf(p),
            Body::Revolution(b) => b.sdf(p),
            Body::Mesh(b) => b.sdf(p),
        }
    }

    /// Moves a point of the render mesh onto the exact surface. Only solids
    /// of revolution differ from their render mesh.
    pub fn snap_to_surface(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match &self.body {
            Body::Revolution(b) => b.project(p),
            _ => *p,
        }
    }

    /// Area-uniform surface samples.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<SurfacePoint> {
        if let Body::Revolution(b) = &self.body {
            return (0..n)
                .map(|_| {
                    let (point, part) = b.sample(rng);
                    SurfacePoint { point, part }
                })
                .collect();
        }
        let mesh = &self.render_mesh;
        let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
        let pick = WeightedIndex::new(&areas).expect("mesh has positive area");
        (0..n)
            .map(|_| {
                let f = pick.sample(rng);
                let [a, b, c] = mesh.faces[f];
                let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                let va = mesh.vertices[a];
                let point = va + u * (mesh.vertices[b] - va) + v * (mesh.vertices[c] - va);
                let part = match &self.body {
                    Body::Polytope(p) => p.face_plane(f),
                    _ => f,
                };
                SurfacePoint { point, part }
            })
            .collect()
    }

    /// Number of distinct `part` indices produced by `sample_surface`.
    pub fn part_count(&self) -> usize {
        match &self.body {
            Body::Polytope(p) => p.plane_count(),
            Body::Revolution(r) => r.profile().len() - 1,
            Body::Mesh(m) => m.mesh().faces.len(),
        }
    }

    pub fn symmetry_group(&self) -> Result<SymmetryGroup> {
        self.symmetry.clone().ok_or(Error::NoGroupAvailable)
    }

    pub fn feature_field(&self) -> Result<FeatureField> {
        Ok(FeatureField::oracle(&self.symmetry_group()?))
    }
}
