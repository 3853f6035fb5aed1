//! Proper rotation symmetry groups of the built-in solids and user-supplied
//! group files.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::rotation::{geodesic_distance, Rotation};

/// Tolerance used when deduplicating group elements.
pub const CLOSURE_TOLERANCE: f64 = 1e-6;

/// A continuous rotational symmetry about `axis` (through the origin).
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousAxis {
    pub axis: Vector3<f64>,
    /// Half-turn that maps the axis onto its negation, if the solid has one.
    pub flip: Option<Rotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryGroup {
    pub discrete_elements: Vec<Rotation>,
    pub continuous_axes: Vec<ContinuousAxis>,
}

impl SymmetryGroup {
    pub fn trivial() -> Self {
        SymmetryGroup { discrete_elements: vec![Rotation::IDENTITY], continuous_axes: Vec::new() }
    }

    /// Finite group generated by `generators`.
    pub fn generated_by(generators: &[Rotation]) -> Self {
        SymmetryGroup { discrete_elements: closure(generators), continuous_axes: Vec::new() }
    }

    pub fn tetrahedral() -> Self {
        let d = Vector3::new(1.0, 1.0, 1.0);
        Self::generated_by(&[
            Rotation::from_axis_angle(d, 2.0 * PI / 3.0),
            Rotation::from_axis_angle(Vector3::z(), PI),
        ])
    }

    pub fn octahedral() -> Self {
        Self::generated_by(&[
            Rotation::from_axis_angle(Vector3::z(), PI / 2.0),
            Rotation::from_axis_angle(Vector3::new(1.0, 1.0, 1.0), 2.0 * PI / 3.0),
        ])
    }

    /// Rotations of the icosahedron with vertices at cyclic permutations of
    /// `(0, ±1, ±φ)`.
    pub fn icosahedral() -> Self {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        Self::generated_by(&[
            Rotation::from_axis_angle(Vector3::new(0.0, 1.0, phi), 2.0 * PI / 5.0),
            Rotation::from_axis_angle(Vector3::new(1.0, 1.0, 1.0), 2.0 * PI / 3.0),
        ])
    }

    /// Full rotations about z.
    pub fn cone() -> Self {
        SymmetryGroup {
            discrete_elements: vec![Rotation::IDENTITY],
            continuous_axes: vec![ContinuousAxis { axis: Vector3::z(), flip: None }],
        }
    }

    /// Rotations about z plus the half-turn about x.
    pub fn cylinder() -> Self {
        let flip = Rotation::from_axis_angle(Vector3::x(), PI);
        SymmetryGroup {
            discrete_elements: vec![Rotation::IDENTITY, flip],
            continuous_axes: vec![ContinuousAxis { axis: Vector3::z(), flip: Some(flip) }],
        }
    }

    /// Reads one quaternion `w x y z` per line; `#` starts a comment. The
    /// listed rotations are closed under composition and the identity added.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut generators = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("bad number {t:?}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != 4 {
                return Err(parse_err(format!("expected 4 quaternion components, found {}", vals.len())));
            }
            let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 1e-12) {
                return Err(parse_err("zero quaternion".into()));
            }
            generators.push(Rotation::from_quat(vals[0], vals[1], vals[2], vals[3]));
        }
        let group = Self::generated_by(&generators);
        if group.discrete_elements.len() > 10_000 {
            return Err(Error::Config(format!("{}: rotations do not generate a finite group", path.display())));
        }
        Ok(group)
    }

    pub fn order(&self) -> Option<usize> {
        self.continuous_axes.is_empty().then_some(self.discrete_elements.len())
    }

    pub fn is_continuous(&self) -> bool {
        !self.continuous_axes.is_empty()
    }

    /// All elements, with continuous axes sampled every `step` radians.
    pub fn discretized(&self, step: f64) -> Vec<Rotation> {
        let mut out = Vec::new();
        match self.continuous_axes.first() {
            None => out.extend_from_slice(&self.discrete_elements),
            Some(ax) => {
                let n = (2.0 * PI / step).round().max(1.0) as usize;
                for g in &self.discrete_elements {
                    for k in 0..n {
                        let spin = Rotation::from_axis_angle(ax.axis, k as f64 * 2.0 * PI / n as f64);
                        out.push(spin * *g);
                    }
                }
            }
        }
        out
    }

    /// Rotations `g·R_gt` equivalent to `r_gt`, with continuous symmetries
    /// sampled at 1°.
    pub fn equivalent_rotations(&self, r_gt: &Rotation) -> Vec<Rotation> {
        self.discretized(PI / 180.0).into_iter().map(|g| g * *r_gt).collect()
    }

    /// Distance from `r` to the nearest `g·R_gt`, exact for continuous axes.
    pub fn distance_to_orbit(&self, r: &Rotation, r_gt: &Rotation) -> f64 {
        match self.continuous_axes.first() {
            None => self
                .discrete_elements
                .iter()
                .map(|g| geodesic_distance(r, &(*g * *r_gt)))
                .fold(f64::INFINITY, f64::min),
            Some(ax) => self
                .discrete_elements
                .iter()
                .map(|g| distance_to_axis_circle(&(*r * (*g * *r_gt).inverse()), &ax.axis))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Geodesic distance from `d` to the one-parameter subgroup of rotations
/// about `axis`.
fn distance_to_axis_circle(d: &Rotation, axis: &Vector3<f64>) -> f64 {
    let [w, x, y, z] = d.quat();
    let a = axis.normalize();
    let along = x * a.x + y * a.y + z * a.z;
    let cos_half = (w * w + along * along).sqrt().min(1.0);
    2.0 * cos_half.acos()
}

/// Closure of a set of rotations under composition, identity first.
pub fn closure(generators: &[Rotation]) -> Vec<Rotation> {
    let mut elements = vec![Rotation::IDENTITY];
    let contains = |set: &[Rotation], r: &Rotation| set.iter().any(|s| geodesic_distance(s, r) < CLOSURE_TOLERANCE);
    for g in generators {
        if !contains(&elements, g) {
            elements.push(*g);
        }
    }
    let mut frontier = 0;
    while frontier < elements.len() {
        let a = elements[frontier];
        for g in generators {
            let p = a * *g;
            if !contains(&elements, &p) {
                elements.push(p);
            }
            if elements.len() > 10_000 {
                return elements;
            }
        }
        frontier += 1;
    }
    elements
}
