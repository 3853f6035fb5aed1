//! Rotation encodings fed to the learner.
//!
//! The cube encoding rotates the eight vertices `{±1/2}^3` of a cube and
//! applies sinusoidal bands to every rotated coordinate. Layout is
//! vertex-major, coordinate-minor, then function (`sin`, `cos`), then
//! frequency innermost:
//!
//! ```text
//! [v0.x: sin(2^0 pi c) .. sin(2^(F-1) pi c), cos(2^0 pi c) .. cos(2^(F-1) pi c)], [v0.y: ...], ..., [v7.z: ...]
//! ```
//!
//! Vertex `i` has coordinates `x = ±1/2` from bit 2, `y` from bit 1 and `z`
//! from bit 0, with a set bit meaning `+1/2`.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::rotation::Rotation;

/// Half extent of the encoding cube. Rotated coordinates stay within
/// `±sqrt(3)/2`, so the lowest band `pi c` never wraps.
pub const CUBE_HALF_EXTENT: f64 = 0.5;

pub const DEFAULT_FREQUENCIES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RotationEncoding(pub Vec<f64>);

impl RotationEncoding {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Which rotation encoding feeds the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingKind {
    /// Sinusoids of rotated cube vertices.
    Cube,
    /// Sinusoids of the nine rotation-matrix entries taken independently.
    MatrixElements,
}

impl EncodingKind {
    pub fn dim(self, frequencies: usize) -> usize {
        match self {
            EncodingKind::Cube => 8 * 3 * 2 * frequencies,
            EncodingKind::MatrixElements => 9 * 2 * frequencies,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            EncodingKind::Cube => 0,
            EncodingKind::MatrixElements => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(EncodingKind::Cube),
            1 => Some(EncodingKind::MatrixElements),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EncodingKind::Cube => "cube",
            EncodingKind::MatrixElements => "matrix",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cube" => Some(EncodingKind::Cube),
            "matrix" | "elementwise" => Some(EncodingKind::MatrixElements),
            _ => None,
        }
    }

    pub fn encode(self, r: &Rotation, frequencies: usize) -> RotationEncoding {
        match self {
            EncodingKind::Cube => cube_positional_encoding(r, frequencies),
            EncodingKind::MatrixElements => matrix_element_encoding(r, frequencies),
        }
    }

    /// Writes the encoding into `out`, which must have length `dim(frequencies)`.
    pub fn encode_into(self, r: &Rotation, frequencies: usize, out: &mut [f64]) {
        match self {
            EncodingKind::Cube => {
                let m = r.to_matrix();
                let mut k = 0;
                for v in cube_vertices() {
                    let rv = m * v;
                    for c in rv.iter() {
                        bands(*c, frequencies, &mut out[k..k + 2 * frequencies]);
                        k += 2 * frequencies;
                    }
                }
            }
            EncodingKind::MatrixElements => {
                let m = r.to_row_major();
                for (i, c) in m.iter().enumerate() {
                    let k = i * 2 * frequencies;
                    bands(*c, frequencies, &mut out[k..k + 2 * frequencies]);
                }
            }
        }
    }
}

pub fn cube_vertices() -> [Vector3<f64>; 8] {
    let h = CUBE_HALF_EXTENT;
    let s = |bit: bool| if bit { h } else { -h };
    std::array::from_fn(|i| Vector3::new(s(i & 4 != 0), s(i & 2 != 0), s(i & 1 != 0)))
}

fn bands(c: f64, frequencies: usize, out: &mut [f64]) {
    for k in 0..frequencies {
        let (s, co) = ((1u64 << k) as f64 * PI * c).sin_cos();
        out[k] = s;
        out[frequencies + k] = co;
    }
}

pub fn cube_positional_encoding(r: &Rotation, frequencies: usize) -> RotationEncoding {
    let mut out = vec![0.0; EncodingKind::Cube.dim(frequencies)];
    EncodingKind::Cube.encode_into(r, frequencies, &mut out);
    RotationEncoding(out)
}

/// Element-wise encoding of the rotation matrix, kept for the ablation.
pub fn matrix_element_encoding(r: &Rotation, frequencies: usize) -> RotationEncoding {
    let mut out = vec![0.0; EncodingKind::MatrixElements.dim(frequencies)];
    EncodingKind::MatrixElements.encode_into(r, frequencies, &mut out);
    RotationEncoding(out)
}
