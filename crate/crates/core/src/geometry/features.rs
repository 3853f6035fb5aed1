//! Symmetry-invariant surface features: analytic oracles built from kernel
//! sums over landmark orbits or from random Fourier features of axial
//! coordinates, and a tabulated field read from disk.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::symmetry::SymmetryGroup;
use crate::error::{Error, Result};
use crate::io::{put_f32s, Reader};

pub const FEATURE_DIM: usize = 12;
const FEATURE_SEED: u64 = 0x5EED_F00D;
/// Default inverse kernel width for point-group landmark features.
pub const ORBIT_SHARPNESS: f64 = 2.0;
/// Default standard deviation of the random frequencies for
/// `(radius, height)` features.
pub const AXIAL_SHARPNESS: f64 = 0.25;
const TABLE_MAGIC: &[u8; 4] = b"FEAT";
const LANES: usize = 4;

/// `sin`/`cos` of `FEATURE_DIM / 2` seeded random projections of a 2-vector.
#[derive(Debug, Clone)]
pub struct FourierMap {
    freqs: Vec<[f64; 2]>,
}

impl FourierMap {
    fn new(seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).unwrap();
        let freqs = (0..FEATURE_DIM / 2).map(|_| std::array::from_fn(|_| normal.sample(&mut rng))).collect();
        FourierMap { freqs }
    }

    fn eval(&self, u: [f64; 2], out: &mut [f64]) {
        let half = self.freqs.len();
        for (k, w) in self.freqs.iter().enumerate() {
            let (s, c) = (w[0] * u[0] + w[1] * u[1]).sin_cos();
            out[k] = s;
            out[half + k] = c;
        }
    }
}

/// Kernel sums `Σ_c 1 / (1 + |p - c|² s²)` over the orbits of seeded
/// landmark points, one feature per landmark.
#[derive(Debug, Clone)]
pub struct LandmarkMap {
    /// Orbit coordinates scaled by the sharpness, `orbit_len` consecutive
    /// entries per landmark.
    xs: Vec<f64>,
    ys: Vec<f64>,
    zs: Vec<f64>,
    orbit_len: usize,
    sharpness: f64,
}

impl LandmarkMap {
    fn new(group: &[Matrix3<f64>], seed: u64, sharpness: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = FEATURE_DIM * group.len();
        let (mut xs, mut ys, mut zs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..FEATURE_DIM {
            let dir: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let c = dir.normalize() * rng.gen_range(0.4..1.0);
            for g in group {
                let q = g * c * sharpness;
                xs.push(q.x);
                ys.push(q.y);
                zs.push(q.z);
            }
        }
        LandmarkMap { xs, ys, zs, orbit_len: group.len(), sharpness }
    }

    fn eval(&self, p: &Vector3<f64>, out: &mut [f64]) {
        let q = p * self.sharpness;
        let m = self.orbit_len;
        for (k, o) in out.iter_mut().enumerate() {
            let r = k * m..(k + 1) * m;
            let (xs, ys, zs) = (&self.xs[r.clone()], &self.ys[r.clone()], &self.zs[r]);
            let mut acc = [0.0f64; LANES];
            let mut i = 0;
            while i + LANES <= m {
                for l in 0..LANES {
                    let (dx, dy, dz) = (q.x - xs[i + l], q.y - ys[i + l], q.z - zs[i + l]);
                    acc[l] += 1.0 / (1.0 + dx * dx + dy * dy + dz * dz);
                }
                i += LANES;
            }
            let mut total = acc.iter().sum::<f64>();
            for j in i..m {
                let (dx, dy, dz) = (q.x - xs[j], q.y - ys[j], q.z - zs[j]);
                total += 1.0 / (1.0 + dx * dx + dy * dy + dz * dz);
            }
            *o = total;
        }
    }
}

/// Evaluates a feature vector per surface point.
#[derive(Debug, Clone)]
pub enum FeatureField {
    /// Kernel sums over orbits of landmark points.
    Orbit(LandmarkMap),
    /// Embeds `(radius, height)` about an axis; `|height|` when the axis can
    /// be flipped.
    Axial { axis: Vector3<f64>, fold_height: bool, map: FourierMap },
    Table(FeatureTable),
}

impl FeatureField {
    pub fn oracle(group: &SymmetryGroup) -> Self {
        let sharpness = if group.continuous_axes.is_empty() { ORBIT_SHARPNESS } else { AXIAL_SHARPNESS };
        Self::oracle_with_sharpness(group, sharpness)
    }

    /// Oracle with a custom kernel sharpness (landmark features) or
    /// frequency scale (axial features). Larger values give sharper expert
    /// scores.
    pub fn oracle_with_sharpness(group: &SymmetryGroup, sharpness: f64) -> Self {
        match group.continuous_axes.first() {
            Some(ax) => FeatureField::Axial {
                axis: ax.axis.normalize(),
                fold_height: ax.flip.is_some(),
                map: FourierMap::new(FEATURE_SEED, sharpness),
            },
            None => {
                let group: Vec<Matrix3<f64>> = group.discrete_elements.iter().map(|g| g.to_matrix()).collect();
                FeatureField::Orbit(LandmarkMap::new(&group, FEATURE_SEED, sharpness))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureField::Table(t) => t.dim,
            _ => FEATURE_DIM,
        }
    }

    pub fn eval_into(&self, p: &Vector3<f64>, out: &mut [f64]) {
        match self {
            FeatureField::Orbit(map) => map.eval(p, out),
            FeatureField::Axial { axis, fold_height, map } => {
                let h = p.dot(axis);
                let r = (p - h * axis).norm();
                let h = if *fold_height { h.abs() } else { h };
                map.eval([r, h], out);
            }
            FeatureField::Table(t) => out.copy_from_slice(t.lookup(p)),
        }
    }

    pub fn eval(&self, p: &Vector3<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(p, &mut out);
        out
    }
}

/// Features tabulated at sample points, evaluated by nearest-point lookup.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    dim: usize,
    points: Vec<[f32; 3]>,
    features: Vec<f64>,
    index: VoxelIndex,
}

impl FeatureTable {
    pub fn new(dim: usize, points: Vec<[f32; 3]>, features: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("feature dimension must be positive".into()));
        }
        if points.is_empty() {
            return Err(Error::Format("feature table is empty".into()));
        }
        if features.len() != points.len() * dim {
            return Err(Error::LengthMismatch(points.len() * dim, features.len()));
        }
        let index = VoxelIndex::new(points.iter().map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)).collect());
        Ok(FeatureTable { dim, points, features: features.into_iter().map(f64::from).collect(), index })
    }

    /// Tabulates `field` at `points`.
    pub fn sample(field: &FeatureField, points: &[Vector3<f64>]) -> Result<Self> {
        let dim = field.dim();
        let mut features = Vec::with_capacity(points.len() * dim);
        let mut buf = vec![0.0; dim];
        for p in points {
            field.eval_into(p, &mut buf);
            features.extend(buf.iter().map(|&v| v as f32));
        }
        Self::new(dim, points.iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect(), features)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lookup(&self, p: &Vector3<f64>) -> &[f64] {
        let i = self.index.nearest(p);
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.points.len() * (3 + self.dim) * 4);
        buf.extend_from_slice(TABLE_MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.points.len() as u64).to_le_bytes());
        for (i, p) in self.points.iter().enumerate() {
            put_f32s(&mut buf, p.iter().copied());
            put_f32s(&mut buf, self.features[i * self.dim..(i + 1) * self.dim].iter().map(|&v| v as f32));
        }
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = Reader::new(BufReader::new(File::open(path)?));
        r.magic(TABLE_MAGIC, "feature table")?;
        let dim = r.u32()? as usize;
        let count = usize::try_from(r.u64()?).map_err(|_| Error::Format("count overflow".into()))?;
        let flat = r.f32_vec(count.checked_mul(3 + dim).ok_or_else(|| Error::Format("count overflow".into()))?)?;
        r.expect_eof()?;
        let mut points = Vec::with_capacity(count);
        let mut features = Vec::with_capacity(count * dim);
        for row in flat.chunks_exact(3 + dim) {
            points.push([row[0], row[1], row[2]]);
            features.extend_from_slice(&row[3..]);
        }
        Self::new(dim, points, features)
    }
}

/// Exact nearest-point search over a uniform voxel grid, visiting shells of
/// voxels outward from the query until no closer point can exist.
#[derive(Debug, Clone)]
struct VoxelIndex {
    points: Vec<Vector3<f64>>,
    origin: Vector3<f64>,
    cell: f64,
    dims: [i64; 3],
    /// `starts[v]..starts[v + 1]` indexes `order` for voxel `v`.
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl VoxelIndex {
    fn new(points: Vec<Vector3<f64>>) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi - lo).max().max(1e-9);
        let per_axis = (points.len() as f64).cbrt().ceil().clamp(1.0, 128.0);
        let cell = extent / per_axis;
        let dims = [0, 1, 2].map(|k| (((hi[k] - lo[k]) / cell).floor() as i64 + 1).max(1));
        let n_vox = (dims[0] * dims[1] * dims[2]) as usize;
        let mut index = VoxelIndex { points, origin: lo, cell, dims, starts: vec![0; n_vox + 1], order: Vec::new() };
        let voxel: Vec<usize> = index.points.iter().map(|p| index.flat(index.coords(p))).collect();
        for &v in &voxel {
            index.starts[v + 1] += 1;
        }
        for v in 0..n_vox {
            index.starts[v + 1] += index.starts[v];
        }
        let mut fill = index.starts.clone();
        index.order = vec![0; voxel.len()];
        for (i, &v) in voxel.iter().enumerate() {
            index.order[fill[v]] = i;
            fill[v] += 1;
        }
        index
    }

    fn coords(&self, p: &Vector3<f64>) -> [i64; 3] {
        [0, 1, 2].map(|k| ((p[k] - self.origin[k]) / self.cell).floor() as i64)
    }

    fn flat(&self, c: [i64; 3]) -> usize {
        let c = [0, 1, 2].map(|k| c[k].clamp(0, self.dims[k] - 1));
        ((c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]) as usize
    }

    fn nearest(&self, p: &Vector3<f64>) -> usize {
        let q = self.coords(p);
        // distance from the query to the grid box, in voxels
        let outside = (0..3).map(|k| (-q[k]).max(q[k] - self.dims[k] + 1).max(0)).max().unwrap_or(0);
        let reach = (0..3).map(|k| (q[k]).abs().max((q[k] - self.dims[k] + 1).abs())).max().unwrap_or(0);
        let mut best = (f64::INFINITY, 0usize);
        for k in outside..=reach {
            if best.0.is_finite() && best.0 <= ((k - 1).max(0) as f64 * self.cell).powi(2) {
                break;
            }
            for dx in -k..=k {
                for dy in -k..=k {
                    for dz in -k..=k {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != k {
                            continue;
                        }
                        let c = [q[0] + dx, q[1] + dy, q[2] + dz];
                        if (0..3).any(|a| c[a] < 0 || c[a] >= self.dims[a]) {
                            continue;
                        }
                        let v = self.flat(c);
                        for &i in &self.order[self.starts[v]..self.starts[v + 1]] {
                            let d = (self.points[i] - p).norm_squared();
                            if d < best.0 || (d == best.0 && i < best.1) {
                                best = (d, i);
                            }
                        }
                    }
                }
            }
        }
        best.1
    }
}
