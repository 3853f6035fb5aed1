//! Orthographic z-buffer rendering of shapes, recovery of the visible
//! image-aligned point cloud, and the on-disk dataset format.
//!
//! The camera looks along −z with x to the right and y up; image row 0 is the
//! top edge `y = +1`. A model point `x₀` lands at `R_gtᵀ·x₀` in the camera
//! frame, and larger camera `z` is closer to the viewer.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ShapeModel;
use crate::io::{put_f32s, read_exact_array, Reader};
use crate::rotation::Rotation;

pub const DEFAULT_RES: usize = 32;
pub const MIN_RES: usize = 16;
pub const MAX_RES: usize = 256;
/// Subsamples per pixel side (4 samples per pixel).
pub const SUPERSAMPLE: usize = 2;
pub const DEFAULT_POINTS: usize = 100;
/// Ambient term added to the Lambertian shading.
pub const AMBIENT: f64 = 0.1;
/// Oblique light direction (camera frame, towards the light).
pub const OBLIQUE_LIGHT: [f64; 3] = [0.4, 0.5, 0.768];
/// Depth slack allowed between a visible point and the z-buffer.
pub const DEPTH_TOLERANCE: f64 = 1e-3;

const ROTATIONS_MAGIC: &[u8; 4] = b"ROTS";
const ROTATIONS_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest";
pub const ROTATIONS_FILE: &str = "rotations.f32";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Light {
    /// Light along the view axis: shading is symmetry-consistent.
    #[default]
    ViewAxis,
    Oblique,
}

impl Light {
    fn direction(self) -> Vector3<f64> {
        match self {
            Light::ViewAxis => Vector3::z(),
            Light::Oblique => Vector3::from(OBLIQUE_LIGHT).normalize(),
        }
    }
}

/// A rendered view with its visible surface points.
#[derive(Debug, Clone)]
pub struct ViewSample {
    pub res: usize,
    /// Row-major grayscale in `[0, 1]`, quantized to multiples of 1/255.
    pub image: Vec<f32>,
    pub r_gt: Rotation,
    /// Pixel index of each visible point.
    pub pixels: Vec<usize>,
    /// Render-mesh face of each visible point.
    pub faces: Vec<usize>,
    pub visible_points_cam: Vec<Vector3<f64>>,
    pub canonical_points: Vec<Vector3<f64>>,
    /// Z-buffer depth `1 − z` at each visible point's subsample.
    pub depths: Vec<f64>,
}

/// Corresponding camera-frame and model-frame points.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedCloud {
    pub cam: Vec<Vector3<f64>>,
    pub canonical: Vec<Vector3<f64>>,
}

impl PairedCloud {
    pub fn len(&self) -> usize {
        self.cam.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cam.is_empty()
    }
}

/// Camera-plane position of subsample `(sx, sy)` on a `n × n` subsample grid.
fn subsample_center(sx: usize, sy: usize, n: usize) -> Vector2<f64> {
    let step = 2.0 / n as f64;
    Vector2::new(-1.0 + (sx as f64 + 0.5) * step, 1.0 - (sy as f64 + 0.5) * step)
}

fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

#[derive(Clone, Copy)]
struct Fragment {
    z: f64,
    face: usize,
    bary: [f64; 3],
}

pub fn render_view(shape: &ShapeModel, r_gt: &Rotation, res: usize, light: Light) -> Result<ViewSample> {
    if !(MIN_RES..=MAX_RES).contains(&res) {
        return Err(Error::Config(format!("resolution {res} outside [{MIN_RES}, {MAX_RES}]")));
    }
    let mesh = shape.render_mesh();
    if mesh.faces.is_empty() {
        return Err(Error::DegenerateMesh("render mesh has no faces".into()));
    }
    let inv = r_gt.inverse();
    let cam: Vec<Vector3<f64>> = mesh.vertices.iter().map(|v| inv.rotate(v)).collect();
    let n = res * SUPERSAMPLE;
    let mut buffer: Vec<Option<Fragment>> = vec![None; n * n];
    let to_sub = |c: f64| (c + 1.0) / 2.0 * n as f64;
    for (fi, f) in mesh.faces.iter().enumerate() {
        let (a, b, c) = (cam[f[0]], cam[f[1]], cam[f[2]]);
        let (pa, pb, pc) = (a.xy(), b.xy(), c.xy());
        let area = edge(&pa, &pb, &pc);
        // counter-clockwise in the image plane means facing the camera
        if area <= 0.0 {
            continue;
        }
        let xs = [pa.x, pb.x, pc.x];
        let ys = [pa.y, pb.y, pc.y];
        let x0 = to_sub(xs.iter().copied().fold(f64::INFINITY, f64::min)).floor().max(0.0) as usize;
        let x1 = (to_sub(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)).ceil() as usize).min(n);
        let y0 = to_sub(-ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)).floor().max(0.0) as usize;
        let y1 = (to_sub(-ys.iter().copied().fold(f64::INFINITY, f64::min)).ceil() as usize).min(n);
        for sy in y0..y1 {
            for sx in x0..x1 {
                let p = subsample_center(sx, sy, n);
                let w0 = edge(&pb, &pc, &p) / area;
                let w1 = edge(&pc, &pa, &p) / area;
                let w2 = edge(&pa, &pb, &p) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * a.z + w1 * b.z + w2 * c.z;
                let slot = &mut buffer[sy * n + sx];
                if slot.map_or(true, |frag| z > frag.z) {
                    *slot = Some(Fragment { z, face: fi, bary: [w0, w1, w2] });
                }
            }
        }
    }

    let light_dir = light.direction();
    let shade: Vec<f64> = (0..mesh.faces.len())
        .map(|f| {
            let nrm = inv.rotate(&mesh.face_normal(f));
            AMBIENT + (1.0 - AMBIENT) * nrm.dot(&light_dir).max(0.0)
        })
        .collect();
    let mut image = vec![0f32; res * res];
    let mut view = ViewSample {
        res,
        image: Vec::new(),
        r_gt: *r_gt,
        pixels: Vec::new(),
        faces: Vec::new(),
        visible_points_cam: Vec::new(),
        canonical_points: Vec::new(),
        depths: Vec::new(),
    };
    for py in 0..res {
        for px in 0..res {
            let mut sum = 0.0;
            let mut first: Option<Fragment> = None;
            for dy in 0..SUPERSAMPLE {
                for dx in 0..SUPERSAMPLE {
                    if let Some(frag) = buffer[(py * SUPERSAMPLE + dy) * n + px * SUPERSAMPLE + dx] {
                        sum += shade[frag.face];
                        first.get_or_insert(frag);
                    }
                }
            }
            let value = sum / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            image[py * res + px] = ((value * 255.0).round() / 255.0) as f32;
            if let Some(frag) = first {
                let f = mesh.faces[frag.face];
                let [w0, w1, w2] = frag.bary;
                let on_mesh = w0 * mesh.vertices[f[0]] + w1 * mesh.vertices[f[1]] + w2 * mesh.vertices[f[2]];
                let canonical = shape.snap_to_surface(&on_mesh);
                view.pixels.push(py * res + px);
                view.faces.push(frag.face);
                view.visible_points_cam.push(inv.rotate(&canonical));
                view.canonical_points.push(canonical);
                view.depths.push(1.0 - frag.z);
            }
        }
    }
    view.image = image;
    Ok(view)
}

impl ViewSample {
    pub fn mask_size(&self) -> usize {
        self.pixels.len()
    }

    /// `n` distinct mask pixels chosen uniformly, in ascending pixel order.
    pub fn sample_visible<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PairedCloud> {
        if n > self.pixels.len() {
            return Err(Error::TooFewVisible { available: self.pixels.len(), requested: n });
        }
        let mut picks = rand::seq::index::sample(rng, self.pixels.len(), n).into_vec();
        picks.sort_unstable();
        Ok(PairedCloud {
            cam: picks.iter().map(|&i| self.visible_points_cam[i]).collect(),
            canonical: picks.iter().map(|&i| self.canonical_points[i]).collect(),
        })
    }

    /// The full visible cloud.
    pub fn all_visible(&self) -> PairedCloud {
        PairedCloud { cam: self.visible_points_cam.clone(), canonical: self.canonical_points.clone() }
    }
}

pub fn write_pgm(path: &Path, res: usize, image: &[f32]) -> Result<()> {
    let mut buf = format!("P5\n{res} {res}\n255\n").into_bytes();
    buf.extend(image.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Reads a binary PGM with maxval 255; returns `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token().as_deref() != Some("P5") {
        return Err(bad("not a binary PGM (P5)"));
    }
    let mut num = || token().and_then(|t| t.parse::<usize>().ok());
    let (w, h, max) = match (num(), num(), num()) {
        (Some(w), Some(h), Some(m)) => (w, h, m),
        _ => return Err(bad("malformed PGM header")),
    };
    if max != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(bad(&format!("expected {} pixel bytes, found {}", w * h, data.len())));
    }
    Ok((w, h, data.iter().map(|&b| b as f32 / 255.0).collect()))
}

/// A rendered dataset on disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    /// Shape kind name or OBJ path used to render the views.
    pub shape: String,
    pub res: usize,
    pub files: Vec<String>,
    pub rotations: Vec<Rotation>,
}

/// Renders `n_views` Haar-random views of `shape` into `out_dir`.
pub fn generate_dataset(
    shape: &ShapeModel,
    shape_spec: &str,
    n_views: usize,
    res: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Dataset> {
    fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Rotations are rounded to their stored f32 form before rendering so the
    // files describe the images exactly.
    let rotations: Vec<Rotation> = (0..n_views)
        .map(|_| {
            let q = Rotation::random(&mut rng).quat().map(|c| c as f32);
            Rotation::from_stored(q)
        })
        .collect::<Result<_>>()?;
    let files: Vec<String> = (0..n_views).map(|i| format!("view_{i:05}.pgm")).collect();
    files.par_iter().zip(&rotations).try_for_each(|(name, r)| -> Result<()> {
        let view = render_view(shape, r, res, Light::ViewAxis)?;
        write_pgm(&out_dir.join(name), res, &view.image)
    })?;
    let ds = Dataset { dir: out_dir.to_path_buf(), shape: shape_spec.to_string(), res, files, rotations };
    ds.write_index()?;
    Ok(ds)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes the manifest and packed rotations into `self.dir`.
    pub fn write_index(&self) -> Result<()> {
        let mut manifest = format!("# shape={} res={} count={}\n", self.shape, self.res, self.files.len());
        for (name, r) in self.files.iter().zip(&self.rotations) {
            manifest.push_str(name);
            for v in r.to_row_major() {
                manifest.push_str(&format!(" {v}"));
            }
            manifest.push('\n');
        }
        fs::write(self.dir.join(MANIFEST_FILE), manifest)?;

        let mut buf = Vec::with_capacity(16 + self.rotations.len() * 16);
        buf.extend_from_slice(ROTATIONS_MAGIC);
        buf.extend_from_slice(&ROTATIONS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.rotations.len() as u64).to_le_bytes());
        for r in &self.rotations {
            put_f32s(&mut buf, r.quat().map(|c| c as f32));
        }
        fs::write(self.dir.join(ROTATIONS_FILE), buf)?;
        Ok(())
    }

    /// Loads the manifest and the packed rotations, checking they agree.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)?;
        let parse_err = |line: usize, msg: String| Error::Parse { path: manifest_path.clone(), line, msg };
        let mut shape = None;
        let mut res = None;
        let mut count = None;
        let mut files = Vec::new();
        let mut matrices = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                for kv in header.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("shape", v)) => shape = Some(v.to_string()),
                        Some(("res", v)) => res = v.parse::<usize>().ok(),
                        Some(("count", v)) => count = v.parse::<usize>().ok(),
                        _ => {}
                    }
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts.next().unwrap().to_string();
            let vals: Vec<f64> = parts
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(i + 1, format!("bad number {t:?}: {e}"))))
                .collect::<Result<_>>()?;
            let m: [f64; 9] = vals
                .try_into()
                .map_err(|v: Vec<f64>| parse_err(i + 1, format!("expected 9 matrix entries, found {}", v.len())))?;
            let r = Rotation::from_row_major(&m).map_err(|e| parse_err(i + 1, e.to_string()))?;
            files.push(name);
            matrices.push(r);
        }
        let shape = shape.ok_or_else(|| parse_err(1, "missing `# shape=... res=...` header".into()))?;
        let res = res.ok_or_else(|| parse_err(1, "missing res in header".into()))?;
        if let Some(c) = count {
            if c != files.len() {
                return Err(parse_err(1, format!("header count {c} but {} rows", files.len())));
            }
        }

        let rot_path = dir.join(ROTATIONS_FILE);
        let mut r = Reader::new(BufReader::new(File::open(&rot_path)?));
        r.magic(ROTATIONS_MAGIC, "rotations")?;
        let version = r.u32()?;
        if version != ROTATIONS_VERSION {
            return Err(Error::VersionMismatch { what: "rotations", found: version, expected: ROTATIONS_VERSION });
        }
        let n = r.u64()? as usize;
        if n != files.len() {
            return Err(Error::Format(format!("{} holds {n} rotations, manifest has {}", rot_path.display(), files.len())));
        }
        let quats = read_exact_array(&mut r, n)?;
        r.expect_eof()?;
        let rotations: Vec<Rotation> = quats.into_iter().map(Rotation::from_stored).collect::<Result<_>>()?;
        for (i, (a, b)) in rotations.iter().zip(&matrices).enumerate() {
            if crate::rotation::geodesic_distance(a, b) > 1e-5 {
                return Err(Error::Format(format!("rotation {i} differs between manifest and {ROTATIONS_FILE}")));
            }
        }
        Ok(Dataset { dir: dir.to_path_buf(), shape, res, files, rotations })
    }

    pub fn load_image(&self, i: usize) -> Result<Vec<f32>> {
        let (w, h, pixels) = read_pgm(&self.dir.join(&self.files[i]))?;
        if w != self.res || h != self.res {
            return Err(Error::ShapeMismatch(format!("image {} is {w}x{h}, expected {}", self.files[i], self.res)));
        }
        Ok(pixels)
    }
}
