//! CAD-derived supervision: SDF and feature experts, product-of-experts
//! measures, posterior normalization, the generalized KL divergence, and
//! sampling of training rotations from precomputed distributions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{FeatureField, ShapeModel};
use crate::grid::{cell_rotation, children, SO3Grid, MAX_LEVEL, SO3_VOLUME};
use crate::io::{put_f32s, read_exact_array, Reader};
use crate::rotation::{geodesic_distance, Rotation};
use crate::view::PairedCloud;

pub const DEFAULT_LAMBDA: f64 = 20.0;
pub const DEFAULT_TAU: f64 = 0.05;
/// Weights are clamped to this floor before logs and divisions.
pub const WEIGHT_FLOOR: f64 = 1e-30;

const MEASURE_MAGIC: &[u8; 4] = b"MEAS";
const MEASURE_VERSION: u32 = 1;

/// How the per-point SDF residuals are reduced to an energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SdfNorm {
    /// Fraction of points with `|sdf| > tau`.
    ThresholdedCount { tau: f64 },
    /// Mean of `|sdf|`.
    L1,
}

impl Default for SdfNorm {
    fn default() -> Self {
        SdfNorm::ThresholdedCount { tau: DEFAULT_TAU }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertConfig {
    pub lambda_sdf: f64,
    pub lambda_feat: f64,
    pub sdf_norm: SdfNorm,
    pub n_points: usize,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            lambda_sdf: DEFAULT_LAMBDA,
            lambda_feat: DEFAULT_LAMBDA,
            sdf_norm: SdfNorm::default(),
            n_points: crate::view::DEFAULT_POINTS,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lambda_sdf", self.lambda_sdf)?;
        positive("lambda_feat", self.lambda_feat)?;
        if let SdfNorm::ThresholdedCount { tau } = self.sdf_norm {
            positive("tau", tau)?;
        }
        if self.n_points == 0 {
            return Err(Error::Config("n_points must be positive".into()));
        }
        Ok(())
    }
}

/// A shape with its feature field and expert settings.
#[derive(Debug, Clone)]
pub struct Experts {
    shape: ShapeModel,
    field: FeatureField,
    cfg: ExpertConfig,
}

impl Experts {
    pub fn new(shape: ShapeModel, cfg: ExpertConfig) -> Result<Self> {
        let field = shape.feature_field()?;
        Self::with_field(shape, field, cfg)
    }

    pub fn with_field(shape: ShapeModel, field: FeatureField, cfg: ExpertConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Experts { shape, field, cfg })
    }

    pub fn shape(&self) -> &ShapeModel {
        &self.shape
    }

    pub fn config(&self) -> &ExpertConfig {
        &self.cfg
    }

    pub fn field(&self) -> &FeatureField {
        &self.field
    }

    /// Binds the experts to one view's paired cloud.
    pub fn view(&self, cloud: &PairedCloud) -> Result<ViewExperts<'_>> {
        if cloud.is_empty() {
            return Err(Error::TooFewVisible { available: 0, requested: 1 });
        }
        if cloud.cam.len() != cloud.canonical.len() {
            return Err(Error::LengthMismatch(cloud.cam.len(), cloud.canonical.len()));
        }
        let dim = self.field.dim();
        let mut target = vec![0.0; cloud.len() * dim];
        for (i, x) in cloud.canonical.iter().enumerate() {
            self.field.eval_into(x, &mut target[i * dim..(i + 1) * dim]);
        }
        Ok(ViewExperts { experts: self, cam: cloud.cam.clone(), target })
    }
}

/// Expert scores for a fixed view.
#[derive(Debug, Clone)]
pub struct ViewExperts<'a> {
    experts: &'a Experts,
    cam: Vec<Vector3<f64>>,
    /// Features of the canonical points, row-major `n × dim`.
    target: Vec<f64>,
}

/// Per-rotation weights of both experts and their product.
#[derive(Debug, Clone, PartialEq)]
pub struct PoeMeasures {
    pub sdf: Vec<f64>,
    pub feat: Vec<f64>,
    pub product: Vec<f64>,
}

impl ViewExperts<'_> {
    pub fn n_points(&self) -> usize {
        self.cam.len()
    }

    pub fn sdf_score(&self, r: &Rotation) -> f64 {
        let m = r.to_matrix();
        let cfg = &self.experts.cfg;
        let n = self.cam.len() as f64;
        let rho = match cfg.sdf_norm {
            SdfNorm::ThresholdedCount { tau } => {
                self.cam.iter().filter(|x| self.experts.shape.sdf(&(m * *x)).abs() > tau).count() as f64 / n
            }
            SdfNorm::L1 => self.cam.iter().map(|x| self.experts.shape.sdf(&(m * *x)).abs()).sum::<f64>() / n,
        };
        (-cfg.lambda_sdf * rho).exp()
    }

    pub fn feat_score(&self, r: &Rotation) -> f64 {
        let m = r.to_matrix();
        let dim = self.experts.field.dim();
        let mut buf = vec![0.0; dim];
        let mut sq = 0.0;
        for (i, x) in self.cam.iter().enumerate() {
            self.experts.field.eval_into(&(m * *x), &mut buf);
            sq += buf.iter().zip(&self.target[i * dim..(i + 1) * dim]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let frob = sq.sqrt() / (self.cam.len() as f64).sqrt();
        (-self.experts.cfg.lambda_feat * frob).exp()
    }

    pub fn scores(&self, r: &Rotation) -> (f64, f64) {
        (self.sdf_score(r), self.feat_score(r))
    }

    /// Scores every rotation; the output order follows `rotations`.
    pub fn poe(&self, rotations: &[Rotation]) -> PoeMeasures {
        let pairs: Vec<(f64, f64)> = rotations.par_iter().map(|r| self.scores(r)).collect();
        let sdf: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let feat: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let product = pairs.iter().map(|p| p.0 * p.1).collect();
        PoeMeasures { sdf, feat, product }
    }

    /// Scores every cell of `grid`, then repeatedly subdivides the `keep`
    /// heaviest cells of the newest level until `max_level`. Returns an
    /// explicit measure holding every evaluated rotation.
    pub fn precompute_refined(&self, grid: &SO3Grid, max_level: u32, keep: usize) -> Result<Measure> {
        if max_level > MAX_LEVEL {
            return Err(Error::LevelTooLarge { level: max_level, max: MAX_LEVEL });
        }
        let mut rotations = grid.rotations().to_vec();
        let mut weights = self.poe(&rotations).product;
        let mut frontier: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
        let mut level = grid.level();
        while level < max_level {
            frontier.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            frontier.truncate(keep);
            let kids: Vec<usize> = frontier.iter().flat_map(|&(c, _)| children(level, c)).collect();
            level += 1;
            let kid_rots: Vec<Rotation> = kids.iter().map(|&c| cell_rotation(level, c)).collect();
            let kid_weights = self.poe(&kid_rots).product;
            frontier = kids.into_iter().zip(kid_weights.iter().copied()).collect();
            rotations.extend(kid_rots);
            weights.extend(kid_weights);
        }
        Measure::new(Locations::Explicit(rotations), weights)
    }

    /// Product-of-experts weights at every cell of `grid`.
    pub fn precompute(&self, grid: &SO3Grid) -> Measure {
        let poe = self.poe(grid.rotations());
        Measure {
            locations: Locations::Grid { level: grid.level(), cells: (0..grid.len() as u32).collect() },
            weights: poe.product,
        }
    }
}

/// Where the mass of a measure sits.
#[derive(Debug, Clone, PartialEq)]
pub enum Locations {
    Grid { level: u32, cells: Vec<u32> },
    Explicit(Vec<Rotation>),
}

impl Locations {
    pub fn len(&self) -> usize {
        match self {
            Locations::Grid { cells, .. } => cells.len(),
            Locations::Explicit(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Unnormalized weights on rotations. Persisted with f32 weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    pub locations: Locations,
    pub weights: Vec<f64>,
}

impl Measure {
    pub fn new(locations: Locations, weights: Vec<f64>) -> Result<Self> {
        if locations.len() != weights.len() {
            return Err(Error::LengthMismatch(locations.len(), weights.len()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Format("measure weights must be finite and non-negative".into()));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::AllZeroWeights);
        }
        Ok(Measure { locations, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Materializes the locations; grid locations need the matching grid.
    pub fn rotations(&self, grid: Option<&SO3Grid>) -> Result<Vec<Rotation>> {
        match &self.locations {
            Locations::Explicit(r) => Ok(r.clone()),
            Locations::Grid { level, cells } => {
                let grid = grid.ok_or_else(|| Error::GridMismatch("grid-indexed measure needs its grid".into()))?;
                if grid.level() != *level {
                    return Err(Error::GridMismatch(format!("measure level {level}, grid level {}", grid.level())));
                }
                cells
                    .iter()
                    .map(|&c| {
                        grid.rotations()
                            .get(c as usize)
                            .copied()
                            .ok_or_else(|| Error::GridMismatch(format!("cell {c} outside grid of {}", grid.len())))
                    })
                    .collect()
            }
        }
    }

    /// Weights at every cell of `grid`; fails unless the measure covers the
    /// whole grid in order.
    pub fn grid_weights(&self, grid: &SO3Grid) -> Result<&[f64]> {
        match &self.locations {
            Locations::Grid { level, cells }
                if *level == grid.level()
                    && cells.len() == grid.len()
                    && cells.iter().enumerate().all(|(i, &c)| c as usize == i) =>
            {
                Ok(&self.weights)
            }
            _ => Err(Error::GridMismatch("measure does not cover the grid cell by cell".into())),
        }
    }

    /// Indices of the `k` largest weights, heaviest first, ties by index.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let k = k.min(idx.len());
        let cmp = |a: &usize, b: &usize| self.weights[*b].total_cmp(&self.weights[*a]).then(a.cmp(b));
        if k < idx.len() && k > 0 {
            idx.select_nth_unstable_by(k - 1, cmp);
            idx.truncate(k);
        }
        idx.sort_by(cmp);
        idx.truncate(k);
        idx
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MEASURE_MAGIC);
        buf.extend_from_slice(&MEASURE_VERSION.to_le_bytes());
        match &self.locations {
            Locations::Grid { level, cells } => {
                buf.push(0);
                buf.extend_from_slice(&(cells.len() as u64).to_le_bytes());
                buf.extend_from_slice(&level.to_le_bytes());
                for c in cells {
                    buf.extend_from_slice(&c.to_le_bytes());
                }
            }
            Locations::Explicit(rots) => {
                buf.push(1);
                buf.extend_from_slice(&(rots.len() as u64).to_le_bytes());
                for r in rots {
                    put_f32s(&mut buf, r.quat().map(|c| c as f32));
                }
            }
        }
        put_f32s(&mut buf, self.weights.iter().map(|&w| w as f32));
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = Reader::new(BufReader::new(File::open(path)?));
        r.magic(MEASURE_MAGIC, "measure")?;
        let version = r.u32()?;
        if version != MEASURE_VERSION {
            return Err(Error::VersionMismatch { what: "measure", found: version, expected: MEASURE_VERSION });
        }
        let mode = r.u8()?;
        let count = usize::try_from(r.u64()?).map_err(|_| Error::Format("count overflow".into()))?;
        let locations = match mode {
            0 => {
                let level = r.u32()?;
                Locations::Grid { level, cells: r.u32_vec(count)? }
            }
            1 => Locations::Explicit(
                read_exact_array(&mut r, count)?.into_iter().map(Rotation::from_stored).collect::<Result<_>>()?,
            ),
            m => return Err(Error::Format(format!("unknown location mode {m}"))),
        };
        let weights = r.f32_vec(count)?.into_iter().map(f64::from).collect();
        r.expect_eof()?;
        Measure::new(locations, weights)
    }
}

/// Relative rotation taking a measure computed for the view at `anchor` to
/// the view at `target`.
pub fn transfer_rotation(anchor: &Rotation, target: &Rotation) -> Rotation {
    anchor.inverse() * *target
}

/// Replaces each location `R_i` by `R_i · r_rel`, keeping the weights.
pub fn rotate_grid_measure(measure: &Measure, grid: Option<&SO3Grid>, r_rel: &Rotation) -> Result<Measure> {
    let rotations = measure.rotations(grid)?.into_iter().map(|r| r * *r_rel).collect();
    Ok(Measure { locations: Locations::Explicit(rotations), weights: measure.weights.clone() })
}

/// Bins a measure onto `grid`, keeping the largest weight landing in each
/// cell (zero for empty cells).
pub fn rebin_max(measure: &Measure, grid: &SO3Grid) -> Result<Vec<f64>> {
    let rotations = measure.rotations(Some(grid))?;
    let cells: Vec<usize> = rotations.par_iter().map(|r| grid.nearest_cell(r)).collect();
    let mut out = vec![0.0; grid.len()];
    for (c, w) in cells.into_iter().zip(&measure.weights) {
        out[c] = f64::max(out[c], *w);
    }
    Ok(out)
}

/// Bins a measure onto `grid`, keeping for each cell the weight of the
/// location closest to its center (zero for empty cells). With a measure
/// refined below the grid resolution this estimates the weight at each cell
/// center.
pub fn rebin_nearest(measure: &Measure, grid: &SO3Grid) -> Result<Vec<f64>> {
    let rotations = measure.rotations(Some(grid))?;
    let hits: Vec<(usize, f64)> = rotations
        .par_iter()
        .map(|r| {
            let c = grid.nearest_cell(r);
            (c, geodesic_distance(r, &grid.rotation(c)))
        })
        .collect();
    let mut best = vec![(f64::INFINITY, 0.0); grid.len()];
    for ((c, d), w) in hits.into_iter().zip(&measure.weights) {
        if d < best[c].0 {
            best[c] = (d, *w);
        }
    }
    Ok(best.into_iter().map(|b| b.1).collect())
}

/// A normalized distribution over grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub probs: Vec<f64>,
    pub cell_volume: f64,
}

impl Posterior {
    pub fn density(&self, cell: usize) -> f64 {
        self.probs[cell] / self.cell_volume
    }

    pub fn log_density(&self, cell: usize) -> f64 {
        self.density(cell).ln()
    }

    pub fn uniform(grid: &SO3Grid) -> Self {
        Posterior { probs: vec![1.0 / grid.len() as f64; grid.len()], cell_volume: grid.cell_volume() }
    }
}

/// Softmax of log-weights over a full grid.
pub fn normalize_posterior(log_weights: &[f64], grid: &SO3Grid) -> Result<Posterior> {
    if log_weights.len() != grid.len() {
        return Err(Error::GridMismatch(format!("{} weights for {} cells", log_weights.len(), grid.len())));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::AllZeroWeights);
    }
    let mut probs: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
    Ok(Posterior { probs, cell_volume: SO3_VOLUME / grid.len() as f64 })
}

/// Normalizes non-negative weights; zero weights get zero probability.
pub fn normalize_weights(weights: &[f64], grid: &SO3Grid) -> Result<Posterior> {
    let logs: Vec<f64> = weights.iter().map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY }).collect();
    normalize_posterior(&logs, grid)
}

/// Generalized KL divergence `Σ (−log(aν/aμ) + aν/aμ − 1)·aμ`.
pub fn gkl(mu: &[f64], nu: &[f64]) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::LengthMismatch(mu.len(), nu.len()));
    }
    Ok(mu
        .iter()
        .zip(nu)
        .map(|(&m, &n)| {
            let m = m.max(WEIGHT_FLOOR);
            let n = n.max(WEIGHT_FLOOR);
            let d = n / m - 1.0;
            // d − ln(1 + d), computed without cancellation near d = 0
            let term = if d.abs() < 1e-4 { d * d * (0.5 - d / 3.0 + d * d / 4.0) } else { d - d.ln_1p() };
            term * m
        })
        .sum())
}

/// Gradient of [`gkl`] with respect to `log aν`: `aν − aμ`.
pub fn gkl_grad_logscores(mu: &[f64], nu: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != nu.len() {
        return Err(Error::LengthMismatch(mu.len(), nu.len()));
    }
    Ok(mu.iter().zip(nu).map(|(&m, &n)| n.max(WEIGHT_FLOOR) - m.max(WEIGHT_FLOOR)).collect())
}

/// [`gkl`] between two measures on the same locations.
pub fn gkl_measures(mu: &Measure, nu: &Measure) -> Result<f64> {
    if mu.locations != nu.locations {
        return Err(Error::GridMismatch("measures have different locations".into()));
    }
    gkl(&mu.weights, &nu.weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingCounts {
    pub top_pool: usize,
    pub n_modes: usize,
    pub n_uniform: usize,
}

impl Default for SamplingCounts {
    fn default() -> Self {
        SamplingCounts { top_pool: 20_000, n_modes: 3000, n_uniform: 1095 }
    }
}

impl SamplingCounts {
    /// Mode part, uniform part and the ground truth.
    pub fn total(&self) -> usize {
        self.n_modes + self.n_uniform + 1
    }
}

/// How the mode part is drawn from the top pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModeDraw {
    /// With replacement, proportionally to the precomputed weight.
    #[default]
    WeightProportional,
    /// Uniformly without replacement.
    UniformWithoutReplacement,
}

/// The heaviest cells of a precomputed measure, ready for sampling.
#[derive(Debug, Clone)]
pub struct ModePool {
    rotations: Vec<Rotation>,
    weights: Vec<f64>,
    picker: WeightedIndex<f64>,
    jitter: f64,
}

impl ModePool {
    /// `jitter` is the maximum angle of the random offset applied to each
    /// drawn cell center, usually the grid's cell radius.
    pub fn new(measure: &Measure, grid: Option<&SO3Grid>, top_pool: usize, jitter: f64) -> Result<Self> {
        if measure.len() < top_pool {
            return Err(Error::PoolTooSmall { available: measure.len(), requested: top_pool });
        }
        let all = measure.rotations(grid)?;
        let top = measure.top_k(top_pool);
        let rotations: Vec<Rotation> = top.iter().map(|&i| all[i]).collect();
        let weights: Vec<f64> = top.iter().map(|&i| measure.weights[i]).collect();
        let picker = WeightedIndex::new(&weights).map_err(|_| Error::AllZeroWeights)?;
        Ok(ModePool { rotations, weights, picker, jitter })
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mode part (pool locations transferred by `r_rel` and jittered), then
    /// Haar-random rotations, then `r_gt`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        r_rel: &Rotation,
        r_gt: &Rotation,
        counts: &SamplingCounts,
        draw: ModeDraw,
        rng: &mut R,
    ) -> Result<Vec<Rotation>> {
        let mut out = Vec::with_capacity(counts.total());
        let picks: Vec<usize> = match draw {
            ModeDraw::WeightProportional => (0..counts.n_modes).map(|_| self.picker.sample(rng)).collect(),
            ModeDraw::UniformWithoutReplacement => {
                if counts.n_modes > self.len() {
                    return Err(Error::PoolTooSmall { available: self.len(), requested: counts.n_modes });
                }
                rand::seq::index::sample(rng, self.len(), counts.n_modes).into_vec()
            }
        };
        for i in picks {
            let jitter = Rotation::random_in_ball(rng, self.jitter);
            out.push(jitter * self.rotations[i] * *r_rel);
        }
        out.extend((0..counts.n_uniform).map(|_| Rotation::random(rng)));
        out.push(*r_gt);
        Ok(out)
    }
}

/// One-shot mode-focused sampling from a measure computed for the view of
/// `r_gt` itself.
pub fn mode_focused_sample<R: Rng + ?Sized>(
    measure: &Measure,
    grid: &SO3Grid,
    r_gt: &Rotation,
    counts: &SamplingCounts,
    draw: ModeDraw,
    rng: &mut R,
) -> Result<Vec<Rotation>> {
    if grid.len() < counts.top_pool {
        return Err(Error::PoolTooSmall { available: grid.len(), requested: counts.top_pool });
    }
    let pool = ModePool::new(measure, Some(grid), counts.top_pool, grid.cell_radius())?;
    pool.sample(&Rotation::IDENTITY, r_gt, counts, draw, rng)
}

/// `n_modes + n_uniform` Haar-random rotations followed by `r_gt`.
pub fn uniform_sample<R: Rng + ?Sized>(r_gt: &Rotation, counts: &SamplingCounts, rng: &mut R) -> Vec<Rotation> {
    let mut out: Vec<Rotation> = (0..counts.n_modes + counts.n_uniform).map(|_| Rotation::random(rng)).collect();
    out.push(*r_gt);
    out
}
