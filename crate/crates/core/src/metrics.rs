//! Grid log-likelihood, spread, average recall and mode extraction.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experts::Posterior;
use crate::geometry::SymmetryGroup;
use crate::grid::{SO3Grid, SO3_VOLUME};
use crate::rotation::{geodesic_distance, min_distance, Rotation};

/// Added to raw log-likelihoods so the uniform distribution scores zero.
pub fn ll_offset() -> f64 {
    SO3_VOLUME.ln()
}

pub const DEFAULT_AR_THRESHOLD_DEG: f64 = 30.0;

/// Step used to sample continuous symmetry circles into ground-truth sets.
pub const GT_CIRCLE_STEP_DEG: f64 = 1.0;

/// Every rotation equivalent to `r_gt` under `group`; continuous symmetries
/// are sampled every [`GT_CIRCLE_STEP_DEG`].
pub fn gt_set(group: &SymmetryGroup, r_gt: &Rotation) -> Vec<Rotation> {
    group.discretized(GT_CIRCLE_STEP_DEG.to_radians()).into_iter().map(|g| g * *r_gt).collect()
}

/// Mean log density at the cells nearest to each ground-truth rotation.
pub fn log_likelihood(post: &Posterior, grid: &SO3Grid, gt_set: &[Rotation]) -> Result<f64> {
    if gt_set.is_empty() {
        return Err(Error::EmptyGtSet);
    }
    check_grid(post, grid)?;
    let sum: f64 = gt_set.iter().map(|r| post.log_density(grid.nearest_cell(r))).sum();
    Ok(sum / gt_set.len() as f64)
}

/// Expected distance (degrees) to the nearest ground-truth rotation.
pub fn spread(post: &Posterior, grid: &SO3Grid, gt_set: &[Rotation]) -> Result<f64> {
    if gt_set.is_empty() {
        return Err(Error::EmptyGtSet);
    }
    check_grid(post, grid)?;
    let terms: Vec<f64> = grid
        .rotations()
        .par_iter()
        .zip(&post.probs)
        .map(|(r, &p)| if p > 0.0 { p * min_distance(r, gt_set) } else { 0.0 })
        .collect();
    Ok(terms.iter().sum::<f64>().to_degrees())
}

/// Fraction of predictions within `threshold_deg` of some ground truth.
pub fn average_recall(predictions: &[Rotation], gt_sets: &[Vec<Rotation>], threshold_deg: f64) -> Result<f64> {
    if predictions.len() != gt_sets.len() {
        return Err(Error::LengthMismatch(predictions.len(), gt_sets.len()));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let threshold = threshold_deg.to_radians();
    let mut hits = 0usize;
    for (p, gts) in predictions.iter().zip(gt_sets) {
        if gts.is_empty() {
            return Err(Error::EmptyGtSet);
        }
        if min_distance(p, gts) < threshold {
            hits += 1;
        }
    }
    Ok(hits as f64 / predictions.len() as f64)
}

fn check_grid(post: &Posterior, grid: &SO3Grid) -> Result<()> {
    if post.probs.len() != grid.len() {
        return Err(Error::GridMismatch(format!("{} probabilities for {} cells", post.probs.len(), grid.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub cell: usize,
    pub rotation: Rotation,
    /// Probability of the peak cell.
    pub peak: f64,
    /// Probability of all cells assigned to this mode.
    pub mass: f64,
}

/// Greedy non-maximum suppression. Cells are visited by decreasing
/// probability; a cell within `radius_deg` of an existing mode joins the
/// first such mode, otherwise it starts a new one while fewer than `k` modes
/// exist. Modes with mass at or below `min_mass` are dropped.
pub fn extract_modes(post: &Posterior, grid: &SO3Grid, k: usize, radius_deg: f64, min_mass: f64) -> Vec<Mode> {
    let radius = radius_deg.to_radians();
    let mut order: Vec<usize> = (0..post.probs.len()).filter(|&i| post.probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| post.probs[b].total_cmp(&post.probs[a]).then(a.cmp(&b)));
    let mut modes: Vec<Mode> = Vec::new();
    for i in order {
        let r = grid.rotation(i);
        let p = post.probs[i];
        match modes.iter().position(|m| geodesic_distance(&m.rotation, &r) <= radius) {
            Some(j) => modes[j].mass += p,
            None if modes.len() < k => modes.push(Mode { cell: i, rotation: r, peak: p, mass: p }),
            None => {}
        }
    }
    modes.retain(|m| m.mass > min_mass);
    modes
}

/// Metrics for one evaluated view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRow {
    pub index: usize,
    pub ll_raw: f64,
    pub spread_deg: f64,
    /// Error of the argmax cell to the nearest ground truth, degrees.
    pub argmax_error_deg: f64,
}

pub fn evaluate_view(index: usize, post: &Posterior, grid: &SO3Grid, gt_set: &[Rotation]) -> Result<ViewRow> {
    let ll_raw = log_likelihood(post, grid, gt_set)?;
    let spread_deg = spread(post, grid, gt_set)?;
    let argmax = (0..post.probs.len()).max_by(|&a, &b| post.probs[a].total_cmp(&post.probs[b]).then(b.cmp(&a))).unwrap_or(0);
    let argmax_error_deg = min_distance(&grid.rotation(argmax), gt_set).to_degrees();
    Ok(ViewRow { index, ll_raw, spread_deg, argmax_error_deg })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ll_raw: f64,
    pub ll_adjusted: f64,
    pub spread_deg: f64,
    pub ar_at_30: f64,
    pub rows: Vec<ViewRow>,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<ViewRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let ll_raw = rows.iter().map(|r| r.ll_raw).sum::<f64>() / n;
        let spread_deg = rows.iter().map(|r| r.spread_deg).sum::<f64>() / n;
        let ar_at_30 = rows.iter().filter(|r| r.argmax_error_deg < DEFAULT_AR_THRESHOLD_DEG).count() as f64 / n;
        EvalReport { ll_raw, ll_adjusted: ll_raw + ll_offset(), spread_deg, ar_at_30, rows }
    }

    /// Tab-separated per-view table.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("view\tll_raw\tll_adjusted\tspread_deg\targmax_error_deg\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.4}\t{:.4}",
                r.index,
                r.ll_raw,
                r.ll_raw + ll_offset(),
                r.spread_deg,
                r.argmax_error_deg
            );
        }
        out
    }

    /// `key=value` summary block.
    pub fn summary(&self) -> String {
        format!(
            "views={}\nll_raw={:.6}\nll_adjusted={:.6}\nspread_deg={:.4}\nar_at_30={:.4}\n",
            self.rows.len(),
            self.ll_raw,
            self.ll_adjusted,
            self.spread_deg,
            self.ar_at_30
        )
    }
}
