//! Helpers shared by the learner and acceptance tests.
#![allow(dead_code)]

use alignist::encoding::EncodingKind;
use alignist::experts::gkl;
use alignist::learner::*;
use alignist::Rotation;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(res: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..res * res).map(|_| rng.gen::<f32>()).collect()
}

/// A model whose final layers are non-zero, so every tensor gets gradient.
pub fn live_model(res: usize, encoding: EncodingKind, seed: u64) -> DualBranchModel {
    let mut r = rng(seed);
    let mut m = DualBranchModel::new(res, encoding, &mut r);
    let last = HEAD_LAYERS - 1;
    m.params.head_sdf[last] = Linear::he(HIDDEN_DIM, 1, &mut r);
    m.params.head_feat[last] = Linear::he(HIDDEN_DIM, 1, &mut r);
    for l in m.params.layers_mut() {
        l.b.mapv_inplace(|_| r.gen_range(-0.1..0.1));
    }
    m
}

/// f64 forward pass from f32 parameters, plus the ReLU activation pattern.
pub fn forward64(params: &Params<f32>, image: &[f32], enc: &Array2<f64>) -> (Activations<f64>, Vec<bool>) {
    let p64: Params<f64> = params.cast();
    let img: Vec<f64> = image.iter().map(|&v| v as f64).collect();
    let act = p64.forward(&img, enc.clone());
    let pattern = act
        .embed
        .iter()
        .chain(act.fused.iter())
        .chain(act.hidden_sdf.iter().flatten())
        .chain(act.hidden_feat.iter().flatten())
        .map(|&v| v > 0.0)
        .collect();
    (act, pattern)
}

/// `Σ g_sdf·s_sdf + g_feat·s_feat`.
pub fn linear_objective(params: &Params<f32>, image: &[f32], enc: &Array2<f64>, g: &[f64], h: &[f64]) -> (f64, Vec<bool>) {
    let (act, pattern) = forward64(params, image, enc);
    let value = act.s_sdf.iter().zip(g).map(|(s, g)| s * g).sum::<f64>()
        + act.s_feat.iter().zip(h).map(|(s, h)| s * h).sum::<f64>();
    (value, pattern)
}

/// Batch-mean GKL of both branches, the training loss.
pub fn gkl_objective(params: &Params<f32>, model: &DualBranchModel, batch: &[TrainExample]) -> (f64, Vec<bool>) {
    let mut total = 0.0;
    let mut pattern = Vec::new();
    for ex in batch {
        let enc: Array2<f64> = model.encode(&ex.rotations);
        let (act, p) = forward64(params, &ex.image, &enc);
        let nu_sdf: Vec<f64> = act.s_sdf.iter().map(|s| s.exp()).collect();
        let nu_feat: Vec<f64> = act.s_feat.iter().map(|s| s.exp()).collect();
        total += gkl(&ex.mu_sdf, &nu_sdf).unwrap() + gkl(&ex.mu_feat, &nu_feat).unwrap();
        pattern.extend(p);
    }
    (total / batch.len() as f64, pattern)
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub tensors: usize,
    pub checked: usize,
    /// Step reductions forced by ReLU kinks inside the difference interval.
    pub kinks: usize,
    pub failures: Vec<String>,
    /// Tensors whose checked entries all had zero gradient.
    pub silent: Vec<String>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.silent.is_empty()
    }
}

/// Central differences of `objective` against `analytic`, tensor by tensor.
/// `per_tensor` caps the entries checked in large tensors: half the largest
/// analytic entries, half random.
pub fn finite_difference_check<F>(
    params: &Params<f32>,
    analytic: &Params<f32>,
    objective: F,
    per_tensor: Option<usize>,
    r: &mut ChaCha8Rng,
) -> FdReport
where
    F: Fn(&Params<f32>) -> (f64, Vec<bool>),
{
    let mut report = FdReport::default();
    let names: Vec<String> = analytic.tensors().into_iter().map(|(n, _)| n).collect();
    let values: Vec<Vec<f32>> = analytic.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
    let mut params = params.clone();
    for (ti, name) in names.iter().enumerate() {
        let len = values[ti].len();
        let entries: Vec<usize> = match per_tensor {
            Some(k) if len > k => {
                let mut by_size: Vec<usize> = (0..len).collect();
                by_size.sort_by(|&a, &b| values[ti][b].abs().total_cmp(&values[ti][a].abs()));
                let mut picks: Vec<usize> = by_size[..k / 2].to_vec();
                picks.extend((0..k - k / 2).map(|_| r.gen_range(0..len)));
                picks
            }
            _ => (0..len).collect(),
        };
        let mut nonzero = false;
        for i in entries {
            let orig = params.tensors_mut()[ti][i];
            // ε = 1e-3, shrunk only while the interval straddles a ReLU kink
            let mut eps = 1e-3f32;
            let fd = loop {
                let plus = orig + eps;
                let minus = orig - eps;
                params.tensors_mut()[ti][i] = plus;
                let (fp, kp) = objective(&params);
                params.tensors_mut()[ti][i] = minus;
                let (fm, km) = objective(&params);
                params.tensors_mut()[ti][i] = orig;
                if kp == km || eps < 1e-6 {
                    break (fp - fm) / (plus as f64 - minus as f64);
                }
                report.kinks += 1;
                eps /= 8.0;
            };
            let a = values[ti][i] as f64;
            let err = (fd - a).abs();
            if !(err <= 1e-6 || err <= 1e-3 * fd.abs().max(a.abs())) {
                report.failures.push(format!("{name}[{i}]: analytic {a:e}, finite difference {fd:e}"));
            }
            report.checked += 1;
            nonzero |= a != 0.0;
        }
        if !nonzero {
            report.silent.push(name.clone());
        }
        report.tensors += 1;
    }
    report
}

/// Rotations spread over SO(3) for quick checks.
pub fn random_rotations(n: usize, r: &mut ChaCha8Rng) -> Vec<Rotation> {
    (0..n).map(|_| Rotation::random(r)).collect()
}
