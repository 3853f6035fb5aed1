//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p alignist-core --test acceptance` runs criteria 1-6, 10 and
//! 11 at full size and the training criteria 7-9 at a reduced scale. Scaled
//! lines are reported but do not decide the exit status.
//!
//! `cargo test -p alignist-core --test acceptance -- --full` (or
//! `ALIGNIST_FULL_ACCEPTANCE=1`) runs 7-9 at full size; that takes days on
//! one core. Numeric arguments select criteria, e.g. `-- 2 10`.
//! `ALIGNIST_LEVEL5=1` also generates the level-5 grid (about 75 MB);
//! `ALIGNIST_ACCEPT_STEPS=n` lengthens the scaled runs.

use std::f64::consts::{E, PI};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use alignist::encoding::EncodingKind;
use alignist::experts::*;
use alignist::geometry::{ShapeKind, ShapeModel, SymmetryGroup};
use alignist::grid::cell_count;
use alignist::learner::*;
use alignist::metrics::{extract_modes, gt_set, ll_offset, log_likelihood, spread};
use alignist::view::{generate_dataset, read_pgm, render_view, write_pgm, Dataset, Light, PairedCloud};
use alignist::{geodesic_distance, Error, Rotation, SO3Grid};
use nalgebra::Vector3;
use rand::Rng;

mod common;
use common::{finite_difference_check, gkl_objective, live_model, rng};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

/// Accumulates sub-checks of one criterion.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !ok {
            self.failed.push(what.clone());
        }
        self.notes.push(what);
    }

    fn outcome(self) -> Outcome {
        if self.failed.is_empty() {
            Outcome::new(true, self.notes.join("; "))
        } else {
            Outcome::new(false, format!("failed: {}", self.failed.join("; ")))
        }
    }
}

fn view_cloud(shape: &ShapeModel, r: &Rotation, n: usize, seed: u64) -> PairedCloud {
    render_view(shape, r, 32, Light::ViewAxis).unwrap().sample_visible(n, &mut rng(seed)).unwrap()
}

fn c1_grid_law() -> Outcome {
    let mut c = Checks::default();
    let counts_ok = (0..=5).all(|l| cell_count(l) == 72 * 8usize.pow(l));
    c.check(counts_ok && cell_count(5) == 2_359_296, "72·8^L for L = 0..5, level 5 = 2359296");
    for l in 0..=3 {
        let n = SO3Grid::generate(l).unwrap().len();
        c.check(n == cell_count(l), format!("L{l} generated {n}"));
    }
    let t = Instant::now();
    let g4 = SO3Grid::generate(4).unwrap();
    let secs = t.elapsed().as_secs_f64();
    c.check(g4.len() == 294_912, format!("L4 generated {}", g4.len()));
    c.check(secs < 30.0, format!("L4 in {secs:.1}s (< 30s)"));
    if std::env::var_os("ALIGNIST_LEVEL5").is_some() {
        let n = SO3Grid::generate(5).unwrap().len();
        c.check(n == 2_359_296, format!("L5 generated {n}"));
    }
    c.outcome()
}

fn c2_mode_structure() -> Outcome {
    let t = Instant::now();
    let mut c = Checks::default();
    let grid = SO3Grid::generate(3).unwrap();
    let radius = grid.cell_radius();
    for (kind, expected) in [(ShapeKind::Tetrahedron, 12), (ShapeKind::Cube, 24), (ShapeKind::Icosahedron, 60)] {
        let shape = ShapeModel::analytic(kind).unwrap();
        let group = shape.symmetry_group().unwrap();
        let r_gt = Rotation::random(&mut rng(20));
        let experts = Experts::new(shape.clone(), ExpertConfig::default()).unwrap();
        let cloud = view_cloud(&shape, &r_gt, 100, 21);
        let measure = experts.view(&cloud).unwrap().precompute(&grid);
        let post = normalize_weights(&measure.weights, &grid).unwrap();
        let modes = extract_modes(&post, &grid, 2 * expected + 10, 20.0, 1e-4);
        let worst = modes
            .iter()
            .map(|m| group.distance_to_orbit(&m.rotation, &r_gt))
            .fold(0.0, f64::max);
        c.check(
            modes.len() == expected && worst <= radius,
            format!("{kind} {} modes (want {expected}), worst {:.2}°", modes.len(), worst.to_degrees()),
        );
    }
    for kind in [ShapeKind::Cone, ShapeKind::Cylinder] {
        let shape = ShapeModel::analytic(kind).unwrap();
        let group = shape.symmetry_group().unwrap();
        let axis = group.continuous_axes[0].axis;
        let r_gt = Rotation::random(&mut rng(22));
        let experts = Experts::new(shape.clone(), ExpertConfig::default()).unwrap();
        let cloud = view_cloud(&shape, &r_gt, 100, 23);
        let ve = experts.view(&cloud).unwrap();
        let mut worst: f64 = 0.0;
        for (i, off) in [Rotation::IDENTITY, Rotation::from_axis_angle(Vector3::new(0.7, 0.1, 0.2), 3f64.to_radians())]
            .iter()
            .enumerate()
        {
            let w: Vec<f64> = (0..360)
                .map(|k| {
                    let spin = Rotation::from_axis_angle(axis, (k as f64).to_radians());
                    let (s, f) = ve.scores(&(spin * *off * r_gt));
                    s * f
                })
                .collect();
            let hi = w.iter().copied().fold(f64::MIN, f64::max);
            let lo = w.iter().copied().fold(f64::MAX, f64::min);
            if hi <= 0.0 {
                c.check(false, format!("{kind} circle {i} scores zero"));
            }
            worst = worst.max((hi - lo) / hi);
        }
        c.check(worst < 0.01, format!("{kind} variation along circle {:.2e}", worst));
    }
    let secs = t.elapsed().as_secs_f64();
    c.check(secs < 120.0, format!("{secs:.0}s (< 120s)"));
    c.outcome()
}

fn c3_stabilizer_invariance() -> Outcome {
    let mut c = Checks::default();
    let mut r = rng(30);
    for kind in ShapeKind::ANALYTIC {
        let shape = ShapeModel::analytic(kind).unwrap();
        let group = shape.symmetry_group().unwrap();
        let elements = group.discretized(PI / 180.0);
        let experts = Experts::new(shape.clone(), ExpertConfig::default()).unwrap();
        let cloud = view_cloud(&shape, &Rotation::random(&mut r), 100, 31);
        let ve = experts.view(&cloud).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let rot = Rotation::random(&mut r);
            let (s0, f0) = ve.scores(&rot);
            for g in &elements {
                let (s, f) = ve.scores(&(*g * rot));
                let rel = |a: f64, b: f64| if b == 0.0 { (a - b).abs() } else { (a - b).abs() / b };
                worst = worst.max(rel(s, s0)).max(rel(f, f0));
            }
        }
        c.check(worst < 1e-5, format!("{kind} {} elements, max rel {worst:.1e}", elements.len()));
    }
    c.outcome()
}

fn c4_gkl() -> Outcome {
    let mut c = Checks::default();
    let mut r = rng(40);
    let mut negatives = 0;
    for _ in 0..10_000 {
        let n = r.gen_range(1..8);
        let mu: Vec<f64> = (0..n).map(|_| r.gen_range(-8.0..3.0f64).exp()).collect();
        let nu: Vec<f64> = (0..n).map(|_| r.gen_range(-8.0..3.0f64).exp()).collect();
        if gkl(&mu, &nu).unwrap() < 0.0 {
            negatives += 1;
        }
    }
    c.check(negatives == 0, format!("{negatives} negative of 10^4"));
    let mut nonzero_at_equality = 0;
    for _ in 0..1000 {
        let mu: Vec<f64> = (0..5).map(|_| r.gen_range(-8.0..3.0f64).exp()).collect();
        if gkl(&mu, &mu).unwrap() != 0.0 {
            nonzero_at_equality += 1;
        }
    }
    c.check(nonzero_at_equality == 0, "zero at equality");
    let v = gkl(&[1.0, 1.0], &[E, 1.0]).unwrap();
    c.check((v - (E - 2.0)).abs() < 1e-12, format!("GKL([1,1],[e,1]) = {v:.12}"));
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..500 {
        let n = r.gen_range(1..8);
        let mu: Vec<f64> = (0..n).map(|_| r.gen_range(0.05..3.0)).collect();
        let s: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..1.0)).collect();
        let nu: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let grad = gkl_grad_logscores(&mu, &nu).unwrap();
        for i in 0..n {
            let eval = |d: f64| {
                let t: Vec<f64> = s.iter().enumerate().map(|(j, v)| if j == i { (v + d).exp() } else { v.exp() }).collect();
                gkl(&mu, &t).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1.0));
        }
    }
    c.check(worst <= 1e-6, format!("gradient vs central FD max rel {worst:.1e}"));
    c.outcome()
}

fn micro_batch(res: usize, n: usize) -> Vec<TrainExample> {
    let shape = ShapeModel::analytic(ShapeKind::Tetrahedron).unwrap();
    let experts = Experts::new(shape.clone(), ExpertConfig::default()).unwrap();
    (0..2u64)
        .map(|k| {
            let mut r = rng(50 + k);
            let r_gt = Rotation::random(&mut r);
            let view = render_view(&shape, &r_gt, res, Light::ViewAxis).unwrap();
            let cloud = view.sample_visible(100, &mut r).unwrap();
            // half the rotations near the ground truth so μ is not negligible
            let mut rotations: Vec<Rotation> = (0..n / 2).map(|_| Rotation::random_in_ball(&mut r, 0.2) * r_gt).collect();
            rotations.extend((n / 2..n).map(|_| Rotation::random(&mut r)));
            let poe = experts.view(&cloud).unwrap().poe(&rotations);
            TrainExample { image: view.image, rotations, mu_sdf: poe.sdf, mu_feat: poe.feat }
        })
        .collect()
}

fn c5_learner_gradients() -> Outcome {
    let mut c = Checks::default();
    let batch = micro_batch(32, 8);
    for encoding in [EncodingKind::Cube, EncodingKind::MatrixElements] {
        let model = live_model(32, encoding, 51);
        let parts: Vec<ExampleGradients> = batch.iter().map(|ex| model.example_gradients(ex).unwrap()).collect();
        let mut grads = model.params.zeros_like();
        for p in &parts {
            grads.add_assign(&p.grads);
        }
        grads.scale(1.0 / batch.len() as f32);
        let clamped: usize = parts.iter().map(|p| p.clamped).sum();
        let report =
            finite_difference_check(&model.params, &grads, |p| gkl_objective(p, &model, &batch), Some(64), &mut rng(52));
        c.check(
            report.passed() && report.tensors == 22 && clamped == 0,
            format!(
                "{} encoding: {} tensors, {} entries, {} failures, {} silent tensors",
                encoding.name(),
                report.tensors,
                report.checked,
                report.failures.len(),
                report.silent.len()
            ),
        );
        for f in report.failures.iter().take(3) {
            c.notes.push(f.clone());
        }
    }
    c.outcome()
}

fn c6_uniform_baseline() -> Outcome {
    let mut c = Checks::default();
    let dir = tempfile::tempdir().unwrap();
    let model = DualBranchModel::new(32, EncodingKind::Cube, &mut rng(60));
    for (spec, kind) in [("tetrahedron", ShapeKind::Tetrahedron), ("cylinder", ShapeKind::Cylinder)] {
        let shape = ShapeModel::analytic(kind).unwrap();
        let group = shape.symmetry_group().unwrap();
        let ds = generate_dataset(&shape, spec, 4, 32, 61, &dir.path().join(spec)).unwrap();
        for level in [2, 3] {
            let grid = SO3Grid::generate(level).unwrap();
            let mut raw = 0.0;
            for i in 0..ds.len() {
                let post = model.infer_distribution(&ds.load_image(i).unwrap(), &grid).unwrap();
                raw += log_likelihood(&post, &grid, &gt_set(&group, &ds.rotations[i])).unwrap();
            }
            raw /= ds.len() as f64;
            let adjusted = raw + ll_offset();
            c.check(
                adjusted.abs() <= 0.01 && (raw + 2.29).abs() <= 0.01,
                format!("{spec} L{level}: adjusted {adjusted:.4}, raw {raw:.4}"),
            );
        }
    }
    c.outcome()
}

/// One training-and-evaluation run on a single shape.
#[derive(Debug, Clone)]
struct RunSpec {
    kind: ShapeKind,
    encoding: EncodingKind,
    mode_focused: bool,
    n_train: usize,
    n_eval: usize,
    steps: usize,
    batch: usize,
    counts: SamplingCounts,
    lr: f32,
    eval_level: u32,
    seed: u64,
}

impl RunSpec {
    fn full(kind: ShapeKind) -> Self {
        RunSpec {
            kind,
            encoding: EncodingKind::Cube,
            mode_focused: true,
            n_train: 5000,
            n_eval: 64,
            steps: 20_000,
            batch: TrainConfig::default().batch_images,
            counts: SamplingCounts::default(),
            lr: AdamConfig::default().lr,
            eval_level: 4,
            seed: 70,
        }
    }

    /// 1/16 of the rotations per image, a quarter of the images per step,
    /// 300 steps (`ALIGNIST_ACCEPT_STEPS` overrides) at a larger learning
    /// rate, evaluation at level 3.
    fn scaled(kind: ShapeKind) -> Self {
        let steps = std::env::var("ALIGNIST_ACCEPT_STEPS").ok().and_then(|v| v.parse().ok()).unwrap_or(300);
        RunSpec {
            n_train: 256,
            n_eval: 16,
            steps,
            batch: 4,
            counts: SamplingCounts { top_pool: 20_000, n_modes: 187, n_uniform: 68 },
            lr: 1e-3,
            eval_level: 3,
            ..Self::full(kind)
        }
    }

    fn describe(&self) -> String {
        format!(
            "{} renders, {}x{} rotations, {} steps, lr {:e}, L{} on {} views",
            self.n_train,
            self.batch,
            self.counts.total(),
            self.steps,
            self.lr,
            self.eval_level,
            self.n_eval
        )
    }
}

#[derive(Debug, Clone)]
struct RunResult {
    ll: f64,
    oracle_ll: f64,
    spread_deg: f64,
    /// Views whose top-|G| modes each sit within 10° of a distinct g·R_gt.
    views_with_all_modes: usize,
    clamped: usize,
    secs: f64,
}

/// Modes matched one-to-one to `targets` within `tol`.
fn all_modes_recovered(modes: &[alignist::metrics::Mode], targets: &[Rotation], tol: f64) -> bool {
    if modes.len() != targets.len() {
        return false;
    }
    let mut used = vec![false; targets.len()];
    for m in modes {
        let best = (0..targets.len())
            .filter(|&j| !used[j])
            .map(|j| (j, geodesic_distance(&m.rotation, &targets[j])))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((j, d)) if d <= tol => used[j] = true,
            _ => return false,
        }
    }
    true
}

fn training_run(spec: &RunSpec) -> RunResult {
    let t = Instant::now();
    let shape = ShapeModel::analytic(spec.kind).unwrap();
    let group: SymmetryGroup = shape.symmetry_group().unwrap();
    let experts = Experts::new(shape.clone(), ExpertConfig::default()).unwrap();
    let mut r = rng(spec.seed);
    let rotations: Vec<Rotation> = (0..spec.n_train + spec.n_eval).map(|_| Rotation::random(&mut r)).collect();
    let images: Vec<Vec<f32>> =
        rotations.iter().map(|rot| render_view(&shape, rot, 32, Light::ViewAxis).unwrap().image).collect();
    let cfg = TrainConfig {
        batch_images: spec.batch,
        counts: spec.counts,
        adam: AdamConfig { lr: spec.lr, ..AdamConfig::default() },
        steps: spec.steps,
        seed: spec.seed,
        encoding: spec.encoding,
        mode_focused: spec.mode_focused,
        ..TrainConfig::default()
    };
    let source = ExampleSource::new(&experts, &cfg, 32).unwrap();
    let mut model = DualBranchModel::new(32, spec.encoding, &mut r);
    let mut opt = Adam::new(&model.params, cfg.adam);
    let n = spec.n_train;
    let trace = train(&mut model, &mut opt, &source, &images[..n], &rotations[..n], &cfg, |_, _| {}).unwrap();
    let clamped = trace.iter().map(|l| l.clamped).sum();

    let grid = SO3Grid::generate(spec.eval_level).unwrap();
    let (mut ll, mut oracle_ll, mut spread_deg, mut views_with_all_modes) = (0.0, 0.0, 0.0, 0);
    for i in n..n + spec.n_eval {
        let gts = gt_set(&group, &rotations[i]);
        let post = model.infer_distribution(&images[i], &grid).unwrap();
        ll += log_likelihood(&post, &grid, &gts).unwrap() + ll_offset();
        spread_deg += spread(&post, &grid, &gts).unwrap();
        if let Some(order) = group.order() {
            let modes = extract_modes(&post, &grid, order, 20.0, 0.0);
            if all_modes_recovered(&modes, &gts, 10f64.to_radians()) {
                views_with_all_modes += 1;
            }
        }
        let cloud = view_cloud(&shape, &rotations[i], experts.config().n_points, spec.seed + i as u64);
        let oracle = normalize_weights(&experts.view(&cloud).unwrap().precompute(&grid).weights, &grid).unwrap();
        oracle_ll += log_likelihood(&oracle, &grid, &gts).unwrap() + ll_offset();
    }
    let m = spec.n_eval as f64;
    RunResult {
        ll: ll / m,
        oracle_ll: oracle_ll / m,
        spread_deg: spread_deg / m,
        views_with_all_modes,
        clamped,
        secs: t.elapsed().as_secs_f64(),
    }
}

/// Shared between criteria 7 and 8.
struct Runs {
    full: bool,
    tet_mode: Option<RunResult>,
}

impl Runs {
    fn spec(&self, kind: ShapeKind) -> RunSpec {
        if self.full {
            RunSpec::full(kind)
        } else {
            RunSpec::scaled(kind)
        }
    }

    fn tet_mode(&mut self) -> RunResult {
        if self.tet_mode.is_none() {
            self.tet_mode = Some(training_run(&self.spec(ShapeKind::Tetrahedron)));
        }
        self.tet_mode.clone().unwrap()
    }
}

fn c7_training_run(runs: &mut Runs) -> Outcome {
    let spec = runs.spec(ShapeKind::Tetrahedron);
    let res = runs.tet_mode();
    let mut c = Checks::default();
    c.check(res.ll >= 6.0, format!("adjusted LL {:.3} (>= 6.0)", res.ll));
    c.check(res.ll >= res.oracle_ll - 1.5, format!("oracle {:.3} (within 1.5)", res.oracle_ll));
    c.check(
        res.views_with_all_modes == spec.n_eval,
        format!("all 12 modes within 10° on {}/{} views", res.views_with_all_modes, spec.n_eval),
    );
    c.check(res.spread_deg <= 5.0, format!("spread {:.2}° (<= 5°)", res.spread_deg));
    c.check(res.clamped == 0, format!("{} clamped scores", res.clamped));
    let mut o = c.outcome();
    o.detail = format!("{} [{}; {:.0}s]", o.detail, spec.describe(), res.secs);
    o
}

fn c8_sampling_ablation(runs: &mut Runs) -> Outcome {
    let spec = RunSpec { mode_focused: false, ..runs.spec(ShapeKind::Tetrahedron) };
    let mode = runs.tet_mode();
    let uniform = training_run(&spec);
    let gap = mode.ll - uniform.ll;
    Outcome::new(
        gap >= 0.5,
        format!(
            "mode-focused {:.3} vs uniform {:.3}, gap {gap:.3} (>= 0.5) [{}; {:.0}s]",
            mode.ll,
            uniform.ll,
            spec.describe(),
            uniform.secs
        ),
    )
}

fn c9_encoding_ablation(runs: &mut Runs) -> Outcome {
    let cube = runs.spec(ShapeKind::Cube);
    let matrix = RunSpec { encoding: EncodingKind::MatrixElements, ..cube.clone() };
    let a = training_run(&cube);
    let b = training_run(&matrix);
    Outcome::new(
        b.ll <= a.ll,
        format!(
            "cube object: matrix encoding {:.3} vs cube encoding {:.3}, need matrix <= cube [{}; {:.0}s]",
            b.ll,
            a.ll,
            cube.describe(),
            a.secs + b.secs
        ),
    )
}

fn top_cells(w: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|x| b.contains(x)).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Top-12 Jaccard between the transferred anchor measure and the direct one.
fn transfer_jaccard(experts: &Experts, grid: &SO3Grid, r_a: &Rotation, r_b: &Rotation) -> f64 {
    let shape = experts.shape();
    let cloud_a = render_view(shape, r_a, 32, Light::ViewAxis).unwrap().all_visible();
    let cloud_b = render_view(shape, r_b, 32, Light::ViewAxis).unwrap().all_visible();
    let direct = experts.view(&cloud_b).unwrap().precompute(grid);
    let anchor = experts.view(&cloud_a).unwrap().precompute_refined(grid, 6, 1024).unwrap();
    let moved = rotate_grid_measure(&anchor, Some(grid), &transfer_rotation(r_a, r_b)).unwrap();
    let transferred = rebin_nearest(&moved, grid).unwrap();
    jaccard(&top_cells(&transferred, 12), &top_cells(&direct.weights, 12))
}

fn c10_transfer() -> Outcome {
    let shape = ShapeModel::analytic(ShapeKind::Tetrahedron).unwrap();
    let experts = Experts::new(shape, ExpertConfig::default()).unwrap();
    let grid = SO3Grid::generate(3).unwrap();
    let mut r = rng(5);
    let mut rolls = Vec::new();
    for _ in 0..6 {
        let r_a = Rotation::random(&mut r);
        let roll = Rotation::from_axis_angle(Vector3::z(), r.gen_range(0.3..6.0));
        rolls.push(transfer_jaccard(&experts, &grid, &r_a, &(r_a * roll)));
    }
    let general: Vec<f64> = (0..2)
        .map(|_| {
            let (a, b) = (Rotation::random(&mut r), Rotation::random(&mut r));
            transfer_jaccard(&experts, &grid, &a, &b)
        })
        .collect();
    let mean = rolls.iter().sum::<f64>() / rolls.len() as f64;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
    Outcome::new(
        mean >= 0.9,
        format!(
            "camera-roll pairs mean Jaccard {mean:.3} (>= 0.9) [{}]; other viewpoint pairs (reported only) [{}]",
            fmt(&rolls),
            fmt(&general)
        ),
    )
}

fn corrupt(path: &Path, at: usize, byte: u8) -> Vec<u8> {
    let orig = fs::read(path).unwrap();
    let mut bad = orig.clone();
    bad[at] = byte;
    fs::write(path, &bad).unwrap();
    orig
}

fn c11_round_trips() -> Outcome {
    let mut c = Checks::default();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let grid = SO3Grid::generate(2).unwrap();
    let (g1, g2) = (d.join("g1.bin"), d.join("g2.bin"));
    grid.save(&g1).unwrap();
    SO3Grid::load(&g1).unwrap().save(&g2).unwrap();
    c.check(fs::read(&g1).unwrap() == fs::read(&g2).unwrap(), "grid bitwise");
    let orig = corrupt(&g1, 0, b'X');
    let magic = matches!(SO3Grid::load(&g1), Err(Error::Format(_)));
    fs::write(&g1, &orig).unwrap();
    corrupt(&g1, 4, 9);
    let version = matches!(SO3Grid::load(&g1), Err(Error::VersionMismatch { .. }));
    fs::write(&g1, &orig[..orig.len() - 5]).unwrap();
    c.check(magic && version && SO3Grid::load(&g1).is_err(), "grid corruption rejected");

    let shape = ShapeModel::analytic(ShapeKind::Cube).unwrap();
    let experts = Experts::new(shape.clone(), ExpertConfig::default()).unwrap();
    let ve_cloud = view_cloud(&shape, &Rotation::random(&mut rng(110)), 100, 111);
    let ve = experts.view(&ve_cloud).unwrap();
    let grid1 = SO3Grid::generate(1).unwrap();
    for (name, m) in [("dense", ve.precompute(&grid1)), ("refined", ve.precompute_refined(&grid1, 3, 8).unwrap())] {
        let (p1, p2) = (d.join(format!("{name}1.meas")), d.join(format!("{name}2.meas")));
        m.write(&p1).unwrap();
        Measure::read(&p1).unwrap().write(&p2).unwrap();
        c.check(fs::read(&p1).unwrap() == fs::read(&p2).unwrap(), format!("{name} measure bitwise"));
        let orig = corrupt(&p1, 0, b'X');
        let magic = matches!(Measure::read(&p1), Err(Error::Format(_)));
        fs::write(&p1, &orig).unwrap();
        corrupt(&p1, 4, 77);
        let version = matches!(Measure::read(&p1), Err(Error::VersionMismatch { .. }));
        fs::write(&p1, &orig[..orig.len() - 1]).unwrap();
        c.check(magic && version && Measure::read(&p1).is_err(), format!("{name} measure corruption rejected"));
    }

    for encoding in [EncodingKind::Cube, EncodingKind::MatrixElements] {
        let model = live_model(32, encoding, 112);
        let (p1, p2) = (d.join("m1.algn"), d.join("m2.algn"));
        model.save(&p1).unwrap();
        let back = DualBranchModel::load(&p1).unwrap();
        back.save(&p2).unwrap();
        let same_params = back.params.tensors().iter().zip(model.params.tensors()).all(|(a, b)| a.1 == b.1);
        c.check(
            fs::read(&p1).unwrap() == fs::read(&p2).unwrap() && same_params,
            format!("{} checkpoint bitwise", encoding.name()),
        );
        let orig = corrupt(&p1, 0, b'X');
        let magic = DualBranchModel::load(&p1).is_err();
        fs::write(&p1, &orig).unwrap();
        corrupt(&p1, 8, 200);
        let res = DualBranchModel::load(&p1).is_err();
        fs::write(&p1, &orig[..orig.len() - 4]).unwrap();
        let short = DualBranchModel::load(&p1).is_err();
        let mut long = orig.clone();
        long.push(0);
        fs::write(&p1, &long).unwrap();
        c.check(magic && res && short && DualBranchModel::load(&p1).is_err(), "checkpoint corruption rejected");
    }

    let ds_dir = d.join("ds");
    let ds = generate_dataset(&shape, "cube", 6, 32, 113, &ds_dir).unwrap();
    let back = Dataset::load(&ds_dir).unwrap();
    let copy_dir = d.join("ds_copy");
    fs::create_dir_all(&copy_dir).unwrap();
    let copy = Dataset { dir: copy_dir.clone(), ..back.clone() };
    copy.write_index().unwrap();
    for f in &back.files {
        let (w, h, pixels) = read_pgm(&ds_dir.join(f)).unwrap();
        assert_eq!((w, h), (32, 32));
        write_pgm(&copy_dir.join(f), w, &pixels).unwrap();
    }
    let mut identical = back.rotations == ds.rotations;
    for entry in fs::read_dir(&ds_dir).unwrap() {
        let name = entry.unwrap().file_name();
        identical &= fs::read(ds_dir.join(&name)).unwrap() == fs::read(copy_dir.join(&name)).unwrap();
    }
    c.check(identical, "dataset bitwise");
    let rot = ds_dir.join("rotations.f32");
    let orig = corrupt(&rot, 0, b'X');
    let magic = matches!(Dataset::load(&ds_dir), Err(Error::Format(_)));
    fs::write(&rot, &orig[..orig.len() - 2]).unwrap();
    let short = Dataset::load(&ds_dir).is_err();
    fs::write(&rot, &orig).unwrap();
    let manifest = ds_dir.join("manifest");
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replacen("# shape=", "# garbage ", 1)).unwrap();
    let header = matches!(Dataset::load(&ds_dir), Err(Error::Parse { .. }));
    c.check(magic && short && header, "dataset corruption rejected");
    c.outcome()
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--full") || std::env::var_os("ALIGNIST_FULL_ACCEPTANCE").is_some();
    let selected: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: u32| selected.is_empty() || selected.contains(&id);
    let mut runs = Runs { full, tet_mode: None };

    type Criterion<'a> = Box<dyn FnMut(&mut Runs) -> Outcome + 'a>;
    let criteria: Vec<(u32, &str, bool, Criterion)> = vec![
        (1, "grid law", false, Box::new(|_| c1_grid_law())),
        (2, "mode structure", false, Box::new(|_| c2_mode_structure())),
        (3, "stabilizer invariance", false, Box::new(|_| c3_stabilizer_invariance())),
        (4, "GKL correctness", false, Box::new(|_| c4_gkl())),
        (5, "learner gradient check", false, Box::new(|_| c5_learner_gradients())),
        (6, "uniform baseline calibration", false, Box::new(|_| c6_uniform_baseline())),
        (7, "tetrahedron training run", true, Box::new(c7_training_run)),
        (8, "sampling ablation", true, Box::new(c8_sampling_ablation)),
        (9, "encoding ablation", true, Box::new(c9_encoding_ablation)),
        (10, "viewpoint transfer", false, Box::new(|_| c10_transfer())),
        (11, "format round trips", false, Box::new(|_| c11_round_trips())),
    ];

    let (mut passed, mut run, mut gating_failures) = (0, 0, 0);
    for (id, name, training, mut f) in criteria {
        if !wanted(id) {
            continue;
        }
        let t = Instant::now();
        let outcome = f(&mut runs);
        let scaled = training && !full;
        run += 1;
        if outcome.pass {
            passed += 1;
        } else if !scaled {
            gating_failures += 1;
        }
        println!(
            "criterion {id:>2} {name}: {}{} ({:.1}s) {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            if scaled { " [scaled]" } else { "" },
            t.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    println!(
        "acceptance: {passed}/{run} passed{}",
        if full { "" } else { "; scaled criteria 7-9 are reported, not gating (full size: -- --full)" }
    );
    if gating_failures > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
