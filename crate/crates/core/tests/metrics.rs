use alignist::experts::{normalize_posterior, normalize_weights, ExpertConfig, Experts, Posterior};
use alignist::geometry::{ShapeKind, ShapeModel, SymmetryGroup};
use alignist::metrics::*;
use alignist::view::{render_view, Light};
use alignist::{geodesic_distance, Rotation, SO3Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tet_gt_set(r_gt: &Rotation) -> Vec<Rotation> {
    SymmetryGroup::tetrahedral().discrete_elements.iter().map(|g| *g * *r_gt).collect()
}

#[test]
fn uniform_and_delta_log_likelihood() {
    let grid = SO3Grid::generate(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gts: Vec<Rotation> = (0..20).map(|_| Rotation::random(&mut rng)).collect();
    let uniform = Posterior::uniform(&grid);
    let ll = log_likelihood(&uniform, &grid, &gts).unwrap();
    assert!((ll + 2.2895).abs() < 1e-4);
    assert!((ll + ll_offset()).abs() < 1e-3);

    let r_gt = gts[0];
    let cell = grid.nearest_cell(&r_gt);
    let mut probs = vec![0.0; grid.len()];
    probs[cell] = 1.0;
    let delta = Posterior { probs, cell_volume: grid.cell_volume() };
    let adjusted = log_likelihood(&delta, &grid, &[r_gt]).unwrap() + ll_offset();
    assert!((adjusted - 12.594).abs() < 1e-3, "{adjusted}");
    assert!((adjusted - (grid.len() as f64).ln()).abs() < 1e-9);
    assert!(spread(&delta, &grid, &[r_gt]).unwrap() <= grid.cell_radius().to_degrees());
}

#[test]
fn log_likelihood_is_shift_invariant() {
    let grid = SO3Grid::generate(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logs: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let gts: Vec<Rotation> = (0..5).map(|_| Rotation::random(&mut rng)).collect();
    let a = log_likelihood(&normalize_posterior(&logs, &grid).unwrap(), &grid, &gts).unwrap();
    let shifted: Vec<f64> = logs.iter().map(|l| l - 77.0).collect();
    let b = log_likelihood(&normalize_posterior(&shifted, &grid).unwrap(), &grid, &gts).unwrap();
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn spread_of_uniform_matches_monte_carlo() {
    let grid = SO3Grid::generate(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gts = tet_gt_set(&Rotation::random(&mut rng));
    let on_grid = spread(&Posterior::uniform(&grid), &grid, &gts).unwrap();
    let n = 1_000_000;
    let mc = (0..n)
        .map(|_| {
            let r = Rotation::random(&mut rng);
            gts.iter().map(|g| geodesic_distance(&r, g)).fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / n as f64;
    assert!((on_grid - mc.to_degrees()).abs() < 0.5, "{on_grid} vs {}", mc.to_degrees());
}

#[test]
fn haar_recall_matches_ball_volume() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 10_000;
    let gts: Vec<Vec<Rotation>> = (0..n).map(|_| vec![Rotation::random(&mut rng)]).collect();
    let preds: Vec<Rotation> = (0..n).map(|_| Rotation::random(&mut rng)).collect();
    let ar = average_recall(&preds, &gts, 30.0).unwrap();
    let theta = std::f64::consts::PI / 6.0;
    let p = (theta - theta.sin()) / std::f64::consts::PI;
    assert!((p - 0.0075).abs() < 1e-4);
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    assert!((ar - p).abs() < 3.0 * sigma, "{ar} vs {p}");
}

#[test]
fn metrics_ignore_gt_order() {
    let grid = SO3Grid::generate(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logs: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let post = normalize_posterior(&logs, &grid).unwrap();
    let gts = tet_gt_set(&Rotation::random(&mut rng));
    let mut reversed = gts.clone();
    reversed.reverse();
    assert!((spread(&post, &grid, &gts).unwrap() - spread(&post, &grid, &reversed).unwrap()).abs() < 1e-9);
    assert!(
        (log_likelihood(&post, &grid, &gts).unwrap() - log_likelihood(&post, &grid, &reversed).unwrap()).abs() < 1e-9
    );
    let preds = vec![Rotation::random(&mut rng)];
    assert_eq!(
        average_recall(&preds, &[gts.clone()], 30.0).unwrap(),
        average_recall(&preds, &[reversed], 30.0).unwrap()
    );
}

#[test]
fn oracle_posterior_and_gt_expansion() {
    let grid = SO3Grid::generate(3).unwrap();
    let shape = ShapeModel::analytic(ShapeKind::Tetrahedron).unwrap();
    let ex = Experts::new(shape.clone(), ExpertConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..3 {
        let r_gt = Rotation::random(&mut rng);
        let cloud = render_view(&shape, &r_gt, 32, Light::ViewAxis).unwrap().sample_visible(100, &mut rng).unwrap();
        let post = normalize_weights(&ex.view(&cloud).unwrap().precompute(&grid).weights, &grid).unwrap();
        let gts = tet_gt_set(&r_gt);
        let single = log_likelihood(&post, &grid, &[r_gt]).unwrap();
        let expanded = log_likelihood(&post, &grid, &gts).unwrap();
        // every mode carries mass, so the expanded set stays far above uniform
        for g in &gts {
            assert!(post.log_density(grid.nearest_cell(g)) + ll_offset() > 3.0);
        }
        assert!(expanded + ll_offset() > 3.0 && single + ll_offset() > 3.0);
        let row = evaluate_view(0, &post, &grid, &gts).unwrap();
        assert!(row.argmax_error_deg <= grid.cell_radius().to_degrees());
        assert!(row.spread_deg >= 0.0);
    }
}

#[test]
fn report_formatting() {
    let rows = vec![
        ViewRow { index: 0, ll_raw: 1.0, spread_deg: 2.0, argmax_error_deg: 10.0 },
        ViewRow { index: 1, ll_raw: 3.0, spread_deg: 4.0, argmax_error_deg: 45.0 },
    ];
    let report = EvalReport::from_rows(rows);
    assert!((report.ll_adjusted - report.ll_raw - 2.2895).abs() < 1e-4);
    assert_eq!(report.ll_raw, 2.0);
    assert_eq!(report.spread_deg, 3.0);
    assert_eq!(report.ar_at_30, 0.5);
    let tsv = report.to_tsv();
    assert_eq!(tsv.lines().count(), 3);
    assert!(tsv.lines().all(|l| l.split('\t').count() == 5));
    let summary = report.summary();
    assert!(summary.contains("views=2\n") && summary.contains("ar_at_30=0.5000\n"));
}
