use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alignist::config::{RunConfig, KEYS};
use alignist::experts::{normalize_posterior, Experts, Measure};
use alignist::geometry::ShapeModel;
use alignist::learner::{train, Adam, DualBranchModel, ExampleSource};
use alignist::metrics::{evaluate_view, gt_set, EvalReport};
use alignist::view::{generate_dataset, render_view, Dataset, Light};
use alignist::viz::{write_svg, VizOptions};
use alignist::SO3Grid;
use anyhow::{bail, Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Command};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A problem with how the tool was invoked; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// `--config` plus one flag per config key.
fn with_keys(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value file; flags given on the command line win"),
    );
    KEYS.iter().fold(cmd, |cmd, (key, help)| {
        let long: &'static str = Box::leak(key.replace('_', "-").into_boxed_str());
        cmd.arg(Arg::new(*key).long(long).value_name("VALUE").help(*help).action(ArgAction::Set))
    })
}

pub fn cli() -> Command {
    Command::new("alignist")
        .about("Rotation distributions over SO(3) from CAD-derived expert supervision")
        .after_help("Environment: ALIGNIST_THREADS caps the number of worker threads.")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("grid")
                .about("Equivolumetric SO(3) grids")
                .subcommand_required(true)
                .subcommand(with_keys(Command::new("gen").about("Write the grid of --level to --out"))),
        )
        .subcommand(
            Command::new("dataset")
                .about("Rendered datasets")
                .subcommand_required(true)
                .subcommand(with_keys(
                    Command::new("gen").about("Render --views random views of --shape at --res into --out"),
                )),
        )
        .subcommand(with_keys(
            Command::new("score").about("Product-of-experts measure of the view at --rgt on the --level grid"),
        ))
        .subcommand(with_keys(Command::new("train").about("Train a model on --dataset and write it to --out")))
        .subcommand(with_keys(Command::new("eval").about("Evaluate --ckpt on --dataset at grid --level")))
        .subcommand(with_keys(
            Command::new("viz").about("Plot --input (a measure) or the posterior of --ckpt on --dataset view --view"),
        ))
}

fn run_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        cfg.apply_file(Path::new(path)).with_context(|| format!("reading config {path}"))?;
    }
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v).map_err(|e| usage(format!("--{}: {e}", key.replace('_', "-"))))?;
        }
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn require<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| usage(format!("--{} is required", key.replace('_', "-"))))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        if !dir.is_dir() {
            bail!(usage(format!("output directory {} does not exist", dir.display())));
        }
    }
    Ok(())
}

fn ensure_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        bail!(usage(format!("{} does not exist", path.display())));
    }
    Ok(())
}

fn cmd_grid(cfg: &RunConfig) -> Result<()> {
    let out = require(&cfg.out, "out")?;
    ensure_parent(out)?;
    let grid = SO3Grid::generate(cfg.level)?;
    grid.save(out)?;
    println!("level={} cells={} out={}", cfg.level, grid.len(), out.display());
    Ok(())
}

fn cmd_dataset(cfg: &RunConfig) -> Result<()> {
    let out = require(&cfg.out, "out")?;
    let shape = ShapeModel::from_spec(&cfg.shape)?;
    let ds = generate_dataset(&shape, &cfg.shape, cfg.views, cfg.res, cfg.seed, out)?;
    println!("shape={} views={} res={} out={}", ds.shape, ds.len(), ds.res, out.display());
    Ok(())
}

fn cmd_score(cfg: &RunConfig) -> Result<()> {
    let out = require(&cfg.out, "out")?;
    let r_gt = *require(&cfg.rgt, "rgt")?;
    ensure_parent(out)?;
    let shape = ShapeModel::from_spec(&cfg.shape)?;
    let experts = Experts::new(shape.clone(), cfg.expert)?;
    let view = render_view(&shape, &r_gt, cfg.res, Light::ViewAxis)?;
    let cloud = view.sample_visible(cfg.expert.n_points, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let grid = SO3Grid::generate(cfg.level)?;
    let measure = experts.view(&cloud)?.precompute(&grid);
    measure.write(out)?;
    let max = measure.weights.iter().copied().fold(0.0, f64::max);
    println!("cells={} max_weight={max:.6} out={}", measure.len(), out.display());
    Ok(())
}

fn load_images(ds: &Dataset) -> Result<Vec<Vec<f32>>> {
    (0..ds.len()).map(|i| ds.load_image(i).map_err(Into::into)).collect()
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let dir = require(&cfg.dataset, "dataset")?;
    let out = require(&cfg.out, "out")?;
    ensure_exists(dir)?;
    ensure_parent(out)?;
    let ds = Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let shape = ShapeModel::from_spec(&ds.shape)?;
    let experts = Experts::new(shape, cfg.expert)?;
    let images = load_images(&ds)?;
    let source = ExampleSource::new(&experts, &cfg.train, ds.res)?;
    let mut model = DualBranchModel::new(ds.res, cfg.train.encoding, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut opt = Adam::new(&model.params, cfg.train.adam);
    let every = (cfg.train.steps / 20).max(1);
    let trace = train(&mut model, &mut opt, &source, &images, &ds.rotations, &cfg.train, |step, loss| {
        if step % every == 0 || step + 1 == cfg.train.steps {
            log::info!("step {step}: gkl_sdf={:.4} gkl_feat={:.4}", loss.sdf, loss.feat);
        }
    })?;
    model.save(out)?;
    let mut tsv = String::from("step\tgkl_sdf\tgkl_feat\tclamped\n");
    for (i, l) in trace.iter().enumerate() {
        tsv.push_str(&format!("{i}\t{}\t{}\t{}\n", l.sdf, l.feat, l.clamped));
    }
    let trace_path = PathBuf::from(format!("{}.trace.tsv", out.display()));
    fs::write(&trace_path, tsv)?;
    let clamped: usize = trace.iter().map(|l| l.clamped).sum();
    if clamped > 0 {
        log::warn!("{clamped} log-scores hit the clamp during training");
    }
    match trace.last() {
        Some(l) => println!("steps={} gkl_sdf={:.4} gkl_feat={:.4} out={}", trace.len(), l.sdf, l.feat, out.display()),
        None => println!("steps=0 out={}", out.display()),
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let ckpt = require(&cfg.ckpt, "ckpt")?;
    let dir = require(&cfg.dataset, "dataset")?;
    ensure_exists(ckpt)?;
    ensure_exists(dir)?;
    if let Some(out) = &cfg.out {
        ensure_parent(out)?;
    }
    let model = DualBranchModel::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let ds = Dataset::load(dir)?;
    if ds.res != model.res {
        bail!("dataset resolution {} does not match the checkpoint's {}", ds.res, model.res);
    }
    let group = ShapeModel::from_spec(&ds.shape)?.symmetry_group()?;
    let grid = SO3Grid::generate(cfg.level)?;
    let mut rows = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let image = ds.load_image(i)?;
        let post = model.infer_distribution(&image, &grid)?;
        rows.push(evaluate_view(i, &post, &grid, &gt_set(&group, &ds.rotations[i]))?);
    }
    let report = EvalReport::from_rows(rows);
    if let Some(out) = &cfg.out {
        fs::write(out, report.to_tsv())?;
    }
    let wanted = |m: &str| cfg.metrics.iter().any(|x| x == m);
    println!("views={}", report.rows.len());
    println!("level={}", cfg.level);
    if wanted("ll") {
        println!("ll_raw={:.4}", report.ll_raw);
        println!("ll_adjusted={:.4}", report.ll_adjusted);
    }
    if wanted("spread") {
        println!("spread_deg={:.4}", report.spread_deg);
    }
    if wanted("ar") {
        println!("ar_at_30={:.4}", report.ar_at_30);
    }
    Ok(())
}

fn cmd_viz(cfg: &RunConfig) -> Result<()> {
    let out = require(&cfg.out, "out")?;
    ensure_parent(out)?;
    let opts = VizOptions { axis: Vector3::from(cfg.axis), top_k: cfg.top_k, title: None };
    let (rotations, weights, title) = match (&cfg.input, &cfg.ckpt) {
        (Some(input), _) => {
            ensure_exists(input)?;
            let measure = Measure::read(input)?;
            let grid = match &measure.locations {
                alignist::experts::Locations::Grid { level, .. } => Some(SO3Grid::generate(*level)?),
                alignist::experts::Locations::Explicit(_) => None,
            };
            (measure.rotations(grid.as_ref())?, measure.weights.clone(), input.display().to_string())
        }
        (None, Some(ckpt)) => {
            let dir = require(&cfg.dataset, "dataset")?;
            ensure_exists(ckpt)?;
            ensure_exists(dir)?;
            let model = DualBranchModel::load(ckpt)?;
            let ds = Dataset::load(dir)?;
            if cfg.view >= ds.len() {
                bail!(usage(format!("--view {} is out of range for {} views", cfg.view, ds.len())));
            }
            let grid = SO3Grid::generate(cfg.level)?;
            let logs = model.log_scores(&ds.load_image(cfg.view)?, grid.rotations())?;
            let post = normalize_posterior(&logs, &grid)?;
            (grid.rotations().to_vec(), post.probs, format!("{} view {}", ckpt.display(), cfg.view))
        }
        (None, None) => bail!(usage("either --input or --ckpt with --dataset is required")),
    };
    let opts = VizOptions { title: Some(title), ..opts };
    let points = write_svg(out, &rotations, &weights, &opts)?;
    println!("points={} out={}", points.len(), out.display());
    Ok(())
}

fn dispatch(matches: &ArgMatches) -> Result<()> {
    match matches.subcommand() {
        Some(("grid", m)) => match m.subcommand() {
            Some(("gen", m)) => cmd_grid(&run_config(m)?),
            _ => unreachable!(),
        },
        Some(("dataset", m)) => match m.subcommand() {
            Some(("gen", m)) => cmd_dataset(&run_config(m)?),
            _ => unreachable!(),
        },
        Some(("score", m)) => cmd_score(&run_config(m)?),
        Some(("train", m)) => cmd_train(&run_config(m)?),
        Some(("eval", m)) => cmd_eval(&run_config(m)?),
        Some(("viz", m)) => cmd_viz(&run_config(m)?),
        _ => unreachable!(),
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ALIGNIST_THREADS") {
        let n: usize = v.parse().map_err(|_| usage(format!("ALIGNIST_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            bail!(usage("ALIGNIST_THREADS must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = cli().get_matches();
    match init_threads().and_then(|_| dispatch(&matches)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
