//! Line-based `key = value` run configuration shared by the command-line
//! tools. Blank lines and `#` comments are ignored; unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use crate::encoding::EncodingKind;
use crate::error::{Error, Result};
use crate::experts::{ExpertConfig, SdfNorm};
use crate::learner::TrainConfig;
use crate::rotation::Rotation;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("shape", "analytic shape name (tet, cube, ico, cone, cyl) or path to an .obj mesh"),
    ("res", "render resolution in pixels"),
    ("views", "number of rendered views in a generated dataset"),
    ("seed", "seed for every random draw"),
    ("level", "grid level for scoring, evaluation and grid files"),
    ("lambda_sdf", "scale of the SDF expert energy"),
    ("lambda_feat", "scale of the feature expert energy"),
    ("sdf_norm", "SDF residual reduction: count or l1"),
    ("tau", "threshold of the count reduction"),
    ("points", "visible points sampled per view"),
    ("batch_images", "images per training step"),
    ("top_pool", "heaviest precomputed cells eligible for mode sampling"),
    ("n_modes", "mode-focused rotations per image"),
    ("n_uniform", "uniform rotations per image"),
    ("lr", "learning rate"),
    ("beta1", "first-moment decay"),
    ("beta2", "second-moment decay"),
    ("eps", "optimizer epsilon"),
    ("steps", "training steps"),
    ("precompute_level", "grid level of the anchor distributions"),
    ("anchors", "number of anchor views with precomputed distributions"),
    ("encoding", "rotation encoding: cube or matrix"),
    ("sampling", "training rotation sampling: mode or uniform"),
    ("dataset", "dataset directory"),
    ("out", "output path"),
    ("ckpt", "checkpoint path"),
    ("input", "measure file to plot"),
    ("rgt", "ground-truth rotation as a quaternion \"w x y z\""),
    ("metrics", "comma-separated evaluation metrics: ll, spread, ar"),
    ("axis", "canonical object axis for plots as \"x y z\""),
    ("top_k", "heaviest cells drawn in a plot"),
    ("view", "dataset view index"),
];

/// Metrics `eval` can report.
pub const METRICS: [&str; 3] = ["ll", "spread", "ar"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub shape: String,
    pub res: usize,
    pub views: usize,
    pub seed: u64,
    pub level: u32,
    pub expert: ExpertConfig,
    pub train: TrainConfig,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub rgt: Option<Rotation>,
    pub metrics: Vec<String>,
    pub axis: [f64; 3],
    pub top_k: usize,
    pub view: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            shape: "tetrahedron".into(),
            res: crate::view::DEFAULT_RES,
            views: 64,
            seed: 0,
            level: 4,
            expert: ExpertConfig::default(),
            train: TrainConfig::default(),
            dataset: None,
            out: None,
            ckpt: None,
            input: None,
            rgt: None,
            metrics: METRICS.iter().map(|m| m.to_string()).collect(),
            axis: [0.0, 0.0, 1.0],
            top_k: crate::viz::DEFAULT_TOP_K,
            view: 0,
        }
    }
}

/// Splits config text into `(key, value, line)` triples.
pub fn parse_pairs(text: &str, path: &Path) -> Result<Vec<(String, String, usize)>> {
    let mut out: Vec<(String, String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(err("empty key".into()));
        }
        if let Some(prev) = out.iter().find(|p| p.0 == k) {
            return Err(err(format!("duplicate key `{k}` (first set on line {})", prev.2)));
        }
        out.push((k.to_string(), v.to_string(), i + 1));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn floats<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let parts: Vec<f64> = value
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| num::<f64>(key, t))
        .collect::<Result<_>>()?;
    parts.try_into().map_err(|v: Vec<f64>| Error::Config(format!("{key}: expected {N} numbers, found {}", v.len())))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        self.apply_str(&text, path)
    }

    pub fn apply_str(&mut self, text: &str, path: &Path) -> Result<()> {
        for (k, v, line) in parse_pairs(text, path)? {
            self.set(&k, &v).map_err(|e| Error::Parse { path: path.to_path_buf(), line, msg: e.to_string() })?;
        }
        Ok(())
    }

    /// Sets one key. Unknown keys and unparsable values are `Config` errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "shape" => self.shape = value.to_string(),
            "res" => self.res = num(key, value)?,
            "views" => self.views = num(key, value)?,
            "seed" => {
                self.seed = num(key, value)?;
                t.seed = self.seed;
            }
            "level" => self.level = num(key, value)?,
            "lambda_sdf" => self.expert.lambda_sdf = num(key, value)?,
            "lambda_feat" => self.expert.lambda_feat = num(key, value)?,
            "sdf_norm" => {
                self.expert.sdf_norm = match (value, self.expert.sdf_norm) {
                    ("count", SdfNorm::ThresholdedCount { tau }) => SdfNorm::ThresholdedCount { tau },
                    ("count", SdfNorm::L1) => SdfNorm::default(),
                    ("l1", _) => SdfNorm::L1,
                    _ => return Err(Error::Config(format!("sdf_norm must be count or l1, got {value:?}"))),
                }
            }
            "tau" => {
                let tau = num(key, value)?;
                match &mut self.expert.sdf_norm {
                    SdfNorm::ThresholdedCount { tau: t } => *t = tau,
                    SdfNorm::L1 => return Err(Error::Config("tau only applies to sdf_norm = count".into())),
                }
            }
            "points" => self.expert.n_points = num(key, value)?,
            "batch_images" => t.batch_images = num(key, value)?,
            "top_pool" => t.counts.top_pool = num(key, value)?,
            "n_modes" => t.counts.n_modes = num(key, value)?,
            "n_uniform" => t.counts.n_uniform = num(key, value)?,
            "lr" => t.adam.lr = num(key, value)?,
            "beta1" => t.adam.beta1 = num(key, value)?,
            "beta2" => t.adam.beta2 = num(key, value)?,
            "eps" => t.adam.eps = num(key, value)?,
            "steps" => t.steps = num(key, value)?,
            "precompute_level" => t.precompute_level = num(key, value)?,
            "anchors" => t.anchors = num(key, value)?,
            "encoding" => {
                t.encoding = EncodingKind::parse(value)
                    .ok_or_else(|| Error::Config(format!("encoding must be cube or matrix, got {value:?}")))?
            }
            "sampling" => {
                t.mode_focused = match value {
                    "mode" => true,
                    "uniform" => false,
                    _ => return Err(Error::Config(format!("sampling must be mode or uniform, got {value:?}"))),
                }
            }
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "ckpt" => self.ckpt = Some(PathBuf::from(value)),
            "input" => self.input = Some(PathBuf::from(value)),
            "rgt" => {
                let q = floats::<4>(key, value)?;
                let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(n > 1e-9 && n.is_finite()) {
                    return Err(Error::Config(format!("rgt: {value:?} is not a valid quaternion")));
                }
                self.rgt = Some(Rotation::from_quat(q[0], q[1], q[2], q[3]));
            }
            "metrics" => {
                let list: Vec<String> =
                    value.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect();
                if list.is_empty() || list.iter().any(|m| !METRICS.contains(&m.as_str())) {
                    return Err(Error::Config(format!("metrics must be a list of {}, got {value:?}", METRICS.join(", "))));
                }
                self.metrics = list;
            }
            "axis" => {
                let a = floats::<3>(key, value)?;
                if a.iter().all(|v| *v == 0.0) {
                    return Err(Error::Config("axis must be non-zero".into()));
                }
                self.axis = a;
            }
            "top_k" => self.top_k = num(key, value)?,
            "view" => self.view = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Current value of a key in the form [`RunConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        Some(match key {
            "shape" => self.shape.clone(),
            "res" => self.res.to_string(),
            "views" => self.views.to_string(),
            "seed" => self.seed.to_string(),
            "level" => self.level.to_string(),
            "lambda_sdf" => self.expert.lambda_sdf.to_string(),
            "lambda_feat" => self.expert.lambda_feat.to_string(),
            "sdf_norm" => match self.expert.sdf_norm {
                SdfNorm::ThresholdedCount { .. } => "count".into(),
                SdfNorm::L1 => "l1".into(),
            },
            "tau" => match self.expert.sdf_norm {
                SdfNorm::ThresholdedCount { tau } => tau.to_string(),
                SdfNorm::L1 => return None,
            },
            "points" => self.expert.n_points.to_string(),
            "batch_images" => t.batch_images.to_string(),
            "top_pool" => t.counts.top_pool.to_string(),
            "n_modes" => t.counts.n_modes.to_string(),
            "n_uniform" => t.counts.n_uniform.to_string(),
            "lr" => t.adam.lr.to_string(),
            "beta1" => t.adam.beta1.to_string(),
            "beta2" => t.adam.beta2.to_string(),
            "eps" => t.adam.eps.to_string(),
            "steps" => t.steps.to_string(),
            "precompute_level" => t.precompute_level.to_string(),
            "anchors" => t.anchors.to_string(),
            "encoding" => t.encoding.name().into(),
            "sampling" => if t.mode_focused { "mode" } else { "uniform" }.into(),
            "dataset" => return path(&self.dataset),
            "out" => return path(&self.out),
            "ckpt" => return path(&self.ckpt),
            "input" => return path(&self.input),
            "rgt" => {
                let q = self.rgt?.quat();
                format!("{} {} {} {}", q[0], q[1], q[2], q[3])
            }
            "metrics" => self.metrics.join(","),
            "axis" => format!("{} {} {}", self.axis[0], self.axis[1], self.axis[2]),
            "top_k" => self.top_k.to_string(),
            "view" => self.view.to_string(),
            _ => return None,
        })
    }

    /// Every set key, one `key = value` line each.
    pub fn to_text(&self) -> String {
        KEYS.iter().filter_map(|(k, _)| self.get(k).map(|v| format!("{k} = {v}\n"))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(crate::view::MIN_RES..=crate::view::MAX_RES).contains(&self.res) {
            return Err(Error::Config(format!(
                "res must be in {}..={}, got {}",
                crate::view::MIN_RES,
                crate::view::MAX_RES,
                self.res
            )));
        }
        if self.level > crate::grid::MAX_LEVEL {
            return Err(Error::LevelTooLarge { level: self.level, max: crate::grid::MAX_LEVEL });
        }
        self.expert.validate()?;
        self.train.validate()
    }
}
