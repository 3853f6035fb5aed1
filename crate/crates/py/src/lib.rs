//! Python bindings: grids, expert scoring, checkpoints and evaluation.
//! Rotations cross the boundary as `(w, x, y, z)` quaternions.

use std::path::PathBuf;

use alignist::encoding::EncodingKind;
use alignist::experts::{ExpertConfig, Experts};
use alignist::geometry::ShapeModel;
use alignist::learner::DualBranchModel;
use alignist::metrics::{evaluate_view, gt_set, EvalReport};
use alignist::view::{render_view, Dataset, Light};
use alignist::{Error, Rotation, SO3Grid};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Quat = (f64, f64, f64, f64);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn to_rot(q: Quat) -> PyResult<Rotation> {
    let n = (q.0 * q.0 + q.1 * q.1 + q.2 * q.2 + q.3 * q.3).sqrt();
    if !n.is_finite() || n < 1e-12 {
        return Err(PyValueError::new_err(format!("not a valid quaternion: {q:?}")));
    }
    Ok(Rotation::from_quat(q.0, q.1, q.2, q.3))
}

fn to_quat(r: &Rotation) -> Quat {
    let q = r.quat();
    (q[0], q[1], q[2], q[3])
}

/// Cell centers of the level-`level` grid.
#[pyfunction]
fn grid(level: u32) -> PyResult<Vec<Quat>> {
    let g = SO3Grid::generate(level).map_err(py_err)?;
    Ok(g.rotations().iter().map(to_quat).collect())
}

#[pyfunction]
fn cell_radius(level: u32) -> f64 {
    alignist::grid::cell_radius(level)
}

/// Geodesic angle in radians.
#[pyfunction]
fn geodesic_distance(a: Quat, b: Quat) -> PyResult<f64> {
    Ok(alignist::geodesic_distance(&to_rot(a)?, &to_rot(b)?))
}

/// Symmetric copies of `rgt` for a named shape.
#[pyfunction]
fn symmetric_copies(shape: &str, rgt: Quat) -> PyResult<Vec<Quat>> {
    let group = ShapeModel::from_spec(shape).and_then(|s| s.symmetry_group()).map_err(py_err)?;
    Ok(gt_set(&group, &to_rot(rgt)?).iter().map(to_quat).collect())
}

/// Product-of-experts weights of the view at `rgt` on the level grid.
#[pyfunction]
#[pyo3(signature = (shape, rgt, level, res = 32, points = 100, seed = 0))]
fn score(py: Python<'_>, shape: &str, rgt: Quat, level: u32, res: usize, points: usize, seed: u64) -> PyResult<Vec<f64>> {
    let r_gt = to_rot(rgt)?;
    let shape = shape.to_string();
    py.detach(move || {
        let model = ShapeModel::from_spec(&shape)?;
        let cfg = ExpertConfig { n_points: points, ..ExpertConfig::default() };
        let experts = Experts::new(model.clone(), cfg)?;
        let cloud = render_view(&model, &r_gt, res, Light::ViewAxis)?
            .sample_visible(points, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let grid = SO3Grid::generate(level)?;
        Ok(experts.view(&cloud)?.precompute(&grid).weights)
    })
    .map_err(py_err)
}

/// A trained dual-branch model.
#[pyclass]
struct Model {
    inner: DualBranchModel,
}

#[pymethods]
impl Model {
    /// Freshly initialized model; its posterior is uniform.
    #[new]
    #[pyo3(signature = (res, encoding = "cube", seed = 0))]
    fn new(res: usize, encoding: &str, seed: u64) -> PyResult<Self> {
        if !(alignist::view::MIN_RES..=alignist::view::MAX_RES).contains(&res) {
            return Err(PyValueError::new_err(format!("res {res} is out of range")));
        }
        let kind = EncodingKind::parse(encoding)
            .ok_or_else(|| PyValueError::new_err(format!("encoding must be cube or matrix, got {encoding:?}")))?;
        Ok(Model { inner: DualBranchModel::new(res, kind, &mut ChaCha8Rng::seed_from_u64(seed)) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model { inner: DualBranchModel::load(&path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[getter]
    fn res(&self) -> usize {
        self.inner.res
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.params.param_count()
    }

    /// Log-scores of `rotations` for a row-major `res * res` image.
    fn log_scores(&self, py: Python<'_>, image: Vec<f32>, rotations: Vec<Quat>) -> PyResult<Vec<f64>> {
        let rots = rotations.into_iter().map(to_rot).collect::<PyResult<Vec<_>>>()?;
        py.detach(|| self.inner.log_scores(&image, &rots)).map_err(py_err)
    }

    /// Normalized posterior probabilities over the level grid.
    fn infer(&self, py: Python<'_>, image: Vec<f32>, level: u32) -> PyResult<Vec<f64>> {
        py.detach(|| {
            let grid = SO3Grid::generate(level)?;
            Ok(self.inner.infer_distribution(&image, &grid)?.probs)
        })
        .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Model(res={}, params={})", self.inner.res, self.inner.params.param_count())
    }
}

/// Shape, resolution, rotations and images of a dataset directory.
#[pyfunction]
fn load_dataset<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let ds = Dataset::load(&path).map_err(py_err)?;
    let images = (0..ds.len()).map(|i| ds.load_image(i)).collect::<Result<Vec<_>, _>>().map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("shape", &ds.shape)?;
    d.set_item("res", ds.res)?;
    d.set_item("rotations", ds.rotations.iter().map(to_quat).collect::<Vec<_>>())?;
    d.set_item("images", images)?;
    Ok(d)
}

/// Mean metrics of a checkpoint on a dataset.
#[pyfunction]
#[pyo3(signature = (ckpt, dataset, level = 4))]
fn evaluate<'py>(py: Python<'py>, ckpt: PathBuf, dataset: PathBuf, level: u32) -> PyResult<Bound<'py, PyDict>> {
    let report = py
        .detach(|| -> alignist::Result<EvalReport> {
            let model = DualBranchModel::load(&ckpt)?;
            let ds = Dataset::load(&dataset)?;
            let group = ShapeModel::from_spec(&ds.shape)?.symmetry_group()?;
            let grid = SO3Grid::generate(level)?;
            let mut rows = Vec::with_capacity(ds.len());
            for i in 0..ds.len() {
                let post = model.infer_distribution(&ds.load_image(i)?, &grid)?;
                rows.push(evaluate_view(i, &post, &grid, &gt_set(&group, &ds.rotations[i]))?);
            }
            Ok(EvalReport::from_rows(rows))
        })
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("views", report.rows.len())?;
    d.set_item("ll_raw", report.ll_raw)?;
    d.set_item("ll_adjusted", report.ll_adjusted)?;
    d.set_item("spread_deg", report.spread_deg)?;
    d.set_item("ar_at_30", report.ar_at_30)?;
    Ok(d)
}

#[pymodule]
fn alignist_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(grid, m)?)?;
    m.add_function(wrap_pyfunction!(cell_radius, m)?)?;
    m.add_function(wrap_pyfunction!(geodesic_distance, m)?)?;
    m.add_function(wrap_pyfunction!(symmetric_copies, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
