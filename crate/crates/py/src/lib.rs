use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stone_core::checkpoint::Checkpoint as CoreCheckpoint;
use stone_core::config::{BranchConfig, BranchKind, ModelConfig, RunConfig, TrunkConfig};
use stone_core::data::{synth_generate, QueryGrid};
use stone_core::gradsuite::run_suite;
use stone_core::metrics;
use stone_core::operator::StoneModel;
use stone_core::pipeline::{evaluate_set, load_data, train_branch};
use stone_core::tensor::Tensor;
use stone_core::{trunk, StoneError};

fn to_py(e: StoneError) -> PyErr {
    match e {
        StoneError::Io { .. } => PyIOError::new_err(e.to_string()),
        StoneError::Numerical { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn tensor2(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    Tensor::from_vec(&[rows.len(), cols], rows.concat()).map_err(to_py)
}

fn tensor3(blocks: &[Vec<Vec<f64>>]) -> PyResult<Tensor> {
    let parts = blocks.iter().map(|b| tensor2(b)).collect::<PyResult<Vec<_>>>()?;
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::stack(&refs).map_err(to_py)
}

fn rows_of(t: &Tensor, width: usize) -> Vec<Vec<f64>> {
    t.data().chunks(width).map(<[f64]>::to_vec).collect()
}

fn branch_kind(name: &str) -> PyResult<BranchKind> {
    BranchKind::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown branch `{name}`")))
}

/// Maps degrees to the unit square used by the trunk.
#[pyfunction]
fn normalize_coords(lat: f64, lon: f64) -> PyResult<(f64, f64)> {
    trunk::normalize_coords(lat, lon).map_err(to_py)
}

/// Generates a synthetic dataset; arrays are returned as nested lists.
#[pyfunction]
#[pyo3(signature = (seed=7, sensors=4, grid=(8, 16), days=400, cycles=2.0))]
fn synth<'py>(
    py: Python<'py>,
    seed: u64,
    sensors: usize,
    grid: (usize, usize),
    days: usize,
    cycles: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let d = synth_generate(seed, sensors, grid, days, cycles).map_err(to_py)?;
    let out = PyDict::new(py);
    let dates: Vec<String> = d.sensors.dates.iter().map(ToString::to_string).collect();
    out.set_item("dates", dates)?;
    out.set_item("stations", d.sensors.station_ids.clone())?;
    out.set_item("sensors", rows_of(&d.sensors.values, sensors))?;
    out.set_item("fields", rows_of(&d.fields.values, d.fields.points()))?;
    out.set_item("coords", d.fields.grid.degrees().iter().map(|c| (c[0], c[1])).collect::<Vec<_>>())?;
    out.set_item("driver", d.driver)?;
    out.set_item("gains", d.gains)?;
    Ok(out)
}

#[pyfunction]
fn rel_l2(y: Vec<f64>, yhat: Vec<f64>) -> PyResult<f64> {
    metrics::rel_l2(&y, &yhat).map_err(to_py)
}

#[pyfunction]
fn rmse(y: Vec<f64>, yhat: Vec<f64>) -> PyResult<f64> {
    metrics::rmse(&y, &yhat).map_err(to_py)
}

#[pyfunction]
fn mae(y: Vec<f64>, yhat: Vec<f64>) -> PyResult<f64> {
    metrics::mae(&y, &yhat).map_err(to_py)
}

/// Returns `(percent, excluded_points)`.
#[pyfunction]
#[pyo3(signature = (y, yhat, floor=metrics::MAPE_FLOOR))]
fn mape(y: Vec<f64>, yhat: Vec<f64>, floor: f64) -> PyResult<(f64, usize)> {
    let m = metrics::mape(&y, &yhat, floor).map_err(to_py)?;
    Ok((m.value, m.excluded))
}

/// One row per (layer, branch): `(layer, branch, max_rel_err, worst_param)`.
#[pyfunction]
#[pyo3(signature = (seed=0, eps=1e-5))]
fn gradcheck(seed: u64, eps: f64) -> PyResult<Vec<(String, String, f64, String)>> {
    let rows = run_suite(seed, eps).map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| {
            (
                r.layer.to_string(),
                r.branch.label().to_string(),
                r.check.max_rel_err,
                r.check.worst_param,
            )
        })
        .collect())
}

/// An untrained operator on normalized inputs.
#[pyclass(module = "stone", name = "Model")]
struct Model {
    inner: StoneModel,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (branch, n_sensors, k_hist, k_fut, q=16, depth=3, heads=8, trunk_hidden=32, trunk_layers=2, p=1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        branch: &str,
        n_sensors: usize,
        k_hist: usize,
        k_fut: usize,
        q: usize,
        depth: usize,
        heads: usize,
        trunk_hidden: usize,
        trunk_layers: usize,
        p: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config = ModelConfig {
            branch: BranchConfig {
                kind: branch_kind(branch)?,
                n_sensors,
                k_hist,
                q,
                depth,
                heads,
            },
            trunk: TrunkConfig {
                q,
                p,
                k_fut,
                hidden: trunk_hidden,
                layers: trunk_layers,
            },
        };
        Ok(Model {
            inner: StoneModel::new(config, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Resolved architecture as JSON.
    #[getter]
    fn config(&self) -> String {
        serde_json::to_string(self.inner.config()).expect("config serializes")
    }

    /// `history: [B][k_hist][N]`, `coords: [P][2]` in [0,1]; returns `[B][P][p][k_fut]`.
    fn predict(&self, history: Vec<Vec<Vec<f64>>>, coords: Vec<Vec<f64>>) -> PyResult<Vec<Vec<Vec<Vec<f64>>>>> {
        let out = self.inner.predict(&tensor3(&history)?, &tensor2(&coords)?).map_err(to_py)?;
        let d = out.dims();
        let (pts, p, k) = (d[1], d[2], d[3]);
        Ok(out
            .data()
            .chunks(pts * p * k)
            .map(|s| s.chunks(p * k).map(|r| r.chunks(k).map(<[f64]>::to_vec).collect()).collect())
            .collect())
    }

    /// Output at one 0-based lead, computed from that lead's trunk rows only: `[B][P][p]`.
    fn predict_lead(&self, history: Vec<Vec<Vec<f64>>>, coords: Vec<Vec<f64>>, lead: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let out = self
            .inner
            .predict_lead(&tensor3(&history)?, &tensor2(&coords)?, lead)
            .map_err(to_py)?;
        let d = out.dims();
        let (pts, p) = (d[1], d[2]);
        Ok(out
            .data()
            .chunks(pts * p)
            .map(|s| s.chunks(p).map(<[f64]>::to_vec).collect())
            .collect())
    }
}

/// A trained model with its normalization statistics.
#[pyclass(module = "stone", name = "Checkpoint")]
struct Checkpoint {
    inner: CoreCheckpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Checkpoint {
            inner: CoreCheckpoint::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        self.inner.to_bytes().map_err(to_py)
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label.clone()
    }

    #[getter]
    fn k_hist(&self) -> usize {
        self.inner.model.config().k_hist()
    }

    #[getter]
    fn k_fut(&self) -> usize {
        self.inner.model.config().k_fut()
    }

    #[getter]
    fn n_sensors(&self) -> usize {
        self.inner.model.config().branch.n_sensors
    }

    /// Physical-unit forecast from a raw `[k_hist][N]` window at `(lat, lon)`
    /// degrees; returns `[P][k_fut]` for single-channel models.
    fn forecast(&self, window: Vec<Vec<f64>>, coords: Vec<(f64, f64)>) -> PyResult<Vec<Vec<f64>>> {
        let grid = QueryGrid::from_degrees(coords.into_iter().map(|(a, b)| [a, b]).collect()).map_err(to_py)?;
        let fc = self
            .inner
            .model
            .forecast_single_pass(&tensor2(&window)?, &grid, &self.inner.norm)
            .map_err(to_py)?;
        let k = self.k_fut() * self.inner.model.config().trunk.p;
        Ok(rows_of(&fc.values, k))
    }
}

type TrainResult = (Checkpoint, Vec<(usize, f64, f64, f64)>, f64);

/// Trains one branch from a JSON run config; returns the checkpoint, the
/// per-epoch `(epoch, train_loss, val_loss, lr)` log and the validation rel-L2.
#[pyfunction]
#[pyo3(signature = (config_json, branch=None, base_dir=PathBuf::from(".")))]
fn train(config_json: &str, branch: Option<&str>, base_dir: PathBuf) -> PyResult<TrainResult> {
    let cfg = RunConfig::from_json(config_json).map_err(to_py)?;
    let kind = branch.map(branch_kind).transpose()?.unwrap_or(cfg.model.branch);
    let (_, prepared) = load_data(&cfg, &base_dir).map_err(to_py)?;
    let trained = train_branch(&cfg, kind, &prepared, |_| {}).map_err(to_py)?;
    let log = trained
        .outcome
        .log
        .records
        .iter()
        .map(|r| (r.epoch, r.train_loss, r.val_loss, r.lr))
        .collect();
    let val = evaluate_set(&trained.checkpoint, &prepared.val, prepared.grid.normalized())
        .map_err(to_py)?
        .aggregate()
        .rel_l2;
    Ok((Checkpoint { inner: trained.checkpoint }, log, val))
}

#[pymodule]
fn stone(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(normalize_coords, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(rel_l2, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
