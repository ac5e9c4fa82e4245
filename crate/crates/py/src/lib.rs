//! Python bindings. Volumes cross the boundary as flat lists in x-fastest
//! order; reports and statistics come back as plain dicts.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use std::path::PathBuf;

use wbdwi_core::adc::fit_monoexponential;
use wbdwi_core::biomarkers;
use wbdwi_core::io;
use wbdwi_core::model::{GridMeta, ScalarVolume, StudyBundle};
use wbdwi_core::norm::normalize_b900;
use wbdwi_core::phantom::{generate_phantom, write_phantom, PhantomSpec};
use wbdwi_core::pipeline::{self, PipelineConfig};
use wbdwi_core::response::{rec_classify, DeltaRecord, Outcome};
use wbdwi_core::seg::SegModelWeights;
use wbdwi_core::stats::{accuracy, cutoffs, repeatability as rep};

create_exception!(wbdwi, WbdwiError, PyException, "Error raised by the analysis engine.");

fn err(e: impl std::fmt::Display) -> PyErr {
    WbdwiError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize + ?Sized>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

/// Scalar volume on a regular grid.
#[pyclass(module = "wbdwi", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Volume {
    inner: ScalarVolume,
}

#[pymethods]
impl Volume {
    #[new]
    #[pyo3(signature = (dims, spacing, data, origin = [0.0; 3]))]
    fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>, origin: [f64; 3]) -> PyResult<Self> {
        let meta = GridMeta::new(dims, spacing, origin).map_err(err)?;
        Ok(Volume { inner: ScalarVolume::new(meta, data).map_err(err)? })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Volume { inner: io::read_nifti(path).map_err(err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_nifti(&self.inner, path).map_err(err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.meta().dims
    }

    #[getter]
    fn spacing(&self) -> [f64; 3] {
        self.inner.meta().spacing
    }

    #[getter]
    fn origin(&self) -> [f64; 3] {
        self.inner.meta().origin
    }

    fn __len__(&self) -> usize {
        self.inner.data().len()
    }

    fn get(&self, x: usize, y: usize, z: usize) -> PyResult<f64> {
        let [nx, ny, nz] = self.inner.meta().dims;
        if x >= nx || y >= ny || z >= nz {
            return Err(pyo3::exceptions::PyIndexError::new_err("voxel outside the grid"));
        }
        Ok(self.inner.get(x, y, z))
    }

    fn tolist(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn count_nonzero(&self) -> usize {
        self.inner.mask_indices().len()
    }

    fn __repr__(&self) -> String {
        format!("Volume(dims={:?}, spacing={:?})", self.inner.meta().dims, self.inner.meta().spacing)
    }
}

/// One timepoint's assembled acquisition.
#[pyclass(module = "wbdwi", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Study {
    inner: StudyBundle,
}

#[pymethods]
impl Study {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Study { inner: io::load_study(path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_study(&self.inner, path).map(|_| ()).map_err(err)
    }

    #[getter]
    fn b_values(&self) -> Vec<f64> {
        self.inner.b_values.clone()
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.meta().dims
    }

    #[getter]
    fn stations(&self) -> usize {
        self.inner.station_slabs.len()
    }

    fn volume(&self, index: usize) -> PyResult<Volume> {
        self.inner
            .b_volumes
            .get(index)
            .map(|v| Volume { inner: v.clone() })
            .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err("no such b-value volume"))
    }

    fn __repr__(&self) -> String {
        format!("Study(dims={:?}, b_values={:?}, stations={})", self.inner.meta().dims, self.inner.b_values, self.inner.station_slabs.len())
    }
}

/// Segmentation network weights in the WBW1 format.
#[pyclass(module = "wbdwi", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct SegWeights {
    inner: SegModelWeights,
}

#[pymethods]
impl SegWeights {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(SegWeights { inner: io_weights(path)? })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(SegWeights { inner: SegModelWeights::from_bytes(data).map_err(err)? })
    }

    #[staticmethod]
    fn random(seed: u64) -> Self {
        SegWeights { inner: SegModelWeights::random(seed) }
    }

    #[staticmethod]
    fn zeros() -> Self {
        SegWeights { inner: SegModelWeights::zeros() }
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn layer_names(&self) -> Vec<String> {
        self.inner.layers.iter().map(|l| l.name().to_string()).collect()
    }
}

fn io_weights(path: PathBuf) -> PyResult<SegModelWeights> {
    wbdwi_core::seg::load_weights(path).map_err(err)
}

fn config(py: Python<'_>, cfg: Option<&Bound<'_, PyAny>>) -> PyResult<PipelineConfig> {
    let Some(obj) = cfg else { return Ok(PipelineConfig::default()) };
    let cfg: PipelineConfig = match obj.extract::<String>() {
        Ok(text) => PipelineConfig::from_json(&text).map_err(err)?,
        Err(_) => from_py(py, obj)?,
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Default pipeline config as a dict.
#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &PipelineConfig::default())
}

/// SHA-256 of a config (dict or JSON string).
#[pyfunction]
#[pyo3(signature = (config = None))]
fn config_hash(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<String> {
    Ok(self::config(py, config)?.hash())
}

/// Synthetic study from a phantom spec dict. Returns (study, truth summary).
#[pyfunction]
#[pyo3(signature = (spec = None, out = None))]
fn phantom<'py>(py: Python<'py>, spec: Option<&Bound<'py, PyAny>>, out: Option<PathBuf>) -> PyResult<(Study, Bound<'py, PyAny>)> {
    let spec: PhantomSpec = match spec {
        Some(s) => from_py(py, s)?,
        None => PhantomSpec::default(),
    };
    let (bundle, truth) = py.detach(|| generate_phantom(&spec)).map_err(err)?;
    if let Some(dir) = out {
        write_phantom(&bundle, &truth, dir).map_err(err)?;
    }
    Ok((Study { inner: bundle }, to_py(py, &truth.summary)?))
}

/// Monoexponential fit. Returns (adc, s0, valid_mask).
#[pyfunction]
#[pyo3(signature = (study, config = None))]
fn fit_adc(py: Python<'_>, study: &Study, config: Option<&Bound<'_, PyAny>>) -> PyResult<(Volume, Volume, Volume)> {
    let cfg = self::config(py, config)?;
    let f = py.detach(|| fit_monoexponential(&study.inner, &cfg.adc)).map_err(err)?;
    Ok((Volume { inner: f.gadc }, Volume { inner: f.s0 }, Volume { inner: f.valid_mask }))
}

/// Normalized computed b900. Returns (volume, normalization summary).
#[pyfunction]
#[pyo3(signature = (study, config = None))]
fn normalize<'py>(py: Python<'py>, study: &Study, config: Option<&Bound<'py, PyAny>>) -> PyResult<(Volume, Bound<'py, PyAny>)> {
    let cfg = self::config(py, config)?;
    let mut n = py
        .detach(|| {
            let f = fit_monoexponential(&study.inner, &cfg.adc).map_err(|e| e.to_string())?;
            normalize_b900(&f, &study.inner, &cfg.normalization).map_err(|e| e.to_string())
        })
        .map_err(err)?;
    let vol = n.normalized_b900.take().expect("normalization returns a volume");
    Ok((Volume { inner: vol }, to_py(py, &n)?))
}

/// One timepoint through biomarkers. Returns the report fragment as a dict.
#[pyfunction]
#[pyo3(signature = (study, config = None, weights = None))]
fn process<'py>(py: Python<'py>, study: &Study, config: Option<&Bound<'py, PyAny>>, weights: Option<&SegWeights>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(py, config)?;
    let run = py.detach(|| pipeline::process_bundle(&study.inner, &cfg, weights.map(|w| &w.inner)));
    to_py(py, &run.report)
}

/// Full pre/post pipeline over two study directories. With `out`, writes
/// the report files there. Returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (pre, post, config = None, weights = None, out = None))]
fn run_pipeline<'py>(
    py: Python<'py>,
    pre: PathBuf,
    post: PathBuf,
    config: Option<&Bound<'py, PyAny>>,
    weights: Option<&SegWeights>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(py, config)?;
    let res = py.detach(|| pipeline::run_pipeline(&pre, &post, &cfg, weights.map(|w| &w.inner)));
    if let Some(dir) = out {
        pipeline::write_outputs(&res, &dir).map_err(err)?;
    }
    to_py(py, &res.report)
}

/// Pre/post pipeline over in-memory studies.
#[pyfunction]
#[pyo3(signature = (pre, post, config = None, weights = None))]
fn run_pipeline_studies<'py>(
    py: Python<'py>,
    pre: &Study,
    post: &Study,
    config: Option<&Bound<'py, PyAny>>,
    weights: Option<&SegWeights>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(py, config)?;
    let res = py.detach(|| pipeline::run_pipeline_bundles(&pre.inner, &post.inner, &cfg, weights.map(|w| &w.inner)));
    to_py(py, &res.report)
}

/// Markdown rendering of a pipeline report dict.
#[pyfunction]
fn render_report(py: Python<'_>, report: &Bound<'_, PyAny>) -> PyResult<String> {
    let r: pipeline::StructuredReport = from_py(py, report)?;
    Ok(pipeline::report::render_markdown(&r))
}

#[pyfunction]
fn log_tdv(tdv_ml: f64) -> Option<f64> {
    biomarkers::log_tdv(tdv_ml)
}

/// Response category from percentage deltas; None marks an undefined delta.
#[pyfunction]
#[pyo3(signature = (delta_tdv_pct, delta_median_gadc_pct, delta_roi_gt_1ml = 0, delta_roi_gt_3ml = 0, config = None))]
fn classify_response<'py>(
    py: Python<'py>,
    delta_tdv_pct: Option<f64>,
    delta_median_gadc_pct: Option<f64>,
    delta_roi_gt_1ml: i64,
    delta_roi_gt_3ml: i64,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(py, config)?;
    let d = DeltaRecord { delta_tdv_pct, delta_median_gadc_pct, delta_roi_gt_1ml, delta_roi_gt_3ml };
    to_py(py, &rec_classify(&d, &cfg.response.cutoffs))
}

#[pyfunction]
#[pyo3(signature = (successes, n, confidence = 0.95, continuity = false))]
fn wilson_interval(successes: u64, n: u64, confidence: f64, continuity: bool) -> PyResult<(f64, f64)> {
    accuracy::wilson_interval(successes, n, confidence, continuity).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (tp, p, tn, n, continuity = false))]
fn accuracy_from_counts(py: Python<'_>, tp: u64, p: u64, tn: u64, n: u64, continuity: bool) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &accuracy::accuracy_from_counts(tp, p, tn, n, continuity).map_err(err)?)
}

/// Repeatability statistics from (first, second) measurement pairs.
#[pyfunction]
#[pyo3(signature = (pairs, iterations = 1000, seed = 0))]
fn repeatability(py: Python<'_>, pairs: Vec<(f64, f64)>, iterations: usize, seed: u64) -> PyResult<Bound<'_, PyAny>> {
    let r = py.detach(|| rep::repeatability(&pairs, iterations, seed)).map_err(err)?;
    to_py(py, &r)
}

fn parse_outcome(s: &str) -> PyResult<Outcome> {
    match s.to_ascii_lowercase().as_str() {
        "responder" => Ok(Outcome::Responder),
        "stable" => Ok(Outcome::Stable),
        "progression" => Ok(Outcome::Progression),
        "review" => Ok(Outcome::Review),
        other => Err(err(format!("unknown outcome {other:?}"))),
    }
}

/// Youden-optimal cutoffs. `cases` holds (delta_tdv_pct, delta_median_gadc_pct, reference) tuples.
#[pyfunction]
#[pyo3(signature = (cases, iterations = 200, seed = 0, config = None))]
fn optimize_cutoffs<'py>(
    py: Python<'py>,
    cases: Vec<(Option<f64>, Option<f64>, String)>,
    iterations: usize,
    seed: u64,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = self::config(py, config)?;
    let cases = cases
        .into_iter()
        .map(|(dt, dg, r)| {
            Ok(cutoffs::CutoffCase {
                delta: DeltaRecord { delta_tdv_pct: dt, delta_median_gadc_pct: dg, delta_roi_gt_1ml: 0, delta_roi_gt_3ml: 0 },
                reference: parse_outcome(&r)?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let res = py
        .detach(|| cutoffs::optimize_cutoffs(&cases, &cfg.stats.cutoff_grid, &cfg.response.cutoffs, iterations, seed))
        .map_err(err)?;
    to_py(py, &res)
}

#[pymodule]
pub fn wbdwi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("WbdwiError", m.py().get_type::<WbdwiError>())?;
    m.add_class::<Volume>()?;
    m.add_class::<Study>()?;
    m.add_class::<SegWeights>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(phantom, m)?)?;
    m.add_function(wrap_pyfunction!(fit_adc, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(process, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline_studies, m)?)?;
    m.add_function(wrap_pyfunction!(render_report, m)?)?;
    m.add_function(wrap_pyfunction!(log_tdv, m)?)?;
    m.add_function(wrap_pyfunction!(classify_response, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_interval, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_from_counts, m)?)?;
    m.add_function(wrap_pyfunction!(repeatability, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_cutoffs, m)?)?;
    Ok(())
}
