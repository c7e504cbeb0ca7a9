//! Python bindings for rigs, depth tables, the blur simulator and
//! single-frame reconstruction.

use std::path::PathBuf;

use lightflow::depth::{compare_to_ground_truth, depth_to_points, fit_plane_rmse, DepthMap};
use lightflow::imageio::RgbImage;
use lightflow::lut::{log_ratio_error, DepthRatioLut, LutParams, DEFAULT_FLAT_EPS};
use lightflow::pipeline::{reconstruct_frame, RunConfig};
use lightflow::rig::RigCalibration;
use lightflow::sim::{render_frame, SceneSpec, Surface};
use lightflow::{presets, Error};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "Rig", module = "lightflow", skip_from_py_object)]
#[derive(Clone)]
struct PyRig(RigCalibration);

#[pymethods]
impl PyRig {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        RigCalibration::load(path).map(Self).map_err(py_err)
    }

    /// Two converging projectors, red and blue uniform lines.
    #[staticmethod]
    fn converging() -> Self {
        Self(presets::converging_rig())
    }

    #[staticmethod]
    fn parallel() -> Self {
        Self(presets::parallel_rig())
    }

    #[staticmethod]
    fn fronto_parallel() -> Self {
        Self(presets::fronto_parallel_rig())
    }

    /// One projector casting both modulated patterns.
    #[staticmethod]
    fn single_projector() -> Self {
        Self(presets::single_projector_rig())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    /// Camera resolution as `(width, height)`.
    #[getter]
    fn resolution(&self) -> (usize, usize) {
        (self.0.camera.width(), self.0.camera.height())
    }

    /// Log ratio of the two patterns' line-index rates at pixel `(x, y)`
    /// and depth `z`.
    fn log_flow_ratio(&self, x: f64, y: f64, z: f64) -> PyResult<f64> {
        self.0.log_flow_ratio([x, y], z).map_err(py_err)
    }

    /// Line index of pattern 1 or 2 seen at pixel `(x, y)` on depth `z`.
    fn line_index(&self, pattern: usize, x: f64, y: f64, z: f64) -> PyResult<f64> {
        if !(1..=2).contains(&pattern) {
            return Err(PyValueError::new_err("pattern must be 1 or 2"));
        }
        let ray = self.0.camera.pixel_ray([x, y]).map_err(py_err)?;
        self.0.line_index(pattern - 1, &ray, z).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Rig({:?})", self.0.name)
    }
}

#[pyclass(name = "Lut", module = "lightflow")]
struct PyLut(DepthRatioLut);

#[pymethods]
impl PyLut {
    #[new]
    #[pyo3(signature = (rig, z_min = 0.4, z_max = 1.2, n_samples = 256, grid_stride = 16))]
    fn new(py: Python<'_>, rig: &PyRig, z_min: f64, z_max: f64, n_samples: usize, grid_stride: usize) -> PyResult<Self> {
        let params = LutParams { z_min, z_max, n_samples, grid_stride };
        let rig = rig.0.clone();
        py.detach(|| DepthRatioLut::build(&rig, &params)).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        DepthRatioLut::load(path).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    fn h_eval(&self, x: f64, y: f64, z: f64) -> PyResult<f64> {
        self.0.h_eval([x, y], z).map_err(py_err)
    }

    fn h_invert(&self, x: f64, y: f64, log_ratio: f64) -> PyResult<f64> {
        self.0.h_invert([x, y], log_ratio).map_err(py_err)
    }

    /// Predicted depth error at `(x, y, z)` for flow extent `dr`, line
    /// interval `b` and edge precision, all in pixels.
    #[pyo3(signature = (x, y, z, dr = 10.0, b = 30.0, precision = 0.25))]
    fn error_budget(&self, x: f64, y: f64, z: f64, dr: f64, b: f64, precision: f64) -> PyResult<f64> {
        self.0.error_budget([x, y], z, dr, b, precision).map_err(py_err)
    }

    /// Node counts by monotonicity state.
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.0.validate_monotonic(DEFAULT_FLAT_EPS);
        let d = PyDict::new(py);
        d.set_item("nodes", r.total())?;
        d.set_item("valid", r.valid_nodes)?;
        d.set_item("degenerate", r.degenerate_nodes)?;
        d.set_item("nonmonotone", r.nonmonotone_nodes)?;
        d.set_item("invalid", r.invalid_nodes)?;
        Ok(d)
    }
}

#[pyclass(name = "Scene", module = "lightflow", skip_from_py_object)]
#[derive(Clone)]
struct PyScene(SceneSpec);

#[pymethods]
impl PyScene {
    /// Rectangular board of `width` x `height` at depth `z`, facing the camera.
    #[staticmethod]
    #[pyo3(signature = (z, velocity, exposure, width = 0.6, height = 0.4))]
    fn board(z: f64, velocity: [f64; 3], exposure: f64, width: f64, height: f64) -> Self {
        Self(SceneSpec::new(Surface::board([0.0, 0.0, 1.0], z, width, height), velocity, exposure))
    }

    #[staticmethod]
    fn sphere(center: [f64; 3], radius: f64, velocity: [f64; 3], exposure: f64) -> Self {
        Self(SceneSpec::new(Surface::sphere(center, radius), velocity, exposure))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        SceneSpec::load(path).map(Self).map_err(py_err)
    }

    #[getter]
    fn exposure(&self) -> f64 {
        self.0.exposure
    }

    #[setter]
    fn set_exposure(&mut self, v: f64) {
        self.0.exposure = v;
    }

    #[getter]
    fn noise(&self) -> f64 {
        self.0.noise_std
    }

    #[setter]
    fn set_noise(&mut self, v: f64) {
        self.0.noise_std = v;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.0.seed = v;
    }

    fn to_text(&self) -> String {
        self.0.to_kv_text()
    }
}

#[pyclass(name = "Frame", module = "lightflow", skip_from_py_object)]
#[derive(Clone)]
struct PyFrame(RgbImage);

#[pymethods]
impl PyFrame {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        RgbImage::load_ppm(path).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn black(width: usize, height: usize) -> Self {
        Self(RgbImage::new(width, height))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_ppm(path).map_err(py_err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.width, self.0.height)
    }

    fn pixel(&self, x: usize, y: usize) -> PyResult<(f32, f32, f32)> {
        if x >= self.0.width || y >= self.0.height {
            return Err(PyValueError::new_err("pixel outside the frame"));
        }
        Ok((self.0.get(x, y, 0), self.0.get(x, y, 1), self.0.get(x, y, 2)))
    }
}

#[pyclass(name = "Depth", module = "lightflow", skip_from_py_object)]
#[derive(Clone)]
struct PyDepth(DepthMap);

#[pymethods]
impl PyDepth {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        DepthMap::load_pfm(path).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_pfm(path).map_err(py_err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.width, self.0.height)
    }

    fn get(&self, x: usize, y: usize) -> Option<f64> {
        (x < self.0.width && y < self.0.height).then(|| self.0.get(x, y)).flatten()
    }

    fn valid_count(&self) -> usize {
        self.0.valid_count()
    }

    fn coverage(&self) -> f64 {
        self.0.coverage()
    }

    /// Row-major depths with `None` where masked.
    fn to_list(&self) -> Vec<Option<f64>> {
        self.0.depth.iter().zip(&self.0.mask).map(|(d, m)| m.then_some(*d)).collect()
    }

    /// Median absolute error, RMSE, coverage and count against `truth`.
    fn compare<'py>(&self, py: Python<'py>, truth: &PyDepth) -> PyResult<Bound<'py, PyDict>> {
        let c = compare_to_ground_truth(&self.0, &truth.0).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("median_abs_err", c.median_abs_err)?;
        d.set_item("rmse", c.rmse)?;
        d.set_item("coverage", c.coverage)?;
        d.set_item("count", c.count)?;
        Ok(d)
    }

    /// Plane-fit RMSE of the back-projected points, meters.
    fn plane_rmse(&self, rig: &PyRig) -> PyResult<f64> {
        let points: Vec<_> = depth_to_points(&self.0, &rig.0.camera)
            .map_err(py_err)?
            .into_iter()
            .map(|(_, p)| p)
            .collect();
        fit_plane_rmse(&points).map(|f| f.rmse).map_err(py_err)
    }
}

/// Renders `scene` through `rig`; returns `(frame, truth_depth)`.
#[pyfunction]
fn render(py: Python<'_>, scene: &PyScene, rig: &PyRig) -> PyResult<(PyFrame, PyDepth)> {
    let (scene, rig) = (scene.0.clone(), rig.0.clone());
    let out = py.detach(|| render_frame(&scene, &rig)).map_err(py_err)?;
    Ok((PyFrame(out.frame), PyDepth(out.truth_depth)))
}

/// Depth of one frame; `sigma` is the flow smoothing in pixels.
#[pyfunction]
#[pyo3(signature = (rig, lut, frame, sigma = 2.0))]
fn reconstruct(py: Python<'_>, rig: &PyRig, lut: &PyLut, frame: &PyFrame, sigma: f64) -> PyResult<PyDepth> {
    let cfg = RunConfig::new(PathBuf::new());
    let rec = py
        .detach(|| reconstruct_frame(&cfg, &rig.0, &lut.0, &frame.0, sigma))
        .map_err(py_err)?;
    Ok(PyDepth(rec.depth))
}

/// Propagated error of the log flow ratio for flow extent `dr`, line
/// interval `b` and edge precision, all in pixels.
#[pyfunction]
#[pyo3(name = "log_ratio_error", signature = (dr = 10.0, b = 30.0, precision = 0.25))]
fn py_log_ratio_error(dr: f64, b: f64, precision: f64) -> f64 {
    log_ratio_error(dr, b, precision)
}

#[pymodule]
#[pyo3(name = "lightflow")]
fn lightflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRig>()?;
    m.add_class::<PyLut>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyFrame>()?;
    m.add_class::<PyDepth>()?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(py_log_ratio_error, m)?)?;
    Ok(())
}
