//! Python bindings: forward model, FSS extraction, resolution limit,
//! entanglement sweep, cavity reflectance and manifest batch analysis.

use std::path::Path;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fsskit::cavity::{find_cavity_mode, reflectance_spectrum, telecom_cavity, wavelength_grid, CavityIndices, Stack, DESIGN_WAVELENGTH_NM};
use fsskit::ensemble::{batch_analyze, BatchConfig, GeneratorConfig};
use fsskit::forward::{simulate_angle_series, DetectorModel, EmitterModel, PolarimeterConfig, PolarimeterKind, Species};
use fsskit::fss::{centroid_track, extract_fss, resolution_limit_with, CentroidMethod, CentroidOptions, FssResult, LineSelector, ResolutionOptions};
use fsskit::{AngleSeries, Error, RngSeed};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::Domain(_) | Error::Config(_) | Error::Parse { .. } | Error::Precondition(_) | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for fsskit::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// A bright-exciton doublet.
#[pyclass(name = "Emitter", module = "fsskit", skip_from_py_object)]
#[derive(Clone)]
struct PyEmitter(EmitterModel);

#[pymethods]
impl PyEmitter {
    #[new]
    #[pyo3(signature = (mean_energy_ev, fss_uev, dipole_angle_deg, linewidth_fwhm_uev, peak_counts = 1e4, species = "X", circular_fraction = 0.0))]
    fn new(
        mean_energy_ev: f64,
        fss_uev: f64,
        dipole_angle_deg: f64,
        linewidth_fwhm_uev: f64,
        peak_counts: f64,
        species: &str,
        circular_fraction: f64,
    ) -> PyResult<Self> {
        let species: Species = species.parse().py_err()?;
        let m = EmitterModel::new(mean_energy_ev, fss_uev, dipole_angle_deg, linewidth_fwhm_uev, peak_counts)
            .py_err()?
            .with_species(species)
            .with_circular_fraction(circular_fraction);
        m.validate().py_err()?;
        Ok(Self(m))
    }

    #[getter]
    fn mean_energy_ev(&self) -> f64 {
        self.0.mean_energy_ev
    }
    #[getter]
    fn fss_uev(&self) -> f64 {
        self.0.fss_uev
    }
    #[getter]
    fn dipole_angle_deg(&self) -> f64 {
        self.0.dipole_angle_deg
    }
    #[getter]
    fn linewidth_fwhm_uev(&self) -> f64 {
        self.0.linewidth_fwhm_uev
    }
    #[getter]
    fn peak_counts(&self) -> f64 {
        self.0.peak_counts
    }
    #[getter]
    fn species(&self) -> &'static str {
        self.0.species.as_str()
    }

    fn __repr__(&self) -> String {
        format!(
            "Emitter(mean_energy_ev={}, fss_uev={}, dipole_angle_deg={}, linewidth_fwhm_uev={}, species='{}')",
            self.0.mean_energy_ev,
            self.0.fss_uev,
            self.0.dipole_angle_deg,
            self.0.linewidth_fwhm_uev,
            self.0.species.as_str()
        )
    }
}

/// Rotating waveplate followed by a fixed linear polarizer.
#[pyclass(name = "Polarimeter", module = "fsskit", skip_from_py_object)]
#[derive(Clone)]
struct PyPolarimeter(PolarimeterConfig);

#[pymethods]
impl PyPolarimeter {
    #[staticmethod]
    #[pyo3(signature = (reference_offset_deg = 0.0, lp_axis_deg = 0.0))]
    fn qwp(reference_offset_deg: f64, lp_axis_deg: f64) -> PyResult<Self> {
        Self::build(PolarimeterKind::QwpLp, reference_offset_deg, lp_axis_deg)
    }

    #[staticmethod]
    #[pyo3(signature = (reference_offset_deg = 82.0, lp_axis_deg = 0.0))]
    fn hwp(reference_offset_deg: f64, lp_axis_deg: f64) -> PyResult<Self> {
        Self::build(PolarimeterKind::HwpLp, reference_offset_deg, lp_axis_deg)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.0.kind {
            PolarimeterKind::QwpLp => "qwp_lp",
            PolarimeterKind::HwpLp => "hwp_lp",
        }
    }
    #[getter]
    fn reference_offset_deg(&self) -> f64 {
        self.0.reference_offset_deg
    }
    #[getter]
    fn lp_axis_deg(&self) -> f64 {
        self.0.lp_axis_deg
    }

    fn __repr__(&self) -> String {
        format!(
            "Polarimeter(kind='{}', reference_offset_deg={}, lp_axis_deg={})",
            self.kind(),
            self.0.reference_offset_deg,
            self.0.lp_axis_deg
        )
    }
}

impl PyPolarimeter {
    fn build(kind: PolarimeterKind, reference_offset_deg: f64, lp_axis_deg: f64) -> PyResult<Self> {
        let p = PolarimeterConfig { kind, lp_axis_deg, reference_offset_deg };
        p.validate().py_err()?;
        Ok(Self(p))
    }
}

/// Spectrometer grid, instrument response and noise.
#[pyclass(name = "Detector", module = "fsskit", skip_from_py_object)]
#[derive(Clone)]
struct PyDetector(DetectorModel);

#[pymethods]
impl PyDetector {
    #[new]
    #[pyo3(signature = (irf_fwhm_uev = 89.0, pixel_pitch_uev = 25.0, n_pixels = 512, read_noise_rms = 10.0, shot_noise = true, bias_counts = 100.0))]
    fn new(
        irf_fwhm_uev: f64,
        pixel_pitch_uev: f64,
        n_pixels: usize,
        read_noise_rms: f64,
        shot_noise: bool,
        bias_counts: f64,
    ) -> PyResult<Self> {
        let d = DetectorModel {
            irf_fwhm_uev,
            pixel_pitch_uev,
            n_pixels,
            read_noise_rms,
            shot_noise,
            bias_counts,
            center_energy_ev: None,
        };
        d.validate().py_err()?;
        Ok(Self(d))
    }

    /// Same grid without noise or offset.
    fn noiseless(&self) -> Self {
        Self(self.0.noiseless())
    }

    #[getter]
    fn irf_fwhm_uev(&self) -> f64 {
        self.0.irf_fwhm_uev
    }
    #[getter]
    fn n_pixels(&self) -> usize {
        self.0.n_pixels
    }
}

/// Spectra recorded at a list of waveplate readings.
#[pyclass(name = "AngleSeries", module = "fsskit", skip_from_py_object)]
#[derive(Clone)]
struct PyAngleSeries(AngleSeries);

#[pymethods]
impl PyAngleSeries {
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        fsskit::io::read_series(Path::new(path)).py_err().map(Self)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        fsskit::io::write_series(Path::new(path), &self.0).py_err()
    }

    #[getter]
    fn angles_deg(&self) -> Vec<f64> {
        self.0.angles_deg()
    }

    fn energies_ev(&self, index: usize) -> PyResult<Vec<f64>> {
        self.entry(index).map(|e| e.spectrum.energies_ev().to_vec())
    }

    fn counts(&self, index: usize) -> PyResult<Vec<f64>> {
        self.entry(index).map(|e| e.spectrum.counts().to_vec())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

impl PyAngleSeries {
    fn entry(&self, index: usize) -> PyResult<&fsskit::domain::AngleSpectrum> {
        self.0
            .entries
            .get(index)
            .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(format!("no spectrum at index {index}")))
    }
}

#[pyclass(name = "FssResult", module = "fsskit", skip_from_py_object)]
#[derive(Clone)]
struct PyFssResult(FssResult);

#[pymethods]
impl PyFssResult {
    #[getter]
    fn fss_uev(&self) -> f64 {
        self.0.fss_uev
    }
    #[getter]
    fn fss_stderr_uev(&self) -> f64 {
        self.0.fss_stderr_uev
    }
    #[getter]
    fn dipole_angle_deg(&self) -> f64 {
        self.0.dipole_angle_deg
    }
    #[getter]
    fn dipole_stderr_deg(&self) -> f64 {
        self.0.dipole_stderr_deg
    }
    #[getter]
    fn dipole_defined(&self) -> bool {
        self.0.dipole_defined
    }
    #[getter]
    fn mean_energy_ev(&self) -> f64 {
        self.0.mean_energy_ev
    }
    #[getter]
    fn method(&self) -> &'static str {
        self.0.method.as_str()
    }
    /// (2⟨E⟩, SQ, SU, SV) in μeV.
    #[getter]
    fn energy_stokes(&self) -> (f64, f64, f64, f64) {
        let s = self.0.energy_stokes;
        (s.i, s.q, s.u, s.v)
    }

    fn resolved(&self) -> bool {
        self.0.resolved()
    }

    fn __repr__(&self) -> String {
        format!(
            "FssResult(method='{}', fss_uev={:.4}±{:.4}, dipole_angle_deg={:.3}, dipole_defined={})",
            self.0.method.as_str(),
            self.0.fss_uev,
            self.0.fss_stderr_uev,
            self.0.dipole_angle_deg,
            if self.0.dipole_defined { "True" } else { "False" }
        )
    }
}

/// `n` readings from `start_deg`, spaced `span_deg / n`.
#[pyfunction]
fn uniform_angles(start_deg: f64, span_deg: f64, n: usize) -> Vec<f64> {
    fsskit::forward::uniform_angles(start_deg, span_deg, n)
}

#[pyfunction]
#[pyo3(signature = (emitter, polarimeter, detector, angles_deg, seed = 0))]
fn simulate(
    emitter: &PyEmitter,
    polarimeter: &PyPolarimeter,
    detector: &PyDetector,
    angles_deg: Vec<f64>,
    seed: u64,
) -> PyResult<PyAngleSeries> {
    simulate_angle_series(&emitter.0, &polarimeter.0, &detector.0, &angles_deg, RngSeed(seed))
        .py_err()
        .map(PyAngleSeries)
}

/// Tracks the line through the scan and extracts the splitting with the
/// method matching the polarimeter.
#[pyfunction]
#[pyo3(signature = (series, polarimeter, centroid = "weighted_mean", target_energy_ev = None))]
fn extract(
    py: Python<'_>,
    series: &PyAngleSeries,
    polarimeter: &PyPolarimeter,
    centroid: &str,
    target_energy_ev: Option<f64>,
) -> PyResult<PyFssResult> {
    let method = match centroid {
        "weighted_mean" => CentroidMethod::WeightedMean,
        "gaussian_center" => CentroidMethod::GaussianCenter,
        other => return Err(PyValueError::new_err(format!("unknown centroid method {other:?}"))),
    };
    let opts = CentroidOptions { method, ..CentroidOptions::default() };
    let selector = LineSelector { target_energy_ev, ..LineSelector::default() };
    let (s, p) = (&series.0, polarimeter.0);
    py.detach(|| {
        let (es, _) = centroid_track(s, &selector, &opts)?;
        extract_fss(&es, &p)
    })
    .py_err()
    .map(PyFssResult)
}

#[pyfunction]
#[pyo3(signature = (linewidth_uev, n_angles = 36, n_trials = 1000, seed = 0, peak_counts = 1e4, detector = None))]
fn resolution_limit<'py>(
    py: Python<'py>,
    linewidth_uev: f64,
    n_angles: usize,
    n_trials: usize,
    seed: u64,
    peak_counts: f64,
    detector: Option<&PyDetector>,
) -> PyResult<Bound<'py, PyDict>> {
    let det = detector.map(|d| d.0.clone()).unwrap_or_default();
    let opts = ResolutionOptions { peak_counts, ..ResolutionOptions::default() };
    let r = py
        .detach(|| resolution_limit_with(linewidth_uev, &det, n_angles, n_trials, RngSeed(seed), &opts))
        .py_err()?;
    let d = PyDict::new(py);
    d.set_item("qwp_fft_uev", r.qwp_fft_uev)?;
    d.set_item("hwp_sinusoid_uev", r.hwp_sinusoid_uev)?;
    d.set_item("combined_uev", r.combined_uev)?;
    d.set_item("n_trials", r.n_trials)?;
    d.set_item("n_failed", r.n_failed)?;
    Ok(d)
}

/// Eigenstate mixing (α, β) for splitting `s` and hybridization `s_c`.
#[pyfunction]
fn eigenstate_coefficients(s_uev: f64, s_c_uev: f64) -> PyResult<(f64, f64)> {
    fsskit::entangle::eigenstate_coefficients(s_uev, s_c_uev).py_err()
}

/// One row of the two-photon state sweep.
#[pyfunction]
fn entangle_sweep_row<'py>(py: Python<'py>, s_uev: f64, s_c_uev: f64, tau_ns: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = fsskit::entangle::sweep_row(s_uev, s_c_uev, tau_ns).py_err()?;
    let d = PyDict::new(py);
    for (k, v) in [
        ("s", r.s_uev),
        ("s_c", r.s_c_uev),
        ("tau", r.tau_ns),
        ("alpha", r.alpha),
        ("beta", r.beta),
        ("fidelity", r.fidelity),
        ("C_rect", r.c_rect),
        ("C_diag", r.c_diag),
        ("C_circ", r.c_circ),
    ] {
        d.set_item(k, v)?;
    }
    Ok(d)
}

fn load_stack(stack_path: Option<&str>) -> PyResult<Stack> {
    match stack_path {
        Some(p) => fsskit::io::read_stack(Path::new(p)).py_err(),
        None => telecom_cavity(&CavityIndices::default(), DESIGN_WAVELENGTH_NM).py_err(),
    }
}

/// Reflectance at each wavelength; the built-in telecom cavity by default.
#[pyfunction]
#[pyo3(signature = (wavelengths_nm, stack_path = None))]
fn cavity_reflectance(wavelengths_nm: Vec<f64>, stack_path: Option<&str>) -> PyResult<Vec<f64>> {
    let stack = load_stack(stack_path)?;
    Ok(reflectance_spectrum(&stack, &wavelengths_nm).py_err()?.into_iter().map(|(_, r)| r).collect())
}

/// Fitted cavity dip of a stack scanned from `start_nm` to `stop_nm`.
#[pyfunction]
#[pyo3(signature = (stack_path = None, start_nm = 1100.0, stop_nm = 1550.0, points = 1801))]
fn cavity_mode<'py>(
    py: Python<'py>,
    stack_path: Option<&str>,
    start_nm: f64,
    stop_nm: f64,
    points: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let stack = load_stack(stack_path)?;
    let grid = wavelength_grid(start_nm, stop_nm, points).py_err()?;
    let m = find_cavity_mode(&reflectance_spectrum(&stack, &grid).py_err()?).py_err()?;
    let d = PyDict::new(py);
    d.set_item("center_nm", m.center_nm)?;
    d.set_item("fwhm_nm", m.fwhm_nm)?;
    d.set_item("depth", m.depth)?;
    d.set_item("baseline", m.baseline)?;
    d.set_item("converged", m.converged)?;
    Ok(d)
}

/// Synthetic ensemble as a list of (emitter_id, dot_id, Emitter).
#[pyfunction]
#[pyo3(signature = (seed = 0, n_x = 30, n_xx = 5))]
fn generate_ensemble(seed: u64, n_x: usize, n_xx: usize) -> PyResult<Vec<(String, String, PyEmitter)>> {
    let cfg = GeneratorConfig { n_x, n_xx, ..GeneratorConfig::default() };
    Ok(fsskit::ensemble::generate_ensemble(&cfg, RngSeed(seed))
        .py_err()?
        .into_iter()
        .map(|g| (g.emitter_id, g.dot_id, PyEmitter(g.emitter)))
        .collect())
}

/// Analyses every manifest entry; one dict per (emitter, method).
#[pyfunction]
#[pyo3(signature = (manifest_path, method = "auto"))]
fn analyze_manifest<'py>(py: Python<'py>, manifest_path: &str, method: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let (m, base) = fsskit::io::read_manifest(Path::new(manifest_path)).py_err()?;
    let cfg = BatchConfig { method: method.parse().py_err()?, ..BatchConfig::default() };
    let records = py.detach(|| batch_analyze(&m.batch_items(&base), &cfg)).py_err()?;
    records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("emitter_id", &r.emitter_id)?;
            d.set_item("method", r.method.as_str())?;
            d.set_item("fss_uev", r.result.map(|x| x.fss_uev))?;
            d.set_item("fss_stderr_uev", r.result.map(|x| x.fss_stderr_uev))?;
            d.set_item("dipole_angle_deg", r.result.map(|x| x.dipole_angle_deg))?;
            d.set_item("dipole_defined", r.result.map(|x| x.dipole_defined))?;
            d.set_item("linewidth_uev", r.linewidth_uev)?;
            d.set_item("flags", r.flags.iter().map(|f| f.as_str()).collect::<Vec<_>>())?;
            d.set_item("error", r.error.as_deref())?;
            Ok(d)
        })
        .collect()
}

#[pymodule(name = "fsskit")]
fn fsskit_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEmitter>()?;
    m.add_class::<PyPolarimeter>()?;
    m.add_class::<PyDetector>()?;
    m.add_class::<PyAngleSeries>()?;
    m.add_class::<PyFssResult>()?;
    m.add_function(wrap_pyfunction!(uniform_angles, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(resolution_limit, m)?)?;
    m.add_function(wrap_pyfunction!(eigenstate_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(entangle_sweep_row, m)?)?;
    m.add_function(wrap_pyfunction!(cavity_reflectance, m)?)?;
    m.add_function(wrap_pyfunction!(cavity_mode, m)?)?;
    m.add_function(wrap_pyfunction!(generate_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_manifest, m)?)?;
    m.add("HBAR_UEV_NS", fsskit::entangle::HBAR_UEV_NS)?;
    Ok(())
}
