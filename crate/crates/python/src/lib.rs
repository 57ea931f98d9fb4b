//! Python bindings. Signals cross the boundary as lists of channel lists
//! (`[channel][sample]`), directions as `(theta, phi)` in radians unless a
//! name says otherwise.

// pyo3 0.22 macro expansion trips this lint on PyResult returns
#![allow(clippy::useless_conversion)]

use ::ambiforge as core;
use core::cli::{encode_spectrogram, HalfSpaceArg, Method, RunConfig};
use core::metrics::{evaluate, EvalInputs};
use core::sh::{self, DirectionGrid, GridPreset};
use core::signal::{AmbisonicSignal, Signal};
use core::stft::Spectrogram;
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let c = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("channels differ in length"));
    }
    Array2::from_shape_vec((c, n), rows.into_iter().flatten().collect()).map_err(err)
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn ambisonic(rows: Vec<Vec<f64>>, sample_rate: u32) -> PyResult<AmbisonicSignal> {
    AmbisonicSignal::new(Signal::new(to_array(rows)?, sample_rate)).map_err(err)
}

fn grid(name: &str) -> PyResult<DirectionGrid> {
    sh::spherical_design(&name.parse::<GridPreset>().map_err(err)?).map_err(err)
}

/// Unit direction on the sphere: inclination `theta` from +z, azimuth `phi`.
#[pyclass(module = "ambiforge", frozen)]
#[derive(Clone, Copy)]
struct Direction(sh::Direction);

#[pymethods]
impl Direction {
    #[new]
    fn new(theta: f64, phi: f64) -> Self {
        Direction(sh::Direction::new(theta, phi))
    }

    #[staticmethod]
    fn from_degrees(theta_deg: f64, phi_deg: f64) -> Self {
        Direction(sh::Direction::from_degrees(theta_deg, phi_deg))
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta()
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.0.phi()
    }

    #[getter]
    fn theta_deg(&self) -> f64 {
        self.0.theta_deg()
    }

    #[getter]
    fn phi_deg(&self) -> f64 {
        self.0.phi_deg()
    }

    fn unit_vector(&self) -> [f64; 3] {
        self.0.unit_vector()
    }

    fn mirror(&self) -> Self {
        Direction(self.0.mirror())
    }

    fn angle_to(&self, other: &Direction) -> f64 {
        self.0.angle_to(&other.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "Direction(theta_deg={:.3}, phi_deg={:.3})",
            self.0.theta_deg(),
            self.0.phi_deg()
        )
    }
}

/// Short-time Fourier transform with a square-root Hann window.
#[pyclass(module = "ambiforge", frozen)]
struct Stft(core::stft::Stft);

#[pymethods]
impl Stft {
    #[new]
    #[pyo3(signature = (fft_size = 512, hop_size = 256))]
    fn new(fft_size: usize, hop_size: usize) -> PyResult<Self> {
        Ok(Stft(core::stft::Stft::new(fft_size, hop_size).map_err(err)?))
    }

    /// Returns `[channel][frame][bin]` complex values.
    fn forward(&self, x: Vec<Vec<f64>>, sample_rate: u32) -> PyResult<Vec<Vec<Vec<Complex64>>>> {
        let s = self
            .0
            .forward(&Signal::new(to_array(x)?, sample_rate))
            .map_err(err)?;
        Ok(s.data
            .outer_iter()
            .map(|c| c.outer_iter().map(|t| t.to_vec()).collect())
            .collect())
    }

    /// Inverts `forward`; `length` is the original signal length.
    fn inverse(
        &self,
        spec: Vec<Vec<Vec<Complex64>>>,
        sample_rate: u32,
        length: usize,
    ) -> PyResult<Vec<Vec<f64>>> {
        let c = spec.len();
        let t = spec.first().map_or(0, Vec::len);
        let f = spec.first().and_then(|ch| ch.first()).map_or(0, Vec::len);
        let flat: Vec<Complex64> = spec.into_iter().flatten().flatten().collect();
        let data = Array3::from_shape_vec((c, t, f), flat).map_err(err)?;
        let s = Spectrogram {
            data,
            sample_rate,
            fft_size: self.0.fft_size(),
            hop_size: self.0.hop_size(),
            signal_len: length,
        };
        Ok(to_rows(&self.0.inverse(&s).map_err(err)?.data))
    }
}

/// Real orthonormal spherical harmonics up to `order`, ACN channel order.
#[pyfunction]
fn sh_vector(order: usize, direction: &Direction) -> Vec<f64> {
    sh::sh_vector(order, &direction.0)
}

/// Per-channel sign under reflection through the horizontal plane.
#[pyfunction]
fn mirror_parity_signs(order: usize) -> Vec<i8> {
    sh::mirror_parity_signs(order).signs().to_vec()
}

/// Directions of a named grid preset (`design-50-1296`, `dsb-160`,
/// `equiangular-5deg`, `file:<path>`).
#[pyfunction]
fn grid_directions(name: &str) -> PyResult<Vec<Direction>> {
    Ok(grid(name)?.iter().copied().map(Direction).collect())
}

/// Renders a scene given as JSON. Returns a dict with `mics`, `gt_soa`,
/// `sample_rate` and `meta` (JSON text).
#[pyfunction]
fn simulate_scene(py: Python<'_>, scene_json: &str) -> PyResult<PyObject> {
    let spec = core::sim::SceneSpec::from_json(scene_json).map_err(err)?;
    let out = core::sim::simulate_scene(&spec).map_err(err)?;
    let d = PyDict::new_bound(py);
    d.set_item("mics", to_rows(&out.mics.data))?;
    d.set_item("gt_soa", to_rows(out.gt_soa.data()))?;
    d.set_item("sample_rate", out.mics.sample_rate)?;
    d.set_item("meta", serde_json::to_string(&out.meta).map_err(err)?)?;
    Ok(d.into_any().unbind())
}

/// Encodes a microphone recording to Ambisonics with `dsb`, `ls1` or `ls2`.
#[pyfunction]
#[pyo3(signature = (mics, sample_rate, method = "ls1", halfspace = "unknown", array = "circle8-r5cm"))]
fn encode(
    mics: Vec<Vec<f64>>,
    sample_rate: u32,
    method: &str,
    halfspace: &str,
    array: &str,
) -> PyResult<Vec<Vec<f64>>> {
    let method = match method {
        "dsb" => Method::Dsb,
        "ls1" => Method::Ls1,
        "ls2" => Method::Ls2,
        other => return Err(PyValueError::new_err(format!("unknown method {other}"))),
    };
    let halfspace = match halfspace {
        "upper" => HalfSpaceArg::Upper,
        "lower" => HalfSpaceArg::Lower,
        "unknown" => HalfSpaceArg::Unknown,
        other => return Err(PyValueError::new_err(format!("unknown half-space {other}"))),
    };
    let config = RunConfig {
        array: array.to_string(),
        ..RunConfig::default()
    };
    let array = core::array::MicArray::load(array).map_err(err)?;
    let stft = core::stft::Stft::new(config.fft_size, config.hop_size).map_err(err)?;
    let x = stft
        .forward(&Signal::new(to_array(mics)?, sample_rate))
        .map_err(err)?;
    let b = encode_spectrogram(
        &x,
        method,
        halfspace,
        &[],
        &array,
        &config,
        config.lambda,
        &config.grid,
    )
    .map_err(err)?;
    Ok(to_rows(&stft.inverse(&b).map_err(err)?.data))
}

/// Spatial power map on a grid preset, one value per direction.
#[pyfunction]
#[pyo3(signature = (b, sample_rate, grid_name = "design-50-1296"))]
fn power_map(b: Vec<Vec<f64>>, sample_rate: u32, grid_name: &str) -> PyResult<Vec<f64>> {
    Ok(core::spatial::power_map(&ambisonic(b, sample_rate)?, &grid(grid_name)?).values)
}

/// Direction of the power-map peak on the 1296-point design.
#[pyfunction]
fn estimate_doa(b: Vec<Vec<f64>>, sample_rate: u32) -> PyResult<Direction> {
    Ok(Direction(
        core::spatial::estimate_doa(&ambisonic(b, sample_rate)?).map_err(err)?,
    ))
}

/// `(azimuth error, inclination error)` in degrees.
#[pyfunction]
fn localization_error(estimate: &Direction, truth: &Direction) -> (f64, f64) {
    core::spatial::localization_error(&estimate.0, &truth.0)
}

/// Channel-averaged scale-invariant SNR in dB.
#[pyfunction]
fn si_snr(est: Vec<Vec<f64>>, reference: Vec<Vec<f64>>, sample_rate: u32) -> PyResult<f64> {
    core::metrics::si_snr(&ambisonic(est, sample_rate)?, &ambisonic(reference, sample_rate)?).map_err(err)
}

/// Signal-level metrics between two Ambisonic signals as a dict.
#[pyfunction]
#[pyo3(signature = (est, reference, sample_rate, truth = None))]
fn evaluate_pair(
    py: Python<'_>,
    est: Vec<Vec<f64>>,
    reference: Vec<Vec<f64>>,
    sample_rate: u32,
    truth: Option<Direction>,
) -> PyResult<PyObject> {
    let est = ambisonic(est, sample_rate)?;
    let reference = ambisonic(reference, sample_rate)?;
    let inputs = EvalInputs {
        item: "item",
        estimate: &est,
        reference: &reference,
        hrtf: None,
        truth: truth.map(|d| d.0),
    };
    let r = evaluate(&inputs, &core::stft::Stft::default()).map_err(err)?;
    let d = PyDict::new_bound(py);
    for (k, v) in [
        ("si_snr", r.si_snr),
        ("env", r.env),
        ("lsd", r.lsd),
        ("coherence", r.coherence),
        ("rmse_map", r.rmse_map),
        ("az_err", r.az_err),
        ("el_err", r.el_err),
    ] {
        if let Some(v) = v {
            d.set_item(k, v)?;
        }
    }
    Ok(d.into_any().unbind())
}

#[pymodule]
fn ambiforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Direction>()?;
    m.add_class::<Stft>()?;
    m.add_function(wrap_pyfunction!(sh_vector, m)?)?;
    m.add_function(wrap_pyfunction!(mirror_parity_signs, m)?)?;
    m.add_function(wrap_pyfunction!(grid_directions, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(power_map, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_doa, m)?)?;
    m.add_function(wrap_pyfunction!(localization_error, m)?)?;
    m.add_function(wrap_pyfunction!(si_snr, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_pair, m)?)?;
    Ok(())
}
