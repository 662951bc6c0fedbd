//! Python bindings. Build with `cargo build -p qngpair-py --release` and
//! import the resulting shared library as `qngpair`.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use qngpair::config::{ns_to_ps, RunConfig, SourceConfig};
use qngpair::criteria::{self, Depth, PairClickStats, PeAggregation, PhotonNumberStats};
use qngpair::estimators::{self, SinglesMode};
use qngpair::photon_number::{self, DetectionChainParams, PhotonPairDistribution};
use qngpair::polarization::{self, ChshCounts, TomoProjector, TomographyCounts, TomographyRecord};
use qngpair::simulator;
use qngpair::timetag::{self, Arm, TimeTag};
use qngpair::ErrorKind;

create_exception!(qngpair, QngError, PyException);
create_exception!(qngpair, NotViolatedError, QngError);

fn err(e: qngpair::Error) -> PyErr {
    match e.kind() {
        ErrorKind::Config => PyValueError::new_err(e.to_string()),
        ErrorKind::NotViolated => NotViolatedError::new_err(e.to_string()),
        ErrorKind::Data => QngError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any()
            } else if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a
                .iter()
                .map(|x| json_to_py(py, x))
                .collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

/// Serializable result as plain dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn depth_f64(d: Depth) -> f64 {
    d.db().unwrap_or(f64::INFINITY)
}

fn aggregation(name: &str) -> PyResult<PeAggregation> {
    match name {
        "mean" => Ok(PeAggregation::Mean),
        "sum" => Ok(PeAggregation::Sum),
        "max" => Ok(PeAggregation::Max),
        other => Err(PyValueError::new_err(format!(
            "unknown aggregation '{other}'"
        ))),
    }
}

fn arm(name: &str) -> PyResult<Arm> {
    match name.to_ascii_lowercase().as_str() {
        "x" => Ok(Arm::X),
        "xx" => Ok(Arm::XX),
        other => Err(PyValueError::new_err(format!("unknown arm '{other}'"))),
    }
}

fn pair_stats(ps: f64, pe: f64, sigma_ps: f64, sigma_pe: f64, n_pulses: u64) -> PairClickStats {
    PairClickStats {
        ps,
        pe,
        sigma_ps,
        sigma_pe,
        n_pulses,
    }
}

/// Coincidence threshold for a given error probability.
#[pyfunction]
fn pair_threshold(pe: f64) -> PyResult<f64> {
    criteria::pair_threshold(pe).map_err(err)
}

/// Single-photon depth in dB (inf when P2+ = 0) and its σ.
#[pyfunction]
#[pyo3(signature = (p1, p2plus, sigma_p1 = 0.0, sigma_p2plus = 0.0))]
fn sps_depth(p1: f64, p2plus: f64, sigma_p1: f64, sigma_p2plus: f64) -> PyResult<(f64, f64)> {
    let stats = PhotonNumberStats {
        p0: 1.0 - p1 - p2plus,
        p1,
        p2plus,
        sigma_p1,
        sigma_p2plus,
        heralded: false,
    };
    let d = criteria::sps_depth(&stats).map_err(err)?;
    Ok((depth_f64(d.depth), d.sigma_db))
}

#[pyfunction]
#[pyo3(signature = (ps, pe, sigma_ps = 0.0, sigma_pe = 0.0, n_pulses = 0))]
fn pair_report<'py>(
    py: Python<'py>,
    ps: f64,
    pe: f64,
    sigma_ps: f64,
    sigma_pe: f64,
    n_pulses: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let r =
        criteria::pair_report(&pair_stats(ps, pe, sigma_ps, sigma_pe, n_pulses)).map_err(err)?;
    to_py(py, &r)
}

/// `(approx_db, exact_db, sigma_db, critical_transmissivity)`; raises
/// `NotViolatedError` below threshold.
#[pyfunction]
#[pyo3(signature = (ps, pe, sigma_ps = 0.0, sigma_pe = 0.0))]
fn pair_depth(ps: f64, pe: f64, sigma_ps: f64, sigma_pe: f64) -> PyResult<(f64, f64, f64, f64)> {
    let d = criteria::pair_depth(&pair_stats(ps, pe, sigma_ps, sigma_pe, 0)).map_err(err)?;
    Ok((
        depth_f64(d.approx),
        depth_f64(d.exact),
        d.sigma_db,
        d.critical_transmissivity,
    ))
}

#[pyfunction]
#[pyo3(signature = (mu, modes, eta, dark_prob = 0.0))]
fn oracle_row<'py>(
    py: Python<'py>,
    mu: f64,
    modes: f64,
    eta: f64,
    dark_prob: f64,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(
        py,
        &photon_number::oracle_row(mu, modes, eta, dark_prob).map_err(err)?,
    )
}

/// Exact click probabilities of the cascade law through a balanced chain.
#[pyfunction]
#[pyo3(signature = (prepared, eps_x, eps_xx, eta, dark_prob = 0.0))]
fn cascade_click_probs<'py>(
    py: Python<'py>,
    prepared: f64,
    eps_x: f64,
    eps_xx: f64,
    eta: f64,
    dark_prob: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let dist = PhotonPairDistribution::cascade(prepared, eps_x, eps_xx).map_err(err)?;
    let chain = DetectionChainParams::balanced(eta, dark_prob);
    let p = photon_number::detected_click_probabilities(&dist, &chain).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("ps", p.success())?;
    d.set_item("pe", p.error(PeAggregation::Mean))?;
    d.set_item("pe_x", p.x_double)?;
    d.set_item("pe_xx", p.xx_double)?;
    d.set_item("g2_x", p.g2_x())?;
    d.set_item("g2_xx", p.g2_xx())?;
    d.set_item("any_x_any_xx", p.any_x_any_xx)?;
    Ok(d.into_any())
}

/// Two-qubit polarization state in the H/V product basis.
#[pyclass(name = "DensityMatrix", module = "qngpair", from_py_object)]
#[derive(Clone)]
struct PyDensityMatrix(polarization::DensityMatrix);

#[pymethods]
impl PyDensityMatrix {
    #[new]
    fn new(real: [[f64; 4]; 4], imag: [[f64; 4]; 4]) -> PyResult<Self> {
        polarization::DensityMatrix::from_parts(&real, &imag)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn phi_plus() -> Self {
        Self(polarization::DensityMatrix::phi_plus())
    }

    #[staticmethod]
    fn werner(p: f64) -> PyResult<Self> {
        polarization::DensityMatrix::werner(p)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn real(&self) -> [[f64; 4]; 4] {
        self.0.real_part()
    }

    #[getter]
    fn imag(&self) -> [[f64; 4]; 4] {
        self.0.imag_part()
    }

    fn eigenvalues(&self) -> [f64; 4] {
        self.0.eigenvalues()
    }

    fn chsh<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &polarization::chsh_expectation(&self.0))
    }

    fn fidelity_phi_plus(&self) -> PyResult<f64> {
        polarization::fidelity(&self.0, &polarization::phi_plus_state()).map_err(err)
    }

    fn fidelity_phase_optimized(&self) -> f64 {
        polarization::fidelity_phase_optimized(&self.0)
    }

    fn __repr__(&self) -> String {
        format!("DensityMatrix(eigenvalues={:?})", self.0.eigenvalues())
    }
}

/// Maximum-likelihood state from `(x, xx, count)` records with projector
/// labels H, V, D, R. Returns the state and the log-likelihood.
#[pyfunction]
fn tomography(
    py: Python<'_>,
    records: Vec<(String, String, f64)>,
) -> PyResult<(PyDensityMatrix, f64)> {
    let proj = |s: &str| {
        TomoProjector::from_label(s)
            .ok_or_else(|| PyValueError::new_err(format!("unknown projector '{s}'")))
    };
    let records = records
        .iter()
        .map(|(x, xx, count)| {
            Ok(TomographyRecord {
                x: proj(x)?,
                xx: proj(xx)?,
                count: *count,
                weight: 1.0,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let counts = TomographyCounts { records };
    let r = py
        .detach(|| polarization::tomography_reconstruct(&counts))
        .map_err(err)?;
    Ok((PyDensityMatrix(r.rho), r.log_likelihood))
}

/// CHSH from `counts[setting][outcome]`, setting `2 i + j`, outcomes ++, +-, -+, --.
#[pyfunction]
fn chsh_from_counts<'py>(py: Python<'py>, counts: [[u64; 4]; 4]) -> PyResult<Bound<'py, PyAny>> {
    to_py(
        py,
        &polarization::chsh_from_counts(&ChshCounts(counts)).map_err(err)?,
    )
}

#[pyclass(name = "TimeTagStream", module = "qngpair")]
struct PyStream(timetag::TimeTagStream);

impl PyStream {
    fn offsets(&self, offsets_ps: Option<[i64; 4]>) -> PyResult<[i64; 4]> {
        if let Some(o) = offsets_ps {
            return Ok(o);
        }
        let found = timetag::calibrate_offsets(&self.0.header, self.0.iter_ok(), 4).map_err(err)?;
        Ok(found.map(|o| o.unwrap_or(0)))
    }

    fn table(
        &self,
        window_ns: f64,
        offsets_ps: Option<[i64; 4]>,
    ) -> PyResult<timetag::PulseClickTable> {
        let offsets = self.offsets(offsets_ps)?;
        timetag::fold_pulses(
            &self.0.header,
            self.0.iter_ok(),
            ns_to_ps(window_ns),
            offsets,
        )
        .map_err(err)
    }
}

#[pymethods]
impl PyStream {
    /// Builds a stream from `(channel, time_ps)` pairs with the default
    /// channel table and explicit sync.
    #[new]
    #[pyo3(signature = (tags, rep_rate_hz = simulator::DEFAULT_REP_RATE_HZ))]
    fn new(tags: Vec<(u8, u64)>, rep_rate_hz: f64) -> PyResult<Self> {
        let header = timetag::StreamHeader::new(rep_rate_hz).map_err(err)?;
        let tags = tags.into_iter().map(|(c, t)| TimeTag::new(c, t)).collect();
        timetag::TimeTagStream::new(header, tags)
            .map(Self)
            .map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.tags.len()
    }

    #[getter]
    fn rep_rate_hz(&self) -> f64 {
        self.0.header.rep_rate_hz()
    }

    #[getter]
    fn pulse_count(&self) -> u64 {
        self.0.header.pulse_count
    }

    /// `(role, channel)` table.
    #[getter]
    fn channels(&self) -> Vec<(String, u8)> {
        self.0
            .header
            .channels
            .iter()
            .map(|(r, c)| (r.name().to_string(), *c))
            .collect()
    }

    fn tags(&self) -> Vec<(u8, u64)> {
        self.0.tags.iter().map(|t| (t.channel, t.time_ps)).collect()
    }

    fn count_channel(&self, channel: u8) -> usize {
        self.0.count_channel(channel)
    }

    fn write(&self, py: Python<'_>, path: std::path::PathBuf) -> PyResult<()> {
        py.detach(|| timetag::write_stream(&path, &self.0.header, self.0.tags.iter().copied()))
            .map(|_| ())
            .map_err(err)
    }

    #[pyo3(signature = (bin_ps = 4))]
    fn calibrate_offsets(&self, bin_ps: u64) -> PyResult<[Option<i64>; 4]> {
        timetag::calibrate_offsets(&self.0.header, self.0.iter_ok(), bin_ps).map_err(err)
    }

    /// Success and error probabilities at one window.
    #[pyo3(signature = (window_ns = 0.28, offsets_ps = None, aggregation = "mean"))]
    fn pair_stats<'py>(
        &self,
        py: Python<'py>,
        window_ns: f64,
        offsets_ps: Option<[i64; 4]>,
        aggregation: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let agg = self::aggregation(aggregation)?;
        let table = self.table(window_ns, offsets_ps)?;
        let est = estimators::pair_click_stats(&table, agg).map_err(err)?;
        to_py(py, &est)
    }

    /// Photon-number statistics of one arm, optionally heralded by the other.
    #[pyo3(signature = (window_ns = 0.28, arm = "x", herald = None, bs_ratio = 0.5, offsets_ps = None))]
    fn hbt<'py>(
        &self,
        py: Python<'py>,
        window_ns: f64,
        arm: &str,
        herald: Option<&str>,
        bs_ratio: f64,
        offsets_ps: Option<[i64; 4]>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let table = self.table(window_ns, offsets_ps)?;
        let herald = herald.map(self::arm).transpose()?;
        let counts = estimators::hbt_counts(&table, self::arm(arm)?, herald).map_err(err)?;
        let est =
            estimators::photon_stats(&counts, bs_ratio, SinglesMode::Inclusive).map_err(err)?;
        to_py(py, &est)
    }

    /// Keeps each photon tag with probability `t`.
    fn attenuate(&self, t: f64, seed: u64) -> PyResult<Self> {
        let channels = simulator::photon_channels(&self.0.header).map_err(err)?;
        simulator::attenuate_stream(&self.0, t, &channels, seed)
            .map(Self)
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "TimeTagStream(tags={}, pulses={}, rep_rate_hz={})",
            self.0.tags.len(),
            self.0.header.pulse_count,
            self.0.header.rep_rate_hz()
        )
    }
}

/// Runs the simulator for a TOML run configuration.
#[pyfunction]
#[pyo3(signature = (config_toml, pulses = None, seed = None))]
fn simulate(
    py: Python<'_>,
    config_toml: &str,
    pulses: Option<u64>,
    seed: Option<u64>,
) -> PyResult<PyStream> {
    let mut cfg = RunConfig::from_toml_str(config_toml).map_err(err)?;
    if let Some(p) = pulses {
        cfg.pulses = p;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(err)?;
    let stream = py
        .detach(|| match &cfg.source {
            SourceConfig::Qd(q) => simulator::simulate_qd(q, &cfg.chain, cfg.pulses, cfg.seed),
            SourceConfig::Spdc(s) => simulator::simulate_spdc(s, &cfg.chain, cfg.pulses, cfg.seed),
        })
        .map_err(err)?;
    Ok(PyStream(stream))
}

#[pyfunction]
fn read_stream(py: Python<'_>, path: std::path::PathBuf) -> PyResult<PyStream> {
    py.detach(|| timetag::read_stream_all(&path))
        .map(PyStream)
        .map_err(err)
}

#[pymodule]
#[pyo3(name = "qngpair")]
fn qngpair_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("QngError", m.py().get_type::<QngError>())?;
    m.add("NotViolatedError", m.py().get_type::<NotViolatedError>())?;
    m.add_function(wrap_pyfunction!(pair_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(sps_depth, m)?)?;
    m.add_function(wrap_pyfunction!(pair_report, m)?)?;
    m.add_function(wrap_pyfunction!(pair_depth, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_row, m)?)?;
    m.add_function(wrap_pyfunction!(cascade_click_probs, m)?)?;
    m.add_function(wrap_pyfunction!(tomography, m)?)?;
    m.add_function(wrap_pyfunction!(chsh_from_counts, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(read_stream, m)?)?;
    m.add_class::<PyDensityMatrix>()?;
    m.add_class::<PyStream>()?;
    Ok(())
}
