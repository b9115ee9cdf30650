//! Python bindings: EDF reading, spike encoding, LIF dynamics, models and
//! parameters, FedAvg, energy/WSP, and the experiment commands.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use spikefed_core::edf::{self, EegRecording};
use spikefed_core::encoding::{encode_delta, encode_rate};
use spikefed_core::energy::{self, EnergyModel, MethodResult};
use spikefed_core::experiment::{self, ExperimentConfig, DATA_ROOT_ENV};
use spikefed_core::federated::{fedavg_aggregate, ClientUpdate};
use spikefed_core::models::{self, LifConfig, LstmArch, Model, ModelKind, ResetMode, TrunkArch};
use spikefed_core::numerics::{self, ParameterSet, Tensor};

create_exception!(spikefed, SpikefedError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    SpikefedError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    Tensor::matrix(r, c, rows.into_iter().flatten().collect()).map_err(err)
}

fn parse_kind(name: &str) -> PyResult<ModelKind> {
    ModelKind::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown model `{name}`")))
}

/// A parsed EDF/EDF+ recording.
#[pyclass(frozen, name = "Recording")]
struct PyRecording(EegRecording);

#[pymethods]
impl PyRecording {
    #[getter]
    fn subject_id(&self) -> String {
        self.0.subject_id.clone()
    }

    #[getter]
    fn sampling_rate(&self) -> f64 {
        self.0.sampling_rate
    }

    #[getter]
    fn num_samples(&self) -> usize {
        self.0.num_samples()
    }

    #[getter]
    fn channel_labels(&self) -> Vec<String> {
        self.0.channels.iter().map(|c| c.label.clone()).collect()
    }

    /// `(onset seconds, duration seconds or None, label)` triples.
    #[getter]
    fn annotations(&self) -> Vec<(f64, Option<f64>, String)> {
        self.0
            .annotations
            .iter()
            .map(|a| (a.onset, a.duration, a.label.clone()))
            .collect()
    }

    /// Physical samples of one channel.
    fn channel(&self, index: usize) -> PyResult<Vec<f64>> {
        self.0
            .samples
            .get(index)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("channel {index} out of range")))
    }

    fn summary(&self) -> String {
        edf::inspect_summary(&self.0)
    }

    /// EDF+ bytes of this recording.
    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        edf::write_edf(&self.0).map_err(err)
    }
}

#[pyfunction]
fn read_edf(path: PathBuf) -> PyResult<PyRecording> {
    edf::read_edf_file(&path).map(PyRecording).map_err(err)
}

#[pyfunction]
fn parse_edf(data: &[u8]) -> PyResult<PyRecording> {
    edf::parse_edf(data).map(PyRecording).map_err(err)
}

/// Signed delta raster (+1 ON, -1 OFF) of a `[channels][samples]` window.
#[pyfunction]
fn delta_encode(window: Vec<Vec<f64>>, threshold: f64) -> PyResult<Vec<Vec<f64>>> {
    let shape_cols = window.first().map_or(0, Vec::len);
    let spikes = encode_delta(&matrix(window)?, threshold).map_err(err)?;
    Ok(spikes
        .signed()
        .data()
        .chunks(shape_cols.max(1))
        .map(<[f64]>::to_vec)
        .collect())
}

/// Bernoulli spikes as `[step][channel][sample]` of 0/1.
#[pyfunction]
fn rate_encode(window: Vec<Vec<f64>>, steps: usize, seed: u64) -> PyResult<Vec<Vec<Vec<u32>>>> {
    let s = encode_rate(&matrix(window)?, steps, seed).map_err(err)?;
    let [t, c, w] = s.shape();
    Ok((0..t)
        .map(|step| (0..c).map(|ch| (0..w).map(|p| u32::from(s.get(step, ch, p))).collect()).collect())
        .collect())
}

/// One leaky integrate-and-fire update; returns `(v', spikes)`.
#[pyfunction]
#[pyo3(signature = (v, current, beta=0.9, threshold=1.0, reset="subtract"))]
fn lif_step(v: Vec<f64>, current: Vec<f64>, beta: f64, threshold: f64, reset: &str) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let reset = match reset {
        "subtract" => ResetMode::Subtract,
        "zero" => ResetMode::Zero,
        other => return Err(PyValueError::new_err(format!("unknown reset `{other}`"))),
    };
    let cfg = LifConfig {
        beta,
        threshold,
        reset,
        ..LifConfig::default()
    };
    let v = Tensor::vector(v).map_err(err)?;
    let i = Tensor::vector(current).map_err(err)?;
    let (v2, s) = models::lif_step(&v, &i, &cfg).map_err(err)?;
    Ok((v2.data().to_vec(), s.data().to_vec()))
}

/// Named tensors with a layout fingerprint.
#[pyclass(frozen, from_py_object, name = "Params")]
#[derive(Clone)]
struct PyParams(ParameterSet);

#[pymethods]
impl PyParams {
    #[getter]
    fn fingerprint(&self) -> String {
        self.0.fingerprint().to_string()
    }

    fn names(&self) -> Vec<String> {
        self.0.entries().iter().map(|(n, _)| n.clone()).collect()
    }

    fn shape(&self, name: &str) -> PyResult<Vec<usize>> {
        self.0
            .get(name)
            .map(|t| t.shape().to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("no tensor `{name}`")))
    }

    fn values(&self, name: &str) -> PyResult<Vec<f64>> {
        self.0
            .get(name)
            .map(|t| t.data().to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("no tensor `{name}`")))
    }

    fn flat(&self) -> Vec<f64> {
        self.0.flat_values()
    }

    fn with_flat(&self, values: Vec<f64>) -> PyResult<PyParams> {
        self.0.with_flat_values(&values).map(PyParams).map_err(err)
    }

    fn to_checkpoint(&self) -> String {
        numerics::write_checkpoint(&self.0)
    }

    #[staticmethod]
    fn from_checkpoint(text: &str) -> PyResult<PyParams> {
        numerics::read_checkpoint(text).map(PyParams).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.num_elements()
    }
}

/// One of the three classifiers at the reference (or given) size.
#[pyclass(frozen, name = "Model")]
struct PyModel(Model);

#[pymethods]
impl PyModel {
    /// `trunk` and `lstm` are JSON objects of architecture overrides.
    #[new]
    #[pyo3(signature = (kind, trunk=None, lstm=None))]
    fn new(kind: &str, trunk: Option<&str>, lstm: Option<&str>) -> PyResult<Self> {
        let trunk: TrunkArch = match trunk {
            Some(j) => serde_json::from_str(j).map_err(err)?,
            None => TrunkArch::default(),
        };
        let lstm: LstmArch = match lstm {
            Some(j) => serde_json::from_str(j).map_err(err)?,
            None => LstmArch::default(),
        };
        let m = Model::new(parse_kind(kind)?, trunk, lstm, LifConfig::default());
        m.validate().map_err(err)?;
        Ok(Self(m))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind().as_str()
    }

    fn init_params(&self, seed: u64) -> PyParams {
        PyParams(self.0.init_params(seed))
    }

    /// Logits for one normalized `[channels][samples]` window, encoded with
    /// the default encoder.
    fn forward(&self, params: &PyParams, window: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let input = self
            .0
            .prepare(&matrix(window)?, &Default::default(), "python")
            .map_err(err)?;
        let (logits, _) = self.0.forward(&params.0, &input).map_err(err)?;
        Ok(logits.data().to_vec())
    }

    /// Per-inference `(macs, accumulates)`; spiking models need their
    /// measured rates and so report MACs of the layout only.
    fn op_counts(&self) -> PyResult<(u64, f64)> {
        match self.0 {
            Model::Snn(_) => Err(PyValueError::new_err("spiking models need spike statistics; use compare()")),
            _ => {
                let ops = energy::count_ops(&self.0, None).map_err(err)?;
                Ok((ops.total_macs(), ops.total_acs()))
            }
        }
    }
}

/// Sample-weighted average of `(client id, params, n_k)` updates.
#[pyfunction]
fn fedavg(updates: Vec<(String, PyParams, usize)>) -> PyResult<PyParams> {
    let updates: Vec<ClientUpdate> = updates
        .into_iter()
        .map(|(id, p, n)| ClientUpdate {
            client_id: id,
            params: p.0,
            n_k: n,
            train_loss: 0.0,
            train_accuracy: 0.0,
        })
        .collect();
    fedavg_aggregate(&updates).map(PyParams).map_err(err)
}

/// Energy in joules of `macs` multiply-accumulates and `acs` accumulates.
#[pyfunction]
#[pyo3(signature = (macs, acs, e_mac=4.6e-12, e_ac=0.9e-12))]
fn estimate_energy(macs: u64, acs: f64, e_mac: f64, e_ac: f64) -> PyResult<f64> {
    let model = EnergyModel { e_mac, e_ac };
    model.validate().map_err(err)?;
    Ok(macs as f64 * e_mac + acs * e_ac)
}

/// WSP per `(method, accuracy, energy)`; returns `(method, wsp)` pairs.
#[pyfunction]
fn compute_wsp(results: Vec<(String, f64, f64)>) -> PyResult<Vec<(String, f64)>> {
    let input: Vec<MethodResult> = results
        .into_iter()
        .map(|(method, accuracy, energy_j)| MethodResult {
            method,
            accuracy,
            energy_j,
        })
        .collect();
    let r = energy::compute_wsp(&input).map_err(err)?;
    Ok(r.entries.into_iter().map(|e| (e.method, e.wsp)).collect())
}

/// A loaded experiment config; `overrides` are `key=value` strings.
#[pyclass(frozen, name = "Experiment")]
struct PyExperiment(ExperimentConfig);

#[pymethods]
impl PyExperiment {
    #[new]
    #[pyo3(signature = (path, overrides=Vec::new()))]
    fn new(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
        ExperimentConfig::load(&path, &overrides, root).map(Self).map_err(err)
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.0.output_dir.clone()
    }

    /// Returns the `subject class train test` summary table.
    fn ingest(&self, py: Python<'_>) -> PyResult<String> {
        let cfg = self.0.clone();
        py.detach(move || experiment::ingest(&cfg).map(|o| o.summary)).map_err(err)
    }

    /// Trains one method; returns the global test accuracy per round.
    fn train(&self, py: Python<'_>, method: &str) -> PyResult<Vec<f64>> {
        let k = parse_kind(method)?;
        let cfg = self.0.clone();
        py.detach(move || {
            experiment::train(&cfg, k, |_| {}).map(|o| o.rounds.iter().map(|r| r.test_accuracy).collect())
        })
        .map_err(err)
    }

    /// Returns the comparison report as JSON text.
    fn compare(&self, py: Python<'_>) -> PyResult<String> {
        let cfg = self.0.clone();
        py.detach(move || experiment::compare(&cfg))
            .map_err(err)
            .and_then(|o| serde_json::to_string(&o.report).map_err(err))
    }
}

#[pymodule]
fn spikefed(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SpikefedError", m.py().get_type::<SpikefedError>())?;
    m.add_class::<PyRecording>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(read_edf, m)?)?;
    m.add_function(wrap_pyfunction!(parse_edf, m)?)?;
    m.add_function(wrap_pyfunction!(delta_encode, m)?)?;
    m.add_function(wrap_pyfunction!(rate_encode, m)?)?;
    m.add_function(wrap_pyfunction!(lif_step, m)?)?;
    m.add_function(wrap_pyfunction!(fedavg, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_energy, m)?)?;
    m.add_function(wrap_pyfunction!(compute_wsp, m)?)?;
    Ok(())
}
