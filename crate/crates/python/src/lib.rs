//! Python bindings: drive data generation, training and evaluation from
//! Python with the same files the `tgmz` binary reads and writes.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tgmz::cli::{self, Checkpoint};
use tgmz::data::{make_synthetic, save_dataset, SyntheticSpec};
use tgmz::eval::{MetricsReport, Setting};

fn to_py(e: tgmz::Error) -> PyErr {
    match e {
        tgmz::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Parses a synthetic dataset spec given as TOML text.
pub fn synthetic_spec(toml_text: &str) -> tgmz::Result<SyntheticSpec> {
    let de = toml::Deserializer::parse(toml_text).map_err(|e| tgmz::Error::Config {
        key: "<document>".into(),
        msg: e.to_string(),
    })?;
    serde_path_to_error::deserialize(de).map_err(|e| tgmz::Error::Config {
        key: e.path().to_string(),
        msg: e.into_inner().message().to_string(),
    })
}

/// Writes a synthetic dataset described by `spec` (TOML text) to `out`.
#[pyfunction]
#[pyo3(signature = (out, spec = ""))]
fn generate_dataset(out: PathBuf, spec: &str) -> PyResult<()> {
    let spec = synthetic_spec(spec).map_err(to_py)?;
    save_dataset(&make_synthetic(&spec).map_err(to_py)?, &out).map_err(to_py)
}

/// Validated configuration, re-emitted as TOML with every default filled in.
#[pyfunction]
fn resolve_config(path: PathBuf) -> PyResult<String> {
    Ok(cli::parse_config(&path).map_err(to_py)?.to_toml())
}

#[pyfunction]
fn config_hash(path: PathBuf) -> PyResult<String> {
    Ok(cli::parse_config(&path).map_err(to_py)?.hash())
}

/// Trains from a config file; returns the checkpoint path.
#[pyfunction]
fn train(py: Python<'_>, config: PathBuf) -> PyResult<PathBuf> {
    let cfg = cli::parse_config(&config).map_err(to_py)?;
    let out = py.detach(|| cli::run_train(&cfg)).map_err(to_py)?;
    Ok(out.checkpoint)
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("setting", r.setting.to_string())?;
    d.set_item("u", r.u)?;
    d.set_item("s", r.s)?;
    d.set_item("h", r.h)?;
    d.set_item("per_class", r.per_class.clone())?;
    d.set_item("excluded", r.excluded.clone())?;
    let sources: Vec<(String, f64)> = r.sources.iter().map(|s| (s.name.clone(), s.u)).collect();
    d.set_item("sources", sources)?;
    d.set_item("seed", r.seed)?;
    d.set_item("config_hash", r.config_hash.clone())?;
    Ok(d)
}

/// Evaluates a checkpoint in `setting` ("zsl", "gzsl" or "fusion") and
/// returns the metrics as a dict.
#[pyfunction]
#[pyo3(signature = (config, checkpoint, setting, export_projection = false))]
fn evaluate<'py>(
    py: Python<'py>,
    config: PathBuf,
    checkpoint: PathBuf,
    setting: &str,
    export_projection: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let setting: Setting = setting.parse().map_err(to_py)?;
    let cfg = cli::parse_config(&config).map_err(to_py)?;
    let r = py
        .detach(|| cli::run_evaluate(&cfg, &checkpoint, setting, export_projection))
        .map_err(to_py)?;
    report_dict(py, &r)
}

/// Summary of a checkpoint file; raises on a damaged file.
#[pyfunction]
fn check(checkpoint: PathBuf) -> PyResult<String> {
    Ok(cli::describe_checkpoint(&Checkpoint::load(&checkpoint).map_err(to_py)?))
}

#[pyfunction]
fn harmonic_mean(u: f64, s: f64) -> f64 {
    tgmz::eval::harmonic_mean(u, s)
}

/// Adds every binding to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    Ok(())
}

#[pymodule]
fn tgmz_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
