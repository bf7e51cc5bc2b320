//! Python bindings. Structured values cross the boundary as plain Python
//! dicts and lists (through JSON), so the Python side needs no extra types
//! beyond `MemoryBank`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use videomemory::backends::{Backends, MockImage, MockText, MockVideo};
use videomemory::bench;
use videomemory::domain::{canonical_entity_key, AttributeState, EntityCategory, Storyboard};
use videomemory::eval::{self, BenchmarkCase, FeatureVector, MockEmbedder, Subclass};
use videomemory::memory::{self, ExactMatcher};
use videomemory::pipeline::{self, RunConfig};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_error(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_error)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = match obj.extract::<String>() {
        Ok(s) => s,
        Err(_) => py.import("json")?.call_method1("dumps", (obj,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(value_error)
}

/// Canonical memory key for an entity name and attribute map.
#[pyfunction]
fn entity_key(name: &str, attributes: BTreeMap<String, String>) -> PyResult<String> {
    let state = AttributeState::new(attributes, "-").map_err(value_error)?;
    Ok(canonical_entity_key(name, &state))
}

#[pyfunction]
fn cosine(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    eval::cosine(&FeatureVector::detected(u), &FeatureVector::detected(v)).map_err(value_error)
}

#[pyfunction]
fn middle_index(frame_count: usize) -> PyResult<usize> {
    eval::middle_index(frame_count).map_err(value_error)
}

/// Normalized sequence score; `None` entries are undetected shots.
#[pyfunction]
fn score_from_similarities(required_shots: u32, similarities: Vec<Option<f64>>) -> f64 {
    eval::score_from_similarities(required_shots, &similarities)
}

/// Parses and validates a storyboard document (JSON text).
#[pyfunction]
fn parse_storyboard(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    let board = videomemory::domain::parse_storyboard(text).map_err(value_error)?;
    to_py(py, &board)
}

/// Loads a benchmark suite directory; raises ValueError listing every
/// layout violation.
#[pyfunction]
fn validate_suite(py: Python<'_>, dir: PathBuf) -> PyResult<Py<PyAny>> {
    let suite = eval::validate_suite_layout(&dir).map_err(value_error)?;
    to_py(py, &suite)
}

#[pyfunction]
fn synthetic_case(py: Python<'_>, subclass: &str, required_shots: u32, sample: usize) -> PyResult<Py<PyAny>> {
    let subclass: Subclass = subclass.parse().map_err(value_error)?;
    to_py(py, &bench::synthetic_case(subclass, required_shots, sample))
}

/// Writes case dicts and a `suite.json` under `dir`.
#[pyfunction]
#[pyo3(signature = (dir, cases, full_suite=false))]
fn write_suite(py: Python<'_>, dir: PathBuf, cases: &Bound<'_, PyAny>, full_suite: bool) -> PyResult<()> {
    let cases: Vec<BenchmarkCase> = from_py(py, cases)?;
    bench::write_suite(&dir, &cases, full_suite).map_err(runtime_error)
}

/// Storyboard dict and mock script dict that replay a case offline.
#[pyfunction]
fn mock_fixture(py: Python<'_>, case: &Bound<'_, PyAny>) -> PyResult<(Py<PyAny>, Py<PyAny>)> {
    let case: BenchmarkCase = from_py(py, case)?;
    let fixture = bench::mock_fixture(&case);
    let script: serde_json::Value = serde_json::from_str(&fixture.script_json()).map_err(runtime_error)?;
    Ok((to_py(py, &fixture.storyboard)?, to_py(py, &script)?))
}

/// Runs a storyboard under the mock backends and returns the manifest.
#[pyfunction]
#[pyo3(signature = (storyboard, script, out_dir, run_id=None, no_memory=false, disable_banks=Vec::new(), frames=5))]
#[allow(clippy::too_many_arguments)]
fn run_mock(
    py: Python<'_>,
    storyboard: &Bound<'_, PyAny>,
    script: &Bound<'_, PyAny>,
    out_dir: PathBuf,
    run_id: Option<String>,
    no_memory: bool,
    disable_banks: Vec<String>,
    frames: usize,
) -> PyResult<Py<PyAny>> {
    let board: Storyboard = from_py(py, storyboard)?;
    let script: serde_json::Value = from_py(py, script)?;
    let text = MockText::from_json(&script.to_string()).map_err(value_error)?;
    let backends = Backends {
        text: Box::new(text),
        image: Box::new(MockImage::new()),
        video: Box::new(MockVideo::new(frames).map_err(value_error)?),
    };
    let mut cfg = RunConfig::new(out_dir);
    cfg.run_id = run_id;
    cfg.memory.ablation_no_memory = no_memory;
    for bank in disable_banks {
        match bank.as_str() {
            "char" => cfg.memory.enable_character_bank = false,
            "prop" => cfg.memory.enable_prop_bank = false,
            "bg" => cfg.memory.enable_background_bank = false,
            other => return Err(value_error(format!("unknown bank {other:?}; use char, prop or bg"))),
        }
    }
    let manifest = pipeline::run_storyboard(&board, &cfg, &backends, &ExactMatcher).map_err(runtime_error)?;
    to_py(py, &manifest)
}

/// Scores `<runs_dir>/<case id>` runs with the mock embedder. Returns the
/// report dict and its Markdown table.
#[pyfunction]
#[pyo3(signature = (suite_dir, runs_dir, method="videomemory"))]
fn evaluate(py: Python<'_>, suite_dir: PathBuf, runs_dir: PathBuf, method: &str) -> PyResult<(Py<PyAny>, String)> {
    let suite = eval::validate_suite_layout(&suite_dir).map_err(value_error)?;
    let outputs = eval::load_run_outputs(&runs_dir, &suite);
    let report = eval::evaluate_suite(&suite, &outputs, &MockEmbedder, method).map_err(runtime_error)?;
    Ok((to_py(py, &report)?, report.to_markdown()))
}

/// Read-only view of a persisted memory bank.
#[pyclass(name = "MemoryBank")]
struct PyMemoryBank {
    bank: memory::MemoryBank,
    root: PathBuf,
}

#[pymethods]
impl PyMemoryBank {
    #[new]
    fn load(root: PathBuf) -> PyResult<Self> {
        let bank = memory::MemoryBank::load(&root).map_err(value_error)?;
        Ok(Self { bank, root })
    }

    fn __len__(&self) -> usize {
        self.bank.len()
    }

    /// Keys in insertion order, optionally for one category.
    #[pyo3(signature = (category=None))]
    fn keys(&self, category: Option<&str>) -> PyResult<Vec<String>> {
        let categories: Vec<EntityCategory> = match category {
            Some(c) => vec![c.parse().map_err(value_error)?],
            None => EntityCategory::ALL.to_vec(),
        };
        let mut entries: Vec<_> = categories
            .iter()
            .flat_map(|c| self.bank.store(*c).values())
            .collect();
        entries.sort_by_key(|e| e.sequence);
        Ok(entries.into_iter().map(|e| e.key.clone()).collect())
    }

    fn get(&self, py: Python<'_>, key: &str) -> PyResult<Option<Py<PyAny>>> {
        self.bank.find(key).map(|e| to_py(py, e)).transpose()
    }

    /// Integrity problems as `(store, key, reason)` tuples.
    fn verify(&self) -> PyResult<Vec<(String, String, String)>> {
        let (_, problems) = memory::load_checked(&self.root).map_err(runtime_error)?;
        Ok(problems.into_iter().map(|p| (p.store, p.key, p.reason)).collect())
    }
}

#[pymodule]
fn videomemory_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(entity_key, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(middle_index, m)?)?;
    m.add_function(wrap_pyfunction!(score_from_similarities, m)?)?;
    m.add_function(wrap_pyfunction!(parse_storyboard, m)?)?;
    m.add_function(wrap_pyfunction!(validate_suite, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_case, m)?)?;
    m.add_function(wrap_pyfunction!(write_suite, m)?)?;
    m.add_function(wrap_pyfunction!(mock_fixture, m)?)?;
    m.add_function(wrap_pyfunction!(run_mock, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<PyMemoryBank>()?;
    Ok(())
}
