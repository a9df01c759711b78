//! Python module `hat`: the CLI plus direct access to feature stores,
//! snippet ranking and hallucination.

use std::path::PathBuf;

use hat_core::dataio::FeatureStore;
use hat_core::hallucinator::hallucinate as hallucinate_one;
use hat_core::nets::{load_model, ModelFile};
use hat_core::sdt::SnippetIndex;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn runtime<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Runs `hat <args...>` in-process and returns the exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    hat_core::cli::run(std::iter::once("hat".to_string()).chain(args))
}

/// Reads a feature store: `(space, dim, [(identity, frame, values), ...])`.
#[pyfunction]
fn read_features(path: PathBuf) -> PyResult<(String, usize, Vec<(u32, u32, Vec<f32>)>)> {
    let store = FeatureStore::read(&path).map_err(runtime)?;
    let space = format!("{:?}", store.space).to_lowercase();
    let records = store.records.into_iter().map(|r| (r.identity, r.frame, r.values)).collect();
    Ok((space, store.dim, records))
}

/// Ranks the snippets of an index file against `exemplar`:
/// `[(snippet_id, distance), ...]` nearest first.
#[pyfunction]
#[pyo3(signature = (index, exemplar, top=hat_core::sdt::DEFAULT_TOP))]
fn rank_snippets(index: PathBuf, exemplar: Vec<f32>, top: usize) -> PyResult<Vec<(u32, f64)>> {
    let index = SnippetIndex::read(&index).map_err(runtime)?;
    let ranked = index.rank(&exemplar, top).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(ranked.into_iter().map(|r| (r.id, r.distance)).collect())
}

/// Applies the deformation of `(x1, x2)` to `exemplar` with a saved
/// hallucinator.
#[pyfunction]
fn hallucinate(model: PathBuf, x1: Vec<f32>, x2: Vec<f32>, exemplar: Vec<f32>) -> PyResult<Vec<f32>> {
    let g = match load_model(&model).map_err(runtime)? {
        ModelFile::Hallucinator(g) => g,
        _ => return Err(PyValueError::new_err(format!("{} is not a hallucinator model", model.display()))),
    };
    hallucinate_one(&g, &x1, &x2, &exemplar).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn hat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_function(wrap_pyfunction!(read_features, m)?)?;
    m.add_function(wrap_pyfunction!(rank_snippets, m)?)?;
    m.add_function(wrap_pyfunction!(hallucinate, m)?)?;
    Ok(())
}
