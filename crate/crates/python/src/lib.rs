//! Python bindings: datasets, masks, training, checkpoints, rendering and
//! evaluation. Bitmaps cross the boundary as lists of rows of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;

use glyphnet::analysis::{self, ModelRasterizer};
use glyphnet::dataset;
use glyphnet::models::{self, Decoding};
use glyphnet::renderer;
use glyphnet::sampling;
use glyphnet::tensornet::Tensor2;
use glyphnet::trainer::{self, TrainJob};
use glyphnet::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::OutOfRange(m) => PyIndexError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn rows(t: &Tensor2) -> Vec<Vec<f64>> {
    t.to_rows()
}

fn tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor2> {
    Tensor2::from_rows(&rows).map_err(to_py)
}

fn decoding(name: &str) -> PyResult<Decoding> {
    name.parse().map_err(to_py)
}

/// A loaded glyph dataset.
#[pyclass(name = "Dataset", module = "glyphnet")]
struct PyDataset {
    inner: dataset::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(root: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: dataset::load_dataset(&root).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Violation messages; empty when the dataset is valid.
    fn validate(&self) -> Vec<String> {
        dataset::validate_dataset(&self.inner)
            .iter()
            .map(|v| v.to_string())
            .collect()
    }

    fn bitmap(&self, font: &str, weight: &str, glyph: char, size: usize) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .get(font, weight, glyph, size)
            .map(|b| rows(&b.pixels))
            .ok_or_else(|| PyValueError::new_err(format!("no bitmap {font}/{weight}/{glyph}/{size}")))
    }
}

/// A trained checkpoint.
#[pyclass(name = "GlyphModel", module = "glyphnet")]
struct PyGlyphModel {
    inner: models::GlyphModel,
}

#[pymethods]
impl PyGlyphModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: models::GlyphModel::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.model.kind()
    }

    #[getter]
    fn glyph(&self) -> char {
        self.inner.meta.glyph
    }

    #[getter]
    fn size_range(&self) -> (usize, usize) {
        let r = self.inner.size_range();
        (*r.start(), *r.end())
    }

    #[getter]
    fn weights(&self) -> Vec<String> {
        self.inner.meta.weights.iter().map(|w| w.id.clone()).collect()
    }

    #[getter]
    fn epochs_completed(&self) -> u32 {
        self.inner.meta.epochs_completed
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.store.len()
    }

    #[pyo3(signature = (size, weight=None, decoding="snapped"))]
    fn render(&self, size: usize, weight: Option<String>, decoding: &str) -> PyResult<Vec<Vec<f64>>> {
        let req = renderer::RenderRequest {
            size,
            weight,
            interpolation: None,
            decoding: self::decoding(decoding)?,
        };
        Ok(rows(&renderer::render(&self.inner, &req).map_err(to_py)?.pixels))
    }

    #[pyo3(signature = (size, weight_a, weight_b, alpha, decoding="snapped"))]
    fn interpolate(
        &self,
        size: usize,
        weight_a: &str,
        weight_b: &str,
        alpha: f64,
        decoding: &str,
    ) -> PyResult<Vec<Vec<f64>>> {
        let bm = renderer::interpolate_weights(&self.inner, size, weight_a, weight_b, alpha, self::decoding(decoding)?)
            .map_err(to_py)?;
        Ok(rows(&bm.pixels))
    }

    /// Mean pixel error per `(weight, size)` over the trained range.
    #[pyo3(signature = (dataset, decoding="snapped"))]
    fn evaluate(&self, dataset: &PyDataset, decoding: &str) -> PyResult<Vec<(String, usize, f64)>> {
        let m = &self.inner;
        let weights: Vec<String> = m.meta.weights.iter().map(|w| w.id.clone()).collect();
        let truth = dataset
            .inner
            .select(&m.meta.font, &weights, m.meta.glyph, m.size_range())
            .map_err(to_py)?;
        let r = ModelRasterizer {
            model: m,
            decoding: self::decoding(decoding)?,
        };
        let report = analysis::evaluate(&r, &truth).map_err(to_py)?;
        Ok(report
            .records
            .into_iter()
            .map(|r| (r.weight, r.size, r.error))
            .collect())
    }
}

/// Trains the job given as a JSON string and returns the model with its
/// per-epoch mean losses.
#[pyfunction]
fn train(py: Python<'_>, job_json: &str, dataset: &PyDataset) -> PyResult<(PyGlyphModel, Vec<f64>)> {
    let job: TrainJob = serde_json::from_str(job_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let out = py
        .detach(|| trainer::train(&job, &dataset.inner, &mut |_| {}))
        .map_err(to_py)?;
    let losses = out.history.iter().map(|r| r.mean_loss).collect();
    Ok((PyGlyphModel { inner: out.model }, losses))
}

/// Sampling mask of an `s×s` bitmap inside a `t×t` grid, as 0/1 rows.
#[pyfunction]
fn build_mask(s: usize, t: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&sampling::build_mask(s, t).map_err(to_py)?.to_tensor()))
}

#[pyfunction]
fn upsample(bitmap: Vec<Vec<f64>>, t: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&sampling::upsample(&tensor(bitmap)?, t).map_err(to_py)?))
}

#[pyfunction]
fn duplication_counts(s: usize, t: usize) -> PyResult<Vec<usize>> {
    sampling::duplication_counts(s, t).map_err(to_py)
}

#[pyfunction]
fn quantize_intensity(v: f64) -> PyResult<usize> {
    models::quantize_intensity(v).map_err(to_py)
}

#[pyfunction]
fn decode_category(c: usize) -> PyResult<f64> {
    models::decode_category(c).map_err(to_py)
}

#[pyfunction]
fn mean_pixel_error(pred: Vec<Vec<f64>>, gt: Vec<Vec<f64>>) -> PyResult<f64> {
    analysis::mean_pixel_error(&tensor(pred)?, &tensor(gt)?).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "glyphnet")]
fn glyphnet_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGlyphModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(build_mask, m)?)?;
    m.add_function(wrap_pyfunction!(upsample, m)?)?;
    m.add_function(wrap_pyfunction!(duplication_counts, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_intensity, m)?)?;
    m.add_function(wrap_pyfunction!(decode_category, m)?)?;
    m.add_function(wrap_pyfunction!(mean_pixel_error, m)?)?;
    m.add("SIZE_MIN", glyphnet::SIZE_MIN)?;
    m.add("SIZE_MAX", glyphnet::SIZE_MAX)?;
    Ok(())
}
