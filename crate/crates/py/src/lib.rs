//! Python module `tlens`: models, datasets, attribution and the analysis pipeline.
//! Structured results come back as plain Python objects (decoded from JSON).

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use tlens_core::abstraction;
use tlens_core::attribution;
use tlens_core::comparison;
use tlens_core::data::{self, LabeledDataset, Split, SyntheticSpec};
use tlens_core::discriminability::train_svm as core_train_svm;
use tlens_core::nn::{Architecture, Domain, TensorModel};
use tlens_core::pipeline::{self as core_pipeline, RunConfig};
use tlens_core::projection::{self, TsneConfig};
use tlens_core::Tensor;

fn err(e: tlens_core::Error) -> PyErr {
    match e {
        tlens_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn domain(name: &str) -> PyResult<Domain> {
    name.parse().map_err(err)
}

/// A trained or freshly initialized CNN.
#[pyclass(name = "Model", module = "tlens")]
pub struct PyModel {
    inner: TensorModel,
}

#[pymethods]
impl PyModel {
    /// Seeded model with `conv_channels` conv blocks and `hidden_units` dense layers.
    #[staticmethod]
    #[pyo3(signature = (input_shape, classes, conv_channels = vec![8, 16], hidden_units = vec![64], seed = 0, domain = "source"))]
    fn create(
        input_shape: Vec<usize>,
        classes: usize,
        conv_channels: Vec<usize>,
        hidden_units: Vec<usize>,
        seed: u64,
        domain: &str,
    ) -> PyResult<Self> {
        let arch = Architecture {
            conv_channels,
            hidden_units,
        };
        let d = self::domain(domain)?;
        let inner = TensorModel::with_architecture(d.as_str(), d, &arch, input_shape, classes, seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: TensorModel::load(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: TensorModel::from_bytes(bytes).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &self.inner.to_bytes().map_err(err)?))
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape().to_vec()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    #[getter]
    fn layers(&self) -> Vec<&'static str> {
        self.inner.layers().iter().map(|l| l.spec.name()).collect()
    }

    /// Layer indices analyzed as neurons (parameterized, excluding the output).
    #[getter]
    fn neuron_layers(&self) -> Vec<usize> {
        core_pipeline::neuron_layers(&self.inner)
    }

    fn neuron_count(&self, layer: usize) -> PyResult<usize> {
        if layer >= self.inner.layers().len() {
            return Err(PyValueError::new_err(format!("layer {layer} out of range")));
        }
        Ok(self.inner.neuron_count(layer))
    }

    /// Pre-softmax outputs for one flattened instance.
    fn logits(&self, x: Vec<f32>) -> PyResult<Vec<f32>> {
        let t = self.instance(x)?;
        let batch = Tensor::stack(self.inner.input_shape(), &[t.data()]).map_err(err)?;
        Ok(self.inner.logits(&batch).map_err(err)?.into_data())
    }

    fn predict(&self, x: Vec<f32>) -> PyResult<usize> {
        let t = self.instance(x)?;
        let batch = Tensor::stack(self.inner.input_shape(), &[t.data()]).map_err(err)?;
        Ok(self.inner.predict(&batch).map_err(err)?[0])
    }

    /// Gradient of logit `target_class` with respect to the output of `layer`, flattened.
    fn grad_wrt_layer(&self, x: Vec<f32>, target_class: usize, layer: usize) -> PyResult<Vec<f32>> {
        let t = self.instance(x)?;
        Ok(self.inner.grad_wrt_layer(&t, target_class, layer).map_err(err)?.into_data())
    }

    /// Layer conductance against a zero baseline, flattened like the layer output.
    #[pyo3(signature = (x, target_class, layer, steps = 32))]
    fn layer_conductance(&self, x: Vec<f32>, target_class: usize, layer: usize, steps: usize) -> PyResult<Vec<f32>> {
        let t = self.instance(x)?;
        let zero = Tensor::zeros(self.inner.input_shape().to_vec());
        Ok(attribution::layer_conductance(&self.inner, &t, &zero, target_class, layer, steps)
            .map_err(err)?
            .into_data())
    }

    /// Per-neuron attribution (spatial max for conv channels).
    #[pyo3(signature = (x, target_class, layer, steps = 32))]
    fn neuron_attribution(&self, x: Vec<f32>, target_class: usize, layer: usize, steps: usize) -> PyResult<Vec<f32>> {
        let t = self.instance(x)?;
        let zero = Tensor::zeros(self.inner.input_shape().to_vec());
        let c = attribution::layer_conductance(&self.inner, &t, &zero, target_class, layer, steps).map_err(err)?;
        Ok(attribution::channel_attribution(&c))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(name={:?}, input_shape={:?}, classes={}, layers={})",
            self.inner.meta.name,
            self.inner.input_shape(),
            self.inner.class_count(),
            self.inner.layers().len()
        )
    }
}

impl PyModel {
    fn instance(&self, x: Vec<f32>) -> PyResult<Tensor> {
        Tensor::new(self.inner.input_shape().to_vec(), x).map_err(err)
    }
}

/// Labeled instances of one domain and split.
#[pyclass(name = "Dataset", module = "tlens")]
pub struct PyDataset {
    inner: LabeledDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: LabeledDataset::load(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (classes, per_class, side = 12, noise = 0.15, prototype_seed = 0, seed = 0, domain = "source"))]
    fn synthetic(
        classes: usize,
        per_class: usize,
        side: usize,
        noise: f32,
        prototype_seed: u64,
        seed: u64,
        domain: &str,
    ) -> PyResult<Self> {
        let spec = SyntheticSpec {
            classes,
            per_class,
            side,
            noise,
            prototype_seed,
            seed,
        };
        Ok(Self {
            inner: data::synthetic(&spec, self::domain(domain)?, Split::Train).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn rotate90(&self) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.rotate90().map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn instance_shape(&self) -> Vec<usize> {
        self.inner.instance_shape().to_vec()
    }

    fn instance(&self, index: usize) -> PyResult<Vec<f32>> {
        if index >= self.inner.len() {
            return Err(PyValueError::new_err(format!("instance {index} out of range")));
        }
        Ok(self.inner.instance(index).to_vec())
    }

    /// Neuron x instance attribution matrix for the instances of `class_id`.
    #[pyo3(signature = (model, class_id, layer, steps = 32))]
    fn attribution_matrix<'py>(&self, py: Python<'py>, model: &PyModel, class_id: usize, layer: usize, steps: usize) -> PyResult<Bound<'py, PyAny>> {
        let a = attribution::build_attribution_matrix(&model.inner, &self.inner, class_id, layer, steps).map_err(err)?;
        let rows: Vec<&[f32]> = (0..a.rows).map(|j| a.row(j)).collect();
        to_py(py, &rows)
    }

    /// Fraction of instances `model` classifies correctly.
    fn accuracy(&self, model: &PyModel) -> PyResult<f64> {
        tlens_core::metrics::evaluate_accuracy(&model.inner, &self.inner).map_err(err)
    }

    /// Important neurons of `layer` for `class_id`: ids, aggregated ranks and k.
    #[pyo3(signature = (model, class_id, layer, steps = 32))]
    fn important_neurons<'py>(&self, py: Python<'py>, model: &PyModel, class_id: usize, layer: usize, steps: usize) -> PyResult<Bound<'py, PyAny>> {
        let a = attribution::build_attribution_matrix(&model.inner, &self.inner, class_id, layer, steps).map_err(err)?;
        to_py(py, &abstraction::extract_important_neurons(&a).map_err(err)?)
    }

    /// Important weights between two consecutive parameterized layers.
    #[pyo3(signature = (model, class_id, from_layer, to_layer, k_row = None, k_w = None))]
    fn important_weights<'py>(
        &self,
        py: Python<'py>,
        model: &PyModel,
        class_id: usize,
        from_layer: usize,
        to_layer: usize,
        k_row: Option<usize>,
        k_w: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let pair = abstraction::LayerPair {
            from: from_layer,
            to: to_layer,
        };
        let imp = abstraction::extract_important_weights(&model.inner, &self.inner, class_id, pair, k_row, k_w, Default::default()).map_err(err)?;
        to_py(py, &imp)
    }
}

/// Ascending ranks with ties sharing their mean rank.
#[pyfunction]
fn fractional_rank(values: Vec<f32>) -> Vec<f64> {
    abstraction::fractional_rank(&values)
}

#[pyfunction]
fn important_neuron_count(n: usize) -> usize {
    abstraction::important_neuron_count(n)
}

/// Cosine similarity; 0 when either vector is all zeros.
#[pyfunction]
fn cosine(a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("vectors differ in length"));
    }
    Ok(comparison::cosine(&a, &b))
}

/// Exact t-SNE of row vectors. Returns coordinates and divergence diagnostics.
#[pyfunction]
#[pyo3(signature = (vectors, perplexity = 30.0, iterations = 1000, seed = 0))]
fn tsne<'py>(py: Python<'py>, vectors: Vec<Vec<f32>>, perplexity: f64, iterations: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let dim = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    let cfg = TsneConfig {
        perplexity,
        iterations,
        seed,
        ..TsneConfig::default()
    };
    let flat = vectors.concat();
    to_py(py, &projection::tsne(&flat, vectors.len(), dim, &cfg).map_err(err)?)
}

/// Linear SVM separating label 0 rows from label 1 rows, C chosen by 10-fold CV.
#[pyfunction]
#[pyo3(signature = (rows, labels, seed = 0))]
fn train_svm<'py>(py: Python<'py>, rows: Vec<Vec<f64>>, labels: Vec<u8>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) || rows.len() != labels.len() {
        return Err(PyValueError::new_err("rows and labels do not line up"));
    }
    let fit = core_train_svm(&rows.concat(), rows.len(), cols, &labels, seed).map_err(err)?;
    to_py(py, &fit)
}

/// Run the whole analysis for a config file and publish it under `out`.
/// Returns `(run_id, run_dir, summary)`.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None))]
fn run_pipeline<'py>(py: Python<'py>, config: PathBuf, out: PathBuf, seed: Option<u64>) -> PyResult<(String, PathBuf, Bound<'py, PyAny>)> {
    let mut cfg = RunConfig::load(&config).map_err(err)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    let (id, dir, summary) = py.detach(|| core_pipeline::run_pipeline(&cfg, &out)).map_err(err)?;
    Ok((id, dir, to_py(py, &summary)?))
}

#[pymodule]
fn tlens(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(fractional_rank, m)?)?;
    m.add_function(wrap_pyfunction!(important_neuron_count, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(tsne, m)?)?;
    m.add_function(wrap_pyfunction!(train_svm, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
