//! Python bindings for the Self-ONN engine.
//!
//! Images cross the boundary as flat row-major lists of floats in
//! `[channels, height, width]` order; labels are `0` (healthy) or `1`
//! (glaucoma).

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use selfonn::crossval::{kfold_split as split, CrossValPlan};
use selfonn::data::synthetic::{generate, SyntheticSpec};
use selfonn::data::{Label, Sample};
use selfonn::evaluation::{self, ConfusionCounts};
use selfonn::layers::PoolKind;
use selfonn::train::{self, Checkpoint, GradCheckOptions, TrainConfig};
use selfonn::{Padding, Tensor};

fn to_py(e: selfonn::Error) -> PyErr {
    match e {
        selfonn::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn label(v: u8) -> PyResult<Label> {
    Label::try_from(v).map_err(PyValueError::new_err)
}

fn padding(s: &str) -> PyResult<Padding> {
    match s {
        "valid" => Ok(Padding::Valid),
        "same" => Ok(Padding::Same),
        _ => Err(PyValueError::new_err(format!("padding must be 'valid' or 'same', got '{s}'"))),
    }
}

fn pool_kind(s: &str) -> PyResult<PoolKind> {
    match s {
        "max" => Ok(PoolKind::Max),
        "average" => Ok(PoolKind::Average),
        _ => Err(PyValueError::new_err(format!("pool_kind must be 'max' or 'average', got '{s}'"))),
    }
}

/// Architecture of a three-stage Self-ONN with a dense head.
#[pyclass(name = "NetworkConfig", module = "selfonn_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyNetworkConfig {
    inner: selfonn::NetworkConfig,
}

#[pymethods]
impl PyNetworkConfig {
    #[new]
    #[pyo3(signature = (
        q = 5,
        input_size = (128, 128),
        widths = None,
        kernels = None,
        pools = None,
        dense_widths = None,
        padding = "valid",
        pool_kind = "max",
        input_channels = 3,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        q: usize,
        input_size: (usize, usize),
        widths: Option<Vec<usize>>,
        kernels: Option<Vec<(usize, usize)>>,
        pools: Option<Vec<usize>>,
        dense_widths: Option<Vec<usize>>,
        padding: &str,
        pool_kind: &str,
        input_channels: usize,
    ) -> PyResult<Self> {
        let d = selfonn::NetworkConfig::default();
        let inner = selfonn::NetworkConfig {
            input_channels,
            input_size,
            widths: widths.unwrap_or(d.widths),
            kernels: kernels.unwrap_or(d.kernels),
            pools: pools.unwrap_or(d.pools),
            q,
            dense_widths: dense_widths.unwrap_or(d.dense_widths),
            padding: self::padding(padding)?,
            pool_kind: self::pool_kind(pool_kind)?,
            output_activation: d.output_activation,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyNetworkConfig { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: selfonn::NetworkConfig =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(PyNetworkConfig { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn q(&self) -> usize {
        self.inner.q
    }

    #[getter]
    fn input_size(&self) -> (usize, usize) {
        self.inner.input_size
    }

    #[getter]
    fn input_channels(&self) -> usize {
        self.inner.input_channels
    }

    /// `(input, conv_out, pooled)` spatial extents per operational stage.
    fn stage_shapes(&self) -> PyResult<Vec<[(usize, usize); 3]>> {
        Ok(self
            .inner
            .stage_shapes()
            .map_err(to_py)?
            .into_iter()
            .map(|s| [s.input, s.conv_out, s.pooled])
            .collect())
    }

    fn flat_features(&self) -> PyResult<usize> {
        self.inner.flat_features().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("NetworkConfig({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

fn image_tensor(cfg: &selfonn::NetworkConfig, image: Vec<f64>) -> PyResult<Tensor> {
    let (h, w) = cfg.input_size;
    Tensor::new(vec![cfg.input_channels, h, w], image).map_err(to_py)
}

/// A Self-ONN classifier with its parameters.
#[pyclass(name = "Network", module = "selfonn_py", skip_from_py_object)]
pub struct PyNetwork {
    inner: selfonn::Network,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: PyRef<'_, PyNetworkConfig>, seed: u64) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: selfonn::Network::build(&config.inner, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: train::load_checkpoint(&path).map_err(to_py)?.network,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ck = Checkpoint {
            network: self.inner.clone(),
            adam: None,
        };
        train::save_checkpoint(&path, &ck).map_err(to_py)
    }

    fn config(&self) -> PyNetworkConfig {
        PyNetworkConfig {
            inner: self.inner.config().clone(),
        }
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.param_names()
    }

    fn get_params(&self) -> Vec<Vec<f64>> {
        self.inner.param_buffers().into_iter().map(<[f64]>::to_vec).collect()
    }

    fn set_params(&mut self, buffers: Vec<Vec<f64>>) -> PyResult<()> {
        self.inner.set_params(&buffers).map_err(to_py)
    }

    /// The two output scores for one image.
    fn forward(&self, image: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = image_tensor(self.inner.config(), image)?;
        self.inner.forward(&x).map_err(to_py)
    }

    /// `(label, scores)` for one image.
    fn predict(&self, image: Vec<f64>) -> PyResult<(u8, Vec<f64>)> {
        let scores = self.forward(image)?;
        Ok((train::predict_label(&scores).into(), scores))
    }

    /// Trains in place and returns `(epoch, mean_loss, train_error)` rows.
    #[pyo3(signature = (
        images,
        labels,
        learning_rate = 1e-4,
        max_epochs = 50,
        min_train_error = 0.03,
        batch_size = 32,
        seed = 0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        py: Python<'_>,
        images: Vec<Vec<f64>>,
        labels: Vec<u8>,
        learning_rate: f64,
        max_epochs: usize,
        min_train_error: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        if images.len() != labels.len() {
            return Err(PyValueError::new_err("images and labels differ in length"));
        }
        let data = images
            .into_iter()
            .zip(labels)
            .map(|(img, l)| {
                Ok(Sample {
                    image: image_tensor(self.inner.config(), img)?,
                    label: label(l)?,
                    source: PathBuf::new(),
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let cfg = TrainConfig {
            learning_rate,
            max_epochs,
            min_train_error,
            batch_size,
            seed,
            ..Default::default()
        };
        let net = &mut self.inner;
        let outcome = py.detach(|| train::train(net, &data, &cfg)).map_err(to_py)?;
        Ok(outcome
            .history
            .epochs
            .iter()
            .map(|e| (e.epoch, e.mean_loss, e.train_error))
            .collect())
    }

    /// Central-difference check of the MSE gradient on one image. Returns
    /// `(max_rel_error, worst_parameter, worst_coordinates)`.
    #[pyo3(signature = (image, label, samples_per_buffer = Some(6), seed = 0))]
    fn gradient_check(
        &self,
        py: Python<'_>,
        image: Vec<f64>,
        label: u8,
        samples_per_buffer: Option<usize>,
        seed: u64,
    ) -> PyResult<(f64, String, String)> {
        let x = image_tensor(self.inner.config(), image)?;
        let target = train::encode_target(self::label(label)?);
        let opts = GradCheckOptions {
            samples_per_buffer,
            seed,
            ..Default::default()
        };
        let net = &self.inner;
        let r = py
            .detach(|| train::gradient_check(net, &x, &target, &opts))
            .map_err(to_py)?;
        Ok((r.max_rel_error, r.worst.buffer, r.worst.coords))
    }

    fn __repr__(&self) -> String {
        format!("Network(q={}, params={})", self.inner.config().q, self.inner.param_count())
    }
}

/// Trainable parameter count of the configuration.
#[pyfunction]
fn count_pars(config: PyRef<'_, PyNetworkConfig>) -> PyResult<u64> {
    evaluation::count_pars(&config.inner).map_err(to_py)
}

/// Multiply-accumulate count of one forward pass.
#[pyfunction]
fn count_macs(config: PyRef<'_, PyNetworkConfig>) -> PyResult<u64> {
    evaluation::count_macs(&config.inner).map_err(to_py)
}

/// Metric suite from a confusion table; undefined metrics are `None`.
#[pyfunction]
fn compute_metrics(tp: u64, fp: u64, tn: u64, fn_: u64) -> BTreeMap<&'static str, Option<f64>> {
    let m = evaluation::compute_metrics(&ConfusionCounts { tp, fp, tn, fn_ });
    BTreeMap::from([
        ("accuracy", m.accuracy),
        ("balanced_accuracy", m.balanced_accuracy),
        ("sensitivity", m.sensitivity),
        ("specificity", m.specificity),
        ("precision", m.precision),
        ("f1", m.f1),
        ("f2", m.f2),
    ])
}

/// Min-max scaling of one channel to `[-1, 1]`.
#[pyfunction]
fn normalize_channel(values: Vec<f64>) -> Vec<f64> {
    selfonn::data::normalize_channel(&values)
}

/// Blob-versus-ring images as `(images, labels)`, already normalized.
#[pyfunction]
#[pyo3(signature = (count = 200, size = 128, seed = 0))]
fn synthetic_dataset(count: usize, size: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<u8>)> {
    let samples = generate(&SyntheticSpec { count, size, seed }).map_err(to_py)?;
    Ok(samples
        .into_iter()
        .map(|s| (s.image.into_data(), u8::from(s.label)))
        .unzip())
}

/// Stratified seeded folds as `(train_indices, test_indices)` pairs.
#[pyfunction]
#[pyo3(signature = (labels, fold_count = 10, seed = 0, stratified = true))]
fn kfold_split(labels: Vec<u8>, fold_count: usize, seed: u64, stratified: bool) -> PyResult<Vec<(Vec<usize>, Vec<usize>)>> {
    let labels = labels.into_iter().map(label).collect::<PyResult<Vec<_>>>()?;
    let plan = CrossValPlan {
        fold_count,
        stratified,
        seed,
        ..Default::default()
    };
    Ok(split(&labels, &plan)
        .map_err(to_py)?
        .into_iter()
        .map(|f| (f.train, f.test))
        .collect())
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetworkConfig>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(count_pars, m)?)?;
    m.add_function(wrap_pyfunction!(count_macs, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_channel, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(kfold_split, m)?)?;
    Ok(())
}

#[pymodule]
fn selfonn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
