//! Python bindings: metric functions, dataset loading and SBF-Net
//! training, prediction and evaluation.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sbfnet::data::{self, AugmentationConfig, ImageDirOptions, LabeledDataset, SampleSize};
use sbfnet::ensemble::backbone_for_shape;
use sbfnet::metric::{self, DistanceMapping, Margin, NegativeKind};
use sbfnet::{BackboneConfig, EnsembleConfig, Preset, Tensor};

fn to_py(err: sbfnet::Error) -> PyErr {
    match err {
        sbfnet::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(format!("{}: {other}", other.kind())),
    }
}

fn margin(alpha: f64) -> PyResult<Margin> {
    Margin::new(alpha).map_err(to_py)
}

fn same_len(x: &[f64], y: &[f64]) -> PyResult<()> {
    if x.len() == y.len() {
        Ok(())
    } else {
        Err(PyValueError::new_err(format!("length mismatch: {} vs {}", x.len(), y.len())))
    }
}

#[pyfunction]
fn cosine_distance(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    same_len(&x, &y)?;
    Ok(metric::cosine_distance(&x, &y))
}

#[pyfunction]
fn euclidean_distance(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    same_len(&x, &y)?;
    Ok(metric::euclidean_distance(&x, &y))
}

fn parse_mapping(mapping: &str) -> PyResult<DistanceMapping> {
    match mapping {
        "linear" => Ok(DistanceMapping::Linear),
        "squared" => Ok(DistanceMapping::Squared),
        other => Err(PyValueError::new_err(format!("unknown mapping `{other}`"))),
    }
}

/// `exp(-d / (2 sigma^2))`, or with `d^2` when `mapping="squared"`.
#[pyfunction]
#[pyo3(signature = (distance, sigma = metric::DEFAULT_SIGMA, mapping = "linear"))]
fn gaussian_rbf(distance: f64, sigma: f64, mapping: &str) -> PyResult<f64> {
    metric::gaussian_rbf_with(distance, sigma, parse_mapping(mapping)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (anchor, positive, negative, alpha = 0.3))]
fn triplet_loss(anchor: Vec<f64>, positive: Vec<f64>, negative: Vec<f64>, alpha: f64) -> PyResult<f64> {
    let t = metric::Triplet::new(&anchor, &positive, &negative).map_err(to_py)?;
    Ok(metric::triplet_loss(&t, margin(alpha)?))
}

/// One `(positive, negative, kind)` tuple per positive, from anchor distances.
#[pyfunction]
#[pyo3(signature = (d_ap, d_an, alpha = 0.3))]
fn mine_semi_hard(d_ap: Vec<f64>, d_an: Vec<f64>, alpha: f64) -> PyResult<Vec<(usize, usize, &'static str)>> {
    let mined = metric::mine_semi_hard_distances(&d_ap, &d_an, margin(alpha)?).map_err(to_py)?;
    Ok(mined
        .into_iter()
        .map(|m| {
            let kind = match m.kind {
                NegativeKind::SemiHard => "semi_hard",
                NegativeKind::BeyondBand => "beyond_band",
                NegativeKind::Farthest => "farthest",
            };
            (m.positive, m.negative, kind)
        })
        .collect())
}

/// Labeled images with pixels in `[0, 1]`, stored as `H x W x C`.
#[pyclass(name = "Dataset", module = "sbfnet_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: LabeledDataset,
}

fn wrap(inner: LabeledDataset) -> PyDataset {
    PyDataset { inner }
}

#[pymethods]
impl PyDataset {
    /// Builds a dataset from flat row-major pixels of shape `(n, h, w, c)`.
    #[staticmethod]
    fn from_flat(pixels: Vec<f64>, shape: (usize, usize, usize, usize), labels: Vec<usize>, class_count: usize) -> PyResult<Self> {
        let (n, h, w, c) = shape;
        if pixels.len() != n * h * w * c || labels.len() != n {
            return Err(PyValueError::new_err("pixels/labels do not match the shape"));
        }
        let images = pixels
            .chunks(h * w * c)
            .map(|p| Tensor::new(vec![h, w, c], p.to_vec()))
            .collect::<sbfnet::Result<Vec<_>>>()
            .map_err(to_py)?;
        LabeledDataset::new(images, labels, class_count).map(wrap).map_err(to_py)
    }

    #[staticmethod]
    fn load_idx(images: PathBuf, labels: PathBuf) -> PyResult<Self> {
        data::load_idx(images, labels).map(wrap).map_err(to_py)
    }

    /// Every `*images-idx3*` file in `root` with its labels, concatenated.
    #[staticmethod]
    fn load_idx_dir(root: PathBuf) -> PyResult<Self> {
        sbfnet::harness::load_idx_dir(&root).map(wrap).map_err(to_py)
    }

    /// One sub-directory per class; `size=(h, w)` resizes every image.
    #[staticmethod]
    #[pyo3(signature = (root, size = None))]
    fn load_image_dir(root: PathBuf, size: Option<(usize, usize)>) -> PyResult<Self> {
        data::load_image_dir(root, &ImageDirOptions { size, channels: None })
            .map(wrap)
            .map_err(to_py)
    }

    #[staticmethod]
    fn load_cifar10_bin(root: PathBuf) -> PyResult<Self> {
        data::load_cifar10_bin(root).map(wrap).map_err(to_py)
    }

    /// Synthetic single-channel images with one bright spot per class.
    #[staticmethod]
    #[pyo3(signature = (classes, per_class, side, seed = 0))]
    fn gaussian_blobs(classes: usize, per_class: usize, side: usize, seed: u64) -> Self {
        wrap(data::gaussian_blobs(classes, per_class, side, seed))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(len={}, classes={}, shape={:?})",
            self.inner.len(),
            self.inner.class_count(),
            self.inner.image_shape().unwrap_or(&[])
        )
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    #[getter]
    fn image_shape(&self) -> Option<Vec<usize>> {
        self.inner.image_shape().map(<[usize]>::to_vec)
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn augmented(&self) -> bool {
        self.inner.provenance() == data::Provenance::Augmented
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    /// Flat `H x W x C` pixels of image `i`.
    fn image(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.len() {
            return Err(PyIndexError::new_err(i));
        }
        Ok(self.inner.image(i).data().to_vec())
    }

    /// Stratified `(train, test)` split.
    #[pyo3(signature = (test_fraction = 0.25, seed = 0))]
    fn split(&self, test_fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let s = data::split(&self.inner, test_fraction, seed).map_err(to_py)?;
        Ok((wrap(s.train), wrap(s.test)))
    }

    /// `n` images per class.
    #[pyo3(signature = (n, seed = 0))]
    fn subsample(&self, n: usize, seed: u64) -> PyResult<Self> {
        data::subsample(&self.inner, SampleSize::Count(n), seed)
            .map(wrap)
            .map_err(to_py)
    }

    #[pyo3(signature = (max, seed = 0))]
    fn cap_per_class(&self, max: usize, seed: u64) -> Self {
        wrap(data::cap_per_class(&self.inner, max, seed))
    }

    #[pyo3(signature = (copies = 4, seed = 0))]
    fn augment(&self, copies: usize, seed: u64) -> PyResult<Self> {
        let cfg = AugmentationConfig {
            copies,
            seed,
            ..AugmentationConfig::default()
        };
        data::augment(&self.inner, &cfg).map(wrap).map_err(to_py)
    }
}

/// A trained Siamese basis-function network.
#[pyclass(name = "SbfNet", module = "sbfnet_py", frozen)]
struct PySbfNet {
    inner: sbfnet::SbfNet,
}

impl PySbfNet {
    fn image(&self, pixels: Vec<f64>) -> PyResult<Tensor> {
        let shape = self.inner.config().backbone.input_shape.to_vec();
        Tensor::new(shape, pixels).map_err(to_py)
    }
}

fn parse_backbone(name: Option<&str>, shape: [usize; 3]) -> PyResult<BackboneConfig> {
    match name {
        None => Ok(backbone_for_shape(shape)),
        Some(n) => {
            let preset: Preset = n.parse().map_err(to_py)?;
            BackboneConfig::preset(preset).map_err(to_py)
        }
    }
}

#[pymethods]
impl PySbfNet {
    /// Trains on raw (unaugmented) data with the desk schedules unless
    /// `preset="paper"`; keyword arguments override single settings.
    #[staticmethod]
    #[pyo3(signature = (
        dataset, centers_per_class = 5, seed = 0, backbone = None, preset = "desk",
        kernel_iterations = None, mlp_iterations = None, augmentation_copies = None, jobs = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        dataset: &PyDataset,
        centers_per_class: usize,
        seed: u64,
        backbone: Option<&str>,
        preset: &str,
        kernel_iterations: Option<usize>,
        mlp_iterations: Option<usize>,
        augmentation_copies: Option<usize>,
        jobs: usize,
    ) -> PyResult<Self> {
        let shape = dataset
            .inner
            .image_shape()
            .ok_or_else(|| PyValueError::new_err("empty dataset"))?;
        let bb = parse_backbone(backbone, [shape[0], shape[1], shape[2]])?;
        let mut cfg = match preset {
            "desk" => EnsembleConfig::desk(bb),
            "paper" => EnsembleConfig::paper(bb),
            other => return Err(PyValueError::new_err(format!("unknown preset `{other}`"))),
        };
        cfg.centers_per_class = centers_per_class;
        cfg.seed = seed;
        cfg.augmentation.seed = seed;
        cfg.jobs = jobs;
        if let Some(v) = kernel_iterations {
            cfg.kernel.iterations = v;
        }
        if let Some(v) = mlp_iterations {
            cfg.mlp.iterations = v;
        }
        if let Some(v) = augmentation_copies {
            cfg.augmentation.copies = v;
        }
        let ds = dataset.inner.clone();
        let trained = py.detach(move || sbfnet::train_sbf(&ds, &cfg)).map_err(to_py)?;
        Ok(Self { inner: trained.net })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        sbfnet::SbfNet::load(path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn kernel_count(&self) -> usize {
        self.inner.kernels().len()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    #[getter]
    fn centers_per_class(&self) -> usize {
        self.inner.centers_per_class()
    }

    /// Class-major kernel similarities of one flat image.
    fn similarity_vector(&self, pixels: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.similarity_vector(&self.image(pixels)?).map_err(to_py)
    }

    /// `(class, probabilities)` for one flat image.
    fn predict(&self, pixels: Vec<f64>) -> PyResult<(usize, Vec<f64>)> {
        let p = self.inner.predict(&self.image(pixels)?).map_err(to_py)?;
        Ok((p.class, p.probabilities))
    }

    /// Predicted class of every image in `dataset`.
    fn predict_dataset(&self, py: Python<'_>, dataset: &PyDataset) -> PyResult<Vec<usize>> {
        let preds = py
            .detach(|| self.inner.predict_batch(dataset.inner.images()))
            .map_err(to_py)?;
        Ok(preds.into_iter().map(|p| p.class).collect())
    }

    /// Accuracy, per-class accuracy (None for absent classes) and confusion matrix.
    fn evaluate<'py>(&self, py: Python<'py>, dataset: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
        let report = py.detach(|| self.inner.evaluate(&dataset.inner)).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("accuracy", report.accuracy)?;
        d.set_item("per_class_accuracy", report.per_class_accuracy)?;
        d.set_item("confusion", report.confusion)?;
        Ok(d)
    }
}

#[pymodule]
fn sbfnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(cosine_distance, m)?)?;
    m.add_function(wrap_pyfunction!(euclidean_distance, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_rbf, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mine_semi_hard, m)?)?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySbfNet>()?;
    m.add("DEFAULT_SIGMA", metric::DEFAULT_SIGMA)?;
    Ok(())
}
