//! Python bindings: geometry, losses, banks and the train/evaluate workflow.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gazesep::encoders::{build_feature_bank, BankPrompts, MockTextConfig};
use gazesep::losses::{self, RankParams, RankVariant};
use gazesep::pipeline::{
    build_banks, compute_targets, evaluate, frozen_encoders, load_factors, make_synthetic, train, BankSet, Checkpoint,
    GazeDataset, NuisancePlanter, SyntheticGazeSpec, TrainConfig, TrainInputs,
};
use gazesep::taxonomy::parse_groups;
use gazesep::{Error, FactorSet, FeatureBank, GazeDirection, MockTextEncoder, SeededRng, Tensor, TextEncoder};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io { .. } | Error::Image(_) => PyIOError::new_err(msg),
        Error::NonFinite { .. } => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for gazesep::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn gaze(v: [f64; 3]) -> PyResult<GazeDirection> {
    GazeDirection::new(v).py()
}

fn labels(rows: &[[f64; 3]]) -> PyResult<Vec<GazeDirection>> {
    rows.iter().map(|v| gaze(*v)).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("feature rows differ in width"));
    }
    Ok(Tensor::from_rows(rows))
}

/// Unit gaze vector for yaw and pitch in radians.
#[pyfunction]
fn yaw_pitch_to_vector(yaw: f64, pitch: f64) -> PyResult<[f64; 3]> {
    Ok(GazeDirection::from_yaw_pitch(yaw, pitch).py()?.as_array())
}

/// `(yaw, pitch)` in radians of a nonzero 3-vector.
#[pyfunction]
fn vector_to_yaw_pitch(v: [f64; 3]) -> PyResult<(f64, f64)> {
    Ok(gaze(v)?.to_yaw_pitch())
}

#[pyfunction]
fn angular_error_deg(prediction: [f64; 3], label: [f64; 3]) -> PyResult<f64> {
    Ok(gazesep::angular_error_deg(&gaze(prediction)?, &gaze(label)?))
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    gazesep::cosine_similarity(&a, &b).py()
}

#[pyfunction]
fn softmax(xs: Vec<f64>) -> Vec<f64> {
    losses::softmax(&xs)
}

/// `(1 - cos(f, f_v)) / 2`.
#[pyfunction]
fn distill_loss(f: Vec<f64>, f_v: Vec<f64>) -> PyResult<f64> {
    losses::distill_loss(&f, &f_v).py()
}

/// Angle in radians between a prediction and a label.
#[pyfunction]
fn gaze_loss(prediction: Vec<f64>, label: [f64; 3]) -> PyResult<f64> {
    losses::gaze_loss(&prediction, &gaze(label)?).py()
}

/// Bank correlation weights of the backbone feature `f`.
#[pyfunction]
fn correlation_weights(f: Vec<f64>, bank: &PyFeatureBank) -> PyResult<Vec<f64>> {
    Ok(losses::correlation_weights(&f, &bank.inner).py()?.as_slice().to_vec())
}

/// Weighted cosine between `f_re` and the bank, weights taken from `f`.
#[pyfunction]
fn irrelevant_loss(f: Vec<f64>, f_re: Vec<f64>, bank: &PyFeatureBank) -> PyResult<f64> {
    let w = losses::correlation_weights(&f, &bank.inner).py()?;
    losses::irrelevant_loss(&f_re, &bank.inner, &w).py()
}

/// Sampled pairwise rank loss of a batch.
#[pyfunction]
#[pyo3(signature = (features, gaze_labels, seed = 0))]
fn rank_loss(features: Vec<Vec<f64>>, gaze_labels: Vec<[f64; 3]>, seed: u64) -> PyResult<f64> {
    let mut rng = SeededRng::new(seed);
    losses::rank_loss_batch(&matrix(&features)?, &labels(&gaze_labels)?, &mut rng).py()
}

/// One of the rank-loss replacements: `cr`, `l1`, `l2` or `kl`.
#[pyfunction]
#[pyo3(signature = (kind, features, gaze_labels, threshold_deg = 10.0, margin = 0.0))]
fn rank_variant_loss(kind: &str, features: Vec<Vec<f64>>, gaze_labels: Vec<[f64; 3]>, threshold_deg: f64, margin: f64) -> PyResult<f64> {
    let kind: RankVariant = kind.parse().py()?;
    let params = RankParams { threshold_deg, margin };
    losses::rank_variant_loss(kind, &matrix(&features)?, &labels(&gaze_labels)?, &params).py()
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    gazesep::pipeline::export::spearman(&x, &y).py()
}

#[pyclass(name = "FactorSet", module = "gazesep", from_py_object)]
#[derive(Clone)]
struct PyFactorSet {
    inner: FactorSet,
}

#[pymethods]
impl PyFactorSet {
    /// The shipped taxonomy.
    #[staticmethod]
    fn default() -> Self {
        Self {
            inner: FactorSet::default_set(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: FactorSet::load(&path).py()?,
        })
    }

    /// Subset in the given groups, e.g. `"appearance,quality"`.
    fn filter_by_groups(&self, groups: &str) -> PyResult<Self> {
        let g = parse_groups(groups).py()?;
        Ok(Self {
            inner: self.inner.filter_by_groups(&g).py()?,
        })
    }

    fn ids(&self) -> Vec<usize> {
        self.inner.ids()
    }

    fn descriptions(&self) -> Vec<String> {
        self.inner.factors().iter().map(|f| f.description.clone()).collect()
    }

    fn checksum(&self) -> String {
        gazesep::hash::to_hex(&self.inner.checksum())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "MockTextEncoder", module = "gazesep")]
struct PyMockTextEncoder {
    inner: MockTextEncoder,
}

#[pymethods]
impl PyMockTextEncoder {
    #[new]
    #[pyo3(signature = (dim = 128, seed = None))]
    fn new(dim: usize, seed: Option<u64>) -> PyResult<Self> {
        if dim == 0 {
            return Err(PyValueError::new_err("dim must be positive"));
        }
        let defaults = MockTextConfig::default();
        Ok(Self {
            inner: MockTextEncoder::new(MockTextConfig {
                dim,
                seed: seed.unwrap_or(defaults.seed),
                ..defaults
            }),
        })
    }

    /// Unit-norm embedding of a prompt.
    fn encode(&self, text: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.encode_text(text).py()?.into_vec())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }
}

#[pyclass(name = "FeatureBank", module = "gazesep")]
struct PyFeatureBank {
    inner: FeatureBank,
}

#[pymethods]
impl PyFeatureBank {
    /// Encodes each factor's template prompt.
    #[staticmethod]
    fn build(factors: &PyFactorSet, encoder: &PyMockTextEncoder) -> PyResult<Self> {
        Ok(Self {
            inner: build_feature_bank(&factors.inner, &encoder.inner, BankPrompts::Template).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf, factors: &PyFactorSet) -> PyResult<Self> {
        Ok(Self {
            inner: FeatureBank::load(&path, &factors.inner).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|k| self.inner.row(k).to_vec()).collect()
    }

    fn factor_ids(&self) -> Vec<usize> {
        self.inner.factor_ids().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "TrainConfig", module = "gazesep", from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    /// 32x32 images and 128-wide features.
    #[staticmethod]
    fn desk() -> Self {
        Self {
            inner: TrainConfig::desk(),
        }
    }

    /// 224x224 images, 512-wide features, batch 128.
    #[staticmethod]
    fn reference() -> Self {
        Self {
            inner: TrainConfig::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: TrainConfig::from_toml(text).py()?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.epochs = v;
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size
    }

    #[setter]
    fn set_batch_size(&mut self, v: usize) {
        self.inner.batch_size = v;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    /// `(lambda1, lambda2, lambda3)`.
    #[getter]
    fn weights(&self) -> (f64, f64, f64) {
        let w = self.inner.weights;
        (w.lambda1, w.lambda2, w.lambda3)
    }

    #[setter]
    fn set_weights(&mut self, w: (f64, f64, f64)) {
        self.inner.weights.lambda1 = w.0;
        self.inner.weights.lambda2 = w.1;
        self.inner.weights.lambda3 = w.2;
    }

    #[getter]
    fn rank_objective(&self) -> String {
        match self.inner.rank_objective.variant() {
            Some(v) => v.as_str().to_string(),
            None => "rank".to_string(),
        }
    }

    #[setter]
    fn set_rank_objective(&mut self, v: &str) -> PyResult<()> {
        self.inner.rank_objective = v.parse().py()?;
        Ok(())
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().py()
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("manifest.csv")
    } else {
        path.to_path_buf()
    }
}

fn load_dataset(path: &Path) -> PyResult<GazeDataset> {
    GazeDataset::load_manifest(&manifest_path(path)).py()
}

/// Writes a synthetic dataset to `out_dir` and returns the manifest path.
/// With `planted`, each subject's nuisance is built from template bank
/// rows of `config` (desk by default).
#[pyfunction]
#[pyo3(signature = (out_dir, n = 500, subjects = 2, seed = 0, noise = 0.02, planted = true, config = None))]
fn make_synthetic_dataset(
    out_dir: PathBuf,
    n: usize,
    subjects: usize,
    seed: u64,
    noise: f64,
    planted: bool,
    config: Option<PyTrainConfig>,
) -> PyResult<PathBuf> {
    let config = config.map_or_else(TrainConfig::desk, |c| c.inner);
    let spec = SyntheticGazeSpec {
        n,
        subjects,
        seed,
        noise,
        height: config.model.image_shape[0],
        width: config.model.image_shape[1],
        ..SyntheticGazeSpec::default()
    };
    let syn = if planted {
        let factors = load_factors(&config).py()?;
        let enc = frozen_encoders(&config).py()?;
        let banks = build_banks(&config, &factors, enc.text.as_ref(), &[]).py()?;
        let BankSet::Shared(bank) = &banks else {
            return Err(PyValueError::new_err("planting needs a shared bank"));
        };
        make_synthetic(&spec, Some(NuisancePlanter { bank, vision: &enc.vision })).py()?
    } else {
        make_synthetic(&spec, None).py()?
    };
    syn.dataset.save(&out_dir).py()
}

/// A trained model loaded from a checkpoint.
#[pyclass(name = "Model", module = "gazesep")]
struct PyModel {
    inner: Checkpoint,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::load(&path).py()?,
        })
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    #[getter]
    fn config(&self) -> PyTrainConfig {
        PyTrainConfig {
            inner: self.inner.config.clone(),
        }
    }

    /// Unnormalized gaze predictions for every sample of a dataset.
    fn predict(&self, data: PathBuf) -> PyResult<Vec<[f64; 3]>> {
        let ds = load_dataset(&data)?;
        gazesep::pipeline::eval::predict(&self.inner.model, &ds).py()
    }

    /// Mean angular error in degrees on a dataset.
    fn evaluate(&self, data: PathBuf) -> PyResult<f64> {
        let ds = load_dataset(&data)?;
        Ok(evaluate(&self.inner.model, &ds, "model").py()?.mean_deg)
    }
}

/// Trains on the dataset at `data`, writing `checkpoint.bin` and
/// `metrics.csv` under `out_dir`. Returns one dict of loss means per epoch.
#[pyfunction]
fn train_model(py: Python<'_>, config: &PyTrainConfig, data: PathBuf, out_dir: PathBuf) -> PyResult<Vec<BTreeMap<String, f64>>> {
    let config = config.inner.clone();
    let log = py.detach(move || -> gazesep::Result<_> {
        let ds = GazeDataset::load_manifest(&manifest_path(&data))?;
        let enc = frozen_encoders(&config)?;
        let targets = compute_targets(&ds, &enc.vision)?;
        let factors = load_factors(&config)?;
        let banks = build_banks(&config, &factors, enc.text.as_ref(), &ds.subjects())?;
        let inputs = TrainInputs {
            dataset: &ds,
            targets: &targets,
            banks: &banks,
        };
        Ok(train(&inputs, &config, Some(&out_dir))?.log)
    });
    Ok(log
        .py()?
        .into_iter()
        .map(|r| {
            let mut m: BTreeMap<String, f64> = r.components.named().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            m.insert("epoch".into(), r.epoch as f64);
            m.insert("total".into(), r.total);
            m
        })
        .collect())
}

#[pymodule]
#[pyo3(name = "gazesep")]
pub fn gazesep_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(yaw_pitch_to_vector, m)?)?;
    m.add_function(wrap_pyfunction!(vector_to_yaw_pitch, m)?)?;
    m.add_function(wrap_pyfunction!(angular_error_deg, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(distill_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gaze_loss, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_weights, m)?)?;
    m.add_function(wrap_pyfunction!(irrelevant_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rank_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rank_variant_loss, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(make_synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_class::<PyFactorSet>()?;
    m.add_class::<PyMockTextEncoder>()?;
    m.add_class::<PyFeatureBank>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
