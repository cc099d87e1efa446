//! Python bindings for `locenc`.
//!
//! Matrices cross the boundary as lists of row lists and coordinates as
//! `(lon, lat)` tuples.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use locenc::analysis;
use locenc::clip::{self, EmbeddingBatch, Temperature};
use locenc::dataio::{self, LabeledDataset, PairDataset, SplitSpec, SyntheticWorldSpec, Targets};
use locenc::downstream::{self, EvalConfig, Featurizer, SearchSpace};
use locenc::pretrain::{self as pt, ClipModel, PretrainConfig};
use locenc::sphere;
use locenc::{Error, GeoCoordinate, Tensor2};

create_exception!(locenc_py, NumericalError, PyArithmeticError);

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        NumericalError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn coords_from(list: Vec<(f64, f64)>) -> PyResult<Vec<GeoCoordinate>> {
    list.into_iter()
        .map(|(lon, lat)| GeoCoordinate::new(lon, lat).map_err(to_py))
        .collect()
}

fn tensor_from(rows: Vec<Vec<f64>>) -> PyResult<Tensor2> {
    if rows.is_empty() {
        return Ok(Tensor2::zeros(0, 0));
    }
    Tensor2::from_rows(&rows).map_err(to_py)
}

fn rows_of(t: &Tensor2) -> Vec<Vec<f64>> {
    t.row_iter().map(<[f64]>::to_vec).collect()
}

/// Real spherical harmonics of degrees `0..l_max` at one coordinate,
/// degree-major with order running from `-l` to `l`.
#[pyfunction]
fn sh_basis(lon: f64, lat: f64, l_max: usize) -> PyResult<Vec<f64>> {
    let c = GeoCoordinate::new(lon, lat).map_err(to_py)?;
    Ok(sphere::sh_basis(&c, l_max).map_err(to_py)?.into_values())
}

#[pyfunction]
fn sh_matrix(coords: Vec<(f64, f64)>, l_max: usize) -> PyResult<Vec<Vec<f64>>> {
    let coords = coords_from(coords)?;
    Ok(rows_of(&sphere::sh_matrix(&coords, l_max).map_err(to_py)?))
}

/// Great-circle distance in radians.
#[pyfunction]
fn angular_distance(a: (f64, f64), b: (f64, f64)) -> PyResult<f64> {
    let [a, b]: [GeoCoordinate; 2] = coords_from(vec![a, b])?.try_into().expect("two coordinates");
    Ok(a.angular_distance(&b))
}

/// Symmetric contrastive loss of paired rows at temperature `tau`.
#[pyfunction]
fn clip_loss(loc: Vec<Vec<f64>>, img: Vec<Vec<f64>>, tau: f64) -> PyResult<f64> {
    let batch = EmbeddingBatch::new(tensor_from(loc)?, tensor_from(img)?).map_err(to_py)?;
    let t = Temperature::new(tau, false).map_err(to_py)?;
    clip::clip_loss(&batch, &t).map_err(to_py)
}

#[pyfunction]
fn retrieval_accuracy(loc: Vec<Vec<f64>>, img: Vec<Vec<f64>>) -> PyResult<f64> {
    let batch = EmbeddingBatch::new(tensor_from(loc)?, tensor_from(img)?).map_err(to_py)?;
    clip::retrieval_accuracy(&batch).map_err(to_py)
}

#[pyfunction]
fn metric_r2(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    downstream::metric_r2(&pred, &truth).map_err(to_py)
}

#[pyfunction]
fn metric_accuracy(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    downstream::metric_accuracy(&pred, &truth).map_err(to_py)
}

/// Returns `(components, explained_variance_ratio, projected)`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn pca(x: Vec<Vec<f64>>, k: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
    let r = analysis::pca(&tensor_from(x)?, k).map_err(to_py)?;
    Ok((rows_of(&r.components), r.explained_variance_ratio, rows_of(&r.projected)))
}

/// Samples `n` points of a synthetic world. Returns
/// `(coords, features, targets)`.
#[pyfunction]
#[pyo3(signature = (n, seed=0, bump_count=16, feature_dim=32, width=0.3, noise_sigma=0.05))]
#[allow(clippy::type_complexity)]
fn generate_world(
    n: usize,
    seed: u64,
    bump_count: usize,
    feature_dim: usize,
    width: f64,
    noise_sigma: f64,
) -> PyResult<(Vec<(f64, f64)>, Vec<Vec<f64>>, Vec<f64>)> {
    let spec = SyntheticWorldSpec {
        seed,
        bump_count,
        feature_dim,
        width,
        noise_sigma,
        ..SyntheticWorldSpec::default()
    };
    let (pairs, labels) = dataio::generate_world(&spec, n).map_err(to_py)?;
    let coords = pairs.coords().iter().map(|c| (c.lon(), c.lat())).collect();
    let Targets::Regression(y) = labels.targets().clone() else {
        unreachable!("synthetic targets are real-valued")
    };
    Ok((coords, rows_of(pairs.features()), y))
}

/// A pretrained location encoder with its image projection and temperature.
#[pyclass(name = "Model", module = "locenc_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: ClipModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: pt::load_checkpoint(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        pt::save_checkpoint(&path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn l_max(&self) -> usize {
        self.inner.encoder.l_max()
    }

    #[getter]
    fn embed_dim(&self) -> usize {
        self.inner.encoder.output_dim()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.temperature.tau()
    }

    /// Location embeddings, one row per coordinate.
    fn embed(&self, coords: Vec<(f64, f64)>) -> PyResult<Vec<Vec<f64>>> {
        let coords = coords_from(coords)?;
        Ok(rows_of(&self.inner.embed(&coords).map_err(to_py)?))
    }

    /// Cosine-similarity grid to `(lon, lat)`; rows run south to north,
    /// columns west to east.
    #[pyo3(signature = (lon, lat, resolution=1.0))]
    fn similarity_map(&self, lon: f64, lat: f64, resolution: f64) -> PyResult<Vec<Vec<f64>>> {
        let r = GeoCoordinate::new(lon, lat).map_err(to_py)?;
        let g = analysis::similarity_map(&self.inner.encoder, &r, resolution).map_err(to_py)?;
        Ok(g.values.chunks(g.n_lon).map(<[f64]>::to_vec).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(l_max={}, embed_dim={}, tau={:.5})",
            self.l_max(),
            self.embed_dim(),
            self.tau()
        )
    }
}

/// Contrastive pretraining. Returns `(model, log)` where `log` holds
/// `(epoch, train_loss, val_loss, tau, seconds)` tuples.
#[pyfunction]
#[pyo3(signature = (
    coords, features, *, l_max=10, embed_dim=256, hidden_dim=512, hidden_layers=2,
    batch_size=512, epochs=200, lr=1e-4, weight_decay=1e-2, val_fraction=0.1,
    seed=0, jitter=true, tau_init=0.07, tau_trainable=true
))]
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn pretrain(
    py: Python<'_>,
    coords: Vec<(f64, f64)>,
    features: Vec<Vec<f64>>,
    l_max: usize,
    embed_dim: usize,
    hidden_dim: usize,
    hidden_layers: usize,
    batch_size: usize,
    epochs: usize,
    lr: f64,
    weight_decay: f64,
    val_fraction: f64,
    seed: u64,
    jitter: bool,
    tau_init: f64,
    tau_trainable: bool,
) -> PyResult<(PyModel, Vec<(usize, f64, f64, f64, f64)>)> {
    let pairs = PairDataset::new(coords_from(coords)?, tensor_from(features)?).map_err(to_py)?;
    let cfg = PretrainConfig {
        l_max,
        embed_dim,
        hidden_dim,
        hidden_layers,
        batch_size,
        epochs,
        lr,
        weight_decay,
        val_fraction,
        seed,
        jitter,
        tau_init,
        tau_trainable,
        ..PretrainConfig::default()
    };
    let out = py.detach(|| pt::pretrain(&pairs, &cfg)).map_err(to_py)?;
    let log = out
        .log
        .epochs
        .iter()
        .map(|r| (r.epoch, r.train_loss, r.val_loss, r.tau, r.seconds))
        .collect();
    Ok((PyModel { inner: out.model }, log))
}

/// Downstream regression evaluation. `model=None` uses scaled raw
/// coordinates; `split` is `"random"` or `"holdout:lo,hi[,fewshot]"`.
#[pyfunction]
#[pyo3(signature = (coords, targets, model=None, *, split="random", repeats=10, seed=0, trials=16, max_epochs=200, patience=20))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    coords: Vec<(f64, f64)>,
    targets: Vec<f64>,
    model: Option<PyRef<'py, PyModel>>,
    split: &str,
    repeats: usize,
    seed: u64,
    trials: usize,
    max_epochs: usize,
    patience: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let split: SplitSpec = locenc::cli::parse_split(split).map_err(PyValueError::new_err)?;
    let task = LabeledDataset::new(coords_from(coords)?, Targets::Regression(targets), None).map_err(to_py)?;
    let featurizer = match &model {
        Some(m) => Featurizer::Embeddings(m.inner.encoder.clone()),
        None => Featurizer::identity(),
    };
    let cfg = EvalConfig {
        task: "python".into(),
        split,
        space: SearchSpace {
            trial_count: trials,
            seed,
            max_epochs,
            patience,
            ..SearchSpace::default()
        },
        repeat_count: repeats,
        seed,
    };
    let report = py
        .detach(|| downstream::evaluate_task(&task, &featurizer, &cfg))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("featurizer", report.featurizer)?;
    d.set_item("values", report.values)?;
    d.set_item("mean", report.mean)?;
    d.set_item("std", report.std)?;
    d.set_item("hidden_layers", report.config.hidden_layers)?;
    d.set_item("hidden_dim", report.config.hidden_dim)?;
    d.set_item("test_size", report.test_size)?;
    Ok(d)
}

#[pymodule]
fn locenc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(sh_basis, m)?)?;
    m.add_function(wrap_pyfunction!(sh_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(angular_distance, m)?)?;
    m.add_function(wrap_pyfunction!(clip_loss, m)?)?;
    m.add_function(wrap_pyfunction!(retrieval_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(metric_r2, m)?)?;
    m.add_function(wrap_pyfunction!(metric_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(pca, m)?)?;
    m.add_function(wrap_pyfunction!(generate_world, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
