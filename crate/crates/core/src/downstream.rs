//! Downstream evaluation: MLP heads over frozen location features, metrics,
//! random hyperparameter search and repeated-run reports.

use std::collections::BTreeSet;
use std::sync::Mutex;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{split, LabeledDataset, SplitIndices, SplitSpec, TaskKind, Targets};
use crate::error::{Error, Result};
use crate::nn::{uniform, AdamConfig, AdamState, Graph, LocationEncoder, Tensor2};
use crate::rng;
use crate::sphere::GeoCoordinate;

/// How coordinates become downstream input features.
#[derive(Debug, Clone)]
pub enum Featurizer {
    /// Raw `[lon, lat]`, divided by `[180, 90]` when `scaled`.
    Identity { scaled: bool },
    /// Frozen location-encoder embeddings.
    Embeddings(LocationEncoder),
}

impl Featurizer {
    pub fn identity() -> Self {
        Featurizer::Identity { scaled: true }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Featurizer::Identity { .. } => "identity",
            Featurizer::Embeddings(_) => "embeddings",
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Featurizer::Identity { .. } => 2,
            Featurizer::Embeddings(enc) => enc.output_dim(),
        }
    }

    pub fn featurize(&self, coords: &[GeoCoordinate]) -> Result<Tensor2> {
        match self {
            Featurizer::Identity { scaled } => {
                let (sx, sy) = if *scaled { (180.0, 90.0) } else { (1.0, 1.0) };
                let data = coords.iter().flat_map(|c| [c.lon() / sx, c.lat() / sy]).collect();
                Tensor2::from_vec(coords.len(), 2, data)
            }
            Featurizer::Embeddings(enc) => enc.embed(coords),
        }
    }

    /// Coordinate features followed by the task's extra columns, if any.
    pub fn featurize_task(&self, task: &LabeledDataset) -> Result<Tensor2> {
        let x = self.featurize(task.coords())?;
        match task.extra() {
            Some(extra) => x.hcat(extra),
            None => Ok(x),
        }
    }
}

/// Feature matrix whose row reads can be recorded, so tests can check that
/// model selection never looks at test rows.
#[derive(Debug)]
pub struct FeatureTable {
    features: Tensor2,
    access: Option<Mutex<BTreeSet<usize>>>,
}

impl FeatureTable {
    pub fn new(features: Tensor2) -> Self {
        Self { features, access: None }
    }

    pub fn with_access_log(features: Tensor2) -> Self {
        Self {
            features,
            access: Some(Mutex::new(BTreeSet::new())),
        }
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn cols(&self) -> usize {
        self.features.cols()
    }

    pub fn gather(&self, idx: &[usize]) -> Tensor2 {
        if let Some(log) = &self.access {
            log.lock().expect("access log poisoned").extend(idx.iter().copied());
        }
        self.features.gather_rows(idx)
    }

    /// Every row index read so far (empty when logging is off).
    pub fn accessed(&self) -> BTreeSet<usize> {
        self.access
            .as_ref()
            .map(|m| m.lock().expect("access log poisoned").clone())
            .unwrap_or_default()
    }
}

/// MLP head: `hidden_layers` ReLU layers of width `hidden_dim`, then a
/// linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 1,
            hidden_dim: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
            max_epochs: 200,
            patience: 20,
            batch_size: 256,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers > 0 && self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("bad lr {} or weight_decay {}", self.lr, self.weight_decay)));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "need 1 <= patience ({}) <= max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    /// `[W1, b1, ..., Wout, bout]`.
    params: Vec<Tensor2>,
}

impl MlpHead {
    pub fn init(input_dim: usize, output_dim: usize, cfg: &HeadConfig, rng: &mut impl Rng) -> Self {
        let mut params = Vec::new();
        let mut fan_in = input_dim;
        for _ in 0..cfg.hidden_layers {
            params.push(uniform(rng, fan_in, cfg.hidden_dim, (6.0 / fan_in as f64).sqrt()));
            params.push(Tensor2::zeros(1, cfg.hidden_dim));
            fan_in = cfg.hidden_dim;
        }
        params.push(uniform(rng, fan_in, output_dim, 1.0 / (fan_in as f64).sqrt()));
        params.push(Tensor2::zeros(1, output_dim));
        Self { params }
    }

    pub fn params(&self) -> &[Tensor2] {
        &self.params
    }

    fn graph(&self, g: &mut Graph, x: Tensor2) -> Result<(Vec<crate::nn::Var>, crate::nn::Var)> {
        let vars: Vec<_> = self.params.iter().map(|p| g.param(p.clone())).collect();
        let mut h = g.constant(x);
        let layers = vars.len() / 2;
        for l in 0..layers {
            h = g.matmul(h, vars[2 * l])?;
            h = g.add_row(h, vars[2 * l + 1])?;
            if l + 1 < layers {
                h = g.relu(h);
            }
        }
        Ok((vars, h))
    }

    /// Raw outputs: one value per row for regression, logits otherwise.
    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        let layers = self.params.len() / 2;
        let mut h = x.clone();
        for l in 0..layers {
            h = h.matmul(&self.params[2 * l])?;
            let b = self.params[2 * l + 1].row(0);
            for r in 0..h.rows() {
                for (v, bb) in h.row_mut(r).iter_mut().zip(b) {
                    *v += bb;
                }
            }
            if l + 1 < layers {
                h = h.map(|v| v.max(0.0));
            }
        }
        Ok(h)
    }
}

/// A trained head plus what is needed to map its outputs back to targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead {
    pub head: MlpHead,
    pub kind: TaskKind,
    /// Regression targets are standardized with training-split statistics.
    pub target_mean: f64,
    pub target_std: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl TrainedHead {
    pub fn predict_values(&self, x: &Tensor2) -> Result<Vec<f64>> {
        let out = self.head.forward(x)?;
        Ok(out.data().iter().map(|v| v * self.target_std + self.target_mean).collect())
    }

    pub fn predict_classes(&self, x: &Tensor2) -> Result<Vec<usize>> {
        let out = self.head.forward(x)?;
        Ok(out
            .row_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    /// R² for regression or accuracy for classification on rows `idx`.
    pub fn score(&self, table: &FeatureTable, targets: &Targets, idx: &[usize]) -> Result<f64> {
        let x = table.gather(idx);
        match targets.gather(idx) {
            Targets::Regression(truth) => metric_r2(&self.predict_values(&x)?, &truth),
            Targets::Classification { labels, .. } => metric_accuracy(&self.predict_classes(&x)?, &labels),
        }
    }
}

enum Encoded {
    Values(Tensor2),
    Labels(Vec<usize>),
}

fn head_loss(g: &mut Graph, out: crate::nn::Var, y: &Encoded, rows: &[usize]) -> Result<crate::nn::Var> {
    match y {
        Encoded::Values(t) => g.mse(out, t.gather_rows(rows)),
        Encoded::Labels(l) => g.softmax_xent(out, rows.iter().map(|&i| l[i]).collect()),
    }
}

fn eval_loss(head: &MlpHead, x: &Tensor2, y: &Encoded) -> Result<f64> {
    let all: Vec<usize> = (0..x.rows()).collect();
    let mut g = Graph::new();
    let (_, out) = head.graph(&mut g, x.clone())?;
    let loss = head_loss(&mut g, out, y, &all)?;
    g.value(loss).item()
}

/// Trains one head with Adam on `split.train`, early-stopping on the
/// validation loss over `split.val`. Test rows are never read.
pub fn train_head(
    table: &FeatureTable,
    targets: &Targets,
    cfg: &HeadConfig,
    split: &SplitIndices,
    seed: u64,
) -> Result<TrainedHead> {
    cfg.validate()?;
    if targets.len() != table.rows() {
        return Err(Error::shape(
            "train_head",
            format!("{} feature rows for {} targets", table.rows(), targets.len()),
        ));
    }
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::EmptySplit("head training needs train and validation rows".into()));
    }
    let x_train = table.gather(&split.train);
    let x_val = table.gather(&split.val);

    let (kind, out_dim, mean, std, y_train, y_val) = match targets {
        Targets::Regression(v) => {
            let tr: Vec<f64> = split.train.iter().map(|&i| v[i]).collect();
            let n = tr.len() as f64;
            let mean = tr.iter().sum::<f64>() / n;
            let var = tr.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
            let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            let enc = |idx: &[usize]| {
                Tensor2::from_vec(idx.len(), 1, idx.iter().map(|&i| (v[i] - mean) / std).collect())
            };
            (
                TaskKind::Regression,
                1,
                mean,
                std,
                Encoded::Values(enc(&split.train)?),
                Encoded::Values(enc(&split.val)?),
            )
        }
        Targets::Classification { labels, class_count } => {
            let seen: BTreeSet<usize> = split.train.iter().map(|&i| labels[i]).collect();
            if *class_count < 2 || seen.len() < 2 {
                return Err(Error::Degenerate(format!(
                    "classification training split has {} distinct class(es)",
                    seen.len()
                )));
            }
            let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect();
            (
                TaskKind::Classification,
                *class_count,
                0.0,
                1.0,
                Encoded::Labels(pick(&split.train)),
                Encoded::Labels(pick(&split.val)),
            )
        }
    };

    let mut init_rng = rng::stream(seed, "head-init");
    let mut shuffle_rng = rng::stream(seed, "head-shuffle");
    let mut head = MlpHead::init(table.cols(), out_dim, cfg, &mut init_rng);
    let adam = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut opt = AdamState::new(adam, &head.params);

    let mut best = head.clone();
    let mut best_loss = eval_loss(&head, &x_val, &y_val)?;
    if !best_loss.is_finite() {
        return Err(Error::Diverged { epoch: 0, detail: format!("initial validation loss {best_loss}") });
    }
    let mut best_epoch = 0;
    let mut order: Vec<usize> = (0..x_train.rows()).collect();
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let (vars, out) = head.graph(&mut g, x_train.gather_rows(chunk))?;
            let loss = head_loss(&mut g, out, &y_train, chunk)?;
            let mut grads = g.backward(loss).map_err(|e| Error::Diverged { epoch, detail: e.to_string() })?;
            let grads: Vec<Tensor2> = vars
                .iter()
                .zip(&head.params)
                .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor2::zeros(p.rows(), p.cols())))
                .collect();
            opt.step(&mut head.params, &grads)?;
        }
        epochs_run = epoch;
        let val = eval_loss(&head, &x_val, &y_val)?;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("validation loss {val}") });
        }
        if val < best_loss {
            best_loss = val;
            best = head.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    Ok(TrainedHead {
        head: best,
        kind,
        target_mean: mean,
        target_std: std,
        best_val_loss: best_loss,
        best_epoch,
        epochs_run,
    })
}

/// `1 - SSE/SST`.
pub fn metric_r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape("metric_r2", format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let sst: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::Degenerate("R² undefined for zero-variance targets".into()));
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

pub fn metric_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::shape(
            "metric_accuracy",
            format!("{} predictions for {} labels", pred.len(), truth.len()),
        ));
    }
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Ranges sampled by [`random_search`]. `lr` and `weight_decay` are drawn
/// log-uniformly from `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub hidden_layers: Vec<usize>,
    pub hidden_dims: Vec<usize>,
    pub lr: [f64; 2],
    pub weight_decay: [f64; 2],
    pub trial_count: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        let head = HeadConfig::default();
        Self {
            hidden_layers: vec![1, 2, 3],
            hidden_dims: vec![64, 128, 256, 512],
            lr: [1e-4, 1e-2],
            weight_decay: [1e-6, 1e-2],
            trial_count: 16,
            seed: 0,
            max_epochs: head.max_epochs,
            patience: head.patience,
            batch_size: head.batch_size,
        }
    }
}

fn log_uniform(r: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        r.random_range(lo.ln()..=hi.ln()).exp()
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.is_empty() || self.hidden_dims.is_empty() {
            return Err(Error::Config("search space needs at least one depth and width".into()));
        }
        for (name, [lo, hi]) in [("lr", self.lr), ("weight_decay", self.weight_decay)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] must satisfy 0 < lo <= hi")));
            }
        }
        if self.trial_count == 0 {
            return Err(Error::Config("trial_count must be >= 1".into()));
        }
        Ok(())
    }

    /// The `trial_count` configurations, in trial order.
    pub fn sample(&self) -> Result<Vec<HeadConfig>> {
        self.validate()?;
        let mut r = rng::stream(self.seed, "search");
        let configs: Vec<HeadConfig> = (0..self.trial_count)
            .map(|_| HeadConfig {
                hidden_layers: *self.hidden_layers.choose(&mut r).expect("non-empty"),
                hidden_dim: *self.hidden_dims.choose(&mut r).expect("non-empty"),
                lr: log_uniform(&mut r, self.lr),
                weight_decay: log_uniform(&mut r, self.weight_decay),
                max_epochs: self.max_epochs,
                patience: self.patience,
                batch_size: self.batch_size,
            })
            .collect();
        for c in &configs {
            c.validate()?;
        }
        Ok(configs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: HeadConfig,
    /// `None` when the trial diverged.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: HeadConfig,
    pub best_index: usize,
    pub trials: Vec<TrialResult>,
}

/// Trains one head per sampled configuration and keeps the one with the
/// lowest validation loss; ties go to the earliest trial.
pub fn random_search(
    table: &FeatureTable,
    targets: &Targets,
    space: &SearchSpace,
    split: &SplitIndices,
) -> Result<SearchOutcome> {
    let configs = space.sample()?;
    let results: Vec<Result<f64>> = configs
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let seed = rng::derive_seed(space.seed, &format!("trial-{i}"));
            train_head(table, targets, cfg, split, seed).map(|h| h.best_val_loss)
        })
        .collect();
    let mut trials = Vec::with_capacity(configs.len());
    let mut failures = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for (i, (cfg, res)) in configs.into_iter().zip(results).enumerate() {
        let val_loss = match res {
            Ok(v) => Some(v),
            Err(e) if e.is_numerical() => {
                failures.push(format!("trial {i}: {e}"));
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(v) = val_loss {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
        trials.push(TrialResult { config: cfg, val_loss });
    }
    let (best_index, _) = best.ok_or_else(|| Error::SearchFailed(failures.join("; ")))?;
    Ok(SearchOutcome {
        best: trials[best_index].config.clone(),
        best_index,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    R2,
    Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub task: String,
    pub split: SplitSpec,
    pub space: SearchSpace,
    pub repeat_count: usize,
    /// Seeds the split and the final training runs.
    pub seed: u64,
}

impl EvalConfig {
    pub fn new(task: impl Into<String>, split: SplitSpec, seed: u64) -> Self {
        Self {
            task: task.into(),
            split,
            space: SearchSpace { seed, ..SearchSpace::default() },
            repeat_count: 10,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub metric: MetricKind,
    pub featurizer: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 for one run.
    pub std: f64,
    pub repeat_count: usize,
    pub config: HeadConfig,
    pub split: SplitSpec,
    pub seed: u64,
    pub search_seed: u64,
    pub run_seeds: Vec<u64>,
    pub trials: Vec<TrialResult>,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Search once, then train `repeat_count` heads with distinct seeds and
/// score each on the untouched test split.
pub fn evaluate_task(task: &LabeledDataset, featurizer: &Featurizer, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.repeat_count == 0 {
        return Err(Error::Config("repeat_count must be >= 1".into()));
    }
    if let Targets::Classification { labels, class_count } = task.targets() {
        let distinct: BTreeSet<usize> = labels.iter().copied().collect();
        if *class_count < 2 || distinct.len() < 2 {
            return Err(Error::Degenerate(format!(
                "classification task {:?} has a single class",
                cfg.task
            )));
        }
    }
    let parts = split(task.coords(), &cfg.split, cfg.seed)?;
    if parts.test.is_empty() || parts.val.is_empty() {
        return Err(Error::EmptySplit("evaluation needs non-empty validation and test splits".into()));
    }
    let table = FeatureTable::new(featurizer.featurize_task(task)?);
    let search = random_search(&table, task.targets(), &cfg.space, &parts)?;
    let run_seeds: Vec<u64> = (0..cfg.repeat_count)
        .map(|i| rng::derive_seed(cfg.seed, &format!("run-{i}")))
        .collect();
    let values = run_seeds
        .par_iter()
        .map(|&s| {
            let head = train_head(&table, task.targets(), &search.best, &parts, s)?;
            head.score(&table, task.targets(), &parts.test)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std) = mean_and_std(&values);
    Ok(EvalReport {
        task: cfg.task.clone(),
        metric: match task.kind() {
            TaskKind::Regression => MetricKind::R2,
            TaskKind::Classification => MetricKind::Accuracy,
        },
        featurizer: featurizer.name().to_owned(),
        values,
        mean,
        std,
        repeat_count: cfg.repeat_count,
        config: search.best,
        split: cfg.split.clone(),
        seed: cfg.seed,
        search_seed: cfg.space.seed,
        run_seeds,
        trials: search.trials,
        train_size: parts.train.len(),
        val_size: parts.val.len(),
        test_size: parts.test.len(),
    })
}

impl EvalReport {
    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
