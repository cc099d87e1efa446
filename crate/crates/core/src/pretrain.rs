//! Contrastive pretraining loop, checkpoints and training logs.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::clip::{clip_loss_graph, retrieval_accuracy, EmbeddingBatch, ImageProjection, Temperature};
use crate::dataio::{jitter, split, PairDataset, SplitIndices, SplitSpec};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Graph, LocationEncoder, SirenConfig, Tensor2};
use crate::rng;
use crate::sphere::{sh_matrix, GeoCoordinate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Number of harmonic degrees; the encoder input has `l_max^2` columns.
    pub l_max: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub omega0: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub decoupled_weight_decay: bool,
    pub val_fraction: f64,
    pub seed: u64,
    pub jitter: bool,
    pub tau_init: f64,
    pub tau_trainable: bool,
}

impl Default for PretrainConfig {
    /// Desk-scale defaults. Full-size runs use `batch_size = 8192` and
    /// `epochs = 500`.
    fn default() -> Self {
        Self {
            l_max: 10,
            embed_dim: 256,
            hidden_dim: 512,
            hidden_layers: 2,
            omega0: 30.0,
            batch_size: 512,
            epochs: 200,
            lr: 1e-4,
            weight_decay: 1e-2,
            decoupled_weight_decay: true,
            val_fraction: 0.1,
            seed: 0,
            jitter: true,
            tau_init: crate::clip::TAU_INIT,
            tau_trainable: true,
        }
    }
}

impl PretrainConfig {
    pub fn siren(&self) -> SirenConfig {
        SirenConfig {
            input_dim: self.l_max * self.l_max,
            hidden_dim: self.hidden_dim,
            hidden_layers: self.hidden_layers,
            output_dim: self.embed_dim,
            omega0: self.omega0,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            decoupled_weight_decay: self.decoupled_weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_max == 0 {
            return Err(Error::Config("l_max must be >= 1".into()));
        }
        self.siren().validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction must be in (0, 1), got {}", self.val_fraction)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite() && self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("lr and weight_decay must be finite and >= 0".into()));
        }
        Temperature::new(self.tau_init, self.tau_trainable)?;
        Ok(())
    }
}

/// Everything pretraining learns: location encoder, image projection and
/// temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipModel {
    pub encoder: LocationEncoder,
    pub projection: ImageProjection,
    pub temperature: Temperature,
}

impl ClipModel {
    pub fn init(cfg: &PretrainConfig, feature_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let encoder = LocationEncoder::init(cfg.l_max, cfg.siren(), cfg.seed)?;
        let mut r = rng::stream(cfg.seed, "projection-init");
        let projection = ImageProjection::init(feature_dim, cfg.embed_dim, &mut r)?;
        Ok(Self {
            encoder,
            projection,
            temperature: Temperature::new(cfg.tau_init, cfg.tau_trainable)?,
        })
    }

    /// Every trainable tensor in checkpoint order: encoder, projection
    /// weight, projection bias, `log_tau` (1x1).
    pub fn tensors(&self) -> Vec<Tensor2> {
        let mut out = self.encoder.params().to_vec();
        out.push(self.projection.weight.clone());
        out.push(self.projection.bias.clone());
        out.push(Tensor2::scalar(self.temperature.log_tau));
        out
    }

    fn set_tensors(&mut self, mut tensors: Vec<Tensor2>) -> Result<()> {
        let log_tau = tensors.pop().expect("non-empty").item()?;
        self.projection.bias = tensors.pop().expect("non-empty");
        self.projection.weight = tensors.pop().expect("non-empty");
        for (dst, src) in self.encoder.params_mut().iter_mut().zip(tensors) {
            *dst = src;
        }
        self.temperature.log_tau = log_tau;
        Ok(())
    }

    pub fn embed(&self, coords: &[GeoCoordinate]) -> Result<Tensor2> {
        self.encoder.embed(coords)
    }
}

/// Raw location embeddings `f(c) = Siren(SH(c))`, one row per coordinate.
pub fn embed(encoder: &LocationEncoder, coords: &[GeoCoordinate]) -> Result<Tensor2> {
    encoder.embed(coords)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub tau: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn min_val_loss(&self) -> Option<(usize, f64)> {
        self.epochs
            .iter()
            .fold(None, |best: Option<(usize, f64)>, r| match best {
                Some((_, v)) if v <= r.val_loss => best,
                _ => Some((r.epoch, r.val_loss)),
            })
    }

    /// `epoch,train_loss,val_loss,tau,seconds`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "epoch,train_loss,val_loss,tau,seconds").map_err(io)?;
        for r in &self.epochs {
            writeln!(w, "{},{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.tau, r.seconds).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })?;
        let mut epochs = Vec::new();
        for rec in reader.deserialize() {
            let rec: EpochRecord = rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            epochs.push(rec);
        }
        Ok(Self { epochs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub loss: f64,
    /// Mean in-batch top-1 retrieval accuracy, location to image.
    pub retrieval_accuracy: f64,
    pub batches: usize,
}

/// Contrastive loss and retrieval accuracy over fixed, unshuffled batches
/// of `indices` (a trailing partial batch is dropped). No jitter.
pub fn evaluate(model: &ClipModel, pairs: &PairDataset, indices: &[usize], batch_size: usize) -> Result<EvalStats> {
    if batch_size < 2 || indices.len() < batch_size {
        return Err(Error::Config(format!(
            "cannot form a batch of {batch_size} from {} points",
            indices.len()
        )));
    }
    let (mut loss, mut acc, mut batches) = (0.0, 0.0, 0);
    for chunk in indices.chunks_exact(batch_size) {
        let coords: Vec<GeoCoordinate> = chunk.iter().map(|&i| pairs.coords()[i]).collect();
        let loc = model.encoder.forward(&sh_matrix(&coords, model.encoder.l_max())?)?;
        let img = model.projection.project(&pairs.features().gather_rows(chunk))?;
        let batch = EmbeddingBatch::new(loc, img)?;
        loss += crate::clip::clip_loss(&batch, &model.temperature)?;
        acc += retrieval_accuracy(&batch)?;
        batches += 1;
    }
    Ok(EvalStats {
        loss: loss / batches as f64,
        retrieval_accuracy: acc / batches as f64,
        batches,
    })
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Parameters from the epoch with minimum validation loss (the
    /// initialization when no epoch ran).
    pub model: ClipModel,
    pub log: TrainingLog,
    pub best_epoch: Option<usize>,
    pub split: SplitIndices,
    /// Batch size used for validation: `min(batch_size, |val|)`.
    pub val_batch_size: usize,
}

/// Trains location encoder, image projection and temperature with the
/// symmetric contrastive loss and keeps the minimum-validation-loss
/// snapshot.
pub fn pretrain(pairs: &PairDataset, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    pretrain_with(pairs, cfg, |_| {})
}

/// [`pretrain`] with a callback after every epoch.
pub fn pretrain_with(
    pairs: &PairDataset,
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let spec = SplitSpec::Random {
        train: 1.0 - cfg.val_fraction,
        val: cfg.val_fraction,
        test: 0.0,
    };
    let parts = split(pairs.coords(), &spec, cfg.seed)?;
    if parts.train.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "training split has {} points, smaller than one batch of {}",
            parts.train.len(),
            cfg.batch_size
        )));
    }
    let val_batch = cfg.batch_size.min(parts.val.len());
    if val_batch < 2 {
        return Err(Error::Config(format!(
            "validation split has {} points; need at least 2",
            parts.val.len()
        )));
    }

    let mut model = ClipModel::init(cfg, pairs.feature_dim())?;
    let mut params = model.tensors();
    let n_enc = model.encoder.params().len();
    let mut frozen = vec![false; params.len()];
    frozen[params.len() - 1] = !cfg.tau_trainable;
    let mut opt = AdamState::with_frozen(cfg.adam(), &params, frozen);

    let static_sh = if cfg.jitter {
        None
    } else {
        Some(sh_matrix(pairs.coords(), cfg.l_max)?)
    };
    let mut shuffle_rng = rng::stream(cfg.seed, "shuffle");
    let mut jitter_rng = rng::stream(cfg.seed, "jitter");
    let mut order = parts.train.clone();

    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = None;
    let mut log = TrainingLog::default();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut train_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks_exact(cfg.batch_size) {
            let x = match &static_sh {
                Some(sh) => sh.gather_rows(chunk),
                None => {
                    let coords: Vec<GeoCoordinate> = chunk
                        .iter()
                        .map(|&i| jitter(&pairs.coords()[i], &mut jitter_rng))
                        .collect();
                    sh_matrix(&coords, cfg.l_max)?
                }
            };
            let feats = pairs.features().gather_rows(chunk);

            let mut g = Graph::new();
            let xv = g.constant(x);
            let vars: Vec<_> = params
                .iter()
                .enumerate()
                .map(|(i, p)| if opt.is_frozen(i) { g.constant(p.clone()) } else { g.param(p.clone()) })
                .collect();
            let loc = model.encoder.forward_graph(&mut g, xv, &vars[..n_enc])?;
            let fv = g.constant(feats);
            let img = model.projection.forward_graph(&mut g, fv, [vars[n_enc], vars[n_enc + 1]])?;
            let loss = clip_loss_graph(&mut g, loc, img, vars[n_enc + 2]).map_err(|e| Error::Diverged {
                epoch,
                detail: e.to_string(),
            })?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("training loss {value} at batch {batches}"),
                });
            }
            let mut grads = g.backward(loss).map_err(|e| Error::Diverged {
                epoch,
                detail: e.to_string(),
            })?;
            let grads: Vec<Tensor2> = vars
                .iter()
                .zip(&params)
                .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor2::zeros(p.rows(), p.cols())))
                .collect();
            opt.step(&mut params, &grads)?;
            let last = params.len() - 1;
            let mut t = Temperature { log_tau: params[last].item()?, trainable: cfg.tau_trainable };
            t.clamp();
            params[last] = Tensor2::scalar(t.log_tau);
            train_loss += value;
            batches += 1;
        }
        model.set_tensors(params.clone())?;
        let val = evaluate(&model, pairs, &parts.val, val_batch).map_err(|e| match e {
            Error::NonFinite(d) | Error::Degenerate(d) => Error::Diverged { epoch, detail: d },
            other => other,
        })?;
        if !val.loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss {}", val.loss),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: train_loss / batches as f64,
            val_loss: val.loss,
            tau: model.temperature.tau(),
            seconds: start.elapsed().as_secs_f64(),
        };
        if val.loss < best_val {
            best_val = val.loss;
            best = model.clone();
            best_epoch = Some(epoch);
        }
        on_epoch(&record);
        log.epochs.push(record);
    }

    Ok(PretrainOutcome {
        model: best,
        log,
        best_epoch,
        split: parts,
        val_batch_size: val_batch,
    })
}

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"LENC1";

fn put_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())
}

/// Binary little-endian checkpoint: magic `LENC1`; `l_max`, `input_dim`,
/// `hidden_dim`, `hidden_layers`, `output_dim` as u32; `omega0` as f64;
/// `tau_trainable` and tensor count as u32; then every tensor as
/// `rows u32, cols u32, rows*cols f64`.
pub fn save_checkpoint(path: &Path, model: &ClipModel) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let c = model.encoder.config();
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    for v in [model.encoder.l_max(), c.input_dim, c.hidden_dim, c.hidden_layers, c.output_dim] {
        put_u32(&mut w, v).map_err(io)?;
    }
    w.write_all(&c.omega0.to_le_bytes()).map_err(io)?;
    put_u32(&mut w, usize::from(model.temperature.trainable)).map_err(io)?;
    let tensors = model.tensors();
    put_u32(&mut w, tensors.len()).map_err(io)?;
    for t in &tensors {
        put_u32(&mut w, t.rows()).map_err(io)?;
        put_u32(&mut w, t.cols()).map_err(io)?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::TruncatedCheckpoint(format!(
                "file ends at byte {} while reading {what}",
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ClipModel> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let magic = cur.take(CHECKPOINT_MAGIC.len(), "magic").map_err(|_| {
        Error::CheckpointVersion(format!("{} is too short to be a checkpoint", path.display()))
    })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointVersion(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(CHECKPOINT_MAGIC),
            String::from_utf8_lossy(magic)
        )));
    }
    let l_max = cur.u32("l_max")?;
    let config = SirenConfig {
        input_dim: cur.u32("input_dim")?,
        hidden_dim: cur.u32("hidden_dim")?,
        hidden_layers: cur.u32("hidden_layers")?,
        output_dim: cur.u32("output_dim")?,
        omega0: cur.f64("omega0")?,
    };
    config
        .validate()
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let trainable = match cur.u32("tau flag")? {
        0 => false,
        1 => true,
        v => return Err(Error::CorruptCheckpoint(format!("temperature flag {v}"))),
    };
    let count = cur.u32("tensor count")?;
    let expected = 2 * (config.hidden_layers + 1) + 3;
    if count != expected {
        return Err(Error::CorruptCheckpoint(format!("{count} tensors, expected {expected}")));
    }
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let rows = cur.u32("tensor rows")?;
        let cols = cur.u32("tensor cols")?;
        let len = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor {i} is {rows}x{cols}")))?;
        let raw = cur.take(len * 8, "tensor values")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptCheckpoint(format!("tensor {i} holds NaN or Inf")));
        }
        tensors.push(Tensor2::from_vec(rows, cols, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    let log_tau = tensors.pop().expect("count checked").item()?;
    let bias = tensors.pop().expect("count checked");
    let weight = tensors.pop().expect("count checked");
    let encoder = LocationEncoder::from_params(l_max, config, tensors)?;
    let projection = ImageProjection::new(weight, bias)?;
    if projection.embed_dim() != encoder.output_dim() {
        return Err(Error::shape(
            "load_checkpoint",
            format!("projection outputs {} dims, encoder {}", projection.embed_dim(), encoder.output_dim()),
        ));
    }
    let temperature = Temperature { log_tau, trainable };
    temperature.check()?;
    Ok(ClipModel {
        encoder,
        projection,
        temperature,
    })
}

/// JSON sidecar written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub seed: u64,
    pub l_max: usize,
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub parameter_count: usize,
    pub config: PretrainConfig,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub val_batch_size: usize,
    pub train_points: usize,
    pub val_points: usize,
}

impl CheckpointMeta {
    pub fn new(cfg: &PretrainConfig, outcome: &PretrainOutcome) -> Self {
        let m = &outcome.model;
        Self {
            format: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            seed: cfg.seed,
            l_max: cfg.l_max,
            embed_dim: cfg.embed_dim,
            feature_dim: m.projection.feature_dim(),
            parameter_count: m.encoder.parameter_count() + m.projection.weight.len() + m.projection.bias.len() + 1,
            config: cfg.clone(),
            epochs_run: outcome.log.epochs.len(),
            best_epoch: outcome.best_epoch,
            best_val_loss: outcome.log.min_val_loss().map(|(_, v)| v),
            val_batch_size: outcome.val_batch_size,
            train_points: outcome.split.train.len(),
            val_points: outcome.split.val.len(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_world, SyntheticWorldSpec};

    fn tiny_cfg() -> PretrainConfig {
        PretrainConfig {
            l_max: 3,
            embed_dim: 8,
            hidden_dim: 16,
            batch_size: 16,
            epochs: 3,
            lr: 1e-3,
            seed: 5,
            ..PretrainConfig::default()
        }
    }

    fn tiny_world(n: usize) -> PairDataset {
        let spec = SyntheticWorldSpec {
            seed: 1,
            bump_count: 4,
            feature_dim: 6,
            ..Default::default()
        };
        generate_world(&spec, n).unwrap().0
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let pairs = tiny_world(80);
        let cfg = PretrainConfig { lr: 0.0, ..tiny_cfg() };
        let out = pretrain(&pairs, &cfg).unwrap();
        assert_eq!(out.model, ClipModel::init(&cfg, 6).unwrap());
        let v: Vec<f64> = out.log.epochs.iter().map(|r| r.val_loss).collect();
        assert!(v.iter().all(|x| *x == v[0]));
    }

    #[test]
    fn deterministic_log_and_selection() {
        let pairs = tiny_world(80);
        let a = pretrain(&pairs, &tiny_cfg()).unwrap();
        let b = pretrain(&pairs, &tiny_cfg()).unwrap();
        assert_eq!(a.model, b.model);
        let strip = |l: &TrainingLog| l.epochs.iter().map(|r| (r.epoch, r.train_loss, r.val_loss, r.tau)).collect::<Vec<_>>();
        assert_eq!(strip(&a.log), strip(&b.log));
        assert_eq!(a.log.epochs.len(), 3);
        let (epoch, min) = a.log.min_val_loss().unwrap();
        assert_eq!(Some(epoch), a.best_epoch);
        let again = evaluate(&a.model, &pairs, &a.split.val, a.val_batch_size).unwrap();
        assert_eq!(again.loss, min);
    }

    #[test]
    fn tiny_world_beats_uniform_baseline() {
        let spec = SyntheticWorldSpec { seed: 2, bump_count: 8, feature_dim: 8, ..Default::default() };
        let pairs = generate_world(&spec, 200).unwrap().0;
        let cfg = PretrainConfig {
            l_max: 5,
            embed_dim: 16,
            hidden_dim: 64,
            batch_size: 32,
            epochs: 50,
            lr: 1e-3,
            seed: 3,
            ..PretrainConfig::default()
        };
        let out = pretrain(&pairs, &cfg).unwrap();
        let last = out.log.epochs.last().unwrap();
        assert!(last.train_loss < (32f64).ln(), "{last:?}");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let pairs = tiny_world(40);
        let cfg = PretrainConfig { epochs: 0, ..tiny_cfg() };
        let out = pretrain(&pairs, &cfg).unwrap();
        assert!(out.log.epochs.is_empty());
        assert_eq!(out.best_epoch, None);
        assert_eq!(out.model, ClipModel::init(&cfg, 6).unwrap());
    }

    #[test]
    fn too_small_dataset_rejected() {
        let pairs = tiny_world(12);
        assert!(matches!(pretrain(&pairs, &tiny_cfg()), Err(Error::Config(_))));
        let bad = PretrainConfig { batch_size: 1, ..tiny_cfg() };
        assert!(pretrain(&tiny_world(80), &bad).is_err());
    }

    #[test]
    fn fixed_temperature_is_untouched() {
        let pairs = tiny_world(80);
        let cfg = PretrainConfig { tau_trainable: false, tau_init: 0.1, ..tiny_cfg() };
        let out = pretrain(&pairs, &cfg).unwrap();
        assert_eq!(out.model.temperature.log_tau.to_bits(), 0.1f64.ln().to_bits());
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = ClipModel::init(&tiny_cfg(), 6).unwrap();
        save_checkpoint(&path, &model).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);
        let coords = [GeoCoordinate::new(3.0, 4.0).unwrap(), GeoCoordinate::new(3.0, 4.0).unwrap()];
        let e1 = model.embed(&coords).unwrap();
        let e2 = back.embed(&coords).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.row(0), e1.row(1));

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::TruncatedCheckpoint(_)), "{err}");
        assert!(err.to_string().contains("truncated checkpoint"));

        let mut wrong = bytes.clone();
        wrong[4] = b'9';
        std::fs::write(&path, &wrong).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CheckpointVersion(_))));
        std::fs::write(&path, b"xy").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CheckpointVersion(_))));

        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&path, &nan).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));

        let mut extra = bytes;
        extra.push(0);
        std::fs::write(&path, &extra).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn log_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let log = TrainingLog {
            epochs: vec![
                EpochRecord { epoch: 1, train_loss: 2.5, val_loss: 2.25, tau: 0.07, seconds: 0.125 },
                EpochRecord { epoch: 2, train_loss: 1.0 / 3.0, val_loss: 2.0, tau: 0.0699, seconds: 0.5 },
            ],
        };
        log.write_csv(&path).unwrap();
        assert_eq!(TrainingLog::read_csv(&path).unwrap(), log);
        assert_eq!(log.min_val_loss(), Some((2, 2.0)));
    }
}
