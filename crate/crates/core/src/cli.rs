//! The `locenc` command line: data generation, pretraining, embedding
//! export, downstream evaluation and analysis, each leaving a run manifest.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{pca, similarity_map, write_grid, write_pca_ratios, write_pca_scores};
use crate::dataio::{
    generate_world, read_coords, read_embeddings, read_labels, read_pairs, write_embeddings, write_labels,
    write_pairs, SplitSpec, SyntheticWorldSpec,
};
use crate::downstream::{evaluate_task, EvalConfig, Featurizer, SearchSpace};
use crate::error::{Error, Result};
use crate::pretrain::{load_checkpoint, pretrain_with, save_checkpoint, CheckpointMeta, PretrainConfig};
use crate::sphere::GeoCoordinate;

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "LOCENC_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "locenc", version, about = "Spherical-harmonics location encoders: pretraining, evaluation, analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic world into pair and label CSV files.
    GenData(GenDataArgs),
    /// Contrastively pretrain a location encoder on a pairs file.
    Pretrain(PretrainArgs),
    /// Embed coordinates with a pretrained encoder.
    Embed(EmbedArgs),
    /// Evaluate MLP heads on a labels file.
    Downstream(DownstreamArgs),
    /// Similarity maps and PCA of embeddings.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    /// World description (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub n: usize,
    /// Output prefix; writes PREFIX.pairs.csv and PREFIX.labels.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed stored in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long = "L", default_value_t = 10)]
    pub l_max: usize,
    #[arg(long, default_value_t = 256)]
    pub d: usize,
    #[arg(long, default_value_t = 512)]
    pub batch: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path; the log, sidecar and manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub hidden_layers: usize,
    #[arg(long, default_value_t = 30.0)]
    pub omega0: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub wd: f64,
    /// Apply weight decay through the gradient instead of decoupled.
    #[arg(long)]
    pub coupled_wd: bool,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long)]
    pub no_jitter: bool,
    #[arg(long, default_value_t = 0.07)]
    pub tau_init: f64,
    #[arg(long)]
    pub fixed_tau: bool,
    /// Suppress the per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

impl PretrainArgs {
    pub fn config(&self) -> PretrainConfig {
        PretrainConfig {
            l_max: self.l_max,
            embed_dim: self.d,
            hidden_dim: self.hidden_dim,
            hidden_layers: self.hidden_layers,
            omega0: self.omega0,
            batch_size: self.batch,
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.wd,
            decoupled_weight_decay: !self.coupled_wd,
            val_fraction: self.val_fraction,
            seed: self.seed,
            jitter: !self.no_jitter,
            tau_init: self.tau_init,
            tau_trainable: !self.fixed_tau,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// CSV with a `lon,lat` header.
    #[arg(long)]
    pub coords: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// `random` or `holdout:LO,HI[,FEWSHOT]`.
pub fn parse_split(s: &str) -> std::result::Result<SplitSpec, String> {
    if s == "random" {
        return Ok(SplitSpec::default_random());
    }
    let body = s
        .strip_prefix("holdout:")
        .ok_or_else(|| format!("expected `random` or `holdout:lo,hi[,fewshot]`, got {s:?}"))?;
    let parts: Vec<f64> = body
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let spec = match parts[..] {
        [lo, hi] => SplitSpec::holdout(lo, hi, 0.0),
        [lo, hi, f] => SplitSpec::holdout(lo, hi, f),
        _ => return Err(format!("holdout takes 2 or 3 numbers, got {}", parts.len())),
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

/// `LON,LAT`.
pub fn parse_coord(s: &str) -> std::result::Result<GeoCoordinate, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [lon, lat] = parts[..] else {
        return Err(format!("expected LON,LAT, got {s:?}"));
    };
    let lon: f64 = lon.trim().parse().map_err(|e| format!("longitude {lon:?}: {e}"))?;
    let lat: f64 = lat.trim().parse().map_err(|e| format!("latitude {lat:?}: {e}"))?;
    GeoCoordinate::new(lon, lat).map_err(|e| e.to_string())
}

#[derive(Debug, Args, Serialize)]
pub struct DownstreamArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// A checkpoint path, or `identity` for scaled raw coordinates.
    #[arg(long)]
    pub featurizer: String,
    #[arg(long, default_value = "random", value_parser = parse_split)]
    pub split: SplitSpec,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "downstream")]
    pub task: String,
    /// Random-search trial count.
    #[arg(long, default_value_t = 16)]
    pub trials: usize,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    /// Feed identity features unscaled (degrees).
    #[arg(long)]
    pub raw_identity: bool,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Cosine-similarity grid against a reference location.
    Simmap(SimmapArgs),
    /// Principal components of embeddings.
    Pca(PcaArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SimmapArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Reference location as LON,LAT.
    #[arg(long = "ref", value_parser = parse_coord, allow_hyphen_values = true)]
    pub reference: GeoCoordinate,
    /// Cell size in degrees; must divide 360 and 180.
    #[arg(long, default_value_t = 1.0)]
    pub resolution: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PcaArgs {
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Embedding CSV (`lon,lat,e0..`).
    #[arg(long, conflicts_with_all = ["ckpt", "coords"], required_unless_present = "ckpt")]
    pub emb: Option<PathBuf>,
    #[arg(long, requires = "coords")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, requires = "ckpt")]
    pub coords: Option<PathBuf>,
    /// Output prefix; writes PREFIX.ratios.csv and PREFIX.scores.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub args: Value,
    /// Fully materialized configuration used by the run.
    pub resolved: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: String,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

struct Run {
    manifest: RunManifest,
    path: PathBuf,
}

impl Run {
    fn new(subcommand: &str, args: &impl Serialize, seed: Option<u64>, manifest_path: PathBuf) -> Self {
        Self {
            manifest: RunManifest {
                subcommand: subcommand.to_owned(),
                tool_version: env!("CARGO_PKG_VERSION").to_owned(),
                seed,
                args: serde_json::to_value(args).unwrap_or(Value::Null),
                resolved: Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_at: chrono::Utc::now().to_rfc3339(),
                finished_at: String::new(),
                status: String::new(),
                exit_code: 0,
                error: None,
            },
            path: manifest_path,
        }
    }

    fn finish(mut self, result: Result<()>) -> i32 {
        let code = match &result {
            Ok(()) => EXIT_OK,
            Err(e) => exit_code(e),
        };
        self.manifest.finished_at = chrono::Utc::now().to_rfc3339();
        self.manifest.status = if code == EXIT_OK { "ok" } else { "error" }.to_owned();
        self.manifest.exit_code = code;
        if let Err(e) = &result {
            eprintln!("error: {e}");
            self.manifest.error = Some(e.to_string());
        }
        let written = serde_json::to_string_pretty(&self.manifest)
            .map_err(Error::from)
            .and_then(|text| std::fs::write(&self.path, text + "\n").map_err(|e| Error::io(&self.path, e)));
        if let Err(e) = written {
            eprintln!("error: could not write manifest: {e}");
            return if code == EXIT_OK { EXIT_INPUT } else { code };
        }
        code
    }
}

/// Sizes the global worker pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        // A second initialization in the same process is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Runs one parsed invocation and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    init_threads();
    match cli.command {
        Command::GenData(a) => {
            let mut run = Run::new("gen-data", &a, a.seed, with_suffix(&a.out, ".manifest.json"));
            let r = gen_data(&a, &mut run.manifest);
            run.finish(r)
        }
        Command::Pretrain(a) => {
            let mut run = Run::new("pretrain", &a, Some(a.seed), with_suffix(&a.out, ".manifest.json"));
            let r = pretrain_cmd(&a, &mut run.manifest);
            run.finish(r)
        }
        Command::Embed(a) => {
            let mut run = Run::new("embed", &a, None, with_suffix(&a.out, ".manifest.json"));
            let r = embed_cmd(&a, &mut run.manifest);
            run.finish(r)
        }
        Command::Downstream(a) => {
            let mut run = Run::new("downstream", &a, Some(a.seed), with_suffix(&a.out, ".manifest.json"));
            let r = downstream_cmd(&a, &mut run.manifest);
            run.finish(r)
        }
        Command::Analyze(AnalyzeCommand::Simmap(a)) => {
            let mut run = Run::new("analyze simmap", &a, None, with_suffix(&a.out, ".manifest.json"));
            let r = simmap_cmd(&a, &mut run.manifest);
            run.finish(r)
        }
        Command::Analyze(AnalyzeCommand::Pca(a)) => {
            let mut run = Run::new("analyze pca", &a, None, with_suffix(&a.out, ".manifest.json"));
            let r = pca_cmd(&a, &mut run.manifest);
            run.finish(r)
        }
    }
}

fn gen_data(a: &GenDataArgs, m: &mut RunManifest) -> Result<()> {
    m.inputs.push(a.spec.clone());
    let mut spec = SyntheticWorldSpec::from_json_file(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    m.seed = Some(spec.seed);
    let spec = spec.materialize()?;
    m.resolved = json!({ "world": &spec, "n": a.n });
    let (pairs, labels) = generate_world(&spec, a.n)?;
    let pp = with_suffix(&a.out, ".pairs.csv");
    let lp = with_suffix(&a.out, ".labels.csv");
    write_pairs(&pp, &pairs)?;
    m.outputs.push(pp);
    write_labels(&lp, &labels)?;
    m.outputs.push(lp);
    Ok(())
}

fn pretrain_cmd(a: &PretrainArgs, m: &mut RunManifest) -> Result<()> {
    let cfg = a.config();
    m.resolved = serde_json::to_value(&cfg)?;
    m.inputs.push(a.pairs.clone());
    cfg.validate()?;
    let pairs = read_pairs(&a.pairs)?;
    let quiet = a.quiet;
    let epochs = cfg.epochs;
    let outcome = pretrain_with(&pairs, &cfg, |r| {
        if !quiet {
            eprintln!(
                "epoch {}/{epochs}  train {:.6}  val {:.6}  tau {:.5}  {:.2}s",
                r.epoch, r.train_loss, r.val_loss, r.tau, r.seconds
            );
        }
    })?;
    save_checkpoint(&a.out, &outcome.model)?;
    m.outputs.push(a.out.clone());
    let log_path = with_suffix(&a.out, ".log.csv");
    outcome.log.write_csv(&log_path)?;
    m.outputs.push(log_path);
    let meta_path = with_suffix(&a.out, ".json");
    CheckpointMeta::new(&cfg, &outcome).write(&meta_path)?;
    m.outputs.push(meta_path);
    match (outcome.log.epochs.last(), outcome.log.min_val_loss()) {
        (Some(last), Some((epoch, best))) => {
            println!("final val loss {}  best val loss {best} (epoch {epoch})", last.val_loss)
        }
        _ => println!("no epochs run; checkpoint holds the initialization"),
    }
    Ok(())
}

fn embed_cmd(a: &EmbedArgs, m: &mut RunManifest) -> Result<()> {
    m.inputs.extend([a.ckpt.clone(), a.coords.clone()]);
    let model = load_checkpoint(&a.ckpt)?;
    let coords = read_coords(&a.coords)?;
    m.resolved = json!({ "l_max": model.encoder.l_max(), "d": model.encoder.output_dim(), "rows": coords.len() });
    let emb = model.embed(&coords)?;
    write_embeddings(&a.out, &coords, &emb)?;
    m.outputs.push(a.out.clone());
    Ok(())
}

fn downstream_cmd(a: &DownstreamArgs, m: &mut RunManifest) -> Result<()> {
    m.inputs.push(a.labels.clone());
    let featurizer = if a.featurizer == "identity" {
        Featurizer::Identity { scaled: !a.raw_identity }
    } else {
        let path = PathBuf::from(&a.featurizer);
        m.inputs.push(path.clone());
        Featurizer::Embeddings(load_checkpoint(&path)?.encoder)
    };
    let cfg = EvalConfig {
        task: a.task.clone(),
        split: a.split.clone(),
        space: SearchSpace {
            trial_count: a.trials,
            seed: a.seed,
            max_epochs: a.max_epochs,
            patience: a.patience,
            ..SearchSpace::default()
        },
        repeat_count: a.repeats,
        seed: a.seed,
    };
    m.resolved = json!({ "featurizer": featurizer.name(), "eval": &cfg });
    let task = read_labels(&a.labels)?;
    let report = evaluate_task(&task, &featurizer, &cfg)?;
    report.write_json(&a.out)?;
    m.outputs.push(a.out.clone());
    println!("{} {:?}: {} ± {} over {} runs", report.task, report.metric, report.mean, report.std, report.repeat_count);
    Ok(())
}

fn simmap_cmd(a: &SimmapArgs, m: &mut RunManifest) -> Result<()> {
    m.inputs.push(a.ckpt.clone());
    m.resolved = json!({ "ref_lon": a.reference.lon(), "ref_lat": a.reference.lat(), "resolution": a.resolution });
    let model = load_checkpoint(&a.ckpt)?;
    let grid = similarity_map(&model.encoder, &a.reference, a.resolution)?;
    write_grid(&a.out, &grid)?;
    m.outputs.push(a.out.clone());
    Ok(())
}

fn pca_cmd(a: &PcaArgs, m: &mut RunManifest) -> Result<()> {
    let (coords, emb) = match (&a.emb, &a.ckpt, &a.coords) {
        (Some(path), _, _) => {
            m.inputs.push(path.clone());
            read_embeddings(path)?
        }
        (None, Some(ckpt), Some(coords)) => {
            m.inputs.extend([ckpt.clone(), coords.clone()]);
            let model = load_checkpoint(ckpt)?;
            let coords = read_coords(coords)?;
            let emb = model.embed(&coords)?;
            (coords, emb)
        }
        _ => return Err(Error::Config("pca needs --emb or both --ckpt and --coords".into())),
    };
    m.resolved = json!({ "k": a.k, "rows": emb.rows(), "d": emb.cols() });
    let result = pca(&emb, a.k)?;
    let rp = with_suffix(&a.out, ".ratios.csv");
    let sp = with_suffix(&a.out, ".scores.csv");
    write_pca_ratios(&rp, &result)?;
    m.outputs.push(rp);
    write_pca_scores(&sp, &coords, &result)?;
    m.outputs.push(sp);
    Ok(())
}
