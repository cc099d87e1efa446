//! Symmetric contrastive objective between location and image embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{uniform, Graph, Tensor2, Var};

pub const TAU_MIN: f64 = 5e-3;
pub const TAU_MAX: f64 = 100.0;
pub const TAU_INIT: f64 = 0.07;

/// `exp(ln(bound))` may land one ulp outside the bound.
fn tau_in_bounds(tau: f64) -> bool {
    (TAU_MIN * (1.0 - 1e-12)..=TAU_MAX * (1.0 + 1e-12)).contains(&tau)
}

/// Softmax temperature, stored as `log(tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub log_tau: f64,
    pub trainable: bool,
}

impl Temperature {
    pub fn new(tau: f64, trainable: bool) -> Result<Self> {
        let t = Self {
            log_tau: tau.ln(),
            trainable,
        };
        t.check()?;
        Ok(t)
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn check(&self) -> Result<()> {
        let tau = self.tau();
        if !tau_in_bounds(tau) {
            return Err(Error::Domain(format!(
                "temperature {tau} outside [{TAU_MIN}, {TAU_MAX}]"
            )));
        }
        Ok(())
    }

    /// Pulls `log_tau` back inside the allowed range.
    pub fn clamp(&mut self) {
        self.log_tau = self.log_tau.clamp(TAU_MIN.ln(), TAU_MAX.ln());
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self {
            log_tau: TAU_INIT.ln(),
            trainable: true,
        }
    }
}

/// Trainable linear map from precomputed image features into the shared
/// embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageProjection {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

impl ImageProjection {
    /// `U(-1/sqrt(k), 1/sqrt(k))` weights, zero bias.
    pub fn init(feature_dim: usize, embed_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if feature_dim == 0 || embed_dim == 0 {
            return Err(Error::Config("projection dimensions must be >= 1".into()));
        }
        let limit = 1.0 / (feature_dim as f64).sqrt();
        Ok(Self {
            weight: uniform(rng, feature_dim, embed_dim, limit),
            bias: Tensor2::zeros(1, embed_dim),
        })
    }

    pub fn new(weight: Tensor2, bias: Tensor2) -> Result<Self> {
        if bias.shape() != (1, weight.cols()) {
            return Err(Error::shape(
                "ImageProjection::new",
                format!("bias {:?} for weight {:?}", bias.shape(), weight.shape()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.cols()
    }

    /// `feats * W + b`.
    pub fn project(&self, feats: &Tensor2) -> Result<Tensor2> {
        if feats.cols() != self.feature_dim() {
            return Err(Error::shape(
                "project_images",
                format!("features have {} columns, projection expects {}", feats.cols(), self.feature_dim()),
            ));
        }
        let mut out = feats.matmul(&self.weight)?;
        let cols = out.cols();
        for row in out.data_mut().chunks_exact_mut(cols) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn register(&self, g: &mut Graph) -> [Var; 2] {
        [g.param(self.weight.clone()), g.param(self.bias.clone())]
    }

    pub fn forward_graph(&self, g: &mut Graph, feats: Var, vars: [Var; 2]) -> Result<Var> {
        if g.value(feats).cols() != self.feature_dim() {
            return Err(Error::shape(
                "project_images",
                format!("features have {} columns, projection expects {}", g.value(feats).cols(), self.feature_dim()),
            ));
        }
        let z = g.matmul(feats, vars[0])?;
        g.add_row(z, vars[1])
    }
}

/// Row-aligned location and image embeddings of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    loc: Tensor2,
    img: Tensor2,
}

impl EmbeddingBatch {
    pub fn new(loc: Tensor2, img: Tensor2) -> Result<Self> {
        if loc.shape() != img.shape() || loc.rows() == 0 {
            return Err(Error::shape(
                "EmbeddingBatch",
                format!("loc {:?} vs img {:?}", loc.shape(), img.shape()),
            ));
        }
        Ok(Self { loc, img })
    }

    pub fn loc(&self) -> &Tensor2 {
        &self.loc
    }

    pub fn img(&self) -> &Tensor2 {
        &self.img
    }

    pub fn len(&self) -> usize {
        self.loc.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.loc.rows() == 0
    }

    pub fn swapped(&self) -> Self {
        Self {
            loc: self.img.clone(),
            img: self.loc.clone(),
        }
    }
}

pub fn l2_normalize_rows(x: &Tensor2) -> Result<Tensor2> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let n = g.normalize_rows(v)?;
    Ok(g.value(n).clone())
}

/// Contrastive loss on graph nodes: rows of `loc` and `img` are normalized,
/// their similarity matrix divided by `exp(log_tau)`, and the row-wise and
/// column-wise cross-entropies against the diagonal are averaged.
pub fn clip_loss_graph(g: &mut Graph, loc: Var, img: Var, log_tau: Var) -> Result<Var> {
    let (lv, iv) = (g.value(loc), g.value(img));
    if lv.shape() != iv.shape() {
        return Err(Error::shape(
            "clip_loss",
            format!("loc {:?} vs img {:?}", lv.shape(), iv.shape()),
        ));
    }
    if !lv.all_finite() || !iv.all_finite() {
        return Err(Error::NonFinite("NaN or Inf in embeddings".into()));
    }
    let tau = g.value(log_tau).item()?.exp();
    if !tau_in_bounds(tau) {
        return Err(Error::Domain(format!(
            "temperature {tau} outside [{TAU_MIN}, {TAU_MAX}]"
        )));
    }
    let nl = g.normalize_rows(loc)?;
    let ni = g.normalize_rows(img)?;
    let sim = g.matmul_nt(nl, ni)?;
    let logits = g.div_exp(sim, log_tau)?;
    g.diag_xent(logits)
}

pub fn clip_loss(batch: &EmbeddingBatch, tau: &Temperature) -> Result<f64> {
    let mut g = Graph::new();
    let loc = g.constant(batch.loc.clone());
    let img = g.constant(batch.img.clone());
    let t = g.constant(Tensor2::scalar(tau.log_tau));
    let loss = clip_loss_graph(&mut g, loc, img, t)?;
    g.value(loss).item()
}

/// Fraction of rows whose most similar image (cosine) is their own pair.
/// Ties resolve to the lowest column index.
pub fn retrieval_accuracy(batch: &EmbeddingBatch) -> Result<f64> {
    let sim = l2_normalize_rows(&batch.loc)?.matmul_nt(&l2_normalize_rows(&batch.img)?)?;
    let hits = (0..sim.rows())
        .filter(|&i| {
            let row = sim.row(i);
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            best.0 == i
        })
        .count();
    Ok(hits as f64 / sim.rows() as f64)
}
