use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{uniform, Graph, Tensor2, Var};
use crate::rng;
use crate::sphere::{sh_matrix, GeoCoordinate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirenConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Number of sine layers.
    pub hidden_layers: usize,
    pub output_dim: usize,
    pub omega0: f64,
}

impl SirenConfig {
    /// Default architecture (2 x 512 sine layers, 256 outputs) for an
    /// `l_max`-degree harmonic input.
    pub fn for_l_max(l_max: usize) -> Self {
        Self {
            input_dim: l_max * l_max,
            hidden_dim: 512,
            hidden_layers: 2,
            output_dim: 256,
            omega0: 30.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.hidden_layers == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!("all Siren dimensions must be >= 1: {self:?}")));
        }
        if !self.omega0.is_finite() || self.omega0 <= 0.0 {
            return Err(Error::Config(format!("omega0 must be positive, got {}", self.omega0)));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, sine layers first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        shapes.push((self.input_dim, self.hidden_dim));
        for _ in 1..self.hidden_layers {
            shapes.push((self.hidden_dim, self.hidden_dim));
        }
        shapes.push((self.hidden_dim, self.output_dim));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Siren over a real spherical-harmonics encoding of the input coordinate.
///
/// Parameters are stored flat as `[W1, b1, W2, b2, ..., W_out, b_out]` with
/// weights `fan_in x fan_out` and biases `1 x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationEncoder {
    l_max: usize,
    config: SirenConfig,
    params: Vec<Tensor2>,
}

impl LocationEncoder {
    /// Siren initialisation: first layer `U(-1/n, 1/n)`, later sine layers
    /// `U(-sqrt(6/n)/omega0, sqrt(6/n)/omega0)`, linear output layer
    /// `U(-sqrt(6/n), sqrt(6/n))`, zero biases.
    pub fn init(l_max: usize, config: SirenConfig, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, "siren-init");
        Self::init_with(l_max, config, &mut rng)
    }

    pub fn init_with(l_max: usize, config: SirenConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if l_max == 0 || config.input_dim != l_max * l_max {
            return Err(Error::Config(format!(
                "input_dim {} does not match l_max {l_max} (expected {})",
                config.input_dim,
                l_max * l_max
            )));
        }
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let mut params = Vec::with_capacity(2 * shapes.len());
        for (i, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            let n = fan_in as f64;
            let limit = if i == 0 {
                1.0 / n
            } else if i < last {
                (6.0 / n).sqrt() / config.omega0
            } else {
                (6.0 / n).sqrt()
            };
            params.push(uniform(rng, fan_in, fan_out, limit));
            params.push(Tensor2::zeros(1, fan_out));
        }
        Ok(Self { l_max, config, params })
    }

    /// Rebuilds an encoder from stored tensors, checking every shape.
    pub fn from_params(l_max: usize, config: SirenConfig, params: Vec<Tensor2>) -> Result<Self> {
        config.validate()?;
        if config.input_dim != l_max * l_max {
            return Err(Error::Config(format!(
                "input_dim {} does not match l_max {l_max}",
                config.input_dim
            )));
        }
        let shapes = config.layer_shapes();
        if params.len() != 2 * shapes.len() {
            return Err(Error::shape(
                "LocationEncoder::from_params",
                format!("{} tensors for {} layers", params.len(), shapes.len()),
            ));
        }
        for (i, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            if params[2 * i].shape() != (fan_in, fan_out) || params[2 * i + 1].shape() != (1, fan_out) {
                return Err(Error::shape(
                    "LocationEncoder::from_params",
                    format!(
                        "layer {i}: weight {:?}, bias {:?}, expected ({fan_in}, {fan_out})",
                        params[2 * i].shape(),
                        params[2 * i + 1].shape()
                    ),
                ));
            }
        }
        Ok(Self { l_max, config, params })
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn config(&self) -> &SirenConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    pub fn params(&self) -> &[Tensor2] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor2] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor2::len).sum()
    }

    fn check_input(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(Error::shape(
                "siren_forward",
                format!("input has {} columns, encoder expects {}", x.cols(), self.config.input_dim),
            ));
        }
        Ok(())
    }

    /// Forward pass on a harmonic feature matrix `N x input_dim`.
    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        self.check_input(x)?;
        let layers = self.params.len() / 2;
        let mut h = x.clone();
        for layer in 0..layers {
            let mut z = h.matmul(&self.params[2 * layer])?;
            let bias = self.params[2 * layer + 1].data();
            let cols = z.cols();
            let sine = layer + 1 < layers;
            for row in z.data_mut().chunks_exact_mut(cols) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v += b;
                    if sine {
                        *v = (self.config.omega0 * *v).sin();
                    }
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Places every parameter on `g`, trainable unless `frozen`.
    pub fn register(&self, g: &mut Graph, frozen: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if frozen { g.constant(p.clone()) } else { g.param(p.clone()) })
            .collect()
    }

    /// Differentiable forward pass using parameter handles from `register`.
    pub fn forward_graph(&self, g: &mut Graph, x: Var, vars: &[Var]) -> Result<Var> {
        self.check_input(g.value(x))?;
        if vars.len() != self.params.len() {
            return Err(Error::shape(
                "siren_forward",
                format!("{} parameter handles for {} tensors", vars.len(), self.params.len()),
            ));
        }
        let layers = vars.len() / 2;
        let mut h = x;
        for layer in 0..layers {
            let z = g.matmul(h, vars[2 * layer])?;
            let z = g.add_row(z, vars[2 * layer + 1])?;
            h = if layer + 1 < layers { g.sin(z, self.config.omega0) } else { z };
        }
        Ok(h)
    }

    /// Raw (unnormalized) embeddings of `coords`, `n x output_dim`.
    pub fn embed(&self, coords: &[GeoCoordinate]) -> Result<Tensor2> {
        const CHUNK: usize = 4096;
        let mut data = Vec::with_capacity(coords.len() * self.output_dim());
        for chunk in coords.chunks(CHUNK) {
            let x = sh_matrix(chunk, self.l_max)?;
            data.extend(self.forward(&x)?.into_data());
        }
        Tensor2::from_vec(coords.len(), self.output_dim(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(l_max: usize) -> SirenConfig {
        SirenConfig {
            input_dim: l_max * l_max,
            hidden_dim: 7,
            hidden_layers: 2,
            output_dim: 5,
            omega0: 30.0,
        }
    }

    /// Straight-line forward pass with explicit loops.
    fn oracle_forward(enc: &LocationEncoder, x: &Tensor2) -> Tensor2 {
        let p = enc.params();
        let layers = p.len() / 2;
        let mut h: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
        for l in 0..layers {
            let (w, b) = (&p[2 * l], &p[2 * l + 1]);
            h = h
                .iter()
                .map(|row| {
                    (0..w.cols())
                        .map(|j| {
                            let mut s = b.get(0, j);
                            for (k, v) in row.iter().enumerate() {
                                s += v * w.get(k, j);
                            }
                            if l + 1 < layers {
                                (enc.config().omega0 * s).sin()
                            } else {
                                s
                            }
                        })
                        .collect()
                })
                .collect();
        }
        Tensor2::from_rows(&h).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = LocationEncoder::init(3, small(3), 11).unwrap();
        let b = LocationEncoder::init(3, small(3), 11).unwrap();
        assert_eq!(a, b);
        for bias in a.params().iter().skip(1).step_by(2) {
            assert!(bias.data().iter().all(|&v| v == 0.0));
        }
        assert_ne!(a, LocationEncoder::init(3, small(3), 12).unwrap());
    }

    #[test]
    fn init_ranges() {
        let enc = LocationEncoder::init(4, small(4), 5).unwrap();
        let p = enc.params();
        assert!(p[0].data().iter().all(|v| v.abs() <= 1.0 / 16.0));
        let inner = (6.0f64 / 7.0).sqrt() / 30.0;
        assert!(p[2].data().iter().all(|v| v.abs() <= inner));
        let outer = (6.0f64 / 7.0).sqrt();
        assert!(p[4].data().iter().all(|v| v.abs() <= outer));
        assert!(p[4].data().iter().any(|v| v.abs() > inner));
    }

    #[test]
    fn default_parameter_count() {
        let cfg = SirenConfig::for_l_max(10);
        assert_eq!(cfg.input_dim, 100);
        let expected = 100 * 512 + 512 + 512 * 512 + 512 + 512 * 256 + 256;
        assert_eq!(expected, 445_696);
        assert_eq!(cfg.parameter_count(), expected);
        let enc = LocationEncoder::init(10, cfg, 0).unwrap();
        assert_eq!(enc.parameter_count(), expected);
    }

    #[test]
    fn zero_encoder_outputs_zero() {
        let cfg = small(2);
        let params = cfg
            .layer_shapes()
            .iter()
            .flat_map(|&(i, o)| [Tensor2::zeros(i, o), Tensor2::zeros(1, o)])
            .collect();
        let enc = LocationEncoder::from_params(2, cfg, params).unwrap();
        let x = Tensor2::filled(3, 4, 0.7);
        assert!(enc.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_rows_give_identical_outputs() {
        let enc = LocationEncoder::init(3, small(3), 2).unwrap();
        let row: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Tensor2::from_rows(&vec![row; 6]).unwrap();
        let y = enc.forward(&x).unwrap();
        for r in 1..6 {
            assert_eq!(y.row(r), y.row(0));
        }
    }

    #[test]
    fn forward_matches_oracle_and_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = LocationEncoder::init_with(3, small(3), &mut rng).unwrap();
        let x = uniform(&mut rng, 8, 9, 1.0);
        let fast = enc.forward(&x).unwrap();
        assert!(fast.max_abs_diff(&oracle_forward(&enc, &x)) < 1e-12);

        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let vars = enc.register(&mut g, false);
        let out = enc.forward_graph(&mut g, xv, &vars).unwrap();
        assert_eq!(g.value(out), &fast);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let enc = LocationEncoder::init(3, small(3), 2).unwrap();
        assert!(enc.forward(&Tensor2::zeros(2, 8)).is_err());
        assert!(LocationEncoder::init(3, small(4), 0).is_err());
        assert!(LocationEncoder::from_params(3, small(3), vec![]).is_err());
    }
}
