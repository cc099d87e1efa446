//! Synthetic world: Gaussian bumps on the sphere drive both the image
//! features and a regression target, so every stage of the pipeline has a
//! known ground truth.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{LabeledDataset, PairDataset, Targets};
use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::rng;
use crate::sphere::GeoCoordinate;

/// World description. Centers, mixing matrix and readout are drawn from
/// `seed` when absent; [`SyntheticWorldSpec::materialize`] fills them in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticWorldSpec {
    #[serde(default = "default_bump_count")]
    pub bump_count: usize,
    /// `[lon, lat]` in degrees, one per bump.
    #[serde(default)]
    pub centers: Option<Vec<[f64; 2]>>,
    /// Bump width in radians of great-circle angle.
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// `bump_count x feature_dim`.
    #[serde(default)]
    pub mixing: Option<Vec<Vec<f64>>>,
    /// Unit-norm weights over bump activations defining the target.
    #[serde(default)]
    pub readout: Option<Vec<f64>>,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_bump_count() -> usize {
    16
}
fn default_width() -> f64 {
    0.3
}
fn default_feature_dim() -> usize {
    32
}
fn default_noise() -> f64 {
    0.05
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        Self {
            bump_count: default_bump_count(),
            centers: None,
            width: default_width(),
            feature_dim: default_feature_dim(),
            mixing: None,
            readout: None,
            noise_sigma: default_noise(),
            seed: 0,
        }
    }
}

/// Uniform point on the sphere (uniform in area, not in lat/lon).
pub(crate) fn sample_sphere(rng: &mut impl Rng) -> GeoCoordinate {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let lon: f64 = rng.random_range(-180.0..180.0);
    GeoCoordinate::new(lon, z.asin().to_degrees()).expect("sampled coordinate is valid")
}

/// Rows are linearly independent (Gram-Schmidt residuals stay non-negligible).
fn full_row_rank(rows: &[Vec<f64>]) -> bool {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let scale = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = r.clone();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n > 1e-8 * scale.max(1e-300)) {
            return false;
        }
        basis.push(v.into_iter().map(|x| x / n).collect());
    }
    true
}

impl SyntheticWorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bump_count == 0 || self.feature_dim == 0 {
            return Err(Error::Config("bump_count and feature_dim must be >= 1".into()));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::Config(format!("bump width must be > 0, got {}", self.width)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if self.bump_count > self.feature_dim {
            return Err(Error::Config(format!(
                "mixing matrix {}x{} cannot have full row rank",
                self.bump_count, self.feature_dim
            )));
        }
        if let Some(c) = &self.centers {
            if c.len() != self.bump_count {
                return Err(Error::Config(format!("{} centers for {} bumps", c.len(), self.bump_count)));
            }
            for [lon, lat] in c {
                GeoCoordinate::new(*lon, *lat)?;
            }
        }
        if let Some(m) = &self.mixing {
            if m.len() != self.bump_count || m.iter().any(|r| r.len() != self.feature_dim) {
                return Err(Error::Config(format!(
                    "mixing matrix must be {}x{}",
                    self.bump_count, self.feature_dim
                )));
            }
            if m.iter().flatten().any(|v| !v.is_finite()) || !full_row_rank(m) {
                return Err(Error::Config("mixing matrix must be finite with full row rank".into()));
            }
        }
        if let Some(r) = &self.readout {
            if r.len() != self.bump_count {
                return Err(Error::Config(format!("readout has {} weights for {} bumps", r.len(), self.bump_count)));
            }
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() < 1e-9) {
                return Err(Error::Config(format!("readout must have unit norm, got {norm}")));
            }
        }
        Ok(())
    }

    /// Copy with centers, mixing and readout drawn from the seed if absent.
    pub fn materialize(&self) -> Result<Self> {
        self.validate()?;
        let mut out = self.clone();
        if out.centers.is_none() {
            let mut r = rng::stream(self.seed, "world-centers");
            out.centers = Some(
                (0..self.bump_count)
                    .map(|_| {
                        let c = sample_sphere(&mut r);
                        [c.lon(), c.lat()]
                    })
                    .collect(),
            );
        }
        if out.mixing.is_none() {
            let mut r = rng::stream(self.seed, "world-mixing");
            let scale = 1.0 / (self.bump_count as f64).sqrt();
            out.mixing = Some(loop {
                let m: Vec<Vec<f64>> = (0..self.bump_count)
                    .map(|_| {
                        (0..self.feature_dim)
                            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut r))
                            .collect::<Vec<f64>>()
                    })
                    .collect();
                if full_row_rank(&m) {
                    break m;
                }
            });
        }
        if out.readout.is_none() {
            let mut r = rng::stream(self.seed, "world-readout");
            let w: Vec<f64> = (0..self.bump_count).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            out.readout = Some(w.into_iter().map(|v| v / norm).collect());
        }
        Ok(out)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// A materialized world ready to evaluate at arbitrary coordinates.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    spec: SyntheticWorldSpec,
    centers: Vec<GeoCoordinate>,
    mixing: Tensor2,
    readout: Vec<f64>,
}

impl SyntheticWorld {
    pub fn new(spec: &SyntheticWorldSpec) -> Result<Self> {
        let spec = spec.materialize()?;
        let centers = spec
            .centers
            .as_ref()
            .expect("materialized")
            .iter()
            .map(|[lon, lat]| GeoCoordinate::new(*lon, *lat))
            .collect::<Result<Vec<_>>>()?;
        let mixing = Tensor2::from_rows(spec.mixing.as_ref().expect("materialized"))?;
        let readout = spec.readout.clone().expect("materialized");
        Ok(Self {
            spec,
            centers,
            mixing,
            readout,
        })
    }

    pub fn spec(&self) -> &SyntheticWorldSpec {
        &self.spec
    }

    pub fn centers(&self) -> &[GeoCoordinate] {
        &self.centers
    }

    pub fn mixing(&self) -> &Tensor2 {
        &self.mixing
    }

    pub fn readout(&self) -> &[f64] {
        &self.readout
    }

    /// Bump activations `exp(-d^2 / (2 w^2))`, one row per coordinate.
    pub fn activations(&self, coords: &[GeoCoordinate]) -> Tensor2 {
        let w2 = 2.0 * self.spec.width * self.spec.width;
        let mut a = Tensor2::zeros(coords.len(), self.centers.len());
        for (i, c) in coords.iter().enumerate() {
            for (j, center) in self.centers.iter().enumerate() {
                let d = c.angular_distance(center);
                a.set(i, j, (-d * d / w2).exp());
            }
        }
        a
    }

    /// Noiseless image features `a * Mixing`.
    pub fn clean_features(&self, coords: &[GeoCoordinate]) -> Tensor2 {
        self.activations(coords)
            .matmul(&self.mixing)
            .expect("mixing rows match bump count")
    }

    pub fn targets(&self, coords: &[GeoCoordinate]) -> Vec<f64> {
        let a = self.activations(coords);
        (0..a.rows())
            .map(|i| a.row(i).iter().zip(&self.readout).map(|(x, w)| x * w).sum())
            .collect()
    }

    /// Samples `n` area-uniform points with their features and targets.
    pub fn sample(&self, n: usize) -> Result<(PairDataset, LabeledDataset)> {
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 points, got {n}")));
        }
        let mut r = rng::stream(self.spec.seed, "world-points");
        let coords: Vec<GeoCoordinate> = (0..n).map(|_| sample_sphere(&mut r)).collect();
        let mut features = self.clean_features(&coords);
        if self.spec.noise_sigma > 0.0 {
            let mut nr = rng::stream(self.spec.seed, "world-noise");
            for v in features.data_mut() {
                let e: f64 = StandardNormal.sample(&mut nr);
                *v += self.spec.noise_sigma * e;
            }
        }
        let targets = self.targets(&coords);
        Ok((
            PairDataset::new(coords.clone(), features)?,
            LabeledDataset::new(coords, Targets::Regression(targets), None)?,
        ))
    }
}

/// Builds the world described by `spec` and samples `n_points` from it.
pub fn generate_world(spec: &SyntheticWorldSpec, n_points: usize) -> Result<(PairDataset, LabeledDataset)> {
    SyntheticWorld::new(spec)?.sample(n_points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let spec = SyntheticWorldSpec { seed: 3, ..Default::default() };
        let a = generate_world(&spec, 50).unwrap();
        let b = generate_world(&spec, 50).unwrap();
        assert_eq!(a, b);
        let c = generate_world(&SyntheticWorldSpec { seed: 4, ..spec }, 50).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn narrow_bump_recovers_mixing_row() {
        let spec = SyntheticWorldSpec {
            width: 1e-3,
            noise_sigma: 0.0,
            seed: 9,
            ..Default::default()
        };
        let world = SyntheticWorld::new(&spec).unwrap();
        let f = world.clean_features(&world.centers()[5..6]);
        assert!(f.row(0).iter().zip(world.mixing().row(5)).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn sphere_sampling_is_area_uniform() {
        let spec = SyntheticWorldSpec { seed: 21, ..Default::default() };
        let (pairs, _) = generate_world(&spec, 100_000).unwrap();
        let polar = pairs.coords().iter().filter(|c| c.lat().abs() > 60.0).count() as f64 / 1e5;
        let cap = 1.0 - 60f64.to_radians().sin();
        assert!((polar - cap).abs() < 0.01, "{polar} vs {cap}");
    }

    #[test]
    fn targets_are_linear_in_activations() {
        let spec = SyntheticWorldSpec { seed: 2, ..Default::default() };
        let world = SyntheticWorld::new(&spec).unwrap();
        let norm: f64 = world.readout().iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        let (_, labels) = world.sample(20).unwrap();
        let a = world.activations(labels.coords());
        let Targets::Regression(t) = labels.targets() else { panic!() };
        for i in 0..20 {
            let s: f64 = a.row(i).iter().zip(world.readout()).map(|(x, w)| x * w).sum();
            assert_eq!(s, t[i]);
        }
    }

    #[test]
    fn features_are_spatially_smooth() {
        let spec = SyntheticWorldSpec { seed: 5, ..Default::default() };
        let world = SyntheticWorld::new(&spec).unwrap();
        let mut r = rng::stream(5, "smooth-test");
        let (mut near, mut far) = (0.0, 0.0);
        let trials = 2000;
        for _ in 0..trials {
            let a = sample_sphere(&mut r);
            // neighbour at an angular distance below width / 4
            let step = (spec.width / 4.0).to_degrees() * 0.9;
            let b = GeoCoordinate::new(a.lon(), (a.lat() + step).min(90.0)).unwrap();
            let c = sample_sphere(&mut r);
            let f = world.clean_features(&[a, b, c]);
            let dist = |i: usize, j: usize| -> f64 {
                f.row(i).iter().zip(f.row(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            };
            near += dist(0, 1);
            far += dist(0, 2);
        }
        assert!(far > 2.0 * near, "near {near} far {far}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = |s: SyntheticWorldSpec| assert!(generate_world(&s, 10).is_err());
        bad(SyntheticWorldSpec { width: 0.0, ..Default::default() });
        bad(SyntheticWorldSpec { bump_count: 40, ..Default::default() });
        bad(SyntheticWorldSpec { centers: Some(vec![[0.0, 0.0]]), ..Default::default() });
        bad(SyntheticWorldSpec {
            bump_count: 2,
            feature_dim: 2,
            mixing: Some(vec![vec![1.0, 2.0], vec![2.0, 4.0]]),
            ..Default::default()
        });
        bad(SyntheticWorldSpec {
            bump_count: 2,
            feature_dim: 2,
            readout: Some(vec![1.0, 1.0]),
            ..Default::default()
        });
        assert!(generate_world(&SyntheticWorldSpec::default(), 1).is_err());
    }

    #[test]
    fn json_round_trip_of_materialized_spec() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("world.json");
        let spec = SyntheticWorldSpec { seed: 77, ..Default::default() }.materialize().unwrap();
        spec.to_json_file(&path).unwrap();
        assert_eq!(SyntheticWorldSpec::from_json_file(&path).unwrap(), spec);
    }
}
