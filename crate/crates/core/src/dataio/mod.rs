//! Datasets, the synthetic world, splitting, and coordinate jitter.

mod files;
mod split;
mod world;

pub(crate) use files::read_table;
pub use files::{
    read_coords, read_embeddings, read_labels, read_pairs, write_coords, write_embeddings, write_labels,
    write_pairs,
};
pub use split::{split, SplitIndices, SplitSpec};
pub use world::{generate_world, SyntheticWorld, SyntheticWorldSpec};
#[cfg(test)]
pub(crate) use world::sample_sphere;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::sphere::{normalize_lon, GeoCoordinate};

/// Coordinate-aligned precomputed image features.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    coords: Vec<GeoCoordinate>,
    features: Tensor2,
}

impl PairDataset {
    pub fn new(coords: Vec<GeoCoordinate>, features: Tensor2) -> Result<Self> {
        if coords.len() != features.rows() {
            return Err(Error::shape(
                "PairDataset",
                format!("{} coordinates for {} feature rows", coords.len(), features.rows()),
            ));
        }
        if coords.len() < 2 {
            return Err(Error::Degenerate(format!(
                "a pair dataset needs at least 2 records, got {}",
                coords.len()
            )));
        }
        if features.cols() == 0 {
            return Err(Error::Degenerate("image features are empty".into()));
        }
        if !features.all_finite() {
            return Err(Error::NonFinite("image features contain NaN or Inf".into()));
        }
        Ok(Self { coords, features })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn coords(&self) -> &[GeoCoordinate] {
        &self.coords
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Vec<f64>),
    Classification { labels: Vec<usize>, class_count: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(v) => v.len(),
            Targets::Classification { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            Targets::Regression(_) => TaskKind::Regression,
            Targets::Classification { .. } => TaskKind::Classification,
        }
    }

    pub fn gather(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(v) => Targets::Regression(idx.iter().map(|&i| v[i]).collect()),
            Targets::Classification { labels, class_count } => Targets::Classification {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                class_count: *class_count,
            },
        }
    }
}

/// Coordinates with a downstream target and optional extra feature columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    coords: Vec<GeoCoordinate>,
    targets: Targets,
    extra: Option<Tensor2>,
}

impl LabeledDataset {
    pub fn new(coords: Vec<GeoCoordinate>, targets: Targets, extra: Option<Tensor2>) -> Result<Self> {
        if coords.len() != targets.len() {
            return Err(Error::shape(
                "LabeledDataset",
                format!("{} coordinates for {} targets", coords.len(), targets.len()),
            ));
        }
        match &targets {
            Targets::Regression(v) => {
                if let Some(i) = v.iter().position(|t| !t.is_finite()) {
                    return Err(Error::NonFinite(format!("target {i} is not finite")));
                }
            }
            Targets::Classification { labels, class_count } => {
                if let Some(i) = labels.iter().position(|&c| c >= *class_count) {
                    return Err(Error::Domain(format!(
                        "label {} at record {i} outside [0, {class_count})",
                        labels[i]
                    )));
                }
            }
        }
        if let Some(x) = &extra {
            if x.rows() != coords.len() {
                return Err(Error::shape(
                    "LabeledDataset",
                    format!("{} extra feature rows for {} records", x.rows(), coords.len()),
                ));
            }
            if !x.all_finite() {
                return Err(Error::NonFinite("extra features contain NaN or Inf".into()));
            }
        }
        Ok(Self { coords, targets, extra })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[GeoCoordinate] {
        &self.coords
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn extra(&self) -> Option<&Tensor2> {
        self.extra.as_ref()
    }

    pub fn kind(&self) -> TaskKind {
        self.targets.kind()
    }
}

/// Half-width of the jitter box in degrees of latitude (about 1 km).
pub const JITTER_DEGREES: f64 = 0.009;

/// Random shift of up to about 1 km; see [`jitter_with_width`].
pub fn jitter(c: &GeoCoordinate, rng: &mut impl Rng) -> GeoCoordinate {
    jitter_with_width(c, JITTER_DEGREES, rng)
}

/// Shifts latitude by `U(-w, w)` degrees and longitude by
/// `U(-w, w) / max(cos lat, 0.1)`, then clamps latitude and wraps longitude.
pub fn jitter_with_width(c: &GeoCoordinate, width_deg: f64, rng: &mut impl Rng) -> GeoCoordinate {
    let dlat = width_deg * rng.random_range(-1.0..1.0);
    let dlon = width_deg * rng.random_range(-1.0..1.0) / c.lat().to_radians().cos().max(0.1);
    let lat = (c.lat() + dlat).clamp(-90.0, 90.0);
    let lon = normalize_lon(c.lon() + dlon);
    GeoCoordinate::new(lon, lat).expect("clamped coordinate is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    const EARTH_RADIUS_KM: f64 = 6371.0;

    fn haversine_km(a: &GeoCoordinate, b: &GeoCoordinate) -> f64 {
        let (p1, p2) = (a.lat().to_radians(), b.lat().to_radians());
        let dp = p2 - p1;
        let dl = (b.lon() - a.lon()).to_radians();
        let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
    }

    #[test]
    fn zero_width_jitter_is_identity() {
        let mut r = rng::stream(0, "t");
        let c = GeoCoordinate::new(-179.99, 45.0).unwrap();
        assert_eq!(jitter_with_width(&c, 0.0, &mut r), c);
    }

    #[test]
    fn equator_jitter_within_box_diagonal() {
        let mut r = rng::stream(1, "t");
        let c = GeoCoordinate::new(12.0, 0.0).unwrap();
        let max = (0..10_000)
            .map(|_| haversine_km(&c, &jitter(&c, &mut r)))
            .fold(0.0, f64::max);
        assert!(max <= 1.42, "{max}");
        assert!(max > 1.2, "{max}");
    }

    #[test]
    fn jitter_clamps_near_pole() {
        let mut r = rng::stream(2, "t");
        let c = GeoCoordinate::new(0.0, 89.9999).unwrap();
        for _ in 0..1000 {
            assert!(jitter(&c, &mut r).lat() <= 90.0);
        }
    }

    #[test]
    fn jitter_bounded_up_to_85_degrees() {
        let mut r = rng::stream(3, "t");
        for i in 0..100_000 {
            let lat = -85.0 + 170.0 * (i as f64 / 99_999.0);
            let c = GeoCoordinate::new(-180.0 + (i % 360) as f64, lat).unwrap();
            let d = haversine_km(&c, &jitter(&c, &mut r));
            assert!(d <= 1.5, "lat {lat}: {d} km");
        }
    }

    #[test]
    fn dataset_invariants() {
        let c = GeoCoordinate::new(0.0, 0.0).unwrap();
        assert!(PairDataset::new(vec![c], Tensor2::zeros(1, 2)).is_err());
        assert!(PairDataset::new(vec![c, c], Tensor2::zeros(3, 2)).is_err());
        assert!(PairDataset::new(vec![c, c], Tensor2::filled(2, 2, f64::NAN)).is_err());
        assert!(PairDataset::new(vec![c, c], Tensor2::zeros(2, 2)).is_ok());
        let bad = Targets::Classification { labels: vec![0, 3], class_count: 3 };
        assert!(LabeledDataset::new(vec![c, c], bad, None).is_err());
        let nan = Targets::Regression(vec![0.0, f64::NAN]);
        assert!(LabeledDataset::new(vec![c, c], nan, None).is_err());
    }
}
