//! Geographic coordinates and the real spherical-harmonics positional
//! encoding.
//!
//! Conventions: colatitude `theta = pi/2 - lat`, azimuth `phi = lon mod 360`
//! in radians. Associated Legendre functions are fully normalized (real SH
//! built from them are orthonormal on the unit sphere) and carry the
//! Condon-Shortley phase `(-1)^m`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2;

/// A point on the sphere in degrees. Longitude is kept in `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoordinate {
    lon: f64,
    lat: f64,
}

/// Wraps a finite longitude into `[-180, 180)`.
pub fn normalize_lon(lon: f64) -> f64 {
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

impl GeoCoordinate {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() || !lat.is_finite() {
            return Err(Error::Domain(format!(
                "coordinate ({lon}, {lat}) is not finite"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Domain(format!("latitude {lat} outside [-90, 90]")));
        }
        Ok(Self {
            lon: normalize_lon(lon),
            lat,
        })
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    /// Colatitude and azimuth in radians.
    pub fn to_spherical(&self) -> (f64, f64) {
        let theta = PI / 2.0 - self.lat.to_radians();
        let phi = self.lon.rem_euclid(360.0).to_radians();
        // rem_euclid of a tiny negative longitude can land on 360 exactly
        let phi = if phi >= 2.0 * PI { 0.0 } else { phi };
        (theta.clamp(0.0, PI), phi)
    }

    /// Unit vector in Earth-centred Cartesian coordinates.
    pub fn to_unit_vector(&self) -> [f64; 3] {
        let (lat, lon) = (self.lat.to_radians(), self.lon.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    }

    /// Great-circle angle to `other` in radians.
    pub fn angular_distance(&self, other: &GeoCoordinate) -> f64 {
        let (a, b) = (self.to_unit_vector(), other.to_unit_vector());
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        sin.atan2(cos)
    }
}

/// Flat index of `(l, m)` in the degree-major, order `-l..=l` layout.
pub fn sh_index(l: usize, m: i64) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= l);
    ((l * l + l) as i64 + m) as usize
}

/// Fully normalized associated Legendre function of degree `l`, order `m`.
pub fn normalized_assoc_legendre(l: usize, m: usize, x: f64) -> Result<f64> {
    if m > l {
        return Err(Error::Domain(format!("order {m} exceeds degree {l}")));
    }
    if !(x.abs() <= 1.0) {
        return Err(Error::Domain(format!("argument {x} outside [-1, 1]")));
    }
    let table = LegendreTable::new(l + 1, x);
    Ok(table.get(l, m))
}

/// All `N_l^m(x)` for `l < degrees`, `0 <= m <= l`, stored triangularly.
struct LegendreTable {
    values: Vec<f64>,
}

impl LegendreTable {
    fn offset(l: usize, m: usize) -> usize {
        l * (l + 1) / 2 + m
    }

    fn new(degrees: usize, x: f64) -> Self {
        let mut values = vec![0.0; degrees * (degrees + 1) / 2];
        if degrees == 0 {
            return Self { values };
        }
        let sin_theta = (1.0 - x * x).max(0.0).sqrt();
        let mut diag = 1.0 / (4.0 * PI).sqrt();
        for m in 0..degrees {
            if m > 0 {
                let mf = m as f64;
                diag *= -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * sin_theta;
            }
            values[Self::offset(m, m)] = diag;
            if m + 1 < degrees {
                values[Self::offset(m + 1, m)] = (2.0 * m as f64 + 3.0).sqrt() * x * diag;
            }
            let mf = m as f64;
            for l in (m + 2)..degrees {
                let lf = l as f64;
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0) * (lf - 1.0) - mf * mf)
                    / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                    .sqrt();
                values[Self::offset(l, m)] = a
                    * (x * values[Self::offset(l - 1, m)] - b * values[Self::offset(l - 2, m)]);
            }
        }
        Self { values }
    }

    fn get(&self, l: usize, m: usize) -> f64 {
        self.values[Self::offset(l, m)]
    }
}

/// Real spherical-harmonics feature vector of length `l_max^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShEmbedding {
    l_max: usize,
    values: Vec<f64>,
}

impl ShEmbedding {
    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Entry for degree `l` and signed order `m`.
    pub fn get(&self, l: usize, m: i64) -> f64 {
        self.values[sh_index(l, m)]
    }
}

/// Writes the `l_max^2` basis values for `coord` into `out`.
fn fill_sh(coord: &GeoCoordinate, l_max: usize, out: &mut [f64]) {
    let (theta, phi) = coord.to_spherical();
    let table = LegendreTable::new(l_max, theta.cos());
    let sqrt2 = std::f64::consts::SQRT_2;
    for l in 0..l_max {
        let centre = l * l + l;
        out[centre] = table.get(l, 0);
        for m in 1..=l {
            let n = sqrt2 * table.get(l, m);
            let (s, c) = (m as f64 * phi).sin_cos();
            out[centre + m] = n * c;
            out[centre - m] = n * s;
        }
    }
}

/// Real spherical harmonics of degrees `0..l_max` at `coord`.
pub fn sh_basis(coord: &GeoCoordinate, l_max: usize) -> Result<ShEmbedding> {
    if l_max == 0 {
        return Err(Error::Domain("l_max must be at least 1".into()));
    }
    let mut values = vec![0.0; l_max * l_max];
    fill_sh(coord, l_max, &mut values);
    Ok(ShEmbedding { l_max, values })
}

/// Stacks `sh_basis` for many coordinates into an `n x l_max^2` matrix.
pub fn sh_matrix(coords: &[GeoCoordinate], l_max: usize) -> Result<Tensor2> {
    if l_max == 0 {
        return Err(Error::Domain("l_max must be at least 1".into()));
    }
    let width = l_max * l_max;
    let mut data = vec![0.0; coords.len() * width];
    for (row, c) in data.chunks_exact_mut(width).zip(coords) {
        fill_sh(c, l_max, row);
    }
    Tensor2::from_vec(coords.len(), width, data)
}
