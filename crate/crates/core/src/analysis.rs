//! Embedding diagnostics: cosine-similarity maps and PCA.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::read_table;
use crate::error::{Error, Result};
use crate::nn::{LocationEncoder, Tensor2};
use crate::sphere::GeoCoordinate;

/// Global lon/lat grid of cosine similarities to a reference location.
/// Values are stored row-major, latitude-then-longitude, starting at the
/// south-west cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGrid {
    pub reference: GeoCoordinate,
    pub resolution: f64,
    pub n_lon: usize,
    pub n_lat: usize,
    pub values: Vec<f64>,
}

fn cells_per(span: f64, resolution: f64) -> Option<usize> {
    let n = span / resolution;
    let r = n.round();
    (r >= 1.0 && (n - r).abs() < 1e-9).then_some(r as usize)
}

/// Grid dimensions `(n_lon, n_lat)`; the resolution must tile both 360
/// and 180 degrees.
pub fn grid_shape(resolution: f64) -> Result<(usize, usize)> {
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(Error::Config(format!("grid resolution {resolution} must be positive")));
    }
    match (cells_per(360.0, resolution), cells_per(180.0, resolution)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::Config(format!(
            "grid resolution {resolution} must divide both 360 and 180"
        ))),
    }
}

/// Cell centers in grid order.
pub fn grid_centers(resolution: f64) -> Result<Vec<GeoCoordinate>> {
    let (n_lon, n_lat) = grid_shape(resolution)?;
    let mut out = Vec::with_capacity(n_lon * n_lat);
    for i in 0..n_lat {
        let lat = -90.0 + (i as f64 + 0.5) * resolution;
        for j in 0..n_lon {
            out.push(GeoCoordinate::new(-180.0 + (j as f64 + 0.5) * resolution, lat)?);
        }
    }
    Ok(out)
}

fn cosine_rows(emb: &Tensor2, reference: &[f64]) -> Result<Vec<f64>> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rn = norm(reference);
    if rn == 0.0 {
        return Err(Error::Degenerate("reference embedding has zero norm".into()));
    }
    emb.row_iter()
        .enumerate()
        .map(|(i, row)| {
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::Degenerate(format!("embedding of cell {i} has zero norm")));
            }
            Ok(row.iter().zip(reference).map(|(a, b)| a * b).sum::<f64>() / (n * rn))
        })
        .collect()
}

impl SimilarityGrid {
    /// Cosine similarity of every row of `emb` (in grid order) to `reference_emb`.
    pub fn from_embeddings(
        reference: GeoCoordinate,
        resolution: f64,
        emb: &Tensor2,
        reference_emb: &[f64],
    ) -> Result<Self> {
        let (n_lon, n_lat) = grid_shape(resolution)?;
        if emb.rows() != n_lon * n_lat || emb.cols() != reference_emb.len() {
            return Err(Error::shape(
                "similarity grid",
                format!("{}x{} embeddings for a {n_lat}x{n_lon} grid", emb.rows(), emb.cols()),
            ));
        }
        Ok(Self {
            reference,
            resolution,
            n_lon,
            n_lat,
            values: cosine_rows(emb, reference_emb)?,
        })
    }

    pub fn value(&self, lat_index: usize, lon_index: usize) -> f64 {
        self.values[lat_index * self.n_lon + lon_index]
    }

    pub fn center(&self, lat_index: usize, lon_index: usize) -> GeoCoordinate {
        GeoCoordinate::new(
            -180.0 + (lon_index as f64 + 0.5) * self.resolution,
            -90.0 + (lat_index as f64 + 0.5) * self.resolution,
        )
        .expect("cell centers are valid")
    }

    /// `(center, value)` pairs in grid order.
    pub fn cells(&self) -> impl Iterator<Item = (GeoCoordinate, f64)> + '_ {
        (0..self.values.len()).map(|k| (self.center(k / self.n_lon, k % self.n_lon), self.values[k]))
    }

    /// Unweighted mean over all cells.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Unweighted mean over cells whose centers lie within `radius` radians
    /// of `center`; `None` when no cell qualifies.
    pub fn mean_within(&self, center: &GeoCoordinate, radius: f64) -> Option<f64> {
        let (sum, count) = self
            .cells()
            .filter(|(c, _)| c.angular_distance(center) <= radius)
            .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        (count > 0).then(|| sum / count as f64)
    }
}

/// Cosine similarity between the encoder's embedding of every grid cell
/// center and of `reference`.
pub fn similarity_map(enc: &LocationEncoder, reference: &GeoCoordinate, resolution: f64) -> Result<SimilarityGrid> {
    let centers = grid_centers(resolution)?;
    let chunks: Vec<Tensor2> = centers
        .par_chunks(4096)
        .map(|c| enc.embed(c))
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(centers.len() * enc.output_dim());
    for c in &chunks {
        data.extend_from_slice(c.data());
    }
    let emb = Tensor2::from_vec(centers.len(), enc.output_dim(), data)?;
    let r = enc.embed(std::slice::from_ref(reference))?;
    SimilarityGrid::from_embeddings(*reference, resolution, &emb, r.row(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// `k x d`, one orthonormal principal direction per row.
    pub components: Tensor2,
    /// All `d` covariance eigenvalues, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalue shares over all `d` directions; sums to 1.
    pub explained_variance_ratio: Vec<f64>,
    /// `n x k` scores of the input rows.
    pub projected: Tensor2,
}

impl PcaResult {
    pub fn k(&self) -> usize {
        self.components.rows()
    }

    pub fn transform(&self, x: &Tensor2) -> Result<Tensor2> {
        let mut centered = x.clone();
        if centered.cols() != self.mean.len() {
            return Err(Error::shape("pca transform", format!("{} columns, fitted on {}", x.cols(), self.mean.len())));
        }
        for r in 0..centered.rows() {
            for (v, m) in centered.row_mut(r).iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        centered.matmul_nt(&self.components)
    }

    /// Maps scores back to the input space.
    pub fn reconstruct(&self, scores: &Tensor2) -> Result<Tensor2> {
        let mut out = scores.matmul(&self.components)?;
        for r in 0..out.rows() {
            for (v, m) in out.row_mut(r).iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(out)
    }
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric `d x d` matrix by cyclic Jacobi
/// rotations. Returns `(eigenvalues, eigenvectors as columns)`, unsorted.
pub fn symmetric_eigen(m: &Tensor2) -> Result<(Vec<f64>, Tensor2)> {
    let d = m.rows();
    if m.cols() != d {
        return Err(Error::shape("symmetric_eigen", format!("{}x{} is not square", m.rows(), m.cols())));
    }
    let mut a = m.clone();
    let mut v = Tensor2::identity(d);
    let scale = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += a.get(p, q).powi(2);
            }
        }
        if off.sqrt() <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                a.set(p, p, a.get(p, p) - t * apq);
                a.set(q, q, a.get(q, q) + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..d {
                    if k != p && k != q {
                        let (akp, akq) = (a.get(k, p), a.get(k, q));
                        let np = c * akp - s * akq;
                        let nq = s * akp + c * akq;
                        a.set(k, p, np);
                        a.set(p, k, np);
                        a.set(k, q, nq);
                        a.set(q, k, nq);
                    }
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Ok(((0..d).map(|i| a.get(i, i)).collect(), v))
}

/// Principal components of the rows of `x`, keeping the top `k`.
pub fn pca(x: &Tensor2, k: usize) -> Result<PcaResult> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::Degenerate(format!("PCA needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > d {
        return Err(Error::Config(format!("k = {k} must be in 1..={d}")));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| x.row_iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut centered = x.clone();
    for r in 0..n {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = centered.matmul_tn(&centered)?;
    for v in cov.data_mut() {
        *v /= (n - 1) as f64;
    }
    // Exact symmetry keeps the rotations consistent.
    for p in 0..d {
        for q in p + 1..d {
            let s = 0.5 * (cov.get(p, q) + cov.get(q, p));
            cov.set(p, q, s);
            cov.set(q, p, s);
        }
    }
    let (vals, vecs) = symmetric_eigen(&cov)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| vals[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("data has zero total variance".into()));
    }
    let explained_variance_ratio = eigenvalues.iter().map(|l| l / total).collect();
    let mut components = Tensor2::zeros(k, d);
    for (row, &col) in order.iter().take(k).enumerate() {
        let mut dir: Vec<f64> = (0..d).map(|j| vecs.get(j, col)).collect();
        let pivot = dir
            .iter()
            .enumerate()
            .fold(0, |best, (j, v)| if v.abs() > dir[best].abs() { j } else { best });
        if dir[pivot] < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        components.row_mut(row).copy_from_slice(&dir);
    }
    let projected = centered.matmul_nt(&components)?;
    Ok(PcaResult {
        mean,
        components,
        eigenvalues,
        explained_variance_ratio,
        projected,
    })
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

const GRID_META: &str = "# ref_lon,ref_lat,resolution";

/// Writes the metadata comment `# ref_lon,ref_lat,resolution`, its values
/// as a second comment line, then `lon,lat,similarity` rows.
pub fn write_grid(path: &Path, grid: &SimilarityGrid) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "{GRID_META}").map_err(io)?;
    writeln!(w, "# {},{},{}", grid.reference.lon(), grid.reference.lat(), grid.resolution).map_err(io)?;
    writeln!(w, "lon,lat,similarity").map_err(io)?;
    for (c, v) in grid.cells() {
        writeln!(w, "{},{},{v}", c.lon(), c.lat()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_grid(path: &Path) -> Result<SimilarityGrid> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut next = |n: u64| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| parse_err(path, n, "missing grid metadata"))?
            .map_err(|e| Error::io(path, e))
    };
    if next(1)?.trim() != GRID_META {
        return Err(parse_err(path, 1, format!("expected {GRID_META:?}")));
    }
    let meta = next(2)?;
    let fields: Vec<f64> = meta
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| parse_err(path, 2, "expected a comment line"))?
        .split(',')
        .map(|f| f.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(path, 2, e.to_string()))?;
    let [lon, lat, resolution] = fields[..] else {
        return Err(parse_err(path, 2, "expected three metadata values"));
    };
    let reference = GeoCoordinate::new(lon, lat).map_err(|e| parse_err(path, 2, e.to_string()))?;
    let (n_lon, n_lat) = grid_shape(resolution).map_err(|e| parse_err(path, 2, e.to_string()))?;
    let t = read_table(path)?;
    if t.header != ["lon", "lat", "similarity"] {
        return Err(parse_err(path, 3, "expected header lon,lat,similarity"));
    }
    if t.rows.len() != n_lon * n_lat {
        return Err(parse_err(
            path,
            3,
            format!("{} rows for a {n_lat}x{n_lon} grid", t.rows.len()),
        ));
    }
    let grid = SimilarityGrid {
        reference,
        resolution,
        n_lon,
        n_lat,
        values: t.rows.iter().map(|(_, v)| v[2]).collect(),
    };
    for ((line, v), (c, _)) in t.rows.iter().zip(grid.cells()) {
        if (v[0] - c.lon()).abs() > 1e-9 || (v[1] - c.lat()).abs() > 1e-9 {
            return Err(parse_err(path, *line, "cell out of grid order"));
        }
    }
    Ok(grid)
}

/// `component_index,explained_variance_ratio`, one row per direction,
/// indices starting at 1.
pub fn write_pca_ratios(path: &Path, result: &PcaResult) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "component_index,explained_variance_ratio").map_err(io)?;
    for (i, r) in result.explained_variance_ratio.iter().enumerate() {
        writeln!(w, "{},{r}", i + 1).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_pca_ratios(path: &Path) -> Result<Vec<f64>> {
    let t = read_table(path)?;
    if t.header != ["component_index", "explained_variance_ratio"] {
        return Err(parse_err(path, 1, "expected header component_index,explained_variance_ratio"));
    }
    t.rows
        .iter()
        .enumerate()
        .map(|(i, (line, v))| {
            if v[0] != (i + 1) as f64 {
                return Err(parse_err(path, *line, format!("component index {} out of order", v[0])));
            }
            Ok(v[1])
        })
        .collect()
}

/// `lon,lat,pc1..pck`.
pub fn write_pca_scores(path: &Path, coords: &[GeoCoordinate], result: &PcaResult) -> Result<()> {
    if coords.len() != result.projected.rows() {
        return Err(Error::shape(
            "write_pca_scores",
            format!("{} coordinates for {} score rows", coords.len(), result.projected.rows()),
        ));
    }
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write!(w, "lon,lat").map_err(io)?;
    for j in 1..=result.k() {
        write!(w, ",pc{j}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (c, row) in coords.iter().zip(result.projected.row_iter()) {
        write!(w, "{},{}", c.lon(), c.lat()).map_err(io)?;
        for v in row {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_pca_scores(path: &Path) -> Result<(Vec<GeoCoordinate>, Tensor2)> {
    let t = read_table(path)?;
    let k = t.header.len().saturating_sub(2);
    let expected: Vec<String> = ["lon".to_owned(), "lat".to_owned()]
        .into_iter()
        .chain((1..=k).map(|j| format!("pc{j}")))
        .collect();
    if t.header != expected || k == 0 {
        return Err(parse_err(path, 1, "expected header lon,lat,pc1..pck"));
    }
    let mut coords = Vec::with_capacity(t.rows.len());
    let mut data = Vec::with_capacity(t.rows.len() * k);
    for (line, v) in &t.rows {
        coords.push(GeoCoordinate::new(v[0], v[1]).map_err(|e| parse_err(path, *line, e.to_string()))?);
        data.extend_from_slice(&v[2..]);
    }
    let n = coords.len();
    Ok((coords, Tensor2::from_vec(n, k, data)?))
}
