//! CSV readers and writers for pair, label and coordinate files.
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! a write followed by a read reproduces every double bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dataio::{LabeledDataset, PairDataset, Targets};
use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::sphere::GeoCoordinate;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub(crate) struct Table {
    pub(crate) header: Vec<String>,
    /// `(line number, values)`.
    pub(crate) rows: Vec<(u64, Vec<f64>)>,
}

pub(crate) fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("{} fields, header has {}", rec.len(), header.len()),
            ));
        }
        let mut values = Vec::with_capacity(rec.len());
        for (field, name) in rec.iter().zip(&header) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("column {name}: cannot parse {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("column {name}: non-finite value {field}")));
            }
            values.push(v);
        }
        rows.push((line, values));
    }
    Ok(Table { header, rows })
}

fn expect_prefix(path: &Path, header: &[String], prefix: &[&str]) -> Result<()> {
    if header.len() < prefix.len() || header.iter().zip(prefix).any(|(h, p)| h != p) {
        return Err(parse_err(
            path,
            1,
            format!("header must start with {}, got {}", prefix.join(","), header.join(",")),
        ));
    }
    Ok(())
}

fn expect_indexed(path: &Path, names: &[String], stem: &str) -> Result<()> {
    for (i, name) in names.iter().enumerate() {
        if *name != format!("{stem}{i}") {
            return Err(parse_err(path, 1, format!("expected column {stem}{i}, found {name}")));
        }
    }
    Ok(())
}

fn coord_at(path: &Path, line: u64, lon: f64, lat: f64) -> Result<GeoCoordinate> {
    GeoCoordinate::new(lon, lat).map_err(|e| parse_err(path, line, e.to_string()))
}

/// Writes `lon,lat,f0,...,f{k-1}`.
pub fn write_pairs(path: &Path, data: &PairDataset) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write!(w, "lon,lat").map_err(io)?;
    for j in 0..data.feature_dim() {
        write!(w, ",f{j}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (c, row) in data.coords().iter().zip(data.features().row_iter()) {
        write!(w, "{},{}", c.lon(), c.lat()).map_err(io)?;
        for v in row {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_pairs(path: &Path) -> Result<PairDataset> {
    let t = read_table(path)?;
    expect_prefix(path, &t.header, &["lon", "lat"])?;
    expect_indexed(path, &t.header[2..], "f")?;
    let k = t.header.len() - 2;
    let mut coords = Vec::with_capacity(t.rows.len());
    let mut feats = Vec::with_capacity(t.rows.len() * k);
    for (line, v) in &t.rows {
        coords.push(coord_at(path, *line, v[0], v[1])?);
        feats.extend_from_slice(&v[2..]);
    }
    let n = coords.len();
    PairDataset::new(coords, Tensor2::from_vec(n, k, feats)?)
}

/// Writes `lon,lat,target` or `lon,lat,class`, followed by `x0..` extra
/// feature columns when present.
pub fn write_labels(path: &Path, data: &LabeledDataset) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let name = match data.targets() {
        Targets::Regression(_) => "target",
        Targets::Classification { .. } => "class",
    };
    write!(w, "lon,lat,{name}").map_err(io)?;
    if let Some(x) = data.extra() {
        for j in 0..x.cols() {
            write!(w, ",x{j}").map_err(io)?;
        }
    }
    writeln!(w).map_err(io)?;
    for (i, c) in data.coords().iter().enumerate() {
        write!(w, "{},{}", c.lon(), c.lat()).map_err(io)?;
        match data.targets() {
            Targets::Regression(v) => write!(w, ",{}", v[i]),
            Targets::Classification { labels, .. } => write!(w, ",{}", labels[i]),
        }
        .map_err(io)?;
        if let Some(x) = data.extra() {
            for v in x.row(i) {
                write!(w, ",{v}").map_err(io)?;
            }
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a label file. The class count of a classification file is the
/// largest label plus one.
pub fn read_labels(path: &Path) -> Result<LabeledDataset> {
    let t = read_table(path)?;
    let regression = t.header.get(2).map(String::as_str) == Some("target");
    let third = if regression { "target" } else { "class" };
    expect_prefix(path, &t.header, &["lon", "lat", third])?;
    expect_indexed(path, &t.header[3..], "x")?;
    let k = t.header.len() - 3;
    let mut coords = Vec::with_capacity(t.rows.len());
    let mut values = Vec::with_capacity(t.rows.len());
    let mut labels = Vec::new();
    let mut extra = Vec::with_capacity(t.rows.len() * k);
    for (line, v) in &t.rows {
        coords.push(coord_at(path, *line, v[0], v[1])?);
        if regression {
            values.push(v[2]);
        } else {
            let c = v[2];
            if c < 0.0 || c.fract() != 0.0 || c > u32::MAX as f64 {
                return Err(parse_err(path, *line, format!("class {c} is not a non-negative integer")));
            }
            labels.push(c as usize);
        }
        extra.extend_from_slice(&v[3..]);
    }
    let targets = if regression {
        Targets::Regression(values)
    } else {
        let class_count = labels.iter().max().map_or(0, |m| m + 1);
        Targets::Classification { labels, class_count }
    };
    let n = coords.len();
    let extra = if k > 0 { Some(Tensor2::from_vec(n, k, extra)?) } else { None };
    LabeledDataset::new(coords, targets, extra)
}

/// Reads `lon,lat` rows; any further columns are ignored.
pub fn read_coords(path: &Path) -> Result<Vec<GeoCoordinate>> {
    let t = read_table(path)?;
    expect_prefix(path, &t.header, &["lon", "lat"])?;
    t.rows
        .iter()
        .map(|(line, v)| coord_at(path, *line, v[0], v[1]))
        .collect()
}

pub fn write_coords(path: &Path, coords: &[GeoCoordinate]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "lon,lat").map_err(io)?;
    for c in coords {
        writeln!(w, "{},{}", c.lon(), c.lat()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes `lon,lat,e0,...,e{d-1}`.
pub fn write_embeddings(path: &Path, coords: &[GeoCoordinate], emb: &Tensor2) -> Result<()> {
    if coords.len() != emb.rows() {
        return Err(Error::shape(
            "write_embeddings",
            format!("{} coordinates for {} embedding rows", coords.len(), emb.rows()),
        ));
    }
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write!(w, "lon,lat").map_err(io)?;
    for j in 0..emb.cols() {
        write!(w, ",e{j}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (c, row) in coords.iter().zip(emb.row_iter()) {
        write!(w, "{},{}", c.lon(), c.lat()).map_err(io)?;
        for v in row {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_embeddings(path: &Path) -> Result<(Vec<GeoCoordinate>, Tensor2)> {
    let t = read_table(path)?;
    expect_prefix(path, &t.header, &["lon", "lat"])?;
    expect_indexed(path, &t.header[2..], "e")?;
    let d = t.header.len() - 2;
    let mut coords = Vec::with_capacity(t.rows.len());
    let mut data = Vec::with_capacity(t.rows.len() * d);
    for (line, v) in &t.rows {
        coords.push(coord_at(path, *line, v[0], v[1])?);
        data.extend_from_slice(&v[2..]);
    }
    let n = coords.len();
    Ok((coords, Tensor2::from_vec(n, d, data)?))
}
