#![allow(dead_code)]

use std::f64::consts::PI;

use locenc::sphere::{sh_basis, GeoCoordinate};

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Gram matrix of the degree-`l_max` real SH basis under Gauss-Legendre in
/// cos(theta) times an equispaced azimuth rule.
pub fn sh_gram(l_max: usize) -> Vec<Vec<f64>> {
    let n = l_max * l_max;
    let nodes = gauss_legendre(l_max + 1);
    let n_phi = 2 * l_max + 1;
    let mut gram = vec![vec![0.0; n]; n];
    for &(x, w) in &nodes {
        let lat = 90.0 - x.acos().to_degrees();
        for k in 0..n_phi {
            let lon = 360.0 * k as f64 / n_phi as f64;
            let c = GeoCoordinate::new(lon, lat).unwrap();
            let y = sh_basis(&c, l_max).unwrap().into_values();
            let wk = w * 2.0 * PI / n_phi as f64;
            for a in 0..n {
                for b in a..n {
                    gram[a][b] += wk * y[a] * y[b];
                }
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            gram[a][b] = gram[b][a];
        }
    }
    gram
}

pub fn max_identity_error(gram: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, row) in gram.iter().enumerate() {
        for (b, v) in row.iter().enumerate() {
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((v - want).abs());
        }
    }
    worst
}

/// Largest deviation of sum_m Y_l^m(c)^2 from (2l+1)/(4 pi) over l < l_max.
pub fn addition_theorem_error(c: &GeoCoordinate, l_max: usize) -> f64 {
    let y = sh_basis(c, l_max).unwrap().into_values();
    let mut worst: f64 = 0.0;
    for l in 0..l_max {
        let s: f64 = y[l * l..(l + 1) * (l + 1)].iter().map(|v| v * v).sum();
        worst = worst.max((s - (2 * l + 1) as f64 / (4.0 * PI)).abs());
    }
    worst
}
