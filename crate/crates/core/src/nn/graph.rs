//! Tape-based reverse-mode differentiation over [`Tensor2`] values.
//!
//! A [`Graph`] records every operation eagerly. Leaves are either
//! parameters (gradient tracked) or constants (frozen). `backward` walks the
//! tape once in reverse and returns gradients for every tracked node.

use crate::error::{Error, Result};
use crate::nn::Tensor2;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    /// `x + b` with `b` a 1 x cols row added to every row.
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    /// `sin(omega * x)`.
    Sin(Var, f64),
    Relu(Var),
    Scale(Var, f64),
    /// `x * exp(-s)` with `s` a 1x1 node.
    DivExp(Var, Var),
    Sum(Var),
    SumSquares(Var),
    NormalizeRows(Var),
    /// Symmetric cross-entropy with the diagonal as targets.
    DiagXent(Var),
    /// Mean squared error against a fixed target.
    Mse(Var, Tensor2),
    /// Mean softmax cross-entropy against fixed class labels.
    SoftmaxXent(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor2,
    op: Op,
    tracked: bool,
}

/// Smallest row norm accepted by row normalization.
pub const MIN_ROW_NORM: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every tracked node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    /// Gradient for `v`; `None` for constants and nodes off the loss path.
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor2> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Gradient for `v`, or zeros shaped like `like` when absent.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor2) -> Tensor2 {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor2::zeros(like.rows(), like.cols()))
    }
}

fn row_softmax_stats(row: &[f64]) -> (f64, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
    (max, denom)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push_derived(&mut self, value: Tensor2, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        self.push(value, op, tracked)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Frozen leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push_derived(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push_derived(value, Op::MatMulNt(a, b), &[a, b]))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_row",
                format!(
                    "bias {}x{} for input {}x{}",
                    bv.rows(),
                    bv.cols(),
                    xv.rows(),
                    xv.cols()
                ),
            ));
        }
        let mut value = xv.clone();
        let cols = value.cols();
        if cols > 0 {
            for row in value.data_mut().chunks_exact_mut(cols) {
                for (o, b) in row.iter_mut().zip(bv.data()) {
                    *o += b;
                }
            }
        }
        Ok(self.push_derived(value, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.check_same("add", bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor2::from_vec(av.rows(), av.cols(), data)?;
        Ok(self.push_derived(value, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.check_same("mul", bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor2::from_vec(av.rows(), av.cols(), data)?;
        Ok(self.push_derived(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn sin(&mut self, x: Var, omega: f64) -> Var {
        let value = self.value(x).map(|v| (omega * v).sin());
        self.push_derived(value, Op::Sin(x, omega), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push_derived(value, Op::Relu(x), &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push_derived(value, Op::Scale(x, factor), &[x])
    }

    /// `x / exp(log_scale)` where `log_scale` is 1x1.
    pub fn div_exp(&mut self, x: Var, log_scale: Var) -> Result<Var> {
        let s = self.value(log_scale).item()?;
        let inv = (-s).exp();
        let value = self.value(x).map(|v| v * inv);
        Ok(self.push_derived(value, Op::DivExp(x, log_scale), &[x, log_scale]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor2::scalar(self.value(x).sum());
        self.push_derived(value, Op::Sum(x), &[x])
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let value = Tensor2::scalar(self.value(x).data().iter().map(|v| v * v).sum());
        self.push_derived(value, Op::SumSquares(x), &[x])
    }

    /// Scales each row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("row {r} has a non-finite norm")));
            }
            if norm < MIN_ROW_NORM {
                return Err(Error::Degenerate(format!(
                    "row {r} has norm {norm:e} below {MIN_ROW_NORM:e}"
                )));
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        Ok(self.push_derived(value, Op::NormalizeRows(x), &[x]))
    }

    /// Symmetric softmax cross-entropy of a square logit matrix whose
    /// diagonal holds the matching pairs: the mean of the row-wise and
    /// column-wise terms.
    pub fn diag_xent(&mut self, logits: Var) -> Result<Var> {
        let z = self.value(logits);
        let n = z.rows();
        if n == 0 || z.cols() != n {
            return Err(Error::shape(
                "diag_xent",
                format!("logits must be square and non-empty, got {}x{}", n, z.cols()),
            ));
        }
        let zt = z.transpose();
        let mut total = 0.0;
        for i in 0..n {
            let (rmax, rden) = row_softmax_stats(z.row(i));
            let (cmax, cden) = row_softmax_stats(zt.row(i));
            let diag = z.get(i, i);
            total += (rmax + rden.ln() - diag) + (cmax + cden.ln() - diag);
        }
        let value = Tensor2::scalar(total / (2.0 * n as f64));
        Ok(self.push_derived(value, Op::DiagXent(logits), &[logits]))
    }

    pub fn mse(&mut self, pred: Var, target: Tensor2) -> Result<Var> {
        let p = self.value(pred);
        p.check_same("mse", &target)?;
        if p.is_empty() {
            return Err(Error::shape("mse", "empty prediction"));
        }
        let sse: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let value = Tensor2::scalar(sse / p.len() as f64);
        Ok(self.push_derived(value, Op::Mse(pred, target), &[pred]))
    }

    pub fn softmax_xent(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != labels.len() || z.rows() == 0 {
            return Err(Error::shape(
                "softmax_xent",
                format!("{} logit rows for {} labels", z.rows(), labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&c| c >= z.cols()) {
            return Err(Error::shape(
                "softmax_xent",
                format!("label {bad} out of range for {} classes", z.cols()),
            ));
        }
        let mut total = 0.0;
        for (i, &c) in labels.iter().enumerate() {
            let (max, den) = row_softmax_stats(z.row(i));
            total += max + den.ln() - z.get(i, c);
        }
        let value = Tensor2::scalar(total / labels.len() as f64);
        Ok(self.push_derived(value, Op::SoftmaxXent(logits, labels), &[logits]))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {}x{}", lv.rows(), lv.cols()),
            ));
        }
        if let Some((i, _)) = self.nodes[..=loss.0]
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.all_finite())
        {
            return Err(Error::NonFinite(format!("graph node {i} holds NaN or Inf")));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        if self.tracked(loss) {
            grads[loss.0] = Some(Tensor2::scalar(1.0));
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.tracked {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) -> Result<()> {
        if !self.tracked(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor2, grads: &mut [Option<Tensor2>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    let ga = g.matmul_nt(self.value(*b))?;
                    self.accumulate(grads, *a, ga)?;
                }
                if self.tracked(*b) {
                    let gb = self.value(*a).matmul_tn(g)?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::MatMulNt(a, b) => {
                if self.tracked(*a) {
                    let ga = g.matmul(self.value(*b))?;
                    self.accumulate(grads, *a, ga)?;
                }
                if self.tracked(*b) {
                    let gb = g.matmul_tn(self.value(*a))?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::AddRow(x, b) => {
                if self.tracked(*b) {
                    let mut gb = Tensor2::zeros(1, g.cols());
                    for row in g.row_iter() {
                        for (o, v) in gb.data_mut().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *b, gb)?;
                }
                self.accumulate(grads, *x, g.clone())?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.tracked(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, Tensor2::from_vec(g.rows(), g.cols(), d)?)?;
                }
                if self.tracked(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, Tensor2::from_vec(g.rows(), g.cols(), d)?)?;
                }
            }
            Op::Sin(x, omega) => {
                let xv = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(g, v)| g * omega * (omega * v).cos())
                    .collect();
                self.accumulate(grads, *x, Tensor2::from_vec(g.rows(), g.cols(), d)?)?;
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor2::from_vec(g.rows(), g.cols(), d)?)?;
            }
            Op::Scale(x, f) => {
                self.accumulate(grads, *x, g.map(|v| v * f))?;
            }
            Op::DivExp(x, s) => {
                let inv = (-self.value(*s).item()?).exp();
                if self.tracked(*x) {
                    self.accumulate(grads, *x, g.map(|v| v * inv))?;
                }
                if self.tracked(*s) {
                    let dot: f64 = g
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, y)| g * y)
                        .sum();
                    self.accumulate(grads, *s, Tensor2::scalar(-dot))?;
                }
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                let gs = g.item()?;
                self.accumulate(grads, *x, Tensor2::filled(xv.rows(), xv.cols(), gs))?;
            }
            Op::SumSquares(x) => {
                let gs = g.item()?;
                self.accumulate(grads, *x, self.value(*x).map(|v| 2.0 * gs * v))?;
            }
            Op::NormalizeRows(x) => {
                let (xv, y) = (self.value(*x), &node.value);
                let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let norm = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let (yr, gr) = (y.row(r), g.row(r));
                    let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = (gv - yv * proj) / norm;
                    }
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::DiagXent(z) => {
                let zv = self.value(*z);
                let n = zv.rows();
                let scale = g.item()? / (2.0 * n as f64);
                let mut gz = Tensor2::zeros(n, n);
                for i in 0..n {
                    let row = zv.row(i);
                    let (max, den) = row_softmax_stats(row);
                    for (j, v) in row.iter().enumerate() {
                        gz.data_mut()[i * n + j] += ((v - max).exp() / den) * scale;
                    }
                    gz.data_mut()[i * n + i] -= 2.0 * scale;
                }
                let zt = zv.transpose();
                for j in 0..n {
                    let col = zt.row(j);
                    let (max, den) = row_softmax_stats(col);
                    for (i, v) in col.iter().enumerate() {
                        gz.data_mut()[i * n + j] += ((v - max).exp() / den) * scale;
                    }
                }
                self.accumulate(grads, *z, gz)?;
            }
            Op::Mse(p, target) => {
                let pv = self.value(*p);
                let f = 2.0 * g.item()? / pv.len() as f64;
                let d = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| f * (a - b))
                    .collect();
                self.accumulate(grads, *p, Tensor2::from_vec(pv.rows(), pv.cols(), d)?)?;
            }
            Op::SoftmaxXent(z, labels) => {
                let zv = self.value(*z);
                let f = g.item()? / labels.len() as f64;
                let mut gz = Tensor2::zeros(zv.rows(), zv.cols());
                for (i, &c) in labels.iter().enumerate() {
                    let (max, den) = row_softmax_stats(zv.row(i));
                    for (o, v) in gz.row_mut(i).iter_mut().zip(zv.row(i)) {
                        *o = f * (v - max).exp() / den;
                    }
                    gz.row_mut(i)[c] -= f;
                }
                self.accumulate(grads, *z, gz)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
        let d = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor2::from_vec(rows, cols, d).unwrap()
    }

    /// Central-difference check of `build` with respect to its parameters.
    fn check(
        params: Vec<Tensor2>,
        build: impl Fn(&mut Graph, &[Var]) -> Var,
        tol: f64,
    ) {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
        let loss = build(&mut g, &vars);
        let grads = g.backward(loss).unwrap();
        let h = 1e-5;
        for (pi, p) in params.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[pi], p);
            for k in 0..p.len() {
                let eval = |delta: f64| {
                    let mut ps = params.clone();
                    ps[pi].data_mut()[k] += delta;
                    let mut g = Graph::new();
                    let vs: Vec<Var> = ps.into_iter().map(|p| g.param(p)).collect();
                    let l = build(&mut g, &vs);
                    g.value(l).item().unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.data()[k];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (a - fd).abs() / denom < tol,
                    "param {pi} entry {k}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let w = g.param(Tensor2::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap());
        let l = g.sum(w);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(w).unwrap(), &Tensor2::filled(2, 2, 1.0));
    }

    #[test]
    fn sine_chain_rule_scalar() {
        let (omega, x, w) = (30.0, 0.37, 0.021);
        let mut g = Graph::new();
        let xv = g.constant(Tensor2::scalar(x));
        let wv = g.param(Tensor2::scalar(w));
        let xw = g.matmul(xv, wv).unwrap();
        let s = g.sin(xw, omega);
        let l = g.sum_squares(s);
        let grads = g.backward(l).unwrap();
        let u = omega * x * w;
        let expected = 2.0 * u.sin() * u.cos() * omega * x;
        assert_abs_diff_eq!(grads.get(wv).unwrap().item().unwrap(), expected, epsilon = 1e-12);
        assert!(grads.get(xv).is_none());
    }

    #[test]
    fn frozen_and_off_path_nodes_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor2::filled(2, 2, 1.0));
        let frozen = g.constant(Tensor2::filled(2, 2, 2.0));
        let unused = g.param(Tensor2::filled(2, 2, 3.0));
        let p = g.mul(a, frozen).unwrap();
        let l = g.sum(p);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(a).unwrap(), &Tensor2::filled(2, 2, 2.0));
        assert!(grads.get(frozen).is_none());
        assert!(grads.get(unused).is_none());
    }

    #[test]
    fn nan_in_graph_is_reported() {
        let mut g = Graph::new();
        let a = g.param(Tensor2::scalar(f64::NAN));
        let l = g.sum(a);
        assert!(matches!(g.backward(l), Err(Error::NonFinite(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let a = g.param(Tensor2::zeros(2, 1));
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let mut g = Graph::new();
        let a = g.param(Tensor2::zeros(2, 3));
        let b = g.param(Tensor2::zeros(1, 2));
        assert!(g.add_row(a, b).is_err());
        assert!(g.add(a, b).is_err());
        assert!(g.mul(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
        assert!(g.diag_xent(a).is_err());
        assert!(g.mse(a, Tensor2::zeros(3, 2)).is_err());
        assert!(g.softmax_xent(a, vec![0]).is_err());
        assert!(g.softmax_xent(a, vec![0, 3]).is_err());
    }

    #[test]
    fn finite_differences_dense_sine_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 4, 3);
        let w = random(&mut rng, 3, 5).map(|v| v * 0.1);
        let b = random(&mut rng, 1, 5).map(|v| v * 0.1);
        check(
            vec![w, b],
            |g, v| {
                let xv = g.constant(x.clone());
                let h = g.matmul(xv, v[0]).unwrap();
                let h = g.add_row(h, v[1]).unwrap();
                let h = g.sin(h, 3.0);
                g.sum_squares(h)
            },
            1e-6,
        );
    }

    #[test]
    fn finite_differences_contrastive_pieces() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 5, 4);
        let b = random(&mut rng, 5, 4);
        let s = Tensor2::scalar(-0.4);
        check(
            vec![a, b, s],
            |g, v| {
                let na = g.normalize_rows(v[0]).unwrap();
                let nb = g.normalize_rows(v[1]).unwrap();
                let sim = g.matmul_nt(na, nb).unwrap();
                let z = g.div_exp(sim, v[2]).unwrap();
                g.diag_xent(z).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn finite_differences_head_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 6, 3);
        let w = random(&mut rng, 3, 4);
        let target = random(&mut rng, 6, 4);
        let w2 = w.clone();
        check(
            vec![w],
            |g, v| {
                let xv = g.constant(x.clone());
                let h = g.matmul(xv, v[0]).unwrap();
                let h = g.relu(h);
                let h = g.scale(h, 1.7);
                g.mse(h, target.clone()).unwrap()
            },
            1e-6,
        );
        check(
            vec![w2],
            |g, v| {
                let xv = g.constant(x.clone());
                let h = g.matmul(xv, v[0]).unwrap();
                let h2 = g.add(h, h).unwrap();
                g.softmax_xent(h2, vec![0, 1, 2, 3, 0, 1]).unwrap()
            },
            1e-6,
        );
    }
}
