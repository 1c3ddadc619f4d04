//! Tape-based reverse-mode differentiation.
//!
//! Ops are appended to a [`Graph`] in execution order, so the tape is always
//! topologically sorted and `backward` is a single reverse sweep. An op whose
//! inputs carry no gradient is folded into a constant node.

use std::rc::Rc;

use super::rng::RngState;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before `ln` in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    AddRow(Var, Var),
    LeakyRelu(Var, f64),
    /// Elementwise product with a fixed mask (dropout, scale folded in).
    Mask(Var, Rc<[f64]>),
    /// `x + c` for a constant `c` (additive noise); identity gradient.
    Shift(Var),
    Softmax(Var),
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
        rows: Vec<usize>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    RowSqDist(Var, Var),
    WeightedSum(Var, Rc<[f64]>),
    Sum(Var),
    SelectRows(Var, Vec<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param => vec![],
            Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::RowSqDist(a, b) => vec![*a, *b],
            Op::LeakyRelu(a, _)
            | Op::Mask(a, _)
            | Op::Shift(a)
            | Op::Softmax(a)
            | Op::Scale(a, _)
            | Op::WeightedSum(a, _)
            | Op::Sum(a)
            | Op::SelectRows(a, _) => vec![*a],
            Op::CrossEntropy { probs, .. } => vec![*probs],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of executed ops plus the accumulated parameter gradients.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn check_matrix(t: &Tensor, what: &str) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::shape(format!(
            "{what}: expected a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
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

    fn push(&mut self, mut value: Tensor, op: Op) -> Var {
        value.grad = None;
        let needs_grad = match op {
            Op::Param => true,
            Op::Constant => false,
            _ => op.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        let op = if needs_grad || matches!(op, Op::Param) {
            op
        } else {
            Op::Constant
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Param)
    }

    /// Leaf excluded from gradient flow.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Accumulated gradient of a parameter leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Same values, no gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.push(value, Op::Constant)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_matrix(ta, "matmul lhs")?;
        check_matrix(tb, "matmul rhs")?;
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: [{m}x{k}] x [{k2}x{n}]"
            )));
        }
        let out = matmul_raw(ta.values(), tb.values(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    /// `x[b×n] + bias[n]`, bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        check_matrix(tx, "add_row")?;
        let n = tx.cols();
        if tb.numel() != n {
            return Err(Error::shape(format!(
                "bias of length {} cannot broadcast over rows of width {n}",
                tb.numel()
            )));
        }
        let b = tb.values();
        let out: Vec<f64> = tx
            .values()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(x, b)| x + b))
            .collect();
        let shape = tx.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow(x, bias)))
    }

    /// Elementwise `max(x, slope·x)`; `slope` in `[0, 1)`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let t = self.value(x);
        let out = t
            .values()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out).unwrap(), Op::LeakyRelu(x, slope))
    }

    /// Inverted dropout. Identity when `p == 0` or outside training.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut RngState, training: bool) -> Var {
        if !training || p == 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(x);
        let mask: Rc<[f64]> = (0..t.numel())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let out = t.values().iter().zip(mask.iter()).map(|(v, m)| v * m).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out).unwrap(), Op::Mask(x, mask))
    }

    /// `x + ζ` with `ζ ~ N(0, std²)` drawn elementwise from `rng`.
    pub fn gaussian_noise(&mut self, x: Var, std: f64, rng: &mut RngState) -> Var {
        if std == 0.0 {
            return x;
        }
        let t = self.value(x);
        let out = t.values().iter().map(|v| v + std * rng.normal()).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out).unwrap(), Op::Shift(x))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let t = self.value(logits);
        check_matrix(t, "softmax")?;
        let n = t.cols();
        if n < 2 {
            return Err(Error::shape("softmax needs at least two classes"));
        }
        let mut out = Vec::with_capacity(t.numel());
        for row in t.values().chunks(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            out.extend(row.iter().map(|v| (v - max).exp()));
            let z: f64 = out[start..].iter().sum();
            out[start..].iter_mut().for_each(|v| *v /= z);
        }
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(logits)))
    }

    /// Mean of `−ln p[r, label_r]` over all rows.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let rows: Vec<usize> = (0..labels.len()).collect();
        self.cross_entropy_rows(probs, labels, &rows)
    }

    /// Mean of `−ln p[r, label_r]` over the listed rows; zero when `rows` is
    /// empty. `labels` is indexed by row.
    pub fn cross_entropy_rows(&mut self, probs: Var, labels: &[usize], rows: &[usize]) -> Result<Var> {
        let t = self.value(probs);
        check_matrix(t, "cross_entropy")?;
        let n = t.cols();
        if labels.len() != t.rows() {
            return Err(Error::input(format!(
                "{} labels for {} rows",
                labels.len(),
                t.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::input(format!("label {bad} out of range for {n} classes")));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= t.rows()) {
            return Err(Error::input(format!("row {bad} out of range")));
        }
        if rows.is_empty() {
            return Ok(self.constant(Tensor::scalar(0.0)));
        }
        let loss = rows
            .iter()
            .map(|&r| {
                let p = t.row(r)[labels[r]];
                // NaN must survive the clamp
                -(if p.is_nan() { p } else { p.max(PROB_FLOOR) }).ln()
            })
            .sum::<f64>()
            / rows.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
                rows: rows.to_vec(),
            },
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.values().iter().map(|v| c * v).collect()).unwrap();
        self.push(out, Op::Scale(x, c))
    }

    /// Per-row squared Euclidean distance, `[b×n] × [b×n] → [b]`.
    pub fn row_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_sq_dist")?;
        let (ta, tb) = (self.value(a), self.value(b));
        check_matrix(ta, "row_sq_dist")?;
        let out: Vec<f64> = (0..ta.rows())
            .map(|r| sq_dist(ta.row(r), tb.row(r)))
            .collect();
        let rows = ta.rows();
        Ok(self.push(Tensor::new(vec![rows], out)?, Op::RowSqDist(a, b)))
    }

    /// `Σ w_i x_i` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let t = self.value(x);
        if weights.len() != t.numel() {
            return Err(Error::shape(format!(
                "{} weights for {} entries",
                weights.len(),
                t.numel()
            )));
        }
        let s = t.values().iter().zip(weights).map(|(x, w)| x * w).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(x, weights.into())))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Gathers rows (repeats allowed) into a new matrix.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        check_matrix(t, "select_rows")?;
        if rows.is_empty() {
            return Err(Error::shape("select_rows needs at least one row"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= t.rows()) {
            return Err(Error::input(format!("row {bad} out of range")));
        }
        let out: Vec<f64> = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
        let shape = vec![rows.len(), t.cols()];
        Ok(self.push(Tensor::new(shape, out)?, Op::SelectRows(x, rows.to_vec())))
    }

    /// Mean over rows of the squared Euclidean row distance.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.row_sq_dist(a, b)?;
        let rows = self.value(d).numel();
        self.weighted_sum(d, &vec![1.0 / rows as f64; rows])
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients accumulate
    /// across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::input(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, delta: Vec<f64>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut adj[v.0] {
                    Some(a) => a.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param => match &mut self.grads[idx] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if self.nodes[a.0].needs_grad {
                        // dA = dC · Bᵀ
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            for p in 0..k {
                                let brow = &tb.values()[p * n..(p + 1) * n];
                                let grow = &g[i * n..(i + 1) * n];
                                da[i * k + p] = brow.iter().zip(grow).map(|(x, y)| x * y).sum();
                            }
                        }
                        send(*a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        // dB = Aᵀ · dC
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let av = ta.values()[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                db[p * n..(p + 1) * n]
                                    .iter_mut()
                                    .zip(grow)
                                    .for_each(|(d, gv)| *d += av * gv);
                            }
                        }
                        send(*b, db);
                    }
                }
                Op::AddRow(x, bias) => {
                    let n = self.nodes[bias.0].value.numel();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    send(*bias, db);
                    send(*x, g);
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = self.nodes[x.0].value.values();
                    let dx = g
                        .iter()
                        .zip(xv)
                        .map(|(g, &v)| if v > 0.0 { *g } else { slope * g })
                        .collect();
                    send(*x, dx);
                }
                Op::Mask(x, mask) => {
                    let dx = g.iter().zip(mask.iter()).map(|(g, m)| g * m).collect();
                    send(*x, dx);
                }
                Op::Shift(x) => send(*x, g),
                Op::Softmax(x) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut dx = Vec::with_capacity(g.len());
                    for (yr, gr) in y.values().chunks(n).zip(g.chunks(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        dx.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
                    }
                    send(*x, dx);
                }
                Op::CrossEntropy {
                    probs,
                    labels,
                    rows,
                } => {
                    let tp = &self.nodes[probs.0].value;
                    let n = tp.cols();
                    let scale = g[0] / rows.len() as f64;
                    if let Op::Softmax(logits) = self.nodes[probs.0].op {
                        // fused path straight to the logits: p - onehot never
                        // vanishes on saturated rows the way 1/p does past the clamp
                        let mut dz = vec![0.0; tp.numel()];
                        for &r in rows {
                            for (k, p) in tp.row(r).iter().enumerate() {
                                let y = if k == labels[r] { 1.0 } else { 0.0 };
                                dz[r * n + k] = scale * (p - y);
                            }
                        }
                        send(logits, dz);
                        continue;
                    }
                    let mut dp = vec![0.0; tp.numel()];
                    for &r in rows {
                        let p = tp.row(r)[labels[r]];
                        if p > PROB_FLOOR {
                            dp[r * n + labels[r]] -= scale / p;
                        }
                    }
                    send(*probs, dp);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.iter().map(|v| -v).collect());
                    send(*a, g);
                }
                Op::Scale(x, c) => send(*x, g.iter().map(|v| c * v).collect()),
                Op::RowSqDist(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let n = ta.cols();
                    let da: Vec<f64> = ta
                        .values()
                        .iter()
                        .zip(tb.values())
                        .enumerate()
                        .map(|(i, (x, y))| 2.0 * (x - y) * g[i / n])
                        .collect();
                    if self.nodes[b.0].needs_grad {
                        send(*b, da.iter().map(|v| -v).collect());
                    }
                    send(*a, da);
                }
                Op::WeightedSum(x, w) => send(*x, w.iter().map(|w| w * g[0]).collect()),
                Op::Sum(x) => {
                    let n = self.nodes[x.0].value.numel();
                    send(*x, vec![g[0]; n]);
                }
                Op::SelectRows(x, rows) => {
                    let tx = &self.nodes[x.0].value;
                    let n = tx.cols();
                    let mut dx = vec![0.0; tx.numel()];
                    for (i, &r) in rows.iter().enumerate() {
                        dx[r * n..(r + 1) * n]
                            .iter_mut()
                            .zip(&g[i * n..(i + 1) * n])
                            .for_each(|(d, v)| *d += v);
                    }
                    send(*x, dx);
                }
            }
        }
        Ok(())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let out = a.values().iter().zip(b.values()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), out).unwrap()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            orow.iter_mut()
                .zip(&b[p * n..(p + 1) * n])
                .for_each(|(o, bv)| *o += av * bv);
        }
    }
    out
}
