use super::Tensor;
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logarithms in the loss ops.
const PROB_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScalarMul(Var, f64),
    Relu(Var),
    Abs(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxRows(Var),
    ScaleRows(Var, Var),
    PairwiseDiff(Var),
    Reshape(Var),
    SelectRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    NormalizeRows(Var),
    NllMean(Var, Vec<usize>),
    BceMean(Var, Tensor),
    BceLogitsMean(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so every operation's inputs precede it
/// and a reverse sweep is a valid topological traversal.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when no path reaches it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::dim(op, t.shape(), &[])),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&x| f(x)).collect(),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for (l, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &y) in row.iter_mut().zip(&b[l * p..(l + 1) * p]) {
                *o += x * y;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Smallest `|x|` over the inputs of every recorded `relu` and `abs`,
    /// ignoring exact zeros fed to `abs`; infinite when there are none.
    ///
    /// Finite differences with a step well below this distance never straddle
    /// a kink.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            let (input, skip_zero) = match node.op {
                Op::Relu(a) => (a, false),
                Op::Abs(a) => (a, true),
                _ => continue,
            };
            for &x in &self.nodes[input.0].value.data {
                if !(skip_zero && x == 0.0) {
                    margin = margin.min(x.abs());
                }
            }
        }
        margin
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_matrix("matmul", ta)?;
        let (k2, p) = require_matrix("matmul", tb)?;
        if k != k2 {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let data = matmul_raw(&ta.data, &tb.data, m, k, p);
        let out = Tensor {
            shape: vec![m, p],
            data,
        };
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = require_matrix("transpose", t)?;
        let out = Tensor {
            shape: vec![c, r],
            data: transpose_raw(&t.data, r, c),
        };
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a length-`m` vector to every row of an `n × m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (_, m) = require_matrix("add_row", ta)?;
        if tr.len() != m || tr.shape().len() != 1 {
            return Err(Error::dim("add_row", ta.shape(), tr.shape()));
        }
        let mut out = ta.clone();
        for chunk in out.data.chunks_mut(m) {
            for (o, &b) in chunk.iter_mut().zip(&tr.data) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let out = map(self.value(a), |x| c * x);
        self.push(out, Op::ScalarMul(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    /// Elementwise `|x|`; the derivative at exactly zero is taken as zero.
    pub fn abs(&mut self, a: Var) -> Var {
        let out = map(self.value(a), f64::abs);
        self.push(out, Op::Abs(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = map(self.value(a), sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.data.iter().sum::<f64>() / t.len() as f64);
        self.push(out, Op::Mean(a), &[a])
    }

    /// Row-wise softmax of a matrix, computed after subtracting each row's max.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (_, c) = require_matrix("softmax_rows", t)?;
        if !t.is_finite() {
            return Err(Error::Numeric("softmax_rows"));
        }
        let mut out = t.clone();
        for row in out.data.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        Ok(self.push(out, Op::SoftmaxRows(a), &[a]))
    }

    /// `out[i][j][:] = weights[i][j] * values[j][:]` for `weights: n×n`, `values: n×C`.
    pub fn scale_rows(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (tw, tv) = (self.value(weights), self.value(values));
        let (n, n2) = require_matrix("scale_rows", tw)?;
        let (nv, c) = require_matrix("scale_rows", tv)?;
        if n != n2 || n != nv {
            return Err(Error::dim("scale_rows", tw.shape(), tv.shape()));
        }
        let mut data = Vec::with_capacity(n * n * c);
        for i in 0..n {
            for j in 0..n {
                let w = tw.data[i * n + j];
                data.extend(tv.row(j).iter().map(|&v| w * v));
            }
        }
        let out = Tensor {
            shape: vec![n, n, c],
            data,
        };
        Ok(self.push(out, Op::ScaleRows(weights, values), &[weights, values]))
    }

    /// `out[i][j][:] = x[i][:] - x[j][:]` for an `n × C` matrix.
    pub fn pairwise_diff(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, c) = require_matrix("pairwise_diff", t)?;
        let mut data = Vec::with_capacity(n * n * c);
        for i in 0..n {
            for j in 0..n {
                data.extend(t.row(i).iter().zip(t.row(j)).map(|(a, b)| a - b));
            }
        }
        let out = Tensor {
            shape: vec![n, n, c],
            data,
        };
        Ok(self.push(out, Op::PairwiseDiff(x), &[x]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = require_matrix("select_rows", t)?;
        if rows.is_empty() {
            return Err(Error::Contract("select_rows needs at least one row".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::dim("select_rows", t.shape(), &[bad]));
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor {
            shape: vec![rows.len(), c],
            data,
        };
        Ok(self.push(out, Op::SelectRows(a, rows.to_vec()), &[a]))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows needs at least one input".into()))?;
        let (_, c) = require_matrix("concat_rows", self.value(*first))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c2) = require_matrix("concat_rows", t)?;
            if c2 != c {
                return Err(Error::dim("concat_rows", &[rows, c], t.shape()));
            }
            rows += r;
            data.extend_from_slice(&t.data);
        }
        let out = Tensor {
            shape: vec![rows, c],
            data,
        };
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Divides each row of a non-negative matrix by its sum.
    ///
    /// An all-zero row, as left by fully underflowed similarities, becomes
    /// uniform and passes no gradient back.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (_, c) = require_matrix("normalize_rows", t)?;
        let mut out = t.clone();
        for row in out.data.chunks_mut(c) {
            if row.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::Numeric("normalize_rows"));
            }
            let total: f64 = row.iter().sum();
            if total == 0.0 {
                row.fill(1.0 / c as f64);
                continue;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        Ok(self.push(out, Op::NormalizeRows(a), &[a]))
    }

    /// Mean negative log-probability of the labelled column of each row.
    pub fn nll_mean(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(probs);
        let (r, c) = require_matrix("nll_mean", t)?;
        if labels.len() != r {
            return Err(Error::dim("nll_mean", t.shape(), &[labels.len()]));
        }
        if labels.iter().any(|&y| y >= c) {
            return Err(Error::Contract(format!(
                "label out of range for {c} classes"
            )));
        }
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -t.data[i * c + y].max(PROB_FLOOR).ln())
            .sum();
        let out = Tensor::scalar(total / r as f64);
        Ok(self.push(out, Op::NllMean(probs, labels.to_vec()), &[probs]))
    }

    /// Mean binary cross-entropy of probabilities against same-shaped targets.
    pub fn bce_mean(&mut self, probs: Var, targets: &Tensor) -> Result<Var> {
        let t = self.value(probs);
        same_shape("bce_mean", t, targets)?;
        let total: f64 = t
            .data
            .iter()
            .zip(&targets.data)
            .map(|(&p, &y)| {
                let mut term = 0.0;
                if y > 0.0 {
                    term -= y * p.max(PROB_FLOOR).ln();
                }
                if y < 1.0 {
                    term -= (1.0 - y) * (1.0 - p).max(PROB_FLOOR).ln();
                }
                term
            })
            .sum();
        let out = Tensor::scalar(total / t.len() as f64);
        Ok(self.push(out, Op::BceMean(probs, targets.clone()), &[probs]))
    }

    /// [`Tape::bce_mean`] of `sigmoid(logits)`, evaluated without forming the
    /// probabilities so that saturated logits keep full precision.
    pub fn bce_logits_mean(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let t = self.value(logits);
        same_shape("bce_logits_mean", t, targets)?;
        let total: f64 = t
            .data
            .iter()
            .zip(&targets.data)
            .map(|(&x, &y)| x.max(0.0) + (-x.abs()).exp().ln_1p() - y * x)
            .sum();
        let out = Tensor::scalar(total / t.len() as f64);
        Ok(self.push(out, Op::BceLogitsMean(logits, targets.clone()), &[logits]))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients of values used more than once are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor {
            shape: lt.shape.clone(),
            data: vec![1.0],
        });

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].as_ref() else {
                continue;
            };
            for (input, contribution) in self.local_grads(node, g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data.iter_mut().zip(&contribution.data) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
            // Interior gradients are no longer needed once propagated.
            grads[id] = None;
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape[0], ta.shape[1]);
                let p = tb.shape[1];
                let bt = transpose_raw(&tb.data, k, p);
                let at = transpose_raw(&ta.data, m, k);
                let ga = matmul_raw(&g.data, &bt, m, p, k);
                let gb = matmul_raw(&at, &g.data, k, m, p);
                vec![
                    (
                        *a,
                        Tensor {
                            shape: ta.shape.clone(),
                            data: ga,
                        },
                    ),
                    (
                        *b,
                        Tensor {
                            shape: tb.shape.clone(),
                            data: gb,
                        },
                    ),
                ]
            }
            Op::Transpose(a) => {
                let (r, c) = (y.shape[0], y.shape[1]);
                let data = transpose_raw(&g.data, r, c);
                vec![(
                    *a,
                    Tensor {
                        shape: val(*a).shape.clone(),
                        data,
                    },
                )]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, map(g, |x| -x))],
            Op::Mul(a, b) => vec![
                (*a, zip(g, val(*b), |g, y| g * y)),
                (*b, zip(g, val(*a), |g, x| g * x)),
            ],
            Op::AddRow(a, row) => {
                let m = val(*row).len();
                let mut gr = vec![0.0; m];
                for chunk in g.data.chunks(m) {
                    for (acc, &x) in gr.iter_mut().zip(chunk) {
                        *acc += x;
                    }
                }
                vec![
                    (*a, g.clone()),
                    (
                        *row,
                        Tensor {
                            shape: vec![m],
                            data: gr,
                        },
                    ),
                ]
            }
            Op::ScalarMul(a, c) => vec![(*a, map(g, |x| c * x))],
            Op::Relu(a) => vec![(*a, zip(g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 }))],
            Op::Abs(a) => vec![(
                *a,
                zip(g, val(*a), |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                }),
            )],
            Op::Sigmoid(a) => vec![(*a, zip(g, val(*a), |g, x| g * sigmoid(x) * sigmoid(-x)))],
            Op::Sum(a) => vec![(*a, Tensor::filled(&val(*a).shape, g.item()))],
            Op::Mean(a) => {
                let t = val(*a);
                vec![(*a, Tensor::filled(&t.shape, g.item() / t.len() as f64))]
            }
            Op::SoftmaxRows(a) => {
                let c = y.shape[1];
                let mut out = y.clone();
                for (yrow, grow) in out.data.chunks_mut(c).zip(g.data.chunks(c)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for (yv, &gv) in yrow.iter_mut().zip(grow) {
                        *yv *= gv - dot;
                    }
                }
                vec![(*a, out)]
            }
            Op::ScaleRows(w, v) => {
                let (tw, tv) = (val(*w), val(*v));
                let n = tw.shape[0];
                let c = tv.shape[1];
                let mut gw = vec![0.0; n * n];
                let mut gv = vec![0.0; n * c];
                for i in 0..n {
                    for j in 0..n {
                        let gslice = &g.data[(i * n + j) * c..(i * n + j + 1) * c];
                        let vj = tv.row(j);
                        gw[i * n + j] = gslice.iter().zip(vj).map(|(a, b)| a * b).sum();
                        let wij = tw.data[i * n + j];
                        for (acc, &gg) in gv[j * c..(j + 1) * c].iter_mut().zip(gslice) {
                            *acc += wij * gg;
                        }
                    }
                }
                vec![
                    (
                        *w,
                        Tensor {
                            shape: tw.shape.clone(),
                            data: gw,
                        },
                    ),
                    (
                        *v,
                        Tensor {
                            shape: tv.shape.clone(),
                            data: gv,
                        },
                    ),
                ]
            }
            Op::PairwiseDiff(x) => {
                let tx = val(*x);
                let (n, c) = (tx.shape[0], tx.shape[1]);
                let mut gx = vec![0.0; n * c];
                for i in 0..n {
                    for j in 0..n {
                        let base = (i * n + j) * c;
                        for k in 0..c {
                            let gg = g.data[base + k];
                            gx[i * c + k] += gg;
                            gx[j * c + k] -= gg;
                        }
                    }
                }
                vec![(
                    *x,
                    Tensor {
                        shape: tx.shape.clone(),
                        data: gx,
                    },
                )]
            }
            Op::Reshape(a) => vec![(
                *a,
                Tensor {
                    shape: val(*a).shape.clone(),
                    data: g.data.clone(),
                },
            )],
            Op::SelectRows(a, rows) => {
                let ta = val(*a);
                let c = ta.shape[1];
                let mut ga = Tensor::zeros(&ta.shape);
                for (k, &i) in rows.iter().enumerate() {
                    for (acc, &x) in ga.data[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g.data[k * c..(k + 1) * c])
                    {
                        *acc += x;
                    }
                }
                vec![(*a, ga)]
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let t = val(p);
                        let data = g.data[offset..offset + t.len()].to_vec();
                        offset += t.len();
                        (
                            p,
                            Tensor {
                                shape: t.shape.clone(),
                                data,
                            },
                        )
                    })
                    .collect()
            }
            Op::NormalizeRows(a) => {
                let ta = val(*a);
                let c = ta.shape[1];
                let mut out = Tensor::zeros(&ta.shape);
                for (r, (xrow, grow)) in ta.data.chunks(c).zip(g.data.chunks(c)).enumerate() {
                    let total: f64 = xrow.iter().sum();
                    if total == 0.0 {
                        continue;
                    }
                    let yrow = &y.data[r * c..(r + 1) * c];
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for (o, &gv) in out.data[r * c..(r + 1) * c].iter_mut().zip(grow) {
                        *o = (gv - dot) / total;
                    }
                }
                vec![(*a, out)]
            }
            Op::NllMean(p, labels) => {
                let tp = val(*p);
                let c = tp.shape[1];
                let scale = g.item() / labels.len() as f64;
                let mut out = Tensor::zeros(&tp.shape);
                for (i, &yv) in labels.iter().enumerate() {
                    let pv = tp.data[i * c + yv];
                    if pv > PROB_FLOOR {
                        out.data[i * c + yv] = -scale / pv;
                    }
                }
                vec![(*p, out)]
            }
            Op::BceMean(p, targets) => {
                let tp = val(*p);
                let scale = g.item() / tp.len() as f64;
                let out = zip(tp, targets, |p, y| {
                    let mut d = 0.0;
                    if y > 0.0 && p > PROB_FLOOR {
                        d -= y / p;
                    }
                    if y < 1.0 && 1.0 - p > PROB_FLOOR {
                        d += (1.0 - y) / (1.0 - p);
                    }
                    scale * d
                });
                vec![(*p, out)]
            }
            Op::BceLogitsMean(x, targets) => {
                let scale = g.item() / targets.len() as f64;
                vec![(*x, zip(val(*x), targets, |x, y| scale * (sigmoid(x) - y)))]
            }
        }
    }
}
