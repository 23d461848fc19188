//! Reverse-mode tape over dense matrices.
//!
//! Besides the generic layers (affine maps, nonlinearities, dropout,
//! gathers) the tape has a handful of *block* operations for batched
//! fully connected graphs. A batch of `B` graphs with `d` nodes each is
//! stored as a `(B*d) x c` node matrix; pairwise quantities live in a
//! `(B*d*d) x 1` column where row `(b*d + i)*d + j` belongs to the edge from
//! source `j` to destination `i` of graph `b`. Softmax over each run of `d`
//! consecutive rows therefore normalizes over sources per destination.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matrix::{gemm_acc, Matrix};
use super::params::{GradSet, ParamId, ParamSet};
use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Relu(Var),
    Elu(Var),
    Dropout(Var, Vec<f64>),
    Gather(Var, Vec<Option<usize>>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Gatv2Scores {
        left: Var,
        right: Var,
        attn: Var,
        group: usize,
        slope: f64,
    },
    BlockDot {
        q: Var,
        k: Var,
        group: usize,
        scale: f64,
    },
    GroupSoftmax(Var, usize),
    BlockAttend {
        alpha: Var,
        v: Var,
        group: usize,
    },
    BlockPool {
        weights: Var,
        h: Var,
        group: usize,
    },
    WeightedBce {
        logits: Var,
        targets: Vec<f64>,
        pos_weight: f64,
    },
    MeanSquared {
        pred: Var,
        targets: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Relu(_) => "relu",
            Op::Elu(_) => "elu",
            Op::Dropout(..) => "dropout",
            Op::Gather(..) => "gather",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Gatv2Scores { .. } => "gatv2_scores",
            Op::BlockDot { .. } => "block_dot",
            Op::GroupSoftmax(..) => "group_softmax",
            Op::BlockAttend { .. } => "block_attend",
            Op::BlockPool { .. } => "block_pool",
            Op::WeightedBce { .. } => "weighted_bce",
            Op::MeanSquared { .. } => "mean_squared",
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    mode: Mode,
    rng: ChaCha8Rng,
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    out
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet, mode: Mode, dropout_seed: u64) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(dropout_seed),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Which side of zero every input to a piecewise activation falls on.
    /// Two evaluations with equal patterns lie on the same linear piece.
    pub(crate) fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu(a, _) | Op::Relu(a) | Op::Elu(a) => {
                    out.extend(self.value(*a).data.iter().map(|&x| x >= 0.0));
                }
                Op::Gatv2Scores {
                    left, right, group, ..
                } => {
                    let (l, r, d) = (self.value(*left), self.value(*right), *group);
                    for b in 0..l.rows / d {
                        for i in 0..d {
                            let li = l.row(b * d + i);
                            for j in 0..d {
                                let rj = r.row(b * d + j);
                                out.extend(li.iter().zip(rj).map(|(x, y)| x + y >= 0.0));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Result<Var> {
        let idx = self.nodes.len();
        if !value.all_finite() {
            return Err(Error::Numeric(format!(
                "node {idx} ({}) produced a non-finite value",
                op.name()
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(idx))
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn expect_shape(&self, v: Var, shape: (usize, usize), what: &str) -> Result<()> {
        if self.shape(v) != shape {
            return Err(Error::arg(format!(
                "{what}: expected shape {shape:?}, got {:?}",
                self.shape(v)
            )));
        }
        Ok(())
    }

    pub fn input(&mut self, m: Matrix) -> Result<Var> {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = self.params.get(id).clone();
        // parameters are validated finite at construction/update time
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::arg(format!("unknown parameter `{name}`")))?;
        Ok(self.param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::arg(format!("matmul {ar}x{ac} by {br}x{bc}")));
        }
        let mut out = Matrix::zeros(ar, bc);
        gemm_acc(self.value(a), false, self.value(b), false, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    /// `x + bias` with a `1 x c` bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        self.expect_shape(bias, (1, c), "add_row bias")?;
        let mut out = self.value(x).clone();
        let b = self.value(bias).data.clone();
        for i in 0..r {
            for (o, bv) in out.row_mut(i).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(x, bias))
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let wv = self.param(w);
        let bv = self.param(b);
        let xw = self.matmul(x, wv)?;
        self.add_row(xw, bv)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a);
        self.expect_shape(b, shape, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x *= s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = leaky(*x, slope));
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.data
            .iter_mut()
            .for_each(|x| *x = if *x > 0.0 { *x } else { x.exp_m1() });
        self.push(out, Op::Elu(a))
    }

    /// Inverted dropout with drop probability `p`; identity in eval mode.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(a);
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::arg(format!("dropout probability {p} not in [0,1)")));
        }
        let keep = 1.0 - p;
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut out = self.value(a).clone();
        for (o, m) in out.data.iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout(a, mask))
    }

    /// Rows of `table`; `None` yields a zero row.
    pub fn gather(&mut self, table: Var, idx: Vec<Option<usize>>) -> Result<Var> {
        let (tr, c) = self.shape(table);
        if let Some(bad) = idx.iter().flatten().find(|&&i| i >= tr) {
            return Err(Error::arg(format!("gather index {bad} out of {tr} rows")));
        }
        let mut out = Matrix::zeros(idx.len(), c);
        let t = self.value(table);
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = i {
                out.row_mut(r).copy_from_slice(t.row(*i));
            }
        }
        self.push(out, Op::Gather(table, idx))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::arg("concat of nothing"))?;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::arg("concat_cols row mismatch"));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::arg(format!("slice {start}..{} of {c} columns", start + len)));
        }
        let mut out = Matrix::zeros(r, len);
        let src = self.value(a);
        for i in 0..r {
            out.row_mut(i).copy_from_slice(&src.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    fn check_block(&self, v: Var, group: usize, what: &str) -> Result<usize> {
        let rows = self.shape(v).0;
        if group == 0 || !rows.is_multiple_of(group) {
            return Err(Error::arg(format!("{what}: {rows} rows not a multiple of group {group}")));
        }
        Ok(rows / group)
    }

    /// GATv2 edge scores `attn^T LeakyReLU(left_i + right_j)` for every
    /// ordered pair within each graph, where `left` and `right` already hold
    /// the transformed destination and source embeddings.
    pub fn gatv2_scores(
        &mut self,
        left: Var,
        right: Var,
        attn: Var,
        group: usize,
        slope: f64,
    ) -> Result<Var> {
        let batches = self.check_block(left, group, "gatv2_scores")?;
        let c = self.shape(left).1;
        self.expect_shape(right, self.shape(left), "gatv2_scores right")?;
        self.expect_shape(attn, (c, 1), "gatv2_scores attention vector")?;
        let (l, r, a) = (self.value(left), self.value(right), &self.value(attn).data);
        let d = group;
        let mut out = Matrix::zeros(batches * d * d, 1);
        for b in 0..batches {
            for i in 0..d {
                let li = l.row(b * d + i);
                for j in 0..d {
                    let rj = r.row(b * d + j);
                    let mut s = 0.0;
                    for k in 0..c {
                        s += a[k] * leaky(li[k] + rj[k], slope);
                    }
                    out.data[(b * d + i) * d + j] = s;
                }
            }
        }
        self.push(
            out,
            Op::Gatv2Scores {
                left,
                right,
                attn,
                group,
                slope,
            },
        )
    }

    /// Scaled dot products `scale * q_i . k_j` for every ordered pair.
    pub fn block_dot(&mut self, q: Var, k: Var, group: usize, scale: f64) -> Result<Var> {
        let batches = self.check_block(q, group, "block_dot")?;
        self.expect_shape(k, self.shape(q), "block_dot keys")?;
        let (qm, km) = (self.value(q), self.value(k));
        let d = group;
        let mut out = Matrix::zeros(batches * d * d, 1);
        for b in 0..batches {
            for i in 0..d {
                let qi = qm.row(b * d + i);
                for j in 0..d {
                    let kj = km.row(b * d + j);
                    let s: f64 = qi.iter().zip(kj).map(|(x, y)| x * y).sum();
                    out.data[(b * d + i) * d + j] = scale * s;
                }
            }
        }
        self.push(out, Op::BlockDot { q, k, group, scale })
    }

    /// Softmax over each run of `group` consecutive entries of a column.
    pub fn group_softmax(&mut self, x: Var, group: usize) -> Result<Var> {
        if self.shape(x).1 != 1 {
            return Err(Error::arg("group_softmax expects a column"));
        }
        self.check_block(x, group, "group_softmax")?;
        let mut out = self.value(x).clone();
        for chunk in out.data.chunks_mut(group) {
            softmax_in_place(chunk);
        }
        self.push(out, Op::GroupSoftmax(x, group))
    }

    /// `out_i = sum_j alpha_(i,j) v_j` within each graph.
    pub fn block_attend(&mut self, alpha: Var, v: Var, group: usize) -> Result<Var> {
        let batches = self.check_block(v, group, "block_attend")?;
        let d = group;
        self.expect_shape(alpha, (batches * d * d, 1), "block_attend weights")?;
        let c = self.shape(v).1;
        let (am, vm) = (self.value(alpha), self.value(v));
        let mut out = Matrix::zeros(batches * d, c);
        for b in 0..batches {
            for i in 0..d {
                let row = out.row_mut(b * d + i);
                for j in 0..d {
                    let w = am.data[(b * d + i) * d + j];
                    for (o, x) in row.iter_mut().zip(vm.row(b * d + j)) {
                        *o += w * x;
                    }
                }
            }
        }
        self.push(out, Op::BlockAttend { alpha, v, group })
    }

    /// Graph-level readout `g_b = sum_i w_(b,i) h_(b,i)`.
    pub fn block_pool(&mut self, weights: Var, h: Var, group: usize) -> Result<Var> {
        let batches = self.check_block(h, group, "block_pool")?;
        self.expect_shape(weights, (batches * group, 1), "block_pool weights")?;
        let c = self.shape(h).1;
        let (wm, hm) = (self.value(weights), self.value(h));
        let mut out = Matrix::zeros(batches, c);
        for b in 0..batches {
            let row = out.row_mut(b);
            for i in 0..group {
                let w = wm.data[b * group + i];
                for (o, x) in row.iter_mut().zip(hm.row(b * group + i)) {
                    *o += w * x;
                }
            }
        }
        self.push(out, Op::BlockPool { weights, h, group })
    }

    /// Mean over the batch of `-[w+ y log p + (1-y) log(1-p)]` with
    /// `p = sigmoid(logit)`, evaluated in log-sum-exp form.
    pub fn weighted_bce(&mut self, logits: Var, targets: &[f64], pos_weight: f64) -> Result<Var> {
        let n = targets.len();
        if n == 0 {
            return Err(Error::arg("empty batch"));
        }
        self.expect_shape(logits, (n, 1), "weighted_bce logits")?;
        let z = &self.value(logits).data;
        let total: f64 = z
            .iter()
            .zip(targets)
            .map(|(&z, &y)| pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z))
            .sum();
        self.push(
            Matrix::scalar(total / n as f64),
            Op::WeightedBce {
                logits,
                targets: targets.to_vec(),
                pos_weight,
            },
        )
    }

    pub fn mean_squared(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        let n = targets.len();
        if n == 0 || self.value(pred).len() != n {
            return Err(Error::arg("mean_squared size mismatch"));
        }
        let total: f64 = self
            .value(pred)
            .data
            .iter()
            .zip(targets)
            .map(|(p, t)| (p - t).powi(2))
            .sum();
        self.push(
            Matrix::scalar(total / n as f64),
            Op::MeanSquared {
                pred,
                targets: targets.to_vec(),
            },
        )
    }

    /// Gradients of the scalar node `root` with respect to every parameter.
    pub fn gradients(&self, root: Var) -> Result<GradSet> {
        if self.shape(root) != (1, 1) {
            return Err(Error::arg("backward root must be a scalar"));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(1.0));
        let mut out = self.params.zeros_like();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.grads[id.0].add_assign(&g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    gemm_acc(&g, false, bv, true, buf(&mut grads, *a, av));
                    gemm_acc(av, true, &g, false, buf(&mut grads, *b, bv));
                }
                Op::AddRow(x, bias) => {
                    let bg = buf(&mut grads, *bias, self.value(*bias));
                    for r in 0..g.rows {
                        for (acc, v) in bg.data.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    buf(&mut grads, *x, &g).add_assign(&g);
                }
                Op::Add(a, b) => {
                    buf(&mut grads, *a, &g).add_assign(&g);
                    buf(&mut grads, *b, &g).add_assign(&g);
                }
                Op::Scale(a, s) => {
                    let dst = buf(&mut grads, *a, &g);
                    for (d, v) in dst.data.iter_mut().zip(&g.data) {
                        *d += s * v;
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let dst = buf(&mut grads, *a, x);
                    for ((d, v), xi) in dst.data.iter_mut().zip(&g.data).zip(&x.data) {
                        *d += if *xi >= 0.0 { *v } else { slope * v };
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let dst = buf(&mut grads, *a, x);
                    for ((d, v), xi) in dst.data.iter_mut().zip(&g.data).zip(&x.data) {
                        if *xi > 0.0 {
                            *d += v;
                        }
                    }
                }
                Op::Elu(a) => {
                    let x = self.value(*a);
                    let dst = buf(&mut grads, *a, x);
                    for ((d, v), xi) in dst.data.iter_mut().zip(&g.data).zip(&x.data) {
                        *d += if *xi > 0.0 { *v } else { v * xi.exp() };
                    }
                }
                Op::Dropout(a, mask) => {
                    let dst = buf(&mut grads, *a, &g);
                    for ((d, v), m) in dst.data.iter_mut().zip(&g.data).zip(mask) {
                        *d += v * m;
                    }
                }
                Op::Gather(table, idx) => {
                    let dst = buf(&mut grads, *table, self.value(*table));
                    for (r, i) in idx.iter().enumerate() {
                        if let Some(i) = i {
                            for (d, v) in dst.row_mut(*i).iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let w = pv.cols;
                        let dst = buf(&mut grads, *p, pv);
                        for r in 0..g.rows {
                            for (d, v) in dst.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *d += v;
                            }
                        }
                        off += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let dst = buf(&mut grads, *a, self.value(*a));
                    for r in 0..g.rows {
                        for (d, v) in dst.row_mut(r)[*start..*start + g.cols].iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                }
                Op::Gatv2Scores {
                    left,
                    right,
                    attn,
                    group,
                    slope,
                } => {
                    let (l, r, a) = (self.value(*left), self.value(*right), self.value(*attn));
                    let (c, d) = (l.cols, *group);
                    let mut dl = Matrix::zeros(l.rows, c);
                    let mut dr = Matrix::zeros(r.rows, c);
                    let mut da = vec![0.0; c];
                    for b in 0..l.rows / d {
                        for i in 0..d {
                            let li = l.row(b * d + i);
                            for j in 0..d {
                                let gs = g.data[(b * d + i) * d + j];
                                if gs == 0.0 {
                                    continue;
                                }
                                let rj = r.row(b * d + j);
                                let (dli, drj) = (b * d + i, b * d + j);
                                for k in 0..c {
                                    let z = li[k] + rj[k];
                                    let (act, deriv) = if z >= 0.0 { (z, 1.0) } else { (slope * z, *slope) };
                                    da[k] += gs * act;
                                    let dz = gs * a.data[k] * deriv;
                                    dl.data[dli * c + k] += dz;
                                    dr.data[drj * c + k] += dz;
                                }
                            }
                        }
                    }
                    buf(&mut grads, *left, l).add_assign(&dl);
                    buf(&mut grads, *right, r).add_assign(&dr);
                    buf(&mut grads, *attn, a).add_assign(&Matrix::column(da));
                }
                Op::BlockDot { q, k, group, scale } => {
                    let (qm, km) = (self.value(*q), self.value(*k));
                    let (c, d) = (qm.cols, *group);
                    let mut dq = Matrix::zeros(qm.rows, c);
                    let mut dk = Matrix::zeros(km.rows, c);
                    for b in 0..qm.rows / d {
                        for i in 0..d {
                            for j in 0..d {
                                let gs = scale * g.data[(b * d + i) * d + j];
                                let (qi, kj) = (b * d + i, b * d + j);
                                for t in 0..c {
                                    dq.data[qi * c + t] += gs * km.data[kj * c + t];
                                    dk.data[kj * c + t] += gs * qm.data[qi * c + t];
                                }
                            }
                        }
                    }
                    buf(&mut grads, *q, qm).add_assign(&dq);
                    buf(&mut grads, *k, km).add_assign(&dk);
                }
                Op::GroupSoftmax(x, group) => {
                    let y = &node.value;
                    let dst = buf(&mut grads, *x, y);
                    for ((dc, yc), gc) in dst
                        .data
                        .chunks_mut(*group)
                        .zip(y.data.chunks(*group))
                        .zip(g.data.chunks(*group))
                    {
                        let dot: f64 = yc.iter().zip(gc).map(|(a, b)| a * b).sum();
                        for ((d, yi), gi) in dc.iter_mut().zip(yc).zip(gc) {
                            *d += yi * (gi - dot);
                        }
                    }
                }
                Op::BlockAttend { alpha, v, group } => {
                    let (am, vm) = (self.value(*alpha), self.value(*v));
                    let (c, d) = (vm.cols, *group);
                    let mut dalpha = vec![0.0; am.rows];
                    let mut dv = Matrix::zeros(vm.rows, c);
                    for b in 0..vm.rows / d {
                        for i in 0..d {
                            let gi = g.row(b * d + i);
                            for j in 0..d {
                                let e = (b * d + i) * d + j;
                                let vj = vm.row(b * d + j);
                                dalpha[e] = gi.iter().zip(vj).map(|(x, y)| x * y).sum();
                                let w = am.data[e];
                                for (dd, x) in dv.row_mut(b * d + j).iter_mut().zip(gi) {
                                    *dd += w * x;
                                }
                            }
                        }
                    }
                    buf(&mut grads, *alpha, am).add_assign(&Matrix::column(dalpha));
                    buf(&mut grads, *v, vm).add_assign(&dv);
                }
                Op::BlockPool { weights, h, group } => {
                    let (wm, hm) = (self.value(*weights), self.value(*h));
                    let c = hm.cols;
                    let mut dw = vec![0.0; wm.rows];
                    let mut dh = Matrix::zeros(hm.rows, c);
                    for b in 0..g.rows {
                        let gb = g.row(b);
                        for i in 0..*group {
                            let r = b * group + i;
                            dw[r] = gb.iter().zip(hm.row(r)).map(|(x, y)| x * y).sum();
                            let w = wm.data[r];
                            for (dd, x) in dh.row_mut(r).iter_mut().zip(gb) {
                                *dd += w * x;
                            }
                        }
                    }
                    buf(&mut grads, *weights, wm).add_assign(&Matrix::column(dw));
                    buf(&mut grads, *h, hm).add_assign(&dh);
                }
                Op::WeightedBce {
                    logits,
                    targets,
                    pos_weight,
                } => {
                    let z = self.value(*logits);
                    let scale = g.data[0] / targets.len() as f64;
                    let dst = buf(&mut grads, *logits, z);
                    for ((d, &zi), &y) in dst.data.iter_mut().zip(&z.data).zip(targets) {
                        let p = sigmoid(zi);
                        *d += scale * (pos_weight * y * (p - 1.0) + (1.0 - y) * p);
                    }
                }
                Op::MeanSquared { pred, targets } => {
                    let p = self.value(*pred);
                    let scale = 2.0 * g.data[0] / targets.len() as f64;
                    let dst = buf(&mut grads, *pred, p);
                    for ((d, pi), t) in dst.data.iter_mut().zip(&p.data).zip(targets) {
                        *d += scale * (pi - t);
                    }
                }
            }
        }
        if let Some(bad) = out.grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter `{}`",
                self.params.params[bad].name
            )));
        }
        Ok(out)
    }
}

/// Gradient accumulator for `v`, created as zeros shaped like `like`.
fn buf<'a>(grads: &'a mut [Option<Matrix>], v: Var, like: &Matrix) -> &'a mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(like.rows, like.cols))
}
