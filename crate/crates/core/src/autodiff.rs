//! Reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Graph`] is the computation record for one forward pass: every
//! operation appends a node holding its forward value and parent handles,
//! so nodes are always in topological order. [`Graph::backward`] walks the
//! record in reverse from a scalar loss.
//!
//! Broadcasting is limited to scalar-with-tensor in the elementwise ops.
//! Row/column alignment goes through the explicit `add_row` / `mul_col` ops.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};
use crate::tensor::{self, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pointwise {
    Tanh,
    Sigmoid,
    Exp,
    Ln,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Binary(Binary, Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Unary(Pointwise, Var),
    Scale(Var, f64),
    Shift(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SumAll(Var),
    RowSum(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation record for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of a scalar loss with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss or is a constant.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf for a model parameter; repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(params.value(id).clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn param_by_name(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        let id = params.require(name)?;
        Ok(self.param(params, id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_transposed(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMulT(a, b), ng))
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let f = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let out = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if tb.is_scalar() {
            let y = tb.item();
            ta.map(|x| f(x, y))
        } else if ta.is_scalar() {
            let x = ta.item();
            tb.map(|y| f(x, y))
        } else {
            return Err(dim_err("elementwise", ta, tb));
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Binary(kind, a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// `x (B x N) + row (1 x N)` added to every row.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        if !tx.is_rank2() || tr.shape() != [1, tx.cols()] {
            return Err(dim_err("add_row", tx, tr));
        }
        let mut out = tx.clone();
        let cols = tx.cols();
        for chunk in out.data_mut().chunks_mut(cols) {
            for (o, r) in chunk.iter_mut().zip(tr.data()) {
                *o += r;
            }
        }
        let ng = self.needs(x) || self.needs(row);
        Ok(self.push(out, Op::AddRow(x, row), ng))
    }

    /// `x (B x N)` with each row scaled by the matching entry of `col (B x 1)`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (tx, tc) = (self.value(x), self.value(col));
        if !tx.is_rank2() || tc.shape() != [tx.rows(), 1] {
            return Err(dim_err("mul_col", tx, tc));
        }
        let mut out = tx.clone();
        let cols = tx.cols();
        for (chunk, s) in out.data_mut().chunks_mut(cols).zip(tc.data()) {
            for o in chunk.iter_mut() {
                *o *= s;
            }
        }
        let ng = self.needs(x) || self.needs(col);
        Ok(self.push(out, Op::MulCol(x, col), ng))
    }

    pub fn pointwise(&mut self, kind: Pointwise, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let out = match kind {
            Pointwise::Tanh => tx.map(f64::tanh),
            Pointwise::Sigmoid => tx.map(sigmoid),
            Pointwise::Exp => tx.map(f64::exp),
            Pointwise::Neg => tx.map(|v| -v),
            Pointwise::Ln => {
                if let Some(bad) = tx.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                    return Err(Error::Domain {
                        op: "ln",
                        detail: format!("non-positive input {bad}"),
                    });
                }
                tx.map(f64::ln)
            }
        };
        let ng = self.needs(x);
        Ok(self.push(out, Op::Unary(kind, x), ng))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.pointwise(Pointwise::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.pointwise(Pointwise::Sigmoid, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.pointwise(Pointwise::Exp, x)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.pointwise(Pointwise::Ln, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.pointwise(Pointwise::Neg, x)
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let ng = self.needs(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    /// Add a constant.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        let ng = self.needs(x);
        self.push(out, Op::Shift(x), ng)
    }

    pub fn softmax_last_dim(&mut self, x: Var) -> Var {
        let out = self.value(x).softmax_last_dim();
        let ng = self.needs(x);
        self.push(out, Op::Softmax(x), ng)
    }

    pub fn log_softmax_last_dim(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let cols = out.cols();
        for slice in out.data_mut().chunks_mut(cols) {
            tensor::log_softmax_in_place(slice);
        }
        let ng = self.needs(x);
        self.push(out, Op::LogSoftmax(x), ng)
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(x);
        self.push(out, Op::SumAll(x), ng)
    }

    /// `B x N -> B x 1`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let sums = tx.data().chunks(tx.cols()).map(|r| r.iter().sum()).collect();
        let out = Tensor::column_vector(sums);
        let ng = self.needs(x);
        self.push(out, Op::RowSum(x), ng)
    }

    /// Concatenate along columns; all parts share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of zero tensors"))?;
        let rows = self.value(*first).rows();
        for p in parts {
            let t = self.value(*p);
            if !t.is_rank2() || t.rows() != rows {
                return Err(dim_err("concat_cols", self.value(*first), t));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), ng))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if !tx.is_rank2() || len == 0 || start + len > tx.cols() {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: tx.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(tx.rows() * len);
        for r in 0..tx.rows() {
            data.extend_from_slice(&tx.row(r)[start..start + len]);
        }
        let out = Tensor::matrix(tx.rows(), len, data)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Slice(x, start), ng))
    }

    /// Row lookup: `table (V x E)`, `ids` of length B -> `B x E`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if ids.is_empty() {
            return Err(Error::contract("gather_rows with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= tt.rows()) {
            return Err(Error::Dimension {
                op: "gather_rows",
                left: tt.shape().to_vec(),
                right: vec![bad],
            });
        }
        let mut data = Vec::with_capacity(ids.len() * tt.cols());
        for &i in ids {
            data.extend_from_slice(tt.row(i));
        }
        let out = Tensor::matrix(ids.len(), tt.cols(), data)?;
        let ng = self.needs(table);
        Ok(self.push(out, Op::Gather(table, ids.to_vec()), ng))
    }

    /// Per-row column pick: `x (B x V)`, `cols` of length B -> `B x 1`.
    pub fn pick_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if cols.len() != tx.rows() || cols.iter().any(|&c| c >= tx.cols()) {
            return Err(Error::Dimension {
                op: "pick_cols",
                left: tx.shape().to_vec(),
                right: vec![cols.len()],
            });
        }
        let data = cols.iter().enumerate().map(|(r, &c)| tx.get(r, c)).collect();
        let out = Tensor::column_vector(data);
        let ng = self.needs(x);
        Ok(self.push(out, Op::Pick(x, cols.to_vec()), ng))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].needs_grad).map(|data| Tensor::new(
                    self.nodes[i].value.shape().to_vec(),
                    data,
                )
                .expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Add this record's parameter gradients into the parameter accumulators.
    pub fn accumulate_param_grads(&self, grads: &Gradients, params: &mut ParamSet) {
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                for (acc, x) in params.grad_mut(id).data_mut().iter_mut().zip(g.data()) {
                    *acc += x;
                }
            }
        }
    }

    /// The parameter a leaf was created from, if any.
    pub fn param_of(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    /// Backward pass from `loss` followed by accumulation into `params`.
    pub fn backward_into(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        let grads = self.backward(loss)?;
        self.accumulate_param_grads(&grads, params);
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.needs(*a) {
                    tensor::gemm_a_bt_acc(g, tb.data(), self.slot(*a, grads), m, n, k);
                }
                if self.needs(*b) {
                    tensor::gemm_at_b_acc(ta.data(), g, self.slot(*b, grads), m, k, n);
                }
            }
            Op::MatMulT(a, b) => {
                // out = a b^T, a: m x n, b: k x n, g: m x k
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, n, k) = (ta.rows(), ta.cols(), tb.rows());
                if self.needs(*a) {
                    tensor::gemm_acc(g, tb.data(), self.slot(*a, grads), m, k, n);
                }
                if self.needs(*b) {
                    tensor::gemm_at_b_acc(g, ta.data(), self.slot(*b, grads), m, k, n);
                }
            }
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                for (side, this, other) in [(0, *a, tb), (1, *b, ta)] {
                    if !self.needs(this) {
                        continue;
                    }
                    let sign = if side == 1 && *kind == Binary::Sub { -1.0 } else { 1.0 };
                    let this_t = self.value(this);
                    let local = |idx: usize| -> f64 {
                        match kind {
                            Binary::Add | Binary::Sub => sign,
                            Binary::Mul => {
                                if other.is_scalar() && other.numel() != out.numel() {
                                    other.item()
                                } else {
                                    other.data()[idx]
                                }
                            }
                        }
                    };
                    let slot = self.slot(this, grads);
                    if this_t.numel() == out.numel() {
                        for (idx, s) in slot.iter_mut().enumerate() {
                            *s += g[idx] * local(idx);
                        }
                    } else {
                        // this side was the broadcast scalar
                        let total: f64 = (0..out.numel()).map(|idx| g[idx] * local(idx)).sum();
                        slot[0] += total;
                    }
                }
            }
            Op::AddRow(x, row) => {
                if self.needs(*x) {
                    add_into(self.slot(*x, grads), g);
                }
                if self.needs(*row) {
                    let slot = self.slot(*row, grads);
                    for chunk in g.chunks(slot.len()) {
                        add_into(slot, chunk);
                    }
                }
            }
            Op::MulCol(x, col) => {
                let (tx, tc) = (self.value(*x), self.value(*col));
                let cols = tx.cols();
                if self.needs(*x) {
                    let slot = self.slot(*x, grads);
                    for ((s, gr), c) in slot.chunks_mut(cols).zip(g.chunks(cols)).zip(tc.data()) {
                        for (sv, gv) in s.iter_mut().zip(gr) {
                            *sv += gv * c;
                        }
                    }
                }
                if self.needs(*col) {
                    let slot = self.slot(*col, grads);
                    for (r, (xr, gr)) in tx.data().chunks(cols).zip(g.chunks(cols)).enumerate() {
                        slot[r] += xr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            Op::Unary(kind, x) => {
                let tx = self.value(*x);
                let slot = self.slot(*x, grads);
                for idx in 0..slot.len() {
                    let y = out.data()[idx];
                    let d = match kind {
                        Pointwise::Tanh => 1.0 - y * y,
                        Pointwise::Sigmoid => y * (1.0 - y),
                        Pointwise::Exp => y,
                        Pointwise::Ln => 1.0 / tx.data()[idx],
                        Pointwise::Neg => -1.0,
                    };
                    slot[idx] += g[idx] * d;
                }
            }
            Op::Scale(x, c) => {
                for (s, gv) in self.slot(*x, grads).iter_mut().zip(g) {
                    *s += gv * c;
                }
            }
            Op::Shift(x) => add_into(self.slot(*x, grads), g),
            Op::Softmax(x) => {
                let cols = out.cols();
                let slot = self.slot(*x, grads);
                for ((s, y), gr) in slot.chunks_mut(cols).zip(out.data().chunks(cols)).zip(g.chunks(cols)) {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((sv, yv), gv) in s.iter_mut().zip(y).zip(gr) {
                        *sv += yv * (gv - dot);
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let cols = out.cols();
                let slot = self.slot(*x, grads);
                for ((s, y), gr) in slot.chunks_mut(cols).zip(out.data().chunks(cols)).zip(g.chunks(cols)) {
                    let total: f64 = gr.iter().sum();
                    for ((sv, yv), gv) in s.iter_mut().zip(y).zip(gr) {
                        *sv += gv - yv.exp() * total;
                    }
                }
            }
            Op::SumAll(x) => {
                for s in self.slot(*x, grads).iter_mut() {
                    *s += g[0];
                }
            }
            Op::RowSum(x) => {
                let cols = self.value(*x).cols();
                for (s, gv) in self.slot(*x, grads).chunks_mut(cols).zip(g) {
                    for sv in s.iter_mut() {
                        *sv += gv;
                    }
                }
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.needs(*p) {
                        let slot = self.slot(*p, grads);
                        for (s, gr) in slot.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(s, &gr[offset..offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice(x, start) => {
                let (w, total) = (out.cols(), self.value(*x).cols());
                let slot = self.slot(*x, grads);
                for (s, gr) in slot.chunks_mut(total).zip(g.chunks(w)) {
                    add_into(&mut s[*start..*start + w], gr);
                }
            }
            Op::Gather(table, ids) => {
                let cols = out.cols();
                let slot = self.slot(*table, grads);
                for (&id, gr) in ids.iter().zip(g.chunks(cols)) {
                    add_into(&mut slot[id * cols..(id + 1) * cols], gr);
                }
            }
            Op::Pick(x, cols) => {
                let width = self.value(*x).cols();
                let slot = self.slot(*x, grads);
                for (r, (&c, gv)) in cols.iter().zip(g).enumerate() {
                    slot[r * width + c] += gv;
                }
            }
        }
    }

    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<f64>>]) -> &'g mut [f64] {
        let n = self.nodes[v.0].value.numel();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pointwise_fixed_points() {
        let mut g = Graph::new();
        let zero = g.constant(Tensor::scalar(0.0));
        let t = g.tanh(zero).unwrap();
        let s = g.sigmoid(zero).unwrap();
        assert_eq!(g.value(t).item(), 0.0);
        assert_eq!(g.value(s).item(), 0.5);
        for x in [0.5, 1.0, 3.0] {
            let v = g.constant(Tensor::scalar(x));
            let l = g.ln(v).unwrap();
            let e = g.exp(l).unwrap();
            assert!(close(g.value(e).item(), x, 1e-15));
        }
    }

    #[test]
    fn ln_rejects_non_positive() {
        let mut g = Graph::new();
        let v = g.constant(Tensor::row_vector(vec![1.0, 0.0]));
        assert!(matches!(g.ln(v), Err(Error::Domain { .. })));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn grad_of_square() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn grad_of_sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(0.0));
        let y = g.sigmoid(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::row_vector(vec![1.0, 2.0]));
        let y = g.tanh(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_backward_accumulates_into_params() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::scalar(2.0)).unwrap();
        let mut g = Graph::new();
        let w = g.param(&ps, id);
        let y = g.mul(w, w).unwrap();
        g.backward_into(y, &mut ps).unwrap();
        g.backward_into(y, &mut ps).unwrap();
        assert_eq!(ps.grad(id).item(), 8.0);
        ps.zero_grads();
        assert_eq!(ps.grad(id).item(), 0.0);
    }

    #[test]
    fn param_leaf_is_shared() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::scalar(1.0)).unwrap();
        let mut g = Graph::new();
        assert_eq!(g.param(&ps, id), g.param(&ps, id));
    }

    #[test]
    fn scalar_broadcast_only() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[1, 3]));
        let s = g.constant(Tensor::scalar(2.0));
        assert!(g.add(a, b).is_err());
        assert!(g.mul(a, s).is_ok());
        assert!(g.add_row(a, b).is_ok());
    }
}
