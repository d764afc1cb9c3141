//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node holding its output value and the inputs its
//! backward rule needs. Nodes are appended in execution order, so the tape is
//! topologically sorted by construction and [`Tape::backward`] is a single
//! reverse sweep.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{self, dot, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Gelu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        /// Per-row (mean, 1/std) cached from the forward pass.
        stats: Vec<(f64, f64)>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Reshape(Var),
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// The computation record: values and backward rules for one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.all_finite() || !self.inputs_finite(&op),
            "non-finite output from {op:?} on finite inputs"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_finite(&self, op: &Op) -> bool {
        self.inputs_of(op)
            .iter()
            .all(|v| self.nodes[v.0].value.all_finite())
    }

    fn inputs_of(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Param => vec![],
            Op::MatMul(a, b)
            | Op::MatMulBt(a, b)
            | Op::Add(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Gelu(x)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::Reshape(x)
            | Op::Transpose(x)
            | Op::SliceCols { x, .. }
            | Op::SliceRows { x, .. }
            | Op::Sum(x) => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Embedding { table, .. } => vec![*table],
            Op::ConcatCols(xs) | Op::ConcatRows(xs) => xs.clone(),
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`Tape::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(
            self.nodes[v.0].value.shape().to_vec(),
            g.clone(),
        ))
    }

    /// Records an input. `requires_grad` leaves receive gradients.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// Places a parameter on the tape. Repeated calls return the same node so
    /// every use of a parameter accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    /// Matrix product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Matrix product with the second operand transposed: `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).as_matrix("matmul_bt")?;
        let (n, k2) = self.value(b).as_matrix("matmul_bt")?;
        if k != k2 {
            return Err(self.dim_err("matmul_bt", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        tensor::gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulBt(a, b), rg))
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err(op, a, b));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let k = T::of(c);
        let v = self.value(x);
        let out = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&e| e * k).collect());
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    fn check_row_operand(&self, op: &'static str, x: Var, r: Var) -> Result<()> {
        let n = self.value(x).last_dim();
        let rv = self.value(r);
        if rv.rank() != 1 || rv.numel() != n {
            return Err(self.dim_err(op, x, r));
        }
        Ok(())
    }

    /// Adds a trailing-axis vector to every slice of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check_row_operand("add_row", x, bias)?;
        let (vx, vb) = (self.value(x), self.value(bias));
        let n = vx.last_dim();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (e, &b) in row.iter_mut().zip(vb.data()) {
                *e += b;
            }
        }
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    /// Multiplies every trailing-axis slice of `x` elementwise by `gain`.
    pub fn mul_row(&mut self, x: Var, gain: Var) -> Result<Var> {
        self.check_row_operand("mul_row", x, gain)?;
        let (vx, vg) = (self.value(x), self.value(gain));
        let n = vx.last_dim();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (e, &g) in row.iter_mut().zip(vg.data()) {
                *e *= g;
            }
        }
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        let rg = self.rg(&[x, gain]);
        Ok(self.push(out, Op::MulRow(x, gain), rg))
    }

    /// Tanh-approximated GELU: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .map(|&e| half * e * (T::one() + (c * (e + a * e * e * e)).tanh()))
            .collect();
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Softmax along the trailing axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x), None);
        let rg = self.rg(&[x]);
        self.push(out, Op::Softmax(x), rg)
    }

    /// Softmax restricted to positions where `mask` is true; masked entries get
    /// probability exactly zero. A row with no visible entry is all zeros.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::Dimension {
                op: "masked_softmax",
                lhs: self.shape(x).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let out = softmax_rows(self.value(x), Some(mask));
        let rg = self.rg(&[x]);
        // The backward rule only needs the output, so masking leaves it unchanged.
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.last_dim();
        let mut data = Vec::with_capacity(v.numel());
        for row in v.data().chunks(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&e| (e - max).exp()).sum::<T>().ln();
            data.extend(row.iter().map(|&e| e - lse));
        }
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        self.push(out, Op::LogSoftmax(x), rg)
    }

    /// Normalizes each trailing-axis slice to zero mean and unit variance,
    /// then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(Error::Parameter(format!("layer_norm eps must be > 0, got {eps}")));
        }
        self.check_row_operand("layer_norm", x, gamma)?;
        self.check_row_operand("layer_norm", x, beta)?;
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = vx.last_dim();
        let mut data = Vec::with_capacity(vx.numel());
        let mut stats = Vec::with_capacity(vx.rows());
        for row in vx.data().chunks(n) {
            let mean = row.iter().map(|e| e.as_f64()).sum::<f64>() / n as f64;
            let var = row.iter().map(|e| (e.as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            let (m, r) = (T::of(mean), T::of(rstd));
            data.extend(
                row.iter()
                    .zip(vg.data().iter().zip(vb.data()))
                    .map(|(&e, (&g, &b))| (e - m) * r * g + b),
            );
            stats.push((mean, rstd));
        }
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            },
            rg,
        ))
    }

    /// Gathers rows of `table[V×D]`; the backward pass scatter-adds.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.value(table).as_matrix("embedding")?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Input(format!(
                    "embedding id {id} out of range for table of {vocab} rows"
                )));
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let out = Tensor::from_parts(vec![ids.len(), d], data);
        let rg = self.rg(&[table]);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).as_matrix("transpose")?;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![n, m], data), Op::Transpose(x), rg))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(x).as_matrix("slice_cols")?;
        if start + len > n {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: vec![m, n],
                rhs: vec![start, len],
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![m, len], data),
            Op::SliceCols { x, start },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let m = match xs.first() {
            Some(&x) => self.value(x).as_matrix("concat_cols")?.0,
            None => return Err(Error::Contract("concat_cols of nothing".into())),
        };
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (mi, ni) = self.value(x).as_matrix("concat_cols")?;
            if mi != m {
                return Err(self.dim_err("concat_cols", xs[0], x));
            }
            widths.push(ni);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(xs);
        Ok(self.push(
            Tensor::from_parts(vec![m, total], data),
            Op::ConcatCols(xs.to_vec()),
            rg,
        ))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(x).as_matrix("slice_rows")?;
        if start + len > m {
            return Err(Error::Dimension {
                op: "slice_rows",
                lhs: vec![m, n],
                rhs: vec![start, len],
            });
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![len, n], data),
            Op::SliceRows { x, start },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let n = match xs.first() {
            Some(&x) => self.value(x).as_matrix("concat_rows")?.1,
            None => return Err(Error::Contract("concat_rows of nothing".into())),
        };
        let mut rows = 0;
        for &x in xs {
            let (mi, ni) = self.value(x).as_matrix("concat_rows")?;
            if ni != n {
                return Err(self.dim_err("concat_rows", xs[0], x));
            }
            rows += mi;
        }
        let mut data = Vec::with_capacity(rows * n);
        for &x in xs {
            data.extend_from_slice(self.value(x).data());
        }
        let rg = self.rg(xs);
        Ok(self.push(
            Tensor::from_parts(vec![rows, n], data),
            Op::ConcatRows(xs.to_vec()),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Back-propagates from the scalar `loss`. Gradients from a previous call
    /// are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradients for every parameter that took part in the last backward pass.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grad(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).as_matrix("").unwrap();
                let n = out.last_dim();
                if let Some(da) = self.slot(*a, grads) {
                    tensor::gemm_nt(g, self.value(*b).data(), da, m, n, k);
                }
                if let Some(db) = self.slot(*b, grads) {
                    tensor::gemm_tn(self.value(*a).data(), g, db, m, k, n);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.value(*a).as_matrix("").unwrap();
                let n = out.last_dim();
                if let Some(da) = self.slot(*a, grads) {
                    tensor::gemm_nn(g, self.value(*b).data(), da, m, n, k);
                }
                if let Some(db) = self.slot(*b, grads) {
                    tensor::gemm_tn(g, self.value(*a).data(), db, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(v, grads) {
                        add_into(d, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = self.slot(*a, grads) {
                    for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(self.value(*b).data()) {
                        *d += gi * bi;
                    }
                }
                if let Some(db) = self.slot(*b, grads) {
                    for ((d, &gi), &ai) in db.iter_mut().zip(g).zip(self.value(*a).data()) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale(x, c) => {
                let k = T::of(*c);
                if let Some(dx) = self.slot(*x, grads) {
                    for (d, &gi) in dx.iter_mut().zip(g) {
                        *d += gi * k;
                    }
                }
            }
            Op::AddRow(x, bias) => {
                let n = out.last_dim();
                if let Some(dx) = self.slot(*x, grads) {
                    add_into(dx, g);
                }
                if let Some(db) = self.slot(*bias, grads) {
                    for grow in g.chunks(n) {
                        add_into(db, grow);
                    }
                }
            }
            Op::MulRow(x, gain) => {
                let n = out.last_dim();
                if let Some(dx) = self.slot(*x, grads) {
                    let gv = self.value(*gain).data();
                    for (drow, grow) in dx.chunks_mut(n).zip(g.chunks(n)) {
                        for ((d, &gi), &w) in drow.iter_mut().zip(grow).zip(gv) {
                            *d += gi * w;
                        }
                    }
                }
                if let Some(dg) = self.slot(*gain, grads) {
                    let xv = self.value(*x).data();
                    for (grow, xrow) in g.chunks(n).zip(xv.chunks(n)) {
                        for ((d, &gi), &xi) in dg.iter_mut().zip(grow).zip(xrow) {
                            *d += gi * xi;
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if let Some(dx) = self.slot(*x, grads) {
                    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
                    let three = T::of(3.0);
                    for ((d, &gi), &e) in dx.iter_mut().zip(g).zip(self.value(*x).data()) {
                        let t = (c * (e + a * e * e * e)).tanh();
                        let dt = c * (T::one() + three * a * e * e);
                        *d += gi * (half * (T::one() + t) + half * e * (T::one() - t * t) * dt);
                    }
                }
            }
            Op::Softmax(x) => {
                let n = out.last_dim();
                if let Some(dx) = self.slot(*x, grads) {
                    for ((drow, grow), yrow) in
                        dx.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n))
                    {
                        let s = dot(grow, yrow);
                        for ((d, &gi), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gi - s);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let n = out.last_dim();
                if let Some(dx) = self.slot(*x, grads) {
                    for ((drow, grow), yrow) in
                        dx.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n))
                    {
                        let s: T = grow.iter().copied().sum();
                        for ((d, &gi), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += gi - y.exp() * s;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            } => {
                let n = out.last_dim();
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let xhat = |r: usize, j: usize| {
                    let (mean, rstd) = stats[r];
                    T::of((xv[r * n + j].as_f64() - mean) * rstd)
                };
                if let Some(db) = self.slot(*beta, grads) {
                    for grow in g.chunks(n) {
                        add_into(db, grow);
                    }
                }
                if let Some(dg) = self.slot(*gamma, grads) {
                    for (r, grow) in g.chunks(n).enumerate() {
                        for (j, (d, &gi)) in dg.iter_mut().zip(grow).enumerate() {
                            *d += gi * xhat(r, j);
                        }
                    }
                }
                if let Some(dx) = self.slot(*x, grads) {
                    let inv_n = T::of(1.0 / n as f64);
                    for (r, (drow, grow)) in dx.chunks_mut(n).zip(g.chunks(n)).enumerate() {
                        let rstd = T::of(stats[r].1);
                        let mut mean_dxh = T::zero();
                        let mut mean_dxh_xh = T::zero();
                        for j in 0..n {
                            let dxh = grow[j] * gv[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xhat(r, j);
                        }
                        mean_dxh = mean_dxh * inv_n;
                        mean_dxh_xh = mean_dxh_xh * inv_n;
                        for j in 0..n {
                            let dxh = grow[j] * gv[j];
                            drow[j] += rstd * (dxh - mean_dxh - xhat(r, j) * mean_dxh_xh);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = out.last_dim();
                if let Some(dt) = self.slot(*table, grads) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.slot(*x, grads) {
                    add_into(dx, g);
                }
            }
            Op::Transpose(x) => {
                let (m, n) = self.value(*x).as_matrix("").unwrap();
                if let Some(dx) = self.slot(*x, grads) {
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.value(*x).as_matrix("").unwrap();
                let len = out.last_dim();
                if let Some(dx) = self.slot(*x, grads) {
                    for i in 0..m {
                        add_into(
                            &mut dx[i * n + start..i * n + start + len],
                            &g[i * len..(i + 1) * len],
                        );
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let total = out.last_dim();
                let m = out.rows();
                let mut offset = 0;
                for &x in xs {
                    let w = self.value(x).last_dim();
                    if let Some(dx) = self.slot(x, grads) {
                        for i in 0..m {
                            add_into(
                                &mut dx[i * w..(i + 1) * w],
                                &g[i * total + offset..i * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceRows { x, start } => {
                let n = out.last_dim();
                let len = out.numel();
                if let Some(dx) = self.slot(*x, grads) {
                    add_into(&mut dx[start * n..start * n + len], g);
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let len = self.value(x).numel();
                    if let Some(dx) = self.slot(x, grads) {
                        add_into(dx, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.slot(*x, grads) {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
        }
    }

    /// Zero-initialized gradient buffer for `v`, or `None` if `v` needs none.
    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<T>>]) -> Option<&'g mut [T]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(
            grads[v.0]
                .get_or_insert_with(|| vec![T::zero(); node.value.numel()])
                .as_mut_slice(),
        )
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_rows<T: Scalar>(x: &Tensor<T>, mask: Option<&[bool]>) -> Tensor<T> {
    let n = x.last_dim();
    let mut data = Vec::with_capacity(x.numel());
    for (r, row) in x.data().chunks(n).enumerate() {
        let visible = |j: usize| mask.map_or(true, |m| m[r * n + j]);
        let max = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| visible(j))
            .map(|(_, &e)| e)
            .fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            data.extend(std::iter::repeat(T::zero()).take(n));
            continue;
        }
        let start = data.len();
        let mut total = T::zero();
        for (j, &e) in row.iter().enumerate() {
            let p = if visible(j) { (e - max).exp() } else { T::zero() };
            total += p;
            data.push(p);
        }
        for p in &mut data[start..] {
            *p = *p / total;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), data)
}
