//! Reverse-mode tape.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to run its backward rule. `backward` walks the nodes in reverse and
//! accumulates (never overwrites) gradients into each input.

use super::ops::{gemm_acc, log_sum_exp, softmax_row};
use super::{ParamId, ParamSet, Real, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<F> {
    Owned(Tensor<F>),
    Param(ParamId),
}

enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, bias: Var },
    Scale { x: Var, c: F },
    AddScalar(Var),
    MulConst { x: Var, c: Vec<F> },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    GatherRows { table: Var, idx: Vec<usize> },
    GatherCols { table: Var, idx: Vec<usize> },
    Conv1d { x: Var, w: Var, b: Var },
    MaxOverTime { c: Var, arg: usize },
    ConvPool(Box<ConvPoolSaved>),
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<F>, probs: Vec<F> },
    SoftCrossEntropy { logits: Var, targets: Vec<F>, probs: Vec<F> },
    NormalizeRows { x: Var, norms: Vec<F> },
    RowSum(Var),
    Sum(Var),
}

struct ConvPoolSaved {
    x: Var,
    w: Var,
    bias: Var,
    seq_len: usize,
    window: usize,
    argmax: Vec<usize>,
}

struct Node<F> {
    value: Value<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Records a forward computation for one backward pass.
///
/// Parameters are read through a borrowed [`ParamSet`]; their gradients come
/// back in [`Gradients`] so the caller can accumulate them after the tape is
/// dropped.
pub struct Tape<'p, F: Real> {
    params: Option<&'p ParamSet<F>>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new() -> Self {
        Self {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamSet<F>) -> Self {
        Self {
            params: Some(params),
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.expect("param node without params").tensor(*id),
        }
    }

    pub fn scalar(&self, v: Var) -> F {
        self.value(v).values()[0]
    }

    fn vals(&self, v: Var) -> &[F] {
        self.value(v).values()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v).dims2()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked (used for inputs under test).
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Reads a parameter. Repeated reads return the same node so all uses
    /// accumulate into one gradient.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) * op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(dim_err("matmul", "inner dimension", k, k2));
        }
        let mut out = vec![F::zero(); m * n];
        gemm_acc(&mut out, self.vals(a), (ar, ac), ta, self.vals(b), (br, bc), tb);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, ta, tb }, ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            let axis = sa.iter().zip(sb).position(|(x, y)| x != y).unwrap_or(sa.len().min(sb.len()));
            return Err(dim_err(
                op,
                format!("axis {axis}"),
                sa.get(axis).copied().unwrap_or(0),
                sb.get(axis).copied().unwrap_or(0),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Result<Var> {
        let name = match op {
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            _ => "mul",
        };
        self.same_shape(name, a, b)?;
        let out: Vec<F> = self.vals(a).iter().zip(self.vals(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.value(a).shape().to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, out)?, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a length-`m` bias to every row of an `n x m` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, m) = self.dims(x);
        let bl = self.value(bias).len();
        if bl != m {
            return Err(dim_err("add_row", "bias length", m, bl));
        }
        let b = self.vals(bias);
        let out: Vec<F> = self
            .vals(x)
            .chunks(m)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bv)| v + bv))
            .collect();
        let shape = self.value(x).shape().to_vec();
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow { x, bias }, ng))
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let t = self.map_values(x, |v| v * c);
        let ng = self.ng(x);
        self.push(t, Op::Scale { x, c }, ng)
    }

    pub fn add_scalar(&mut self, x: Var, c: F) -> Var {
        let t = self.map_values(x, |v| v + c);
        let ng = self.ng(x);
        self.push(t, Op::AddScalar(x), ng)
    }

    /// Element-wise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, x: Var, c: Vec<F>) -> Result<Var> {
        let n = self.value(x).len();
        if c.len() != n {
            return Err(dim_err("mul_const", "element count", n, c.len()));
        }
        let out: Vec<F> = self.vals(x).iter().zip(&c).map(|(&v, &m)| v * m).collect();
        let shape = self.value(x).shape().to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::MulConst { x, c }, ng))
    }

    fn map_values(&self, x: Var, f: impl Fn(F) -> F) -> Tensor<F> {
        let src = self.value(x);
        let out = src.values().iter().map(|&v| f(v)).collect();
        Tensor::new(src.shape().to_vec(), out).expect("same shape")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.map_values(x, F::tanh);
        let ng = self.ng(x);
        self.push(t, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map_values(x, sigmoid);
        let ng = self.ng(x);
        self.push(t, Op::Sigmoid(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.map_values(x, |v| v.max(F::zero()));
        let ng = self.ng(x);
        self.push(t, Op::Relu(x), ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (_, c) = self.dims(x);
        let out = super::softmax_values(self.vals(x), c);
        let shape = self.value(x).shape().to_vec();
        let ng = self.ng(x);
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Softmax(x), ng)
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.dims(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(dim_err("concat_cols", "rows", rows, r));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::new(vec![rows, total], out)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.dims(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(dim_err("concat_rows", "columns", cols, c));
            }
            rows += r;
            out.extend_from_slice(self.vals(p));
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::new(vec![rows, cols], out)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(dim_err("slice_cols", "columns", c, start + len));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![r, len], out)?, Op::SliceCols { x, start }, ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > r {
            return Err(dim_err("slice_rows", "rows", r, start + len));
        }
        let out = self.vals(x)[start * c..(start + len) * c].to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![len, c], out)?, Op::SliceRows { x, start }, ng))
    }

    /// Stacks the selected rows of a `V x k` table.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (v, k) = self.dims(table);
        let mut out = Vec::with_capacity(idx.len() * k);
        for &i in idx {
            if i >= v {
                return Err(Error::IndexOutOfRange { what: "table rows", index: i, size: v });
            }
            out.extend_from_slice(self.value(table).row(i));
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::new(vec![idx.len(), k], out)?,
            Op::GatherRows { table, idx: idx.to_vec() },
            ng,
        ))
    }

    /// Reads the selected columns of a `k x V` table as rows of an `n x k` matrix.
    pub fn gather_cols(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (k, v) = self.dims(table);
        let vals = self.vals(table);
        let mut out = Vec::with_capacity(idx.len() * k);
        for &j in idx {
            if j >= v {
                return Err(Error::IndexOutOfRange { what: "table columns", index: j, size: v });
            }
            out.extend((0..k).map(|i| vals[i * v + j]));
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::new(vec![idx.len(), k], out)?,
            Op::GatherCols { table, idx: idx.to_vec() },
            ng,
        ))
    }

    /// Feature map `tanh(X * W + b)` for one filter; `x` is `k x T`, `w` is
    /// `k x h` and `b` has length `T - h + 1`.
    pub fn conv1d_feature_map(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = super::conv1d_feature_map_values(
            self.vals(x),
            self.dims(x),
            self.vals(w),
            self.dims(w),
            self.vals(b),
        )?;
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        let n = out.len();
        Ok(self.push(Tensor::new(vec![n], out)?, Op::Conv1d { x, w, b }, ng))
    }

    pub fn max_over_time(&mut self, c: Var) -> Result<Var> {
        let (best, arg) = super::max_over_time_values(self.vals(c))?;
        let ng = self.ng(c);
        Ok(self.push(Tensor::scalar(best), Op::MaxOverTime { c, arg }, ng))
    }

    /// Argmax position chosen by a `max_over_time` node.
    pub fn argmax_of(&self, v: Var) -> Option<usize> {
        match self.nodes[v.0].op {
            Op::MaxOverTime { arg, .. } => Some(arg),
            _ => None,
        }
    }

    /// Batched filter bank with masked max-over-time pooling.
    ///
    /// `x` holds `batch * seq_len` embedded tokens as rows of width `k`, `w` is
    /// `d x k x h` and `bias` has one scalar per filter. Row `b` of the output
    /// pools only over windows lying inside its first `max(lengths[b], h)`
    /// positions.
    pub fn conv_pool(
        &mut self,
        x: Var,
        w: Var,
        bias: Var,
        seq_len: usize,
        lengths: &[usize],
    ) -> Result<Var> {
        let wt = self.value(w);
        let [d, k, h] = match *wt.shape() {
            [d, k, h] => [d, k, h],
            _ => return Err(dim_err("conv_pool", "filter rank", 3, wt.shape().len())),
        };
        let (rows, xk) = self.dims(x);
        if xk != k {
            return Err(dim_err("conv_pool", "embedding width (k)", k, xk));
        }
        let batch = lengths.len();
        if rows != batch * seq_len {
            return Err(dim_err("conv_pool", "rows (batch * T)", batch * seq_len, rows));
        }
        if self.value(bias).len() != d {
            return Err(dim_err("conv_pool", "bias length", d, self.value(bias).len()));
        }
        let (xv, wv, bv) = (self.vals(x), wt.values(), self.vals(bias));
        let mut out = Vec::with_capacity(batch * d);
        let mut argmax = Vec::with_capacity(batch * d);
        for (b, &len) in lengths.iter().enumerate() {
            if len == 0 {
                return Err(Error::EmptySentence);
            }
            let span = len.max(h);
            if span > seq_len {
                return Err(Error::WindowTooLong { window: span, len: seq_len });
            }
            let xb = &xv[b * seq_len * k..(b + 1) * seq_len * k];
            for f in 0..d {
                let wf = &wv[f * k * h..(f + 1) * k * h];
                let mut best = (F::neg_infinity(), 0);
                for t in 0..=span - h {
                    let mut acc = F::zero();
                    for i in 0..k {
                        for j in 0..h {
                            acc = acc + xb[(t + j) * k + i] * wf[i * h + j];
                        }
                    }
                    let y = (acc + bv[f]).tanh();
                    if y > best.0 {
                        best = (y, t);
                    }
                }
                out.push(best.0);
                argmax.push(best.1);
            }
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(bias);
        let saved = ConvPoolSaved { x, w, bias, seq_len, window: h, argmax };
        Ok(self.push(Tensor::new(vec![batch, d], out)?, Op::ConvPool(Box::new(saved)), ng))
    }

    /// Weighted negative log-likelihood `sum_r w_r * -log softmax(logits_r)[t_r]`.
    ///
    /// Rows with zero weight are skipped entirely.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[F]) -> Result<Var> {
        let (n, c) = self.dims(logits);
        if targets.len() != n || weights.len() != n {
            return Err(dim_err("cross_entropy", "rows", n, targets.len().min(weights.len())));
        }
        let lv = self.vals(logits);
        let mut probs = vec![F::zero(); n * c];
        let mut total = F::zero();
        for r in 0..n {
            if weights[r] == F::zero() {
                continue;
            }
            if targets[r] >= c {
                return Err(Error::IndexOutOfRange { what: "classes", index: targets[r], size: c });
            }
            let row = &lv[r * c..(r + 1) * c];
            let lse = log_sum_exp(row);
            total = total + weights[r] * (lse - row[targets[r]]);
            softmax_row(row, &mut probs[r * c..(r + 1) * c]);
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Cross-entropy against soft target distributions, summed over rows.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: Vec<F>) -> Result<Var> {
        let (n, c) = self.dims(logits);
        if targets.len() != n * c {
            return Err(dim_err("soft_cross_entropy", "target elements", n * c, targets.len()));
        }
        let lv = self.vals(logits);
        let mut probs = vec![F::zero(); n * c];
        let mut total = F::zero();
        for r in 0..n {
            let row = &lv[r * c..(r + 1) * c];
            let lse = log_sum_exp(row);
            for j in 0..c {
                let q = targets[r * c + j];
                if q != F::zero() {
                    total = total + q * (lse - row[j]);
                }
            }
            softmax_row(row, &mut probs[r * c..(r + 1) * c]);
        }
        let ng = self.ng(logits);
        Ok(self.push(Tensor::scalar(total), Op::SoftCrossEntropy { logits, targets, probs }, ng))
    }

    /// Scales every row to unit 2-norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        let xv = self.vals(x);
        let mut norms = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in xv.chunks(c) {
            let norm = row.iter().map(|&v| v * v).sum::<F>().sqrt();
            if norm == F::zero() {
                return Err(Error::ZeroNorm);
            }
            norms.push(norm);
            out.extend(row.iter().map(|&v| v / norm));
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::NormalizeRows { x, norms }, ng))
    }

    /// Sums each row of an `n x m` matrix into an `n x 1` column.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out: Vec<F> = self.vals(x).chunks(c).map(|row| row.iter().copied().sum()).collect();
        let ng = self.ng(x);
        self.push(Tensor::new(vec![r, 1], out).expect("rows"), Op::RowSum(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.vals(x).iter().copied().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(total), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, F::one() / F::from_usize(n).expect("count"))
    }

    /// Runs the backward pass from `loss`, seeding it with ones.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one(); self.value(loss).len()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_ref() else { continue };
            self.backprop(i, g, lo);
        }
        let param_vars = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        Gradients { grads, param_vars }
    }

    fn slot<'g>(&self, lo: &'g mut [Option<Vec<F>>], v: Var) -> Option<&'g mut Vec<F>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.value(v).len();
        Some(lo[v.0].get_or_insert_with(|| vec![F::zero(); n]))
    }

    fn backprop(&self, i: usize, g: &[F], lo: &mut [Option<Vec<F>>]) {
        let out = self.vals(Var(i));
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (ad, bd) = (self.dims(*a), self.dims(*b));
                let m = if *ta { ad.1 } else { ad.0 };
                let n = if *tb { bd.0 } else { bd.1 };
                let (av, bv) = (self.vals(*a), self.vals(*b));
                if let Some(ga) = self.slot(lo, *a) {
                    if *ta {
                        gemm_acc(ga, bv, bd, *tb, g, (m, n), true);
                    } else {
                        gemm_acc(ga, g, (m, n), false, bv, bd, !*tb);
                    }
                }
                if let Some(gb) = self.slot(lo, *b) {
                    if *tb {
                        gemm_acc(gb, g, (m, n), true, av, ad, *ta);
                    } else {
                        gemm_acc(gb, av, ad, !*ta, g, (m, n), false);
                    }
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, F::one()), (*b, F::one())] {
                    if let Some(gv) = self.slot(lo, v) {
                        axpy(gv, g, sign);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, F::one()), (*b, -F::one())] {
                    if let Some(gv) = self.slot(lo, v) {
                        axpy(gv, g, sign);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.vals(*a), self.vals(*b));
                if let Some(ga) = self.slot(lo, *a) {
                    for ((o, &gi), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o = *o + gi * y;
                    }
                }
                if let Some(gb) = self.slot(lo, *b) {
                    for ((o, &gi), &x) in gb.iter_mut().zip(g).zip(av) {
                        *o = *o + gi * x;
                    }
                }
            }
            Op::AddRow { x, bias } => {
                if let Some(gx) = self.slot(lo, *x) {
                    axpy(gx, g, F::one());
                }
                let m = self.value(*bias).len();
                if let Some(gb) = self.slot(lo, *bias) {
                    for row in g.chunks(m) {
                        axpy(gb, row, F::one());
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(gx) = self.slot(lo, *x) {
                    axpy(gx, g, *c);
                }
            }
            Op::AddScalar(x) => {
                if let Some(gx) = self.slot(lo, *x) {
                    axpy(gx, g, F::one());
                }
            }
            Op::MulConst { x, c } => {
                if let Some(gx) = self.slot(lo, *x) {
                    for ((o, &gi), &m) in gx.iter_mut().zip(g).zip(c) {
                        *o = *o + gi * m;
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = self.slot(lo, *x) {
                    for ((o, &gi), &y) in gx.iter_mut().zip(g).zip(out) {
                        *o = *o + gi * (F::one() - y * y);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.slot(lo, *x) {
                    for ((o, &gi), &y) in gx.iter_mut().zip(g).zip(out) {
                        *o = *o + gi * y * (F::one() - y);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = self.slot(lo, *x) {
                    for ((o, &gi), &y) in gx.iter_mut().zip(g).zip(out) {
                        if y > F::zero() {
                            *o = *o + gi;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let (_, c) = self.dims(*x);
                if let Some(gx) = self.slot(lo, *x) {
                    for ((gr, yr), or) in g.chunks(c).zip(out.chunks(c)).zip(gx.chunks_mut(c)) {
                        let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((o, &gi), &y) in or.iter_mut().zip(gr).zip(yr) {
                            *o = *o + y * (gi - dot);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = self.dims(Var(i)).1;
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.dims(p);
                    if let Some(gp) = self.slot(lo, p) {
                        for row in 0..r {
                            let src = &g[row * total + offset..row * total + offset + c];
                            axpy(&mut gp[row * c..(row + 1) * c], src, F::one());
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.slot(lo, p) {
                        axpy(gp, &g[offset..offset + n], F::one());
                    }
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.dims(*x);
                let len = self.dims(Var(i)).1;
                if let Some(gx) = self.slot(lo, *x) {
                    for row in 0..r {
                        let dst = &mut gx[row * c + start..row * c + start + len];
                        axpy(dst, &g[row * len..(row + 1) * len], F::one());
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let (_, c) = self.dims(*x);
                if let Some(gx) = self.slot(lo, *x) {
                    axpy(&mut gx[start * c..start * c + g.len()], g, F::one());
                }
            }
            Op::GatherRows { table, idx } => {
                let (_, k) = self.dims(*table);
                if let Some(gt) = self.slot(lo, *table) {
                    for (r, &row) in idx.iter().enumerate() {
                        axpy(&mut gt[row * k..(row + 1) * k], &g[r * k..(r + 1) * k], F::one());
                    }
                }
            }
            Op::GatherCols { table, idx } => {
                let (k, v) = self.dims(*table);
                if let Some(gt) = self.slot(lo, *table) {
                    for (r, &col) in idx.iter().enumerate() {
                        for c in 0..k {
                            gt[c * v + col] = gt[c * v + col] + g[r * k + c];
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b } => {
                let (k, t_len) = self.dims(*x);
                let (_, h) = self.dims(*w);
                let (xv, wv) = (self.vals(*x), self.vals(*w));
                let pre: Vec<F> = g.iter().zip(out).map(|(&gi, &y)| gi * (F::one() - y * y)).collect();
                if let Some(gb) = self.slot(lo, *b) {
                    axpy(gb, &pre, F::one());
                }
                if let Some(gw) = self.slot(lo, *w) {
                    for (t, &p) in pre.iter().enumerate() {
                        for ii in 0..k {
                            for j in 0..h {
                                gw[ii * h + j] = gw[ii * h + j] + p * xv[ii * t_len + t + j];
                            }
                        }
                    }
                }
                if let Some(gx) = self.slot(lo, *x) {
                    for (t, &p) in pre.iter().enumerate() {
                        for ii in 0..k {
                            for j in 0..h {
                                gx[ii * t_len + t + j] = gx[ii * t_len + t + j] + p * wv[ii * h + j];
                            }
                        }
                    }
                }
            }
            Op::MaxOverTime { c, arg } => {
                if let Some(gc) = self.slot(lo, *c) {
                    gc[*arg] = gc[*arg] + g[0];
                }
            }
            Op::ConvPool(saved) => {
                let ConvPoolSaved { x, w, bias, seq_len, window: h, argmax } = saved.as_ref();
                let shape = self.value(*w).shape();
                let (d, k) = (shape[0], shape[1]);
                let (xv, wv) = (self.vals(*x), self.vals(*w));
                let batch = argmax.len() / d;
                let pre: Vec<F> = g.iter().zip(out).map(|(&gi, &y)| gi * (F::one() - y * y)).collect();
                if let Some(gb) = self.slot(lo, *bias) {
                    for row in pre.chunks(d) {
                        axpy(gb, row, F::one());
                    }
                }
                if let Some(gw) = self.slot(lo, *w) {
                    for b in 0..batch {
                        for f in 0..d {
                            let p = pre[b * d + f];
                            let base = (b * seq_len + argmax[b * d + f]) * k;
                            for ii in 0..k {
                                for j in 0..*h {
                                    let wi = f * k * h + ii * h + j;
                                    gw[wi] = gw[wi] + p * xv[base + j * k + ii];
                                }
                            }
                        }
                    }
                }
                if let Some(gx) = self.slot(lo, *x) {
                    for b in 0..batch {
                        for f in 0..d {
                            let p = pre[b * d + f];
                            let base = (b * seq_len + argmax[b * d + f]) * k;
                            for ii in 0..k {
                                for j in 0..*h {
                                    let xi = base + j * k + ii;
                                    gx[xi] = gx[xi] + p * wv[f * k * h + ii * h + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                let (_, c) = self.dims(*logits);
                if let Some(gl) = self.slot(lo, *logits) {
                    for (r, (&t, &wr)) in targets.iter().zip(weights).enumerate() {
                        if wr == F::zero() {
                            continue;
                        }
                        let scale = g[0] * wr;
                        let row = &mut gl[r * c..(r + 1) * c];
                        for (o, &p) in row.iter_mut().zip(&probs[r * c..(r + 1) * c]) {
                            *o = *o + scale * p;
                        }
                        row[t] = row[t] - scale;
                    }
                }
            }
            Op::SoftCrossEntropy { logits, targets, probs } => {
                let (_, c) = self.dims(*logits);
                if let Some(gl) = self.slot(lo, *logits) {
                    for ((or, qr), pr) in gl.chunks_mut(c).zip(targets.chunks(c)).zip(probs.chunks(c)) {
                        let mass: F = qr.iter().copied().sum();
                        for ((o, &q), &p) in or.iter_mut().zip(qr).zip(pr) {
                            *o = *o + g[0] * (mass * p - q);
                        }
                    }
                }
            }
            Op::NormalizeRows { x, norms } => {
                let (_, c) = self.dims(*x);
                if let Some(gx) = self.slot(lo, *x) {
                    for (((or, gr), yr), &norm) in
                        gx.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)).zip(norms)
                    {
                        let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((o, &gi), &y) in or.iter_mut().zip(gr).zip(yr) {
                            *o = *o + (gi - y * dot) / norm;
                        }
                    }
                }
            }
            Op::RowSum(x) => {
                let (_, c) = self.dims(*x);
                if let Some(gx) = self.slot(lo, *x) {
                    for (row, &gi) in gx.chunks_mut(c).zip(g) {
                        row.iter_mut().for_each(|o| *o = *o + gi);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(lo, *x) {
                    gx.iter_mut().for_each(|o| *o = *o + g[0]);
                }
            }
        }
    }
}

fn axpy<F: Real>(dst: &mut [F], src: &[F], a: F) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + a * s;
    }
}

pub(crate) fn sigmoid<F: Real>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

/// Gradients produced by one backward pass.
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    param_vars: Vec<(ParamId, Var)>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of the loss with respect to `v`, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[F])> {
        self.param_vars
            .iter()
            .filter_map(|&(id, v)| self.wrt(v).map(|g| (id, g)))
    }
}
