use std::sync::Arc;

use crate::tensor::gemm;
use crate::{AutodiffError, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScalarMul(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    ColSums(Var),
    L2NormSq(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    RepeatRows(Var),
    RepeatCols(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Sin(Var),
    Cos(Var),
    Exp(Var),
    Square(Var),
    SoftmaxRows(Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Constant => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | ScalarMul(a, b) | MatMul(a, b) => {
                vec![*a, *b]
            }
            ConcatCols(vs) | ConcatRows(vs) => vs.clone(),
            Neg(a) | Scale(a, _) | AddScalar(a) | Transpose(a) | Reshape(a) | Sum(a) | Mean(a)
            | RowSums(a) | ColSums(a) | L2NormSq(a) | SliceCols(a, _) | SliceRows(a, _)
            | GatherRows(a, _) | ScatterAddRows(a, _) | RepeatRows(a) | RepeatCols(a) | Tanh(a)
            | Relu(a) | Sigmoid(a) | Sin(a) | Cos(a) | Exp(a) | Square(a) | SoftmaxRows(a) => {
                vec![*a]
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation. Parents always precede children.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of the leaves reached by a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of `shape` when the leaf did not
    /// influence the loss.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
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

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v`'s current value, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(AutodiffError::UnknownVar(v.0));
        }
        Ok(())
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let value = ta.zip(tb, f);
        self.push(name, value, op)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        self.check(a)?;
        let value = self.nodes[a.0].value.map(f);
        self.push(name, value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary("neg", a, |x| -x, Op::Neg(a))
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    /// `x * s` where `s` is a single-element tensor on the tape.
    pub fn scalar_mul(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check(x)?;
        self.check(s)?;
        let sv = self.nodes[s.0]
            .value
            .item()
            .ok_or_else(|| mismatch("scalar_mul", &self.nodes[x.0].value, &self.nodes[s.0].value))?;
        let value = self.nodes[x.0].value.map(|v| v * sv);
        self.push("scalar_mul", value, Op::ScalarMul(x, s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        self.push("matmul", value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.nodes[a.0].value.transpose()?;
        self.push("transpose", value, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.check(a)?;
        let value = self.nodes[a.0].value.reshaped(shape)?;
        self.push("reshape", value, Op::Reshape(a))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = Tensor::scalar(self.nodes[a.0].value.sum());
        self.push("sum", value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = &self.nodes[a.0].value;
        if t.is_empty() {
            return Err(AutodiffError::Invalid("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", value, Op::Mean(a))
    }

    /// `[r, c] -> [r, 1]`.
    pub fn row_sums(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = &self.nodes[a.0].value;
        let (r, c) = t.dims2("row_sums")?;
        let data = (0..r).map(|i| t.data()[i * c..(i + 1) * c].iter().sum()).collect();
        let value = Tensor::from_vec(vec![r, 1], data)?;
        self.push("row_sums", value, Op::RowSums(a))
    }

    /// `[r, c] -> [1, c]`.
    pub fn col_sums(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = &self.nodes[a.0].value;
        let (r, c) = t.dims2("col_sums")?;
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (d, v) in data.iter_mut().zip(&t.data()[i * c..(i + 1) * c]) {
                *d += v;
            }
        }
        let value = Tensor::from_vec(vec![1, c], data)?;
        self.push("col_sums", value, Op::ColSums(a))
    }

    /// Squared Frobenius norm, as a `[1]` tensor.
    pub fn l2_norm_sq(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = Tensor::scalar(self.nodes[a.0].value.data().iter().map(|v| v * v).sum());
        self.push("l2_norm_sq", value, Op::L2NormSq(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutodiffError::Invalid("concat_cols of zero tensors".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let rows = self.nodes[parts[0].0].value.dims2("concat_cols")?.0;
        let mut total = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            let (r, c) = t.dims2("concat_cols")?;
            if r != rows {
                return Err(mismatch("concat_cols", &self.nodes[parts[0].0].value, t));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(i));
            }
        }
        let value = Tensor::from_vec(vec![rows, total], data)?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutodiffError::Invalid("concat_rows of zero tensors".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let cols = self.nodes[parts[0].0].value.dims2("concat_rows")?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = &self.nodes[p.0].value;
            let (r, c) = t.dims2("concat_rows")?;
            if c != cols {
                return Err(mismatch("concat_rows", &self.nodes[parts[0].0].value, t));
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(vec![rows, cols], data)?;
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.check(a)?;
        let t = &self.nodes[a.0].value;
        let (r, c) = t.dims2("slice_cols")?;
        if start > end || end > c {
            return Err(AutodiffError::Index {
                op: "slice_cols",
                index: end,
                len: c,
            });
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let value = Tensor::from_vec(vec![r, end - start], data)?;
        self.push("slice_cols", value, Op::SliceCols(a, start))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.check(a)?;
        let t = &self.nodes[a.0].value;
        let (r, c) = t.dims2("slice_rows")?;
        if start > end || end > r {
            return Err(AutodiffError::Index {
                op: "slice_rows",
                index: end,
                len: r,
            });
        }
        let value = Tensor::from_vec(vec![end - start, c], t.data()[start * c..end * c].to_vec())?;
        self.push("slice_rows", value, Op::SliceRows(a, start))
    }

    /// `out[k] = a[idx[k]]` row-wise.
    pub fn gather_rows(&mut self, a: Var, idx: &Arc<[usize]>) -> Result<Var> {
        self.check(a)?;
        let t = &self.nodes[a.0].value;
        let (r, c) = t.dims2("gather_rows")?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= r {
                return Err(AutodiffError::Index {
                    op: "gather_rows",
                    index: i,
                    len: r,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::from_vec(vec![idx.len(), c], data)?;
        self.push("gather_rows", value, Op::GatherRows(a, idx.clone()))
    }

    /// `out[idx[k]] += a[k]` into `n` zero-initialized rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &Arc<[usize]>, n: usize) -> Result<Var> {
        self.check(a)?;
        let t = &self.nodes[a.0].value;
        let (r, c) = t.dims2("scatter_add_rows")?;
        if r != idx.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let mut data = vec![0.0; n * c];
        for (k, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(AutodiffError::Index {
                    op: "scatter_add_rows",
                    index: i,
                    len: n,
                });
            }
            for (d, v) in data[i * c..(i + 1) * c].iter_mut().zip(t.row(k)) {
                *d += v;
            }
        }
        let value = Tensor::from_vec(vec![n, c], data)?;
        self.push("scatter_add_rows", value, Op::ScatterAddRows(a, idx.clone()))
    }

    /// `[1, c] -> [n, c]`.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        self.check(a)?;
        let t = &self.nodes[a.0].value;
        let (r, c) = t.dims2("repeat_rows")?;
        if r != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "repeat_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![1, c],
            });
        }
        let value = Tensor::from_vec(vec![n, c], t.data().repeat(n))?;
        self.push("repeat_rows", value, Op::RepeatRows(a))
    }

    /// `[r, 1] -> [r, n]`.
    pub fn repeat_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        self.check(a)?;
        let t = &self.nodes[a.0].value;
        let (r, c) = t.dims2("repeat_cols")?;
        if c != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "repeat_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![r, 1],
            });
        }
        let data = t.data().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
        let value = Tensor::from_vec(vec![r, n], data)?;
        self.push("repeat_cols", value, Op::RepeatCols(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary("sin", a, f64::sin, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary("cos", a, f64::cos, Op::Cos(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    /// Row-wise softmax of a `[r, c]` matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = &self.nodes[a.0].value;
        let (r, c) = t.dims2("softmax_rows")?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = t.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut z = 0.0;
            for &v in row {
                let e = (v - max).exp();
                z += e;
                data.push(e);
            }
            for v in &mut data[start..] {
                *v /= z;
            }
        }
        let value = Tensor::from_vec(vec![r, c], data)?;
        self.push("softmax_rows", value, Op::SoftmaxRows(a))
    }

    /// Reverse sweep from a single-element `loss`. Returns adjoints for
    /// every leaf that the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(AutodiffError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Tensor>> = vec![None; n];
        let mut leaves: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Tensor::filled(loss_value.shape().to_vec(), 1.0));

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            for p in node.op.parents() {
                if p.0 >= i {
                    return Err(AutodiffError::Cycle { node: i, parent: p.0 });
                }
            }
            self.propagate(i, g, &mut adj, &mut leaves)?;
        }
        Ok(Gradients { grads: leaves })
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], p: Var, g: Tensor) {
        if !self.nodes[p.0].requires_grad {
            return;
        }
        match &mut adj[p.0] {
            Some(a) => a.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        i: usize,
        g: Tensor,
        adj: &mut [Option<Tensor>],
        leaves: &mut [Option<Tensor>],
    ) -> Result<()> {
        use Op::*;
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Leaf => leaves[i] = Some(g),
            Constant => {}
            Add(a, b) => {
                self.accumulate(adj, *b, g.clone());
                self.accumulate(adj, *a, g);
            }
            Sub(a, b) => {
                self.accumulate(adj, *b, g.map(|v| -v));
                self.accumulate(adj, *a, g);
            }
            Mul(a, b) => {
                self.accumulate(adj, *a, g.zip(val(*b), |x, y| x * y));
                self.accumulate(adj, *b, g.zip(val(*a), |x, y| x * y));
            }
            Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.accumulate(adj, *a, g.zip(vb, |x, y| x / y));
                let gb = g.zip(va, |x, y| x * y).zip(vb, |x, y| -x / (y * y));
                self.accumulate(adj, *b, gb);
            }
            Neg(a) => self.accumulate(adj, *a, g.map(|v| -v)),
            Scale(a, c) => self.accumulate(adj, *a, g.map(|v| v * c)),
            AddScalar(a) => self.accumulate(adj, *a, g),
            ScalarMul(x, s) => {
                let sv = val(*s).data()[0];
                let gs: f64 = g.data().iter().zip(val(*x).data()).map(|(a, b)| a * b).sum();
                self.accumulate(adj, *s, Tensor::filled(val(*s).shape().to_vec(), gs));
                self.accumulate(adj, *x, g.map(|v| v * sv));
            }
            MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k) = va.dims2("matmul")?;
                let n = vb.cols();
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, vb.data(), true, &mut ga);
                    self.accumulate(adj, *a, Tensor::from_vec(vec![m, k], ga)?);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, va.data(), true, g.data(), false, &mut gb);
                    self.accumulate(adj, *b, Tensor::from_vec(vec![k, n], gb)?);
                }
            }
            Transpose(a) => self.accumulate(adj, *a, g.transpose()?),
            Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                self.accumulate(adj, *a, g.reshaped(shape)?);
            }
            Sum(a) => {
                let s = g.data()[0];
                self.accumulate(adj, *a, Tensor::filled(val(*a).shape().to_vec(), s));
            }
            Mean(a) => {
                let t = val(*a);
                let s = g.data()[0] / t.len() as f64;
                self.accumulate(adj, *a, Tensor::filled(t.shape().to_vec(), s));
            }
            RowSums(a) => {
                let (r, c) = val(*a).dims2("row_sums")?;
                let data = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect();
                self.accumulate(adj, *a, Tensor::from_vec(vec![r, c], data)?);
            }
            ColSums(a) => {
                let (r, c) = val(*a).dims2("col_sums")?;
                let data = g.data().repeat(r);
                debug_assert_eq!(g.len(), c);
                self.accumulate(adj, *a, Tensor::from_vec(vec![r, c], data)?);
            }
            L2NormSq(a) => {
                let s = 2.0 * g.data()[0];
                self.accumulate(adj, *a, val(*a).map(|v| s * v));
            }
            ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let c = val(*p).cols();
                    if self.nodes[p.0].requires_grad {
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(adj, *p, Tensor::from_vec(vec![rows, c], data)?);
                    }
                    offset += c;
                }
            }
            ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for p in parts {
                    let r = val(*p).rows();
                    if self.nodes[p.0].requires_grad {
                        let data = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        self.accumulate(adj, *p, Tensor::from_vec(vec![r, cols], data)?);
                    }
                    offset += r;
                }
            }
            SliceCols(a, start) => {
                let (r, c) = val(*a).dims2("slice_cols")?;
                let w = g.cols();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    data[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                self.accumulate(adj, *a, Tensor::from_vec(vec![r, c], data)?);
            }
            SliceRows(a, start) => {
                let (r, c) = val(*a).dims2("slice_rows")?;
                let mut data = vec![0.0; r * c];
                data[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.accumulate(adj, *a, Tensor::from_vec(vec![r, c], data)?);
            }
            GatherRows(a, idx) => {
                let (r, c) = val(*a).dims2("gather_rows")?;
                let mut data = vec![0.0; r * c];
                for (k, &row) in idx.iter().enumerate() {
                    for (d, v) in data[row * c..(row + 1) * c].iter_mut().zip(g.row(k)) {
                        *d += v;
                    }
                }
                self.accumulate(adj, *a, Tensor::from_vec(vec![r, c], data)?);
            }
            ScatterAddRows(a, idx) => {
                let c = g.cols();
                let mut data = Vec::with_capacity(idx.len() * c);
                for &row in idx.iter() {
                    data.extend_from_slice(g.row(row));
                }
                self.accumulate(adj, *a, Tensor::from_vec(vec![idx.len(), c], data)?);
            }
            RepeatRows(a) => {
                let (r, c) = g.dims2("repeat_rows")?;
                let mut data = vec![0.0; c];
                for i in 0..r {
                    for (d, v) in data.iter_mut().zip(g.row(i)) {
                        *d += v;
                    }
                }
                self.accumulate(adj, *a, Tensor::from_vec(vec![1, c], data)?);
            }
            RepeatCols(a) => {
                let (r, _) = g.dims2("repeat_cols")?;
                let data = (0..r).map(|i| g.row(i).iter().sum()).collect();
                self.accumulate(adj, *a, Tensor::from_vec(vec![r, 1], data)?);
            }
            Tanh(a) => self.accumulate(adj, *a, g.zip(y, |g, y| g * (1.0 - y * y))),
            Relu(a) => {
                self.accumulate(adj, *a, g.zip(val(*a), |g, x| if x > 0.0 { g } else { 0.0 }))
            }
            Sigmoid(a) => self.accumulate(adj, *a, g.zip(y, |g, y| g * y * (1.0 - y))),
            Sin(a) => self.accumulate(adj, *a, g.zip(val(*a), |g, x| g * x.cos())),
            Cos(a) => self.accumulate(adj, *a, g.zip(val(*a), |g, x| -g * x.sin())),
            Exp(a) => self.accumulate(adj, *a, g.zip(y, |g, y| g * y)),
            Square(a) => self.accumulate(adj, *a, g.zip(val(*a), |g, x| 2.0 * g * x)),
            SoftmaxRows(a) => {
                let (r, c) = y.dims2("softmax_rows")?;
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    data.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
                }
                self.accumulate(adj, *a, Tensor::from_vec(vec![r, c], data)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(m(2, 2, &[1.0, -2.0, 3.0, 0.5]));
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.tanh(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn softmax_equal_logits_uniform() {
        let mut t = Tape::new();
        let x = t.constant(m(2, 4, &[3.0; 8]));
        let y = t.softmax_rows(x).unwrap();
        assert!(t.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn norm_of_wx_matches_symbolic() {
        // d/dW ||Wx||^2 = 2 (W x) x^T ; d/dx = 2 W^T W x
        let w = m(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let x = m(2, 1, &[0.3, -0.7]);
        let mut t = Tape::new();
        let wv = t.leaf(w.clone());
        let xv = t.leaf(x.clone());
        let wx = t.matmul(wv, xv).unwrap();
        let l = t.l2_norm_sq(wx).unwrap();
        let g = t.backward(l).unwrap();
        let wtw = w.transpose().unwrap().matmul(&w).unwrap();
        let expect_x = wtw.matmul(&x).unwrap().map(|v| 2.0 * v);
        for (a, b) in g.get(xv).unwrap().data().iter().zip(expect_x.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        let wxv = w.matmul(&x).unwrap();
        let expect_w = wxv.matmul(&x.transpose().unwrap()).unwrap().map(|v| 2.0 * v);
        for (a, b) in g.get(wv).unwrap().data().iter().zip(expect_w.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t = Tape::new();
        let a = t.leaf(m(2, 3, &[0.0; 6]));
        let b = t.leaf(m(2, 2, &[0.0; 4]));
        match t.matmul(a, b) {
            Err(AutodiffError::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(t.add(a, b), Err(AutodiffError::ShapeMismatch { op: "add", .. })));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(m(2, 2, &[0.0; 4]));
        assert!(matches!(t.backward(a), Err(AutodiffError::NonScalarLoss { .. })));
    }

    #[test]
    fn non_finite_result_is_an_error() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::scalar(1000.0));
        assert!(matches!(t.exp(a), Err(AutodiffError::NonFinite { op: "exp" })));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::scalar(2.0));
        let c = t.constant(Tensor::scalar(3.0));
        let p = t.mul(a, c).unwrap();
        let g = t.backward(p).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[3.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn gather_scatter_are_adjoint() {
        let idx: Arc<[usize]> = Arc::from(vec![2usize, 0, 2]);
        let mut t = Tape::new();
        let x = t.leaf(m(3, 1, &[1.0, 2.0, 3.0]));
        let gx = t.gather_rows(x, &idx).unwrap();
        assert_eq!(t.value(gx).data(), &[3.0, 1.0, 3.0]);
        let s = t.scatter_add_rows(gx, &idx, 3).unwrap();
        assert_eq!(t.value(s).data(), &[1.0, 0.0, 6.0]);
        let l = t.sum(s).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 2.0]);
    }
}
