//! Tape of tensor operations with reverse-mode gradients.

use rand::Rng;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    DivOrZero(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    Sin(Var),
    Square(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Dropout(Var, Tensor),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Transpose(Var),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation graph. Values are computed eagerly as nodes are
/// added; [`Graph::backward`] walks the tape in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

/// Whether `b` broadcasts onto `a`: same shape, a row, a column or a scalar.
fn broadcastable(a: &Tensor, b: &Tensor) -> bool {
    (b.rows() == a.rows() || b.rows() == 1) && (b.cols() == a.cols() || b.cols() == 1)
}

fn binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (br, bc) = (b.rows(), b.cols());
    Tensor::from_fn(a.rows(), a.cols(), |r, c| f(a.get(r, c), b.get(r % br, c % bc)))
}

/// Sums `g` down to the shape of `b`.
fn reduce_to(g: &Tensor, shape: (usize, usize)) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            let (rr, cc) = (r % shape.0, c % shape.1);
            out.set(rr, cc, out.get(rr, cc) + g.get(r, c));
        }
    }
    out
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * INV_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 * (1.0 + erf(x * INV_SQRT_2)) + x * pdf
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, value: Tensor, op: Op) -> Var {
        let rg = self.requires_grad(x);
        self.push(value, op, rg)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf without a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Copy of `v` cut off from gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", va, vb));
        }
        let out = gemm(va, false, vb, false);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn broadcast_op(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if !broadcastable(va, vb) {
            return Err(shape_err(name, va, vb));
        }
        let out = binary(va, vb, f);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, op, rg))
    }

    /// `a + b`, with `b` broadcast over rows and/or columns.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product, with `b` broadcast.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a / b` where `b ≠ 0`, and `0` with zero gradient where `b = 0`.
    pub fn div_or_zero(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_op(
            "div",
            a,
            b,
            |x, y| if y == 0.0 { 0.0 } else { x / y },
            Op::DivOrZero(a, b),
        )
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x).map(|v| v * k);
        self.unary(x, v, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x).map(|v| v + k);
        self.unary(x, v, Op::AddScalar(x))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).data().iter().sum());
        self.unary(x, v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.unary(x, v, Op::Mean(x))
    }

    /// Column totals as a `1 × cols` row.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::from_fn(1, t.cols(), |_, c| (0..t.rows()).map(|r| t.get(r, c)).sum());
        self.unary(x, v, Op::SumRows(x))
    }

    /// Column means as a `1 × cols` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let n = self.value(x).rows();
        let s = self.sum_rows(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Row totals as a `rows × 1` column.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::from_fn(t.rows(), 1, |r, _| t.row_slice(r).iter().sum());
        self.unary(x, v, Op::SumCols(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.unary(x, v, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|v| v.max(0.0));
        self.unary(x, v, Op::Relu(x))
    }

    /// Exact GeLU, `x Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu);
        self.unary(x, v, Op::Gelu(x))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::sin);
        self.unary(x, v, Op::Sin(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|v| v * v);
        self.unary(x, v, Op::Square(x))
    }

    /// Square root; the gradient at zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|v| v.max(0.0).sqrt());
        self.unary(x, v, Op::Sqrt(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut out = t.clone();
        for r in 0..t.rows() {
            let row = &mut out.data_mut()[r * t.cols()..(r + 1) * t.cols()];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.unary(x, out, Op::SoftmaxRows(x))
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.shape();
        for p in [gamma, beta] {
            if self.shape(p) != (1, cols) {
                return Err(shape_err("layer_norm", t, self.value(p)));
            }
        }
        let mut xhat = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = t.row_slice(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            for c in 0..cols {
                xhat.set(r, c, (row[c] - mean) * is);
            }
            inv_std.push(is);
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let out = Tensor::from_fn(rows, cols, |r, c| xhat.get(r, c) * g.get(0, c) + b.get(0, c));
        let rg = self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout; the identity outside training or at rate zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Var {
        if !train || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let (rows, cols) = self.shape(x);
        let mask = Tensor::from_fn(rows, cols, |_, _| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let v = binary(self.value(x), &mask, |a, m| a * m);
        self.unary(x, v, Op::Dropout(x, mask))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat"))?;
        let rows = self.shape(*first).0;
        for p in parts {
            if self.shape(*p).0 != rows {
                return Err(shape_err("concat_cols", self.value(*first), self.value(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|p| self.requires_grad(*p));
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat"))?;
        let cols = self.shape(*first).1;
        for p in parts {
            if self.shape(*p).1 != cols {
                return Err(shape_err("concat_rows", self.value(*first), self.value(*p)));
            }
        }
        let rows: usize = parts.iter().map(|p| self.shape(*p).0).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let rg = parts.iter().any(|p| self.requires_grad(*p));
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(x);
        if rows * cols != t.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: t.shape(),
                rhs: (rows, cols),
            });
        }
        let v = Tensor::new(rows, cols, t.data().to_vec())?;
        Ok(self.unary(x, v, Op::Reshape(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose();
        self.unary(x, v, Op::Transpose(x))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if start + len > t.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: t.shape(),
                rhs: (start, len),
            });
        }
        let v = Tensor::from_fn(t.rows(), len, |r, c| t.get(r, start + c));
        Ok(self.unary(x, v, Op::SliceCols(x, start)))
    }

    /// Rows `idx[0], idx[1], …`, repeats allowed.
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Shape {
                op: "select_rows",
                lhs: t.shape(),
                rhs: (bad, 0),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in idx {
            data.extend_from_slice(t.row_slice(i));
        }
        let v = Tensor::new(idx.len(), t.cols(), data)?;
        Ok(self.unary(x, v, Op::SelectRows(x, idx.to_vec())))
    }

    /// Per-column row picks: `out[r, c] = x[idx[r · cols + c], c]`, with
    /// `idx` describing a `rows_out × cols` layout.
    pub fn gather_cols(&mut self, x: Var, rows_out: usize, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let cols = t.cols();
        if idx.len() != rows_out * cols || idx.iter().any(|&i| i >= t.rows()) {
            return Err(Error::Shape {
                op: "gather_cols",
                lhs: t.shape(),
                rhs: (rows_out, cols),
            });
        }
        let v = Tensor::from_fn(rows_out, cols, |r, c| t.get(idx[r * cols + c], c));
        Ok(self.unary(x, v, Op::GatherCols(x, idx.to_vec())))
    }

    /// Rounding with an identity gradient: `y - h` where `h = y - round(y)`
    /// is a constant.
    pub fn fractional_decouple(&mut self, y: Var) -> Result<Var> {
        let h = self.value(y).map(|v| v - v.round());
        let h = self.constant(h);
        self.sub(y, h)
    }

    /// Reverse sweep from a `1 × 1` root that depends on at least one parameter.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(root.0)
            .ok_or_else(|| Error::Contract("root is not on this graph".into()))?;
        if node.value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {}x{}",
                node.value.rows(),
                node.value.cols()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Contract("root does not depend on any parameter".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| self.accumulate(grads, v, t);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    acc(grads, *a, gemm(g, false, self.value(*b), true));
                }
                if self.requires_grad(*b) {
                    acc(grads, *b, gemm(self.value(*a), true, g, false));
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    acc(grads, *b, reduce_to(g, self.shape(*b)));
                }
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    acc(grads, *b, reduce_to(&g.map(|v| -v), self.shape(*b)));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    acc(grads, *a, binary(g, vb, |x, y| x * y));
                }
                if self.requires_grad(*b) {
                    let full = Tensor::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * va.get(r, c));
                    acc(grads, *b, reduce_to(&full, vb.shape()));
                }
            }
            Op::DivOrZero(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (br, bc) = vb.shape();
                if self.requires_grad(*a) {
                    acc(grads, *a, binary(g, vb, |x, y| if y == 0.0 { 0.0 } else { x / y }));
                }
                if self.requires_grad(*b) {
                    let full = Tensor::from_fn(g.rows(), g.cols(), |r, c| {
                        let y = vb.get(r % br, c % bc);
                        if y == 0.0 {
                            0.0
                        } else {
                            -g.get(r, c) * va.get(r, c) / (y * y)
                        }
                    });
                    acc(grads, *b, reduce_to(&full, vb.shape()));
                }
            }
            Op::Scale(x, k) => acc(grads, *x, g.map(|v| v * k)),
            Op::AddScalar(x) => acc(grads, *x, g.clone()),
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                acc(grads, *x, Tensor::filled(r, c, g.get(0, 0)));
            }
            Op::Mean(x) => {
                let (r, c) = self.shape(*x);
                acc(grads, *x, Tensor::filled(r, c, g.get(0, 0) / (r * c) as f64));
            }
            Op::SumRows(x) => {
                let (r, c) = self.shape(*x);
                acc(grads, *x, Tensor::from_fn(r, c, |_, cc| g.get(0, cc)));
            }
            Op::SumCols(x) => {
                let (r, c) = self.shape(*x);
                acc(grads, *x, Tensor::from_fn(r, c, |rr, _| g.get(rr, 0)));
            }
            Op::Sigmoid(x) => acc(grads, *x, binary(g, out, |gv, s| gv * s * (1.0 - s))),
            Op::Relu(x) => acc(grads, *x, binary(g, self.value(*x), |gv, v| if v > 0.0 { gv } else { 0.0 })),
            Op::Gelu(x) => acc(grads, *x, binary(g, self.value(*x), |gv, v| gv * gelu_grad(v))),
            Op::Sin(x) => acc(grads, *x, binary(g, self.value(*x), |gv, v| gv * v.cos())),
            Op::Square(x) => acc(grads, *x, binary(g, self.value(*x), |gv, v| 2.0 * gv * v)),
            Op::Sqrt(x) => acc(grads, *x, binary(g, out, |gv, s| if s > 0.0 { gv / (2.0 * s) } else { 0.0 })),
            Op::SoftmaxRows(x) => {
                let (rows, cols) = out.shape();
                let mut dx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let dot: f64 = (0..cols).map(|c| g.get(r, c) * out.get(r, c)).sum();
                    for c in 0..cols {
                        dx.set(r, c, out.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                acc(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = out.shape();
                let gm = self.value(*gamma);
                if self.requires_grad(*x) {
                    let mut dx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let dxhat: Vec<f64> = (0..cols).map(|c| g.get(r, c) * gm.get(0, c)).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().enumerate().map(|(c, d)| d * xhat.get(r, c)).sum();
                        let n = cols as f64;
                        for c in 0..cols {
                            dx.set(r, c, inv_std[r] / n * (n * dxhat[c] - s1 - xhat.get(r, c) * s2));
                        }
                    }
                    acc(grads, *x, dx);
                }
                if self.requires_grad(*gamma) {
                    let dg = Tensor::from_fn(1, cols, |_, c| (0..rows).map(|r| g.get(r, c) * xhat.get(r, c)).sum());
                    acc(grads, *gamma, dg);
                }
                if self.requires_grad(*beta) {
                    acc(grads, *beta, reduce_to(g, (1, cols)));
                }
            }
            Op::Dropout(x, mask) => acc(grads, *x, binary(g, mask, |gv, m| gv * m)),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    if self.requires_grad(*p) {
                        acc(grads, *p, Tensor::from_fn(r, c, |rr, cc| g.get(rr, offset + cc)));
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    if self.requires_grad(*p) {
                        acc(grads, *p, Tensor::from_fn(r, c, |rr, cc| g.get(offset + rr, cc)));
                    }
                    offset += r;
                }
            }
            Op::Reshape(x) => {
                let (r, c) = self.shape(*x);
                acc(grads, *x, Tensor::new(r, c, g.data().to_vec()).expect("reshape keeps length"));
            }
            Op::Transpose(x) => acc(grads, *x, g.transpose()),
            Op::SliceCols(x, start) => {
                let (r, c) = self.shape(*x);
                let len = g.cols();
                acc(
                    grads,
                    *x,
                    Tensor::from_fn(r, c, |rr, cc| {
                        if cc >= *start && cc < start + len {
                            g.get(rr, cc - start)
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::SelectRows(x, idx) => {
                let (r, c) = self.shape(*x);
                let mut dx = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for cc in 0..c {
                        dx.set(i, cc, dx.get(i, cc) + g.get(k, cc));
                    }
                }
                acc(grads, *x, dx);
            }
            Op::GatherCols(x, idx) => {
                let (r, c) = self.shape(*x);
                let mut dx = Tensor::zeros(r, c);
                for rr in 0..g.rows() {
                    for cc in 0..c {
                        let src = idx[rr * c + cc];
                        dx.set(src, cc, dx.get(src, cc) + g.get(rr, cc));
                    }
                }
                acc(grads, *x, dx);
            }
        }
    }
}
