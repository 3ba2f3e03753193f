//! Tape-based reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! Every operation appends a node to a [`Tape`] and returns a [`Var`]
//! handle. Nodes are stored in creation order, which is already a
//! topological order, so [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use graphssl::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
//! let sq = tape.square(x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```
//!
//! Every op checks that its output is finite and returns
//! [`Error::NonFinite`] otherwise.

use rand::Rng;

use crate::error::{dim, Error, Result};
use crate::matrix::{gemm, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    LeakyRelu(Var, f64),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    Sum(Var),
    SumCols(Var),
    SelectRows(Var, Vec<usize>),
    ConcatCols(Var, Var),
    Column(Var, usize),
    MulConst(Var, Matrix),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Elementwise unary operations understood by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    LeakyRelu(f64),
    Exp,
    Ln,
    Square,
}

/// Elementwise binary operations understood by [`Tape::binary`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    // accumulated gradients of leaves, indexed like `nodes`
    grads: Vec<Option<Matrix>>,
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

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a parameter leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, name: &'static str, value: Matrix, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.record("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        match op {
            Binary::Add => self.add(a, b),
            Binary::Sub => self.sub(a, b),
            Binary::Mul => self.mul(a, b),
        }
    }

    pub fn elementwise(&mut self, op: Unary, a: Var) -> Result<Var> {
        match op {
            Unary::LeakyRelu(slope) => self.leaky_relu(a, slope),
            Unary::Exp => self.exp(a),
            Unary::Ln => self.ln(a),
            Unary::Square => self.square(a),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.record("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.record("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.record("mul", value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 x m` row vector to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(dim(
                "add_row",
                format!("{}x{} plus row {}x{}", av.rows(), av.cols(), rv.rows(), rv.cols()),
            ));
        }
        let mut value = av.clone();
        let bias = rv.data();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(bias) {
                *x += b;
            }
        }
        self.record("add_row", value, Op::AddRow(a, row), &[a, row])
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let value = self.value(a).map(|x| scale * x + shift);
        self.record("affine", value, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.affine(a, factor, 0.0)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.record("leaky_relu", value, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.record("exp", value, Op::Exp(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if let Some(bad) = av.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain {
                op: "ln",
                detail: format!("non-positive input {bad}"),
            });
        }
        let value = av.map(f64::ln);
        self.record("ln", value, Op::Ln(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x * x);
        self.record("square", value, Op::Square(a), &[a])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::Parameter(format!("clamp bounds {lo} > {hi}")));
        }
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.record("clamp", value, Op::Clamp(a, lo, hi), &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.cols() == 0 {
            return Err(dim("softmax_rows", "input has no columns"));
        }
        let value = softmax_rows(av);
        self.record("softmax_rows", value, Op::SoftmaxRows(a), &[a])
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).sum());
        self.record("sum", value, Op::Sum(a), &[a])
    }

    /// Per-row sum: `n x m` to `n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::column_vector(self.value(a).iter_rows().map(|r| r.iter().sum()).collect());
        self.record("sum_cols", value, Op::SumCols(a), &[a])
    }

    /// Gathers rows by index; repeated indices are allowed and their
    /// gradients add up.
    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let value = self.value(a).select_rows(indices)?;
        self.record("select_rows", value, Op::SelectRows(a, indices.to_vec()), &[a])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hstack(self.value(b))?;
        self.record("concat_cols", value, Op::ConcatCols(a, b), &[a, b])
    }

    /// Extracts column `c` as an `n x 1` node.
    pub fn column(&mut self, a: Var, c: usize) -> Result<Var> {
        let av = self.value(a);
        if c >= av.cols() {
            return Err(dim("column", format!("column {c} of {} columns", av.cols())));
        }
        let value = Matrix::column_vector(av.iter_rows().map(|r| r[c]).collect());
        self.record("column", value, Op::Column(a, c), &[a])
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Var, k: &Matrix) -> Result<Var> {
        let value = self.value(a).zip_map(k, |x, y| x * y)?;
        self.record("mul_const", value, Op::MulConst(a, k.clone()), &[a])
    }

    /// Inverted dropout: in training mode each entry is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    /// Evaluation mode and `rate == 0` are the identity and draw nothing
    /// from `rng`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let (rows, cols) = self.value(a).shape();
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..rows * cols)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = Matrix::new(rows, cols, mask)?;
        self.mul_const(a, &mask)
    }

    /// Back-propagates from a scalar node. Gradients of parameter leaves
    /// are added to whatever earlier calls left there.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::Contract(format!("backward needs a 1x1 loss, got {r}x{c}")));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    match &mut self.grads[i] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.nodes[a.0].requires_grad {
                        let ga = accum(&mut adj, *a, av.shape());
                        gemm(1.0, &g, false, bv, true, 1.0, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb = accum(&mut adj, *b, bv.shape());
                        gemm(1.0, av, true, &g, false, 1.0, gb);
                    }
                }
                Op::Add(a, b) => {
                    add_into(&mut adj, &self.nodes, *a, &g, |x| x);
                    add_into(&mut adj, &self.nodes, *b, &g, |x| x);
                }
                Op::Sub(a, b) => {
                    add_into(&mut adj, &self.nodes, *a, &g, |x| x);
                    add_into(&mut adj, &self.nodes, *b, &g, |x| -x);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a.0].requires_grad {
                        let other = &self.nodes[b.0].value;
                        zip_into(&mut adj, a, &g, other, |gv, o| gv * o);
                    }
                    if self.nodes[b.0].requires_grad {
                        let other = &self.nodes[a.0].value;
                        zip_into(&mut adj, b, &g, other, |gv, o| gv * o);
                    }
                }
                Op::AddRow(a, row) => {
                    add_into(&mut adj, &self.nodes, *a, &g, |x| x);
                    if self.nodes[row.0].requires_grad {
                        let gr = accum(&mut adj, *row, (1, g.cols()));
                        for r in g.iter_rows() {
                            for (acc, v) in gr.data_mut().iter_mut().zip(r) {
                                *acc += v;
                            }
                        }
                    }
                }
                Op::Affine(a, scale) => {
                    let s = *scale;
                    add_into(&mut adj, &self.nodes, *a, &g, |x| s * x);
                }
                Op::LeakyRelu(a, slope) => {
                    let (a, slope) = (*a, *slope);
                    let input = &self.nodes[a.0].value;
                    zip_into(&mut adj, a, &g, input, |gv, x| if x > 0.0 { gv } else { slope * gv });
                }
                Op::Exp(a) => {
                    zip_into(&mut adj, *a, &g, &node.value, |gv, y| gv * y);
                }
                Op::Ln(a) => {
                    let input = &self.nodes[a.0].value;
                    zip_into(&mut adj, *a, &g, input, |gv, x| gv / x);
                }
                Op::Square(a) => {
                    let input = &self.nodes[a.0].value;
                    zip_into(&mut adj, *a, &g, input, |gv, x| 2.0 * x * gv);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let input = &self.nodes[a.0].value;
                    zip_into(&mut adj, *a, &g, input, |gv, x| if x >= lo && x <= hi { gv } else { 0.0 });
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let ga = accum(&mut adj, *a, y.shape());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((acc, p), q) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *acc += p * (q - dot);
                        }
                    }
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    let shape = self.nodes[a.0].value.shape();
                    let ga = accum(&mut adj, *a, shape);
                    for v in ga.data_mut() {
                        *v += gv;
                    }
                }
                Op::SumCols(a) => {
                    let shape = self.nodes[a.0].value.shape();
                    let ga = accum(&mut adj, *a, shape);
                    for r in 0..shape.0 {
                        let gv = g.data()[r];
                        for v in ga.row_mut(r) {
                            *v += gv;
                        }
                    }
                }
                Op::SelectRows(a, indices) => {
                    let shape = self.nodes[a.0].value.shape();
                    let ga = accum(&mut adj, *a, shape);
                    for (k, &src) in indices.iter().enumerate() {
                        for (acc, v) in ga.row_mut(src).iter_mut().zip(g.row(k)) {
                            *acc += v;
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let split = self.nodes[a.0].value.cols();
                    if self.nodes[a.0].requires_grad {
                        let ga = accum(&mut adj, a, self.nodes[a.0].value.shape());
                        for r in 0..g.rows() {
                            for (acc, v) in ga.row_mut(r).iter_mut().zip(&g.row(r)[..split]) {
                                *acc += v;
                            }
                        }
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb = accum(&mut adj, b, self.nodes[b.0].value.shape());
                        for r in 0..g.rows() {
                            for (acc, v) in gb.row_mut(r).iter_mut().zip(&g.row(r)[split..]) {
                                *acc += v;
                            }
                        }
                    }
                }
                Op::Column(a, c) => {
                    let c = *c;
                    let shape = self.nodes[a.0].value.shape();
                    let ga = accum(&mut adj, *a, shape);
                    for r in 0..shape.0 {
                        let v = ga.get(r, c) + g.data()[r];
                        ga.set(r, c, v);
                    }
                }
                Op::MulConst(a, k) => {
                    zip_into(&mut adj, *a, &g, k, |gv, kv| gv * kv);
                }
            }
        }
        Ok(())
    }
}

/// Numerically stable row-wise softmax on a plain matrix.
pub fn softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn accum(adj: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    adj[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn add_into(adj: &mut [Option<Matrix>], nodes: &[Node], v: Var, g: &Matrix, f: impl Fn(f64) -> f64) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let acc = accum(adj, v, g.shape());
    for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += f(x);
    }
}

fn zip_into(adj: &mut [Option<Matrix>], v: Var, g: &Matrix, other: &Matrix, f: impl Fn(f64, f64) -> f64) {
    let acc = accum(adj, v, g.shape());
    for ((a, &x), &o) in acc.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
        *a += f(x, o);
    }
}
