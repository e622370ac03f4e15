//! Wengert tape for reverse-mode differentiation over [`Tensor`] values.
//!
//! Operations push nodes onto a [`Tape`] in forward order; [`grad`] replays
//! them in reverse, accumulating vector-Jacobian products. A [`Var`] is a
//! cheap copyable handle (tape reference + node index), so expressions read
//! like plain arithmetic:
//!
//! ```
//! use oodflow::tensor::{tape::Tape, Tensor};
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::from_vec(vec![3.0]));
//! let loss = (x * x).sum();
//! let g = tape.grad(loss, &[x]).unwrap();
//! assert_eq!(g[0].data(), &[6.0]);
//! ```
//!
//! Shape rules are strict: elementwise binaries accept identical shapes, a
//! trailing-dim row vector against a matrix, or a scalar on either side.
//! Anything else panics; nothing is silently reshaped.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{matmul, matmul_a_bt, matmul_at_b, sigmoid, softplus, Tensor, TensorError};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    AddConst(usize),
    MulConst(usize, f64),
    PowConst(usize, f64),
    Matmul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Sigmoid(usize),
    Sqrt(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    LogSumExpRows(usize),
    SoftmaxRows(usize),
    Reshape(usize),
    GatherRows(usize, Vec<usize>),
    SelectPerRow(usize, Vec<usize>),
    SelectCols(usize, Vec<usize>),
    ConcatCols(usize, usize),
    PermuteCols(usize, Vec<usize>),
    CumsumRows(usize),
    MeanPoolRows(usize, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::AddConst(..) => "add_const",
            Op::MulConst(..) => "mul_const",
            Op::PowConst(..) => "pow",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Sigmoid(..) => "sigmoid",
            Op::Sqrt(..) => "sqrt",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumRows(..) => "sum_rows",
            Op::LogSumExpRows(..) => "logsumexp_rows",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Reshape(..) => "reshape",
            Op::GatherRows(..) => "gather_rows",
            Op::SelectPerRow(..) => "select_per_row",
            Op::SelectCols(..) => "select_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::PermuteCols(..) => "permute_cols",
            Op::CumsumRows(..) => "cumsum_rows",
            Op::MeanPoolRows(..) => "mean_pool_rows",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Operation recorder. One tape per forward/backward pass; drop it afterwards.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

enum Broadcast {
    Same,
    RowVecRight,
    ScalarRight,
    ScalarLeft,
}

fn classify(a: &[usize], b: &[usize], alen: usize, blen: usize) -> Broadcast {
    if a == b {
        return Broadcast::Same;
    }
    if blen == 1 && b.len() <= 1 {
        return Broadcast::ScalarRight;
    }
    if alen == 1 && a.len() <= 1 {
        return Broadcast::ScalarLeft;
    }
    if a.len() == 2 && b.len() == 1 && a[1] == b[0] {
        return Broadcast::RowVecRight;
    }
    panic!("incompatible shapes for elementwise op: {a:?} vs {b:?}");
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Register a tensor value; gradients flow to it like any other node.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    pub fn leaf_scalar(&self, v: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(v))
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    /// Reverse pass: one gradient tensor per requested parameter. Parameters
    /// unreachable from the loss get zeros. Fails on a non-scalar loss or if
    /// any vector-Jacobian product produces a non-finite value.
    pub fn grad(&self, loss: Var<'_>, params: &[Var<'_>]) -> Result<Vec<Tensor>, TensorError> {
        let nodes = self.nodes.borrow();
        let ln = &nodes[loss.id];
        if ln.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(ln.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let d = match grads[id].take() {
                Some(d) => d,
                None => continue,
            };
            let node = &nodes[id];
            backward_op(node, &nodes, &d, &mut grads)?;
            grads[id] = Some(d);
        }

        Ok(params
            .iter()
            .map(|p| {
                let shape = nodes[p.id].value.shape().to_vec();
                match &grads[p.id] {
                    Some(g) => Tensor::new(shape, g.clone()),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect())
    }
}

fn accumulate(
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    contribution: &[f64],
    op: &'static str,
) -> Result<(), TensorError> {
    if contribution.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::BackwardNonFinite { op });
    }
    match &mut grads[id] {
        Some(g) => {
            for (gi, ci) in g.iter_mut().zip(contribution.iter()) {
                *gi += ci;
            }
        }
        None => grads[id] = Some(contribution.to_vec()),
    }
    Ok(())
}

/// Reduce a full-shape gradient back to the shape of a broadcast operand.
fn reduce_for(d: &[f64], full: &[usize], operand: &Tensor) -> Vec<f64> {
    if operand.len() == d.len() {
        return d.to_vec();
    }
    if operand.len() == 1 {
        return vec![d.iter().sum()];
    }
    // row-vector case: sum over leading rows
    let n = operand.len();
    let m = full[0];
    let mut out = vec![0.0; n];
    for r in 0..m {
        for c in 0..n {
            out[c] += d[r * n + c];
        }
    }
    out
}

fn backward_op(
    node: &Node,
    nodes: &[Node],
    d: &[f64],
    grads: &mut [Option<Vec<f64>>],
) -> Result<(), TensorError> {
    let name = node.op.name();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            accumulate(grads, *a, &reduce_for(d, node.value.shape(), va), name)?;
            accumulate(grads, *b, &reduce_for(d, node.value.shape(), vb), name)?;
        }
        Op::Sub(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            accumulate(grads, *a, &reduce_for(d, node.value.shape(), va), name)?;
            let neg: Vec<f64> = d.iter().map(|v| -v).collect();
            accumulate(grads, *b, &reduce_for(&neg, node.value.shape(), vb), name)?;
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let da = mul_broadcast(d, vb, node.value.shape());
            let db = mul_broadcast(d, va, node.value.shape());
            accumulate(grads, *a, &reduce_for(&da, node.value.shape(), va), name)?;
            accumulate(grads, *b, &reduce_for(&db, node.value.shape(), vb), name)?;
        }
        Op::Div(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let binv = vb.map(|v| 1.0 / v);
            let da = mul_broadcast(d, &binv, node.value.shape());
            accumulate(grads, *a, &reduce_for(&da, node.value.shape(), va), name)?;
            // d_b = -d * a / b²  (computed on the broadcast shape)
            let full = node.value.shape();
            let out = &node.value; // out = a/b
            let dv: Vec<f64> = d.iter().zip(out.data().iter()).map(|(di, oi)| -di * oi).collect();
            let db = mul_broadcast(&dv, &binv, full);
            accumulate(grads, *b, &reduce_for(&db, full, vb), name)?;
        }
        Op::Neg(a) => {
            let da: Vec<f64> = d.iter().map(|v| -v).collect();
            accumulate(grads, *a, &da, name)?;
        }
        Op::AddConst(a) => accumulate(grads, *a, d, name)?,
        Op::MulConst(a, c) => {
            let da: Vec<f64> = d.iter().map(|v| v * c).collect();
            accumulate(grads, *a, &da, name)?;
        }
        Op::PowConst(a, c) => {
            let va = &nodes[*a].value;
            let da: Vec<f64> = d
                .iter()
                .zip(va.data().iter())
                .map(|(di, xi)| di * c * xi.powf(c - 1.0))
                .collect();
            accumulate(grads, *a, &da, name)?;
        }
        Op::Matmul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k) = (va.rows(), va.cols());
            let n = vb.cols();
            let da = matmul_a_bt(d, vb.data(), m, n, k);
            let db = matmul_at_b(va.data(), d, m, k, n);
            accumulate(grads, *a, &da, name)?;
            accumulate(grads, *b, &db, name)?;
        }
        Op::Transpose(a) => {
            let (m, n) = (node.value.rows(), node.value.cols());
            let mut da = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    da[j * m + i] = d[i * n + j];
                }
            }
            accumulate(grads, *a, &da, name)?;
        }
        Op::Exp(a) => {
            let da: Vec<f64> = d
                .iter()
                .zip(node.value.data().iter())
                .map(|(di, oi)| di * oi)
                .collect();
            accumulate(grads, *a, &da, name)?;
        }
        Op::Log(a) => {
            let va = &nodes[*a].value;
            let da: Vec<f64> = d
                .iter()
                .zip(va.data().iter())
                .map(|(di, xi)| di / xi)
                .collect();
            accumulate(grads, *a, &da, name)?;
        }
        Op::Tanh(a) => {
            let da: Vec<f64> = d
                .iter()
                .zip(node.value.data().iter())
                .map(|(di, oi)| di * (1.0 - oi * oi))
                .collect();
            accumulate(grads, *a, &da, name)?;
        }
        Op::Relu(a) => {
            let va = &nodes[*a].value;
            let da: Vec<f64> = d
                .iter()
                .zip(va.data().iter())
                .map(|(di, xi)| if *xi > 0.0 { *di } else { 0.0 })
                .collect();
            accumulate(grads, *a, &da, name)?;
        }
        Op::Softplus(a) => {
            let va = &nodes[*a].value;
            let da: Vec<f64> = d
                .iter()
                .zip(va.data().iter())
                .map(|(di, xi)| di * sigmoid(*xi))
                .collect();
            accumulate(grads, *a, &da, name)?;
        }
        Op::Sigmoid(a) => {
            let da: Vec<f64> = d
                .iter()
                .zip(node.value.data().iter())
                .map(|(di, oi)| di * oi * (1.0 - oi))
                .collect();
            accumulate(grads, *a, &da, name)?;
        }
        Op::Sqrt(a) => {
            let da: Vec<f64> = d
                .iter()
                .zip(node.value.data().iter())
                .map(|(di, oi)| di * 0.5 / oi)
                .collect();
            accumulate(grads, *a, &da, name)?;
        }
        Op::Sum(a) => {
            let va = &nodes[*a].value;
            accumulate(grads, *a, &vec![d[0]; va.len()], name)?;
        }
        Op::Mean(a) => {
            let va = &nodes[*a].value;
            let scale = d[0] / va.len() as f64;
            accumulate(grads, *a, &vec![scale; va.len()], name)?;
        }
        Op::SumRows(a) => {
            let va = &nodes[*a].value;
            let (m, n) = (va.rows(), va.cols());
            let mut da = vec![0.0; m * n];
            for r in 0..m {
                for c in 0..n {
                    da[r * n + c] = d[r];
                }
            }
            accumulate(grads, *a, &da, name)?;
        }
        Op::LogSumExpRows(a) => {
            let va = &nodes[*a].value;
            let (m, n) = (va.rows(), va.cols());
            let mut da = vec![0.0; m * n];
            for r in 0..m {
                let lse = node.value.data()[r];
                for c in 0..n {
                    da[r * n + c] = d[r] * (va.data()[r * n + c] - lse).exp();
                }
            }
            accumulate(grads, *a, &da, name)?;
        }
        Op::SoftmaxRows(a) => {
            let (m, n) = (node.value.rows(), node.value.cols());
            let out = node.value.data();
            let mut da = vec![0.0; m * n];
            for r in 0..m {
                let dot: f64 = (0..n).map(|c| d[r * n + c] * out[r * n + c]).sum();
                for c in 0..n {
                    da[r * n + c] = out[r * n + c] * (d[r * n + c] - dot);
                }
            }
            accumulate(grads, *a, &da, name)?;
        }
        Op::Reshape(a) => accumulate(grads, *a, d, name)?,
        Op::GatherRows(a, idx) => {
            let va = &nodes[*a].value;
            let (rows, cols) = (va.rows(), va.cols());
            let mut da = vec![0.0; rows * cols];
            for (r, &src) in idx.iter().enumerate() {
                for c in 0..cols {
                    da[src * cols + c] += d[r * cols + c];
                }
            }
            accumulate(grads, *a, &da, name)?;
        }
        Op::SelectPerRow(a, idx) => {
            let va = &nodes[*a].value;
            let (m, n) = (va.rows(), va.cols());
            let mut da = vec![0.0; m * n];
            for (r, &c) in idx.iter().enumerate() {
                da[r * n + c] += d[r];
            }
            accumulate(grads, *a, &da, name)?;
        }
        Op::SelectCols(a, idx) => {
            let va = &nodes[*a].value;
            let (m, n) = (va.rows(), va.cols());
            let k = idx.len();
            let mut da = vec![0.0; m * n];
            for r in 0..m {
                for (j, &c) in idx.iter().enumerate() {
                    da[r * n + c] += d[r * k + j];
                }
            }
            accumulate(grads, *a, &da, name)?;
        }
        Op::ConcatCols(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let (m, p) = (va.rows(), va.cols());
            let q = vb.cols();
            let mut da = vec![0.0; m * p];
            let mut db = vec![0.0; m * q];
            for r in 0..m {
                da[r * p..(r + 1) * p].copy_from_slice(&d[r * (p + q)..r * (p + q) + p]);
                db[r * q..(r + 1) * q].copy_from_slice(&d[r * (p + q) + p..(r + 1) * (p + q)]);
            }
            accumulate(grads, *a, &da, name)?;
            accumulate(grads, *b, &db, name)?;
        }
        Op::PermuteCols(a, perm) => {
            let va = &nodes[*a].value;
            let (m, n) = (va.rows(), va.cols());
            let mut da = vec![0.0; m * n];
            for r in 0..m {
                for (j, &src) in perm.iter().enumerate() {
                    da[r * n + src] += d[r * n + j];
                }
            }
            accumulate(grads, *a, &da, name)?;
        }
        Op::CumsumRows(a) => {
            let va = &nodes[*a].value;
            let (m, n) = (va.rows(), va.cols());
            let mut da = vec![0.0; m * n];
            for r in 0..m {
                let mut suffix = 0.0;
                for c in (0..n).rev() {
                    suffix += d[r * n + c];
                    da[r * n + c] = suffix;
                }
            }
            accumulate(grads, *a, &da, name)?;
        }
        Op::MeanPoolRows(a, g) => {
            let va = &nodes[*a].value;
            let (rows, cols) = (va.rows(), va.cols());
            let mut da = vec![0.0; rows * cols];
            let inv = 1.0 / *g as f64;
            for r in 0..rows {
                let out_r = r / g;
                for c in 0..cols {
                    da[r * cols + c] = d[out_r * cols + c] * inv;
                }
            }
            accumulate(grads, *a, &da, name)?;
        }
    }
    Ok(())
}

/// Elementwise product of a full-shape gradient with a possibly-broadcast
/// operand, yielding a full-shape result.
fn mul_broadcast(d: &[f64], other: &Tensor, full: &[usize]) -> Vec<f64> {
    if other.len() == d.len() {
        d.iter().zip(other.data().iter()).map(|(a, b)| a * b).collect()
    } else if other.len() == 1 {
        let s = other.data()[0];
        d.iter().map(|v| v * s).collect()
    } else {
        let n = other.len();
        let m = full[0];
        let mut out = vec![0.0; d.len()];
        for r in 0..m {
            for c in 0..n {
                out[r * n + c] = d[r * n + c] * other.data()[c];
            }
        }
        out
    }
}

fn elementwise(
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    match classify(a.shape(), b.shape(), a.len(), b.len()) {
        Broadcast::Same => Tensor::new(
            a.shape().to_vec(),
            a.data().iter().zip(b.data().iter()).map(|(&x, &y)| f(x, y)).collect(),
        ),
        Broadcast::ScalarRight => {
            let s = b.data()[0];
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x, s)).collect())
        }
        Broadcast::ScalarLeft => {
            let s = a.data()[0];
            Tensor::new(b.shape().to_vec(), b.data().iter().map(|&y| f(s, y)).collect())
        }
        Broadcast::RowVecRight => {
            let (m, n) = (a.rows(), a.cols());
            let mut data = Vec::with_capacity(m * n);
            for r in 0..m {
                for c in 0..n {
                    data.push(f(a.data()[r * n + c], b.data()[c]));
                }
            }
            Tensor::new(vec![m, n], data)
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    /// Clone of this node's forward value.
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    /// Borrow this node's forward value without cloning.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|v| v.shape().to_vec())
    }

    fn binary(self, other: Var<'t>, op: fn(usize, usize) -> Op, f: fn(f64, f64) -> f64) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            elementwise(&nodes[self.id].value, &nodes[other.id].value, f)
        };
        self.tape.push(op(self.id, other.id), value)
    }

    fn unary(self, op: fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.with_value(|v| v.map(&f));
        self.tape.push(op(self.id), value)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn log(self) -> Var<'t> {
        self.unary(Op::Log, f64::ln)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu, |x| x.max(0.0))
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus, softplus)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid, sigmoid)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt, f64::sqrt)
    }

    pub fn powc(self, c: f64) -> Var<'t> {
        let value = self.with_value(|v| v.map(|x| x.powf(c)));
        self.tape.push(Op::PowConst(self.id, c), value)
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    pub fn add_const(self, c: f64) -> Var<'t> {
        let value = self.with_value(|v| v.map(|x| x + c));
        self.tape.push(Op::AddConst(self.id), value)
    }

    pub fn mul_const(self, c: f64) -> Var<'t> {
        let value = self.with_value(|v| v.map(|x| x * c));
        self.tape.push(Op::MulConst(self.id, c), value)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            assert_eq!(a.shape().len(), 2, "matmul lhs must be rank 2, got {:?}", a.shape());
            assert_eq!(b.shape().len(), 2, "matmul rhs must be rank 2, got {:?}", b.shape());
            assert_eq!(
                a.cols(),
                b.rows(),
                "matmul inner dims differ: {:?} x {:?}",
                a.shape(),
                b.shape()
            );
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            Tensor::new(vec![m, n], matmul(a.data(), b.data(), m, k, n))
        };
        self.tape.push(Op::Matmul(self.id, other.id), value)
    }

    pub fn t(self) -> Var<'t> {
        let value = self.with_value(|v| {
            let (m, n) = (v.rows(), v.cols());
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    data[j * m + i] = v.data()[i * n + j];
                }
            }
            Tensor::new(vec![n, m], data)
        });
        self.tape.push(Op::Transpose(self.id), value)
    }

    pub fn sum(self) -> Var<'t> {
        let value = self.with_value(|v| Tensor::scalar(v.data().iter().sum()));
        self.tape.push(Op::Sum(self.id), value)
    }

    pub fn mean(self) -> Var<'t> {
        let value =
            self.with_value(|v| Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64));
        self.tape.push(Op::Mean(self.id), value)
    }

    pub fn sum_rows(self) -> Var<'t> {
        let value = self.with_value(|v| {
            let (m, n) = (v.rows(), v.cols());
            let data = (0..m).map(|r| v.data()[r * n..(r + 1) * n].iter().sum()).collect();
            Tensor::new(vec![m], data)
        });
        self.tape.push(Op::SumRows(self.id), value)
    }

    pub fn logsumexp_rows(self) -> Var<'t> {
        let value = self.with_value(|v| {
            let (m, n) = (v.rows(), v.cols());
            let data = (0..m).map(|r| super::logsumexp(&v.data()[r * n..(r + 1) * n])).collect();
            Tensor::new(vec![m], data)
        });
        self.tape.push(Op::LogSumExpRows(self.id), value)
    }

    pub fn softmax_rows(self) -> Var<'t> {
        let value = self.with_value(|v| {
            let (m, n) = (v.rows(), v.cols());
            let mut data = vec![0.0; m * n];
            for r in 0..m {
                let row = &v.data()[r * n..(r + 1) * n];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for c in 0..n {
                    let e = (row[c] - mx).exp();
                    data[r * n + c] = e;
                    z += e;
                }
                for c in 0..n {
                    data[r * n + c] /= z;
                }
            }
            Tensor::new(vec![m, n], data)
        });
        self.tape.push(Op::SoftmaxRows(self.id), value)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Var<'t> {
        let value = self.with_value(|v| v.reshaped(shape.clone()));
        self.tape.push(Op::Reshape(self.id), value)
    }

    /// Embedding-style lookup: rows of a `[D, d]` table by index.
    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        let value = self.with_value(|v| {
            let cols = v.cols();
            let rows = v.rows();
            let mut data = Vec::with_capacity(idx.len() * cols);
            for &i in idx {
                assert!(i < rows, "gather_rows index {i} out of range {rows}");
                data.extend_from_slice(&v.data()[i * cols..(i + 1) * cols]);
            }
            Tensor::new(vec![idx.len(), cols], data)
        });
        self.tape.push(Op::GatherRows(self.id, idx.to_vec()), value)
    }

    /// One element per row of a `[m, K]` matrix; `idx` has length m.
    pub fn select_per_row(self, idx: &[usize]) -> Var<'t> {
        let value = self.with_value(|v| {
            let (m, n) = (v.rows(), v.cols());
            assert_eq!(idx.len(), m, "select_per_row needs one index per row");
            let data = idx
                .iter()
                .enumerate()
                .map(|(r, &c)| {
                    assert!(c < n, "select_per_row col {c} out of range {n}");
                    v.data()[r * n + c]
                })
                .collect();
            Tensor::new(vec![m], data)
        });
        self.tape.push(Op::SelectPerRow(self.id, idx.to_vec()), value)
    }

    pub fn select_cols(self, idx: &[usize]) -> Var<'t> {
        let value = self.with_value(|v| {
            let (m, n) = (v.rows(), v.cols());
            let mut data = Vec::with_capacity(m * idx.len());
            for r in 0..m {
                for &c in idx {
                    assert!(c < n, "select_cols col {c} out of range {n}");
                    data.push(v.data()[r * n + c]);
                }
            }
            Tensor::new(vec![m, idx.len()], data)
        });
        self.tape.push(Op::SelectCols(self.id, idx.to_vec()), value)
    }

    pub fn concat_cols(self, other: Var<'t>) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            assert_eq!(a.rows(), b.rows(), "concat_cols row mismatch");
            let (m, p, q) = (a.rows(), a.cols(), b.cols());
            let mut data = Vec::with_capacity(m * (p + q));
            for r in 0..m {
                data.extend_from_slice(&a.data()[r * p..(r + 1) * p]);
                data.extend_from_slice(&b.data()[r * q..(r + 1) * q]);
            }
            Tensor::new(vec![m, p + q], data)
        };
        self.tape.push(Op::ConcatCols(self.id, other.id), value)
    }

    /// Reorder columns: `out[:, j] = in[:, perm[j]]`.
    pub fn permute_cols(self, perm: &[usize]) -> Var<'t> {
        let value = self.with_value(|v| {
            let (m, n) = (v.rows(), v.cols());
            assert_eq!(perm.len(), n, "permutation length must equal column count");
            let mut data = Vec::with_capacity(m * n);
            for r in 0..m {
                for &src in perm {
                    data.push(v.data()[r * n + src]);
                }
            }
            Tensor::new(vec![m, n], data)
        });
        self.tape.push(Op::PermuteCols(self.id, perm.to_vec()), value)
    }

    /// Inclusive cumulative sum along each row.
    pub fn cumsum_rows(self) -> Var<'t> {
        let value = self.with_value(|v| {
            let (m, n) = (v.rows(), v.cols());
            let mut data = vec![0.0; m * n];
            for r in 0..m {
                let mut acc = 0.0;
                for c in 0..n {
                    acc += v.data()[r * n + c];
                    data[r * n + c] = acc;
                }
            }
            Tensor::new(vec![m, n], data)
        });
        self.tape.push(Op::CumsumRows(self.id), value)
    }

    /// Average each consecutive block of `group` rows: `[m·g, d] -> [m, d]`.
    pub fn mean_pool_rows(self, group: usize) -> Var<'t> {
        let value = self.with_value(|v| {
            let (rows, cols) = (v.rows(), v.cols());
            assert!(group > 0 && rows % group == 0, "row count {rows} not divisible by group {group}");
            let m = rows / group;
            let mut data = vec![0.0; m * cols];
            for r in 0..rows {
                let o = r / group;
                for c in 0..cols {
                    data[o * cols + c] += v.data()[r * cols + c];
                }
            }
            let inv = 1.0 / group as f64;
            for v in data.iter_mut() {
                *v *= inv;
            }
            Tensor::new(vec![m, cols], data)
        });
        self.tape.push(Op::MeanPoolRows(self.id, group), value)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add, |a, b| a + b)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub, |a, b| a - b)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul, |a, b| a * b)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Div, |a, b| a / b)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        let value = self.with_value(|v| v.map(|x| -x));
        self.tape.push(Op::Neg(self.id), value)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.add_const(rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.add_const(-rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.mul_const(rhs)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        (-rhs).add_const(self)
    }
}

/// Diagonal-Gaussian log density per row: `[m,d]` inputs to an `[m]` output.
pub fn gaussian_log_density_rows<'t>(x: Var<'t>, mean: Var<'t>, log_std: Var<'t>) -> Var<'t> {
    let z = (x - mean) * (-log_std).exp();
    let per_dim = (z.square() * 0.5 + log_std).add_const(0.5 * super::LOG_2PI);
    -(per_dim.sum_rows())
}

/// Diagonal-Gaussian log density of one vector, as a scalar node.
pub fn gaussian_log_density_graph<'t>(x: Var<'t>, mean: Var<'t>, log_std: Var<'t>) -> Var<'t> {
    let xs = x.shape();
    assert_eq!(xs, mean.shape(), "gaussian_log_density length mismatch");
    assert_eq!(xs, log_std.shape(), "gaussian_log_density length mismatch");
    let z = (x - mean) * (-log_std).exp();
    let per_dim = (z.square() * 0.5 + log_std).add_const(0.5 * super::LOG_2PI);
    -(per_dim.sum())
}
