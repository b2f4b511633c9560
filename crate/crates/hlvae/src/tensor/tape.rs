//! Operation recording for reverse-mode differentiation.

use std::cell::{Ref, RefCell};

use super::raw;
use super::{Tensor, TensorError};

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Exp(usize),
    Log(usize),
    Log1p(usize),
    Softplus(usize),
    Sigmoid(usize),
    Relu(usize),
    Square(usize),
    Sqrt(usize),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    Concat(Vec<usize>, usize),
    SliceAxis { input: usize, axis: usize, start: usize, end: usize },
    Transpose(usize),
    Cholesky(usize),
    TriSolve { t: usize, b: usize, lower: bool, transpose: bool },
}

pub(crate) struct Node {
    pub op: Op,
    pub value: Tensor,
    pub requires_grad: bool,
}

/// A record of one forward computation. Single-threaded; distinct tapes may
/// live on distinct threads.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) index: usize,
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

    /// Registers a grad-tracked leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(Op::Leaf, value, true)
    }

    /// Registers a non-tracked constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(Op::Leaf, value, false)
    }

    pub fn constant_scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn push_unchecked(&self, op: Op, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value, requires_grad });
        Var { tape: self, index: nodes.len() - 1 }
    }

    fn push(
        &self,
        name: &'static str,
        op: Op,
        value: Tensor,
        requires_grad: bool,
    ) -> Result<Var<'_>, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    /// Concatenates 2-D vars along `axis` (0 = stack rows, 1 = stack columns).
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>, TensorError> {
        if parts.is_empty() || axis > 1 {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                detail: "need at least one part and axis in {0,1}".into(),
            });
        }
        let nodes = self.nodes.borrow();
        let first = nodes[parts[0].index].value.dims2()?;
        let mut fixed = if axis == 0 { first.1 } else { first.0 };
        let _ = &mut fixed;
        let mut total = 0usize;
        let mut rg = false;
        for p in parts {
            let (r, c) = nodes[p.index].value.dims2()?;
            let (along, across) = if axis == 0 { (r, c) } else { (c, r) };
            if across != fixed {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    detail: format!("size {} across axis, expected {}", across, fixed),
                });
            }
            total += along;
            rg |= nodes[p.index].requires_grad;
        }
        let (rows, cols) = if axis == 0 { (total, fixed) } else { (fixed, total) };
        let mut out = Tensor::zeros(&[rows, cols]);
        let mut offset = 0usize;
        for p in parts {
            let t = &nodes[p.index].value;
            let (r, c) = t.dims2()?;
            if axis == 0 {
                out.values_mut()[offset * cols..(offset + r) * cols].copy_from_slice(t.values());
                offset += r;
            } else {
                for i in 0..rows {
                    for j in 0..c {
                        out.set2(i, offset + j, t.at2(i, j));
                    }
                }
                offset += c;
            }
        }
        drop(nodes);
        self.push("concat", Op::Concat(parts.iter().map(|p| p.index).collect(), axis), out, rg)
    }
}

impl<'t> Var<'t> {
    /// Borrow of the stored value.
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |nodes| &nodes[self.index].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn scalar_value(&self) -> Result<f64, TensorError> {
        self.value().scalar_value()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.index].requires_grad
    }

    fn rg2(&self, other: Var<'t>) -> bool {
        let nodes = self.tape.nodes.borrow();
        nodes[self.index].requires_grad || nodes[other.index].requires_grad
    }

    fn binary_broadcast(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Var<'t>, TensorError> {
        let (values, shape) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.index].value;
            let b = &nodes[other.index].value;
            let shape = raw::broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
                TensorError::ShapeMismatch {
                    op: name,
                    detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
                }
            })?;
            let values =
                raw::broadcast_binary(a.values(), a.shape(), b.values(), b.shape(), &shape, f);
            (values, shape)
        };
        let rg = self.rg2(other);
        self.tape.push(name, op(self.index, other.index), Tensor::new(shape, values)?, rg)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary_broadcast(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary_broadcast(other, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.binary_broadcast(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let (values, m, n) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.index].value;
            let b = &nodes[other.index].value;
            let (m, k) = a.dims2()?;
            let (k2, n) = b.dims2()?;
            if k != k2 {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    detail: format!("{}x{} times {}x{}", m, k, k2, n),
                });
            }
            (raw::matmul(a.values(), m, k, b.values(), n), m, n)
        };
        let rg = self.rg2(other);
        self.tape.push("matmul", Op::MatMul(self.index, other.index), Tensor::new(vec![m, n], values)?, rg)
    }

    fn unary(
        self,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        op: impl Fn(usize) -> Op,
    ) -> Result<Var<'t>, TensorError> {
        let (shape, values, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.index].value;
            (
                a.shape().to_vec(),
                a.values().iter().map(|v| f(*v)).collect::<Vec<_>>(),
                nodes[self.index].requires_grad,
            )
        };
        self.tape.push(name, op(self.index), Tensor::new(shape, values)?, rg)
    }

    pub fn exp(self) -> Result<Var<'t>, TensorError> {
        self.unary("exp", f64::exp, Op::Exp)
    }

    pub fn log(self) -> Result<Var<'t>, TensorError> {
        self.unary("log", f64::ln, Op::Log)
    }

    pub fn log1p(self) -> Result<Var<'t>, TensorError> {
        self.unary("log1p", f64::ln_1p, Op::Log1p)
    }

    pub fn softplus(self) -> Result<Var<'t>, TensorError> {
        self.unary("softplus", raw::softplus, Op::Softplus)
    }

    pub fn sigmoid(self) -> Result<Var<'t>, TensorError> {
        self.unary("sigmoid", raw::sigmoid, Op::Sigmoid)
    }

    pub fn relu(self) -> Result<Var<'t>, TensorError> {
        self.unary("relu", |v| v.max(0.0), Op::Relu)
    }

    pub fn square(self) -> Result<Var<'t>, TensorError> {
        self.unary("square", |v| v * v, Op::Square)
    }

    pub fn sqrt(self) -> Result<Var<'t>, TensorError> {
        self.unary("sqrt", f64::sqrt, Op::Sqrt)
    }

    pub fn sum(self) -> Result<Var<'t>, TensorError> {
        let (total, rg) = {
            let nodes = self.tape.nodes.borrow();
            (nodes[self.index].value.values().iter().sum::<f64>(), nodes[self.index].requires_grad)
        };
        self.tape.push("sum", Op::Sum(self.index), Tensor::scalar(total), rg)
    }

    pub fn mean(self) -> Result<Var<'t>, TensorError> {
        let (total, n, rg) = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.index].value;
            (v.values().iter().sum::<f64>(), v.len(), nodes[self.index].requires_grad)
        };
        self.tape.push("mean", Op::Mean(self.index), Tensor::scalar(total / n as f64), rg)
    }

    /// Sum of a 2-D tensor along `axis`; axis 0 yields 1×c, axis 1 yields r×1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>, TensorError> {
        let (out, rg) = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.index].value;
            let (r, c) = v.dims2()?;
            let out = match axis {
                0 => {
                    let mut acc = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            acc[j] += v.at2(i, j);
                        }
                    }
                    Tensor::new(vec![1, c], acc)?
                }
                1 => {
                    let mut acc = vec![0.0; r];
                    for i in 0..r {
                        for j in 0..c {
                            acc[i] += v.at2(i, j);
                        }
                    }
                    Tensor::new(vec![r, 1], acc)?
                }
                _ => {
                    return Err(TensorError::ShapeMismatch {
                        op: "sum_axis",
                        detail: format!("axis {} out of range", axis),
                    })
                }
            };
            (out, nodes[self.index].requires_grad)
        };
        self.tape.push("sum_axis", Op::SumAxis(self.index, axis), out, rg)
    }

    /// Contiguous slice `[start, end)` along `axis` of a 2-D tensor.
    pub fn slice_axis(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>, TensorError> {
        let (out, rg) = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.index].value;
            let (r, c) = v.dims2()?;
            let limit = if axis == 0 { r } else { c };
            if axis > 1 || start >= end || end > limit {
                return Err(TensorError::ShapeMismatch {
                    op: "slice_axis",
                    detail: format!("range {}..{} on axis {} of {}x{}", start, end, axis, r, c),
                });
            }
            let out = if axis == 0 {
                Tensor::new(vec![end - start, c], v.values()[start * c..end * c].to_vec())?
            } else {
                let mut vals = Vec::with_capacity((end - start) * r);
                for i in 0..r {
                    for j in start..end {
                        vals.push(v.at2(i, j));
                    }
                }
                Tensor::new(vec![r, end - start], vals)?
            };
            (out, nodes[self.index].requires_grad)
        };
        self.tape.push("slice_axis", Op::SliceAxis { input: self.index, axis, start, end }, out, rg)
    }

    pub fn transpose(self) -> Result<Var<'t>, TensorError> {
        let (out, rg) = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.index].value;
            let (r, c) = v.dims2()?;
            (Tensor::new(vec![c, r], raw::transpose(v.values(), r, c))?, nodes[self.index].requires_grad)
        };
        self.tape.push("transpose", Op::Transpose(self.index), out, rg)
    }

    /// Lower Cholesky factor of a symmetric matrix (reads the lower triangle,
    /// adds the escalating diagonal jitter described in [`raw::cholesky_lower`]).
    pub fn cholesky(self) -> Result<Var<'t>, TensorError> {
        let (out, rg) = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.index].value;
            let (r, c) = v.dims2()?;
            if r != c {
                return Err(TensorError::ShapeMismatch {
                    op: "cholesky",
                    detail: format!("{}x{} not square", r, c),
                });
            }
            (Tensor::new(vec![r, r], raw::cholesky_lower(v.values(), r)?)?, nodes[self.index].requires_grad)
        };
        self.tape.push("cholesky", Op::Cholesky(self.index), out, rg)
    }

    /// Solves `op(self)·X = b` with `self` triangular.
    pub fn tri_solve(
        self,
        b: Var<'t>,
        lower: bool,
        transpose: bool,
    ) -> Result<Var<'t>, TensorError> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let t = &nodes[self.index].value;
            let bv = &nodes[b.index].value;
            let (n, n2) = t.dims2()?;
            let (bn, bm) = bv.dims2()?;
            if n != n2 || bn != n {
                return Err(TensorError::ShapeMismatch {
                    op: "tri_solve",
                    detail: format!("{}x{} triangular vs {}x{} rhs", n, n2, bn, bm),
                });
            }
            Tensor::new(vec![n, bm], raw::tri_solve(t.values(), n, bv.values(), bm, lower, transpose)?)?
        };
        let rg = self.rg2(b);
        self.tape.push(
            "tri_solve",
            Op::TriSolve { t: self.index, b: b.index, lower, transpose },
            out,
            rg,
        )
    }

    // ---- composed conveniences (no new primitives) ----

    /// Multiplication by a plain constant scalar.
    pub fn scale(self, c: f64) -> Result<Var<'t>, TensorError> {
        self.mul(self.tape.constant_scalar(c))
    }

    pub fn neg(self) -> Result<Var<'t>, TensorError> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>, TensorError> {
        self.add(self.tape.constant_scalar(c))
    }

    /// 1/x for strictly positive tensors, composed as exp(-log(x)).
    pub fn recip_positive(self) -> Result<Var<'t>, TensorError> {
        self.log()?.neg()?.exp()
    }

    /// Diagonal of a square matrix as an n×1 column, composed as
    /// row-sums of the identity-masked matrix.
    pub fn diag_part(self) -> Result<Var<'t>, TensorError> {
        let n = {
            let v = self.value();
            let (r, c) = v.dims2()?;
            if r != c {
                return Err(TensorError::ShapeMismatch {
                    op: "diag_part",
                    detail: format!("{}x{} not square", r, c),
                });
            }
            r
        };
        let eye = self.tape.constant(Tensor::eye(n));
        self.mul(eye)?.sum_axis(1)
    }

    /// Sum of elementwise products.
    pub fn dot(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.mul(other)?.sum()
    }

    /// Reinterprets a 1×(r·c) row as an r×c matrix, composed from
    /// slicing and row concatenation.
    pub fn reshape_rows(self, r: usize, c: usize) -> Result<Var<'t>, TensorError> {
        let (rows, cols) = self.value().dims2()?;
        if rows != 1 || cols != r * c {
            return Err(TensorError::ShapeMismatch {
                op: "reshape_rows",
                detail: format!("{}x{} into {}x{}", rows, cols, r, c),
            });
        }
        if r == 1 {
            return self.slice_axis(1, 0, c);
        }
        let parts: Vec<Var<'t>> = (0..r)
            .map(|i| self.slice_axis(1, i * c, (i + 1) * c))
            .collect::<Result<_, _>>()?;
        self.tape.concat(&parts, 0)
    }
}
