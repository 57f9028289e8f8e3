use std::cell::RefCell;
use std::fmt;

use ndarray::{concatenate, s, Array2, Axis as NdAxis};

use crate::error::{AdError, Shape};
use crate::linalg;

pub type Array = Array2<f64>;

/// Direction along which `softmax` normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Every row sums to one.
    Rows,
    /// Every column sums to one.
    Cols,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Broadcast(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Sin(usize),
    Cos(usize),
    Sum(usize),
    SqNorm(usize),
    Softmax(usize, Axis),
    LogSumExp(usize),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    SelectRows(usize, usize, Vec<bool>),
    Reshape(usize),
    SqDist(usize, usize),
    SolveSpd { a: usize, b: usize, chol: Array },
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Array,
    pub(crate) needs_grad: bool,
}

/// Append-only record of a computation. Nodes are stored in creation order, so
/// every operand precedes its consumers.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    shape: Shape,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape)
            .finish()
    }
}

fn standard(a: Array) -> Array {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Array) -> Var<'_> {
        self.push(Op::Leaf, standard(value), false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&self, value: Array) -> Var<'_> {
        self.push(Op::Leaf, standard(value), true)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array::from_elem((1, 1), value))
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Var<'_> {
        self.constant(Array::zeros((rows, cols)))
    }

    pub fn ones(&self, rows: usize, cols: usize) -> Var<'_> {
        self.constant(Array::ones((rows, cols)))
    }

    pub(crate) fn push(&self, op: Op, value: Array, needs_grad: bool) -> Var<'_> {
        let shape = value.dim();
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var {
            tape: self,
            id,
            shape,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    fn check_owner(&self, v: &Var<'_>) {
        assert!(
            std::ptr::eq(self, v.tape),
            "variable belongs to a different tape"
        );
    }

    /// Stacks variables vertically. All parts must share a column count.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, AdError> {
        self.concat(parts, NdAxis(0))
    }

    /// Stacks variables horizontally. All parts must share a row count.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, AdError> {
        self.concat(parts, NdAxis(1))
    }

    fn concat<'t>(&'t self, parts: &[Var<'t>], axis: NdAxis) -> Result<Var<'t>, AdError> {
        let op_name = if axis.0 == 0 { "concat_rows" } else { "concat_cols" };
        let first = parts.first().ok_or_else(|| AdError::InvalidArgument {
            op: op_name,
            reason: "no operands".into(),
        })?;
        for p in parts {
            self.check_owner(p);
            let ok = if axis.0 == 0 {
                p.shape.1 == first.shape.1
            } else {
                p.shape.0 == first.shape.0
            };
            if !ok {
                return Err(AdError::ShapeMismatch {
                    op: op_name,
                    lhs: first.shape,
                    rhs: p.shape,
                });
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = ids.iter().map(|&i| nodes[i].value.view()).collect();
            concatenate(axis, &views).expect("shapes validated")
        };
        let needs = self.needs(&ids);
        let op = if axis.0 == 0 {
            Op::ConcatRows(ids)
        } else {
            Op::ConcatCols(ids)
        };
        Ok(self.push(op, standard(value), needs))
    }

    /// Row `i` of the result is row `i` of `a` when `take_a[i]`, else row `i` of `b`.
    pub fn select_rows<'t>(
        &'t self,
        a: Var<'t>,
        b: Var<'t>,
        take_a: &[bool],
    ) -> Result<Var<'t>, AdError> {
        self.check_owner(&a);
        self.check_owner(&b);
        if a.shape != b.shape {
            return Err(AdError::ShapeMismatch {
                op: "select_rows",
                lhs: a.shape,
                rhs: b.shape,
            });
        }
        if take_a.len() != a.shape.0 {
            return Err(AdError::ShapeMismatch {
                op: "select_rows",
                lhs: a.shape,
                rhs: (take_a.len(), a.shape.1),
            });
        }
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.id].value, &nodes[b.id].value);
            let mut out = vb.clone();
            for (i, &t) in take_a.iter().enumerate() {
                if t {
                    out.row_mut(i).assign(&va.row(i));
                }
            }
            out
        };
        let needs = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::SelectRows(a.id, b.id, take_a.to_vec()), value, needs))
    }
}

macro_rules! unary {
    ($(#[$m:meta])* $name:ident, $op:ident, $f:expr) => {
        $(#[$m])*
        pub fn $name(self) -> Var<'t> {
            let value = self.map(|v| v.mapv($f));
            self.tape.push(Op::$op(self.id), value, self.needs_grad())
        }
    };
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Array {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Applies `f` to the forward value without copying it.
    pub fn map<R>(&self, f: impl FnOnce(&Array) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    /// Value of a 1x1 variable.
    ///
    /// Panics if the variable is not 1x1.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape, (1, 1), "item() on a non-scalar variable");
        self.map(|v| v[[0, 0]])
    }

    fn same_shape(&self, other: &Var<'t>, op: &'static str) -> Result<(), AdError> {
        self.tape.check_owner(other);
        if self.shape != other.shape {
            return Err(AdError::ShapeMismatch {
                op,
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        Ok(())
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        op: fn(usize, usize) -> Op,
        f: impl Fn(&Array, &Array) -> Array,
    ) -> Result<Var<'t>, AdError> {
        self.same_shape(&other, name)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(op(self.id, other.id), value, needs))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    /// Elementwise quotient.
    pub fn div(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    pub fn neg(self) -> Var<'t> {
        let value = self.map(|v| -v);
        self.tape.push(Op::Neg(self.id), value, self.needs_grad())
    }

    /// Multiplies by a constant.
    pub fn scale(self, c: f64) -> Var<'t> {
        let value = self.map(|v| v * c);
        self.tape.push(Op::Scale(self.id, c), value, self.needs_grad())
    }

    /// Adds a constant to every entry.
    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let value = self.map(|v| v + c);
        self.tape.push(Op::AddScalar(self.id), value, self.needs_grad())
    }

    /// Expands a 1x1 variable to `shape`.
    pub fn broadcast(self, shape: Shape) -> Result<Var<'t>, AdError> {
        if self.shape != (1, 1) {
            return Err(AdError::ShapeMismatch {
                op: "broadcast",
                lhs: self.shape,
                rhs: (1, 1),
            });
        }
        let value = Array::from_elem(shape, self.item());
        Ok(self
            .tape
            .push(Op::Broadcast(self.id), value, self.needs_grad()))
    }

    /// Multiplies every entry by the 1x1 variable `s`.
    pub fn mul_scalar(self, s: Var<'t>) -> Result<Var<'t>, AdError> {
        let b = s.broadcast(self.shape)?;
        self.mul(b)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.tape.check_owner(&other);
        if self.shape.1 != other.shape.0 {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.dot(&nodes[other.id].value)
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self
            .tape
            .push(Op::MatMul(self.id, other.id), standard(value), needs))
    }

    pub fn t(self) -> Var<'t> {
        let value = self.map(|v| v.t().as_standard_layout().into_owned());
        self.tape
            .push(Op::Transpose(self.id), value, self.needs_grad())
    }

    unary!(tanh, Tanh, f64::tanh);
    unary!(sigmoid, Sigmoid, |x: f64| 1.0 / (1.0 + (-x).exp()));
    unary!(exp, Exp, f64::exp);
    unary!(
        /// Natural logarithm.
        ln,
        Log,
        f64::ln
    );
    unary!(sin, Sin, f64::sin);
    unary!(cos, Cos, f64::cos);

    /// Sum of all entries, as a 1x1 variable.
    pub fn sum(self) -> Var<'t> {
        let value = Array::from_elem((1, 1), self.map(|v| v.sum()));
        self.tape.push(Op::Sum(self.id), value, self.needs_grad())
    }

    /// Squared Frobenius norm, as a 1x1 variable.
    pub fn sq_norm(self) -> Var<'t> {
        let value = Array::from_elem((1, 1), self.map(|v| v.iter().map(|x| x * x).sum()));
        self.tape.push(Op::SqNorm(self.id), value, self.needs_grad())
    }

    /// Max-subtracted softmax along `axis`. Entries of `-inf` receive zero weight;
    /// a slice made only of `-inf` yields NaN.
    pub fn softmax(self, axis: Axis) -> Var<'t> {
        let value = self.map(|v| softmax_value(v, axis));
        self.tape
            .push(Op::Softmax(self.id, axis), value, self.needs_grad())
    }

    /// `log Σ exp(x)` over all entries, computed with max subtraction.
    pub fn logsumexp(self) -> Var<'t> {
        let lse = self.map(|v| {
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
        });
        self.tape.push(
            Op::LogSumExp(self.id),
            Array::from_elem((1, 1), lse),
            self.needs_grad(),
        )
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>, AdError> {
        if start + len > self.shape.0 {
            return Err(AdError::ShapeMismatch {
                op: "slice_rows",
                lhs: self.shape,
                rhs: (start + len, self.shape.1),
            });
        }
        let value = self.map(|v| v.slice(s![start..start + len, ..]).to_owned());
        Ok(self
            .tape
            .push(Op::SliceRows(self.id, start), value, self.needs_grad()))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>, AdError> {
        if start + len > self.shape.1 {
            return Err(AdError::ShapeMismatch {
                op: "slice_cols",
                lhs: self.shape,
                rhs: (self.shape.0, start + len),
            });
        }
        let value = self.map(|v| {
            v.slice(s![.., start..start + len])
                .as_standard_layout()
                .into_owned()
        });
        Ok(self
            .tape
            .push(Op::SliceCols(self.id, start), value, self.needs_grad()))
    }

    /// Picks rows by index; indices may repeat.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t>, AdError> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.shape.0) {
            return Err(AdError::InvalidArgument {
                op: "gather_rows",
                reason: format!("row {bad} out of range for shape {:?}", self.shape),
            });
        }
        let value = self.map(|v| v.select(NdAxis(0), indices));
        Ok(self.tape.push(
            Op::GatherRows(self.id, indices.to_vec()),
            value,
            self.needs_grad(),
        ))
    }

    /// Row-major reinterpretation with the same number of entries.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Var<'t>, AdError> {
        if rows * cols != self.shape.0 * self.shape.1 {
            return Err(AdError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: (rows, cols),
            });
        }
        let value = self.map(|v| {
            v.as_standard_layout()
                .into_owned()
                .into_shape_with_order((rows, cols))
                .expect("size validated")
        });
        Ok(self
            .tape
            .push(Op::Reshape(self.id), value, self.needs_grad()))
    }

    /// Pairwise squared Euclidean distances between the rows of `self` (N×d)
    /// and the rows of `other` (M×d), giving an N×M matrix.
    pub fn sq_dist(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.tape.check_owner(&other);
        if self.shape.1 != other.shape.1 {
            return Err(AdError::ShapeMismatch {
                op: "sq_dist",
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            sq_dist_value(&nodes[self.id].value, &nodes[other.id].value)
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self
            .tape
            .push(Op::SqDist(self.id, other.id), value, needs))
    }

    /// Solves `self · X = rhs` for symmetric positive definite `self`.
    /// Only the lower triangle is read by the factorization.
    pub fn solve_spd(self, rhs: Var<'t>) -> Result<Var<'t>, AdError> {
        self.tape.check_owner(&rhs);
        if self.shape.0 != self.shape.1 || self.shape.0 != rhs.shape.0 {
            return Err(AdError::ShapeMismatch {
                op: "solve_spd",
                lhs: self.shape,
                rhs: rhs.shape,
            });
        }
        let (chol, value) = {
            let nodes = self.tape.nodes.borrow();
            let chol = linalg::cholesky(&nodes[self.id].value).map_err(|e| match e {
                AdError::NotPositiveDefinite { index, pivot, .. } => AdError::NotPositiveDefinite {
                    op: "solve_spd",
                    index,
                    pivot,
                },
                other => other,
            })?;
            let x = linalg::cholesky_solve(&chol, &nodes[rhs.id].value);
            (chol, x)
        };
        let needs = self.tape.needs(&[self.id, rhs.id]);
        Ok(self.tape.push(
            Op::SolveSpd {
                a: self.id,
                b: rhs.id,
                chol,
            },
            value,
            needs,
        ))
    }
}

pub(crate) fn softmax_value(v: &Array, axis: Axis) -> Array {
    let mut out = v.clone();
    let lanes = match axis {
        Axis::Rows => out.rows_mut().into_iter().collect::<Vec<_>>(),
        Axis::Cols => out.columns_mut().into_iter().collect::<Vec<_>>(),
    };
    for mut lane in lanes {
        let m = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        lane.mapv_inplace(|x| (x - m).exp());
        let z: f64 = lane.sum();
        lane.mapv_inplace(|x| x / z);
    }
    out
}

pub(crate) fn sq_dist_value(a: &Array, b: &Array) -> Array {
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = Array::zeros((n, m));
    for i in 0..n {
        let ai = a.row(i);
        for j in 0..m {
            let bj = b.row(j);
            let mut d = 0.0;
            for (x, y) in ai.iter().zip(bj.iter()) {
                let t = x - y;
                d += t * t;
            }
            out[[i, j]] = d;
        }
    }
    out
}
