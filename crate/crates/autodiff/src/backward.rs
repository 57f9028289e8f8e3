use ndarray::{s, Array2, Axis as NdAxis};

use crate::error::AdError;
use crate::linalg;
use crate::tape::{Array, Axis, Node, Op, Tape, Var};

/// Gradients of a scalar loss with respect to the parameter leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// `None` when the variable is not a parameter or the loss does not depend on it.
    pub fn get(&self, v: Var<'_>) -> Option<&Array> {
        self.grads.get(v.id()).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled when the loss does not reach it.
    pub fn wrt(&self, v: Var<'_>) -> Array {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(v.shape()))
    }
}

fn accumulate(grads: &mut [Option<Array>], nodes: &[Node], id: usize, g: Array) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

impl Tape {
    /// Reverse sweep from a 1x1 `loss`. Does not modify the tape, so repeated
    /// calls return identical results.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AdError> {
        if loss.shape() != (1, 1) {
            return Err(AdError::NonScalarLoss(loss.shape()));
        }
        assert!(
            std::ptr::eq(self, loss.tape()),
            "loss belongs to a different tape"
        );
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Array>> = vec![None; loss.id() + 1];
        if nodes[loss.id()].needs_grad {
            grads[loss.id()] = Some(Array2::ones((1, 1)));
        }
        for id in (0..=loss.id()).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            propagate(&nodes, &mut grads, node, g);
        }
        Ok(Gradients { grads })
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Array>], node: &Node, g: Array) {
    let val = |i: usize| &nodes[i].value;
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g);
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, -g);
        }
        Op::Mul(a, b) => {
            accumulate(grads, nodes, *a, &g * val(*b));
            accumulate(grads, nodes, *b, &g * val(*a));
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            accumulate(grads, nodes, *a, &g / vb);
            let gb = -(&g * va) / (vb * vb);
            accumulate(grads, nodes, *b, gb);
        }
        Op::Neg(a) => accumulate(grads, nodes, *a, -g),
        Op::Scale(a, c) => accumulate(grads, nodes, *a, g * *c),
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g),
        Op::Broadcast(a) => accumulate(grads, nodes, *a, Array2::from_elem((1, 1), g.sum())),
        Op::MatMul(a, b) => {
            if nodes[*a].needs_grad {
                accumulate(grads, nodes, *a, g.dot(&val(*b).t()));
            }
            if nodes[*b].needs_grad {
                accumulate(grads, nodes, *b, val(*a).t().dot(&g));
            }
        }
        Op::Transpose(a) => {
            accumulate(grads, nodes, *a, g.t().as_standard_layout().into_owned())
        }
        Op::Tanh(a) => accumulate(grads, nodes, *a, &g * &y.mapv(|t| 1.0 - t * t)),
        Op::Sigmoid(a) => accumulate(grads, nodes, *a, &g * &y.mapv(|s| s * (1.0 - s))),
        Op::Exp(a) => accumulate(grads, nodes, *a, &g * y),
        Op::Log(a) => accumulate(grads, nodes, *a, &g / val(*a)),
        Op::Sin(a) => accumulate(grads, nodes, *a, &g * &val(*a).mapv(f64::cos)),
        Op::Cos(a) => accumulate(grads, nodes, *a, &g * &val(*a).mapv(|x| -x.sin())),
        Op::Sum(a) => {
            let ga = Array2::from_elem(nodes[*a].value.dim(), g[[0, 0]]);
            accumulate(grads, nodes, *a, ga);
        }
        Op::SqNorm(a) => accumulate(grads, nodes, *a, val(*a) * (2.0 * g[[0, 0]])),
        Op::Softmax(a, axis) => {
            let mut ga = y * &g;
            match axis {
                Axis::Rows => {
                    for (mut row, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = row.sum();
                        row.zip_mut_with(&yr, |gi, &yi| *gi -= yi * dot);
                    }
                }
                Axis::Cols => {
                    for (mut col, yc) in ga.columns_mut().into_iter().zip(y.columns()) {
                        let dot: f64 = col.sum();
                        col.zip_mut_with(&yc, |gi, &yi| *gi -= yi * dot);
                    }
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::LogSumExp(a) => {
            let va = val(*a);
            let lse = y[[0, 0]];
            let ga = va.mapv(|x| (x - lse).exp() * g[[0, 0]]);
            accumulate(grads, nodes, *a, ga);
        }
        Op::SliceRows(a, start) => {
            let mut ga = Array2::zeros(nodes[*a].value.dim());
            ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
            accumulate(grads, nodes, *a, ga);
        }
        Op::SliceCols(a, start) => {
            let mut ga = Array2::zeros(nodes[*a].value.dim());
            ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
            accumulate(grads, nodes, *a, ga);
        }
        Op::ConcatRows(ids) => {
            let mut offset = 0;
            for &i in ids {
                let r = nodes[i].value.nrows();
                if nodes[i].needs_grad {
                    let part = g.slice(s![offset..offset + r, ..]).to_owned();
                    accumulate(grads, nodes, i, part);
                }
                offset += r;
            }
        }
        Op::ConcatCols(ids) => {
            let mut offset = 0;
            for &i in ids {
                let c = nodes[i].value.ncols();
                if nodes[i].needs_grad {
                    let part = g
                        .slice(s![.., offset..offset + c])
                        .as_standard_layout()
                        .into_owned();
                    accumulate(grads, nodes, i, part);
                }
                offset += c;
            }
        }
        Op::GatherRows(a, idx) => {
            let mut ga: Array = Array2::zeros(nodes[*a].value.dim());
            for (r, &i) in idx.iter().enumerate() {
                let mut row = ga.row_mut(i);
                row += &g.row(r);
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::SelectRows(a, b, take_a) => {
            let mut ga = g.clone();
            let mut gb = g;
            for (i, &t) in take_a.iter().enumerate() {
                if t {
                    gb.row_mut(i).fill(0.0);
                } else {
                    ga.row_mut(i).fill(0.0);
                }
            }
            accumulate(grads, nodes, *a, ga);
            accumulate(grads, nodes, *b, gb);
        }
        Op::Reshape(a) => {
            let ga = g
                .into_shape_with_order(nodes[*a].value.dim())
                .expect("reshape adjoint");
            accumulate(grads, nodes, *a, ga);
        }
        Op::SqDist(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if nodes[*a].needs_grad {
                let rs = g.sum_axis(NdAxis(1)).insert_axis(NdAxis(1));
                let ga = (va * &rs - g.dot(vb)) * 2.0;
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*b].needs_grad {
                let cs = g.sum_axis(NdAxis(0)).insert_axis(NdAxis(1));
                let gb = (vb * &cs - g.t().dot(va)) * 2.0;
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::SolveSpd { a, b, chol } => {
            // X = A⁻¹B  ⇒  B̄ = A⁻¹X̄ (A symmetric),  Ā = −B̄Xᵀ
            let gb = linalg::cholesky_solve(chol, &g);
            if nodes[*a].needs_grad {
                accumulate(grads, nodes, *a, -gb.dot(&y.t()));
            }
            accumulate(grads, nodes, *b, gb);
        }
    }
}
