//! Feature-level (intra-particle) and sample-level (inter-particle) attention.
//!
//! Both operate on all k particles at once: particle `i` is row `i` of every
//! k×n input.

use autodiff::{Axis, Tape, Var};
use ndarray::Array2;

use crate::error::{CoreError, Result};

/// Trainable weights of the intra-particle attention, shared by all particles.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraAttentionParams {
    /// n×n, applied to each feature vector.
    pub w: Array2<f64>,
    /// n×n, applied to the context vector.
    pub u: Array2<f64>,
    /// n×1 scoring vector.
    pub v: Array2<f64>,
}

impl IntraAttentionParams {
    pub fn zeros(n: usize) -> Self {
        Self {
            w: Array2::zeros((n, n)),
            u: Array2::zeros((n, n)),
            v: Array2::zeros((n, 1)),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntraVars<'t> {
    pub w: Var<'t>,
    pub u: Var<'t>,
    pub v: Var<'t>,
}

impl IntraAttentionParams {
    pub fn lift<'t>(&self, tape: &'t Tape) -> IntraVars<'t> {
        IntraVars {
            w: tape.constant(self.w.clone()),
            u: tape.constant(self.u.clone()),
            v: tape.constant(self.v.clone()),
        }
    }
}

/// Scores each feature against the particle's context and mixes the features
/// with the resulting softmax weights.
///
/// `features` holds F variables of shape k×n (feature `r` of every particle);
/// `context` is k×n. Returns the mixed features (k×n) and the weights (k×F).
pub fn intra_attend<'t>(
    features: &[Var<'t>],
    context: Var<'t>,
    params: &IntraVars<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let first = features
        .first()
        .ok_or_else(|| CoreError::InvalidArgument("intra attention needs at least one feature".into()))?;
    let tape = first.tape();
    let (k, n) = first.shape();
    let ctx = context.matmul(params.u.t())?;
    let scores = features
        .iter()
        .map(|f| {
            f.matmul(params.w.t())?
                .add(ctx)?
                .tanh()
                .matmul(params.v)
                .map_err(CoreError::from)
        })
        .collect::<Result<Vec<_>>>()?;
    let p = tape.concat_cols(&scores)?.softmax(Axis::Rows);
    let ones = tape.ones(1, n);
    let mut mixed: Option<Var<'t>> = None;
    for (r, f) in features.iter().enumerate() {
        let term = p.slice_cols(r, 1)?.matmul(ones)?.mul(*f)?;
        mixed = Some(match mixed {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    let mixed = mixed.expect("non-empty");
    debug_assert_eq!(mixed.shape(), (k, n));
    Ok((mixed, p))
}

/// Output of [`inter_attend`].
#[derive(Debug, Clone, Copy)]
pub struct InterOutput<'t> {
    /// k×n reweighted features.
    pub e: Var<'t>,
    /// Column-normalized position kernel.
    pub q: Var<'t>,
    /// Column softmax of context dot products.
    pub m: Var<'t>,
}

/// `e_j = γ Σ_r m_rj q_rj c_r + c_j` with `Q` from positions and `M` from the
/// intra-attention outputs.
pub fn inter_attend<'t>(
    contexts: Var<'t>,
    positions: Var<'t>,
    gamma: f64,
    length_scale: f64,
) -> Result<InterOutput<'t>> {
    let (k, _) = contexts.shape();
    if k == 0 {
        return Err(CoreError::InvalidArgument("inter attention needs k >= 1".into()));
    }
    if positions.shape().0 != k {
        return Err(CoreError::DimensionMismatch {
            expected: k,
            got: positions.shape().0,
        });
    }
    let q = positions
        .sq_dist(positions)?
        .scale(-1.0 / (2.0 * length_scale))
        .softmax(Axis::Cols);
    let m = contexts.matmul(contexts.t())?.softmax(Axis::Cols);
    let mix = m.mul(q)?.t().matmul(contexts)?.scale(gamma);
    let e = mix.add(contexts)?;
    Ok(InterOutput { e, q, m })
}

/// Share of the diagonal in `γ Q⊙M + I`.
pub fn trace_share(q: &Array2<f64>, m: &Array2<f64>, gamma: f64) -> Result<f64> {
    let k = q.nrows();
    if q.dim() != (k, k) || m.dim() != (k, k) {
        return Err(CoreError::InvalidArgument(format!(
            "trace share needs square matrices of equal size, got {:?} and {:?}",
            q.dim(),
            m.dim()
        )));
    }
    let s = (q * m) * gamma + Array2::<f64>::eye(k);
    Ok(s.diag().sum() / s.sum())
}

/// Off-diagonal share of `γ Q⊙M + I`, i.e. `1 − trace_share` without the
/// cancellation when the off-diagonal mass is tiny.
pub fn cross_share(q: &Array2<f64>, m: &Array2<f64>, gamma: f64) -> Result<f64> {
    let k = q.nrows();
    if q.dim() != (k, k) || m.dim() != (k, k) {
        return Err(CoreError::InvalidArgument(format!(
            "cross share needs square matrices of equal size, got {:?} and {:?}",
            q.dim(),
            m.dim()
        )));
    }
    let s = (q * m) * gamma + Array2::<f64>::eye(k);
    let off: f64 = s.indexed_iter().filter(|((i, j), _)| i != j).map(|(_, v)| v).sum();
    Ok(off / s.sum())
}

/// Single-particle convenience form: `s` is n×F (one feature per column),
/// `context` has length n. Returns `(c, p)`.
pub fn intra_attend_single(
    s: &Array2<f64>,
    context: &[f64],
    params: &IntraAttentionParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = params.dim();
    if s.nrows() != n || context.len() != n {
        return Err(CoreError::DimensionMismatch {
            expected: n,
            got: if s.nrows() != n { s.nrows() } else { context.len() },
        });
    }
    let tape = Tape::new();
    let features: Vec<Var<'_>> = s
        .columns()
        .into_iter()
        .map(|c| tape.constant(c.to_owned().insert_axis(ndarray::Axis(0))))
        .collect();
    let ctx = tape.constant(Array2::from_shape_vec((1, n), context.to_vec()).expect("length checked"));
    let (c, p) = intra_attend(&features, ctx, &params.lift(&tape))?;
    Ok((c.value().row(0).to_vec(), p.value().row(0).to_vec()))
}
