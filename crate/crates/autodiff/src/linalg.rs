//! Dense Cholesky factorization and triangular solves used by `solve_spd`.

use ndarray::Array2;

use crate::error::AdError;

/// Lower-triangular `L` with `L Lᵀ = A`. Only the lower triangle of `a` is read.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>, AdError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(AdError::ShapeMismatch {
            op: "cholesky",
            lhs: a.dim(),
            rhs: (n, n),
        });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for p in 0..j {
            diag -= l[[j, p]] * l[[j, p]];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(AdError::NotPositiveDefinite {
                op: "cholesky",
                index: j,
                pivot: diag,
            });
        }
        let d = diag.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for p in 0..j {
                s -= l[[i, p]] * l[[j, p]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = B` column by column.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for col in 0..x.ncols() {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[[i, col]];
            for p in 0..i {
                s -= l[[i, p]] * x[[p, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[[i, col]];
            for p in (i + 1)..n {
                s -= l[[p, i]] * x[[p, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
    }
    x
}
