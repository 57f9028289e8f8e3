//! Quadratic and Rastrigin-family objectives with analytic gradients.
//!
//! Every instance has the form
//!
//! ```text
//! f(x) = ‖Ax − b‖² − α Σᵢ cᵢ cos(2π xᵢ) + α n
//! ```
//!
//! A quadratic instance is the special case `α = 0`, `c = 0`; the canonical
//! Rastrigin function is `A = I`, `b = 0`, `c = 1`, `α = 10`.

use std::f64::consts::PI;
use std::fmt;

use autodiff::{Tape, Var};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::seed;

/// Default half-width of the search box.
pub const DEFAULT_HALF_WIDTH: f64 = 5.12;

/// Axis-aligned box used for initialization and entropy integration.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl SearchSpace {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() {
            return Err(CoreError::InvalidArgument("search space needs n >= 1".into()));
        }
        if lo.len() != hi.len() {
            return Err(CoreError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if let Some(i) = (0..lo.len()).find(|&i| !(lo[i] < hi[i])) {
            return Err(CoreError::InvalidArgument(format!(
                "bounds for coordinate {i} are not ordered: {} >= {}",
                lo[i], hi[i]
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    /// `[−5.12, 5.12]ⁿ`.
    pub fn default_box(n: usize) -> Result<Self> {
        Self::cube(n, -DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn log_volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l).ln()).sum()
    }

    /// `k` points drawn uniformly in the box, one per row.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R, k: usize) -> Array2<f64> {
        let n = self.dim();
        let mut out = Array2::zeros((k, n));
        for i in 0..k {
            for d in 0..n {
                out[[i, d]] = rng.random_range(self.lo[d]..self.hi[d]);
            }
        }
        out
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }
}

/// Family to draw instances from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Quadratic,
    Rastrigin { alpha: f64 },
}

impl Family {
    pub fn kind(&self) -> FamilyKind {
        match self {
            Family::Quadratic => FamilyKind::Quadratic,
            Family::Rastrigin { .. } => FamilyKind::Rastrigin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Quadratic,
    Rastrigin,
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyKind::Quadratic => "quadratic",
            FamilyKind::Rastrigin => "rastrigin",
        })
    }
}

/// A sampled objective. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionInstance {
    pub family: FamilyKind,
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub c: Array1<f64>,
    pub alpha: f64,
}

impl FunctionInstance {
    pub fn new(
        family: FamilyKind,
        a: Array2<f64>,
        b: Array1<f64>,
        c: Array1<f64>,
        alpha: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(CoreError::InvalidArgument(format!(
                "A must be square and non-empty, got {:?}",
                a.dim()
            )));
        }
        for len in [b.len(), c.len()] {
            if len != n {
                return Err(CoreError::DimensionMismatch { expected: n, got: len });
            }
        }
        Ok(Self {
            family,
            a,
            b,
            c,
            alpha,
        })
    }

    /// Entries of `A`, `b` (and `c` for the Rastrigin family) are i.i.d.
    /// standard normal, drawn in that order from a stream seeded by `seed`.
    pub fn sample(family: Family, space: &SearchSpace, seed: u64) -> Self {
        let n = space.dim();
        let mut rng = seed::rng(seed);
        let mut draw = || -> f64 { rng.sample(StandardNormal) };
        let a = Array2::from_shape_simple_fn((n, n), &mut draw);
        let b = Array1::from_shape_simple_fn(n, &mut draw);
        let (c, alpha) = match family {
            Family::Quadratic => (Array1::zeros(n), 0.0),
            Family::Rastrigin { alpha } => (Array1::from_shape_simple_fn(n, &mut draw), alpha),
        };
        Self {
            family: family.kind(),
            a,
            b,
            c,
            alpha,
        }
    }

    pub fn canonical_rastrigin(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(CoreError::InvalidArgument("n must be >= 1".into()));
        }
        Self::new(
            FamilyKind::Rastrigin,
            Array2::eye(n),
            Array1::zeros(n),
            Array1::ones(n),
            10.0,
        )
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.evaluate(x).map(|(v, _)| v)
    }

    /// Value and gradient at `x`.
    pub fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(x.len())?;
        let n = self.dim();
        let xv = Array1::from(x.to_vec());
        let r = self.a.dot(&xv) - &self.b;
        let sq: f64 = r.iter().map(|v| v * v).sum();
        let cos_sum: f64 = (0..n).map(|i| self.c[i] * (2.0 * PI * x[i]).cos()).sum();
        let value = sq - self.alpha * cos_sum + self.alpha * n as f64;
        let lin = self.a.t().dot(&r) * 2.0;
        let grad = (0..n)
            .map(|i| lin[i] + 2.0 * PI * self.alpha * self.c[i] * (2.0 * PI * x[i]).sin())
            .collect();
        Ok((value, grad))
    }

    /// Batched evaluation on a tape: `x` holds one point per row (k×n).
    /// Returns values (k×1) and gradients (k×n), both differentiable in `x`.
    pub fn evaluate_on_tape<'t>(&self, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (k, n) = x.shape();
        self.check_dim(n)?;
        let tape: &'t Tape = x.tape();
        let a = tape.constant(self.a.clone());
        let at = tape.constant(self.a.t().to_owned());
        let b_rows = tape.constant(Array2::from_shape_fn((k, n), |(_, j)| self.b[j]));
        let ones_n = tape.ones(n, 1);
        let r = x.matmul(at)?.sub(b_rows)?;
        let sq = r.mul(r)?.matmul(ones_n)?;
        let lin = r.matmul(a)?.scale(2.0);
        if self.alpha == 0.0 {
            return Ok((sq, lin));
        }
        let angle = x.scale(2.0 * PI);
        let c_col = tape.constant(self.c.clone().insert_axis(ndarray::Axis(1)));
        let cos_term = angle.cos().matmul(c_col)?;
        let value = sq
            .sub(cos_term.scale(self.alpha))?
            .add_scalar(self.alpha * n as f64);
        let c_rows = tape.constant(Array2::from_shape_fn((k, n), |(_, j)| self.c[j]));
        let wave = angle.sin().mul(c_rows)?.scale(2.0 * PI * self.alpha);
        Ok((value, lin.add(wave)?))
    }

    /// One-line record `family,n,alpha,A (row-major),b,c` with 17 significant digits.
    pub fn to_record(&self) -> String {
        let mut fields = vec![self.family.to_string(), self.dim().to_string(), fmt_f64(self.alpha)];
        fields.extend(self.a.iter().map(|v| fmt_f64(*v)));
        fields.extend(self.b.iter().map(|v| fmt_f64(*v)));
        fields.extend(self.c.iter().map(|v| fmt_f64(*v)));
        fields.join(",")
    }

    pub fn from_record(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(CoreError::Parse(format!("instance record too short: {line:?}")));
        }
        let family = match fields[0] {
            "quadratic" => FamilyKind::Quadratic,
            "rastrigin" => FamilyKind::Rastrigin,
            other => return Err(CoreError::Parse(format!("unknown family {other:?}"))),
        };
        let n: usize = fields[1]
            .parse()
            .map_err(|_| CoreError::Parse(format!("bad dimension {:?}", fields[1])))?;
        let expected = 3 + n * n + 2 * n;
        if fields.len() != expected {
            return Err(CoreError::Parse(format!(
                "expected {expected} fields for n = {n}, found {}",
                fields.len()
            )));
        }
        let nums = fields[2..]
            .iter()
            .map(|s| parse_f64(s))
            .collect::<Result<Vec<_>>>()?;
        let alpha = nums[0];
        let a = Array2::from_shape_vec((n, n), nums[1..1 + n * n].to_vec())
            .map_err(|e| CoreError::Parse(e.to_string()))?;
        let b = Array1::from(nums[1 + n * n..1 + n * n + n].to_vec());
        let c = Array1::from(nums[1 + n * n + n..].to_vec());
        Self::new(family, a, b, c, alpha)
    }
}

/// Shortest-exact scientific rendering with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CoreError::Parse(format!("bad number {s:?}")))
}
