//! Kriging regressor, Boltzmann posterior over the optimum location and its
//! differential entropy, and the annealing schedule for ρ.

use autodiff::linalg::{cholesky, cholesky_solve};
use autodiff::{Axis, Tape, Var};
use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::index;

use crate::error::{CoreError, Result};
use crate::objectives::SearchSpace;
use crate::seed;

pub const DEFAULT_EPS: f64 = 2.1;
pub const DEFAULT_LENGTH_SCALE: f64 = 1.0;
pub const DEFAULT_DATA_CAP: usize = 512;
pub const MIN_MC_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrigingConfig {
    pub length_scale: f64,
    /// Noise term; the system matrix is `K + eps² I`.
    pub eps: f64,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        Self {
            length_scale: DEFAULT_LENGTH_SCALE,
            eps: DEFAULT_EPS,
        }
    }
}

/// `exp(−‖x − x'‖² / (2l))`
pub fn kernel(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, length_scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * length_scale)).exp()
}

/// Fitted Kriging estimator with zero prior mean.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingModel {
    x: Array2<f64>,
    chol: Array2<f64>,
    weights: Array1<f64>,
    cfg: KrigingConfig,
}

impl KrigingModel {
    /// `x` is N×n (one sample per row), `y` has length N.
    pub fn fit(x: Array2<f64>, y: &[f64], cfg: KrigingConfig) -> Result<Self> {
        let m = x.nrows();
        if m == 0 {
            return Err(CoreError::InvalidArgument("kriging needs at least one data point".into()));
        }
        if y.len() != m {
            return Err(CoreError::DimensionMismatch { expected: m, got: y.len() });
        }
        if !(cfg.eps >= 0.0) || !(cfg.length_scale > 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "kriging needs eps >= 0 and length_scale > 0, got {} and {}",
                cfg.eps, cfg.length_scale
            )));
        }
        if cfg.eps == 0.0 {
            for i in 0..m {
                for j in 0..i {
                    if x.row(i) == x.row(j) {
                        return Err(CoreError::DuplicatePoints { first: j, second: i });
                    }
                }
            }
        }
        let noise = cfg.eps * cfg.eps;
        let k = Array2::from_shape_fn((m, m), |(i, j)| {
            kernel(x.row(i), x.row(j), cfg.length_scale) + if i == j { noise } else { 0.0 }
        });
        let chol = cholesky(&k)?;
        let rhs = Array2::from_shape_vec((m, 1), y.to_vec()).expect("length checked");
        let weights = cholesky_solve(&chol, &rhs).column(0).to_owned();
        Ok(Self { x, chol, weights, cfg })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn config(&self) -> KrigingConfig {
        self.cfg
    }

    /// Lower Cholesky factor of `K + eps² I`.
    pub fn factor(&self) -> &Array2<f64> {
        &self.chol
    }

    pub fn predict(&self, q: &[f64]) -> Result<f64> {
        if q.len() != self.x.ncols() {
            return Err(CoreError::DimensionMismatch {
                expected: self.x.ncols(),
                got: q.len(),
            });
        }
        let q = ArrayView1::from(q);
        Ok(self
            .x
            .rows()
            .into_iter()
            .zip(&self.weights)
            .map(|(xi, w)| w * kernel(q, xi, self.cfg.length_scale))
            .sum())
    }

    /// Predictions for every row of `q`.
    pub fn predict_rows(&self, q: &Array2<f64>) -> Result<Array1<f64>> {
        q.rows()
            .into_iter()
            .map(|r| self.predict(r.as_slice().expect("standard layout")))
            .collect::<Result<Vec<_>>>()
            .map(Array1::from)
    }
}

/// `ρ = ρ₀ exp(|D|^(1/n) / h₀)`; returns ρ₀ for an empty history.
pub fn anneal_rho(rho0: f64, h0: f64, count: usize, n: usize) -> Result<f64> {
    if !(h0 > 0.0) || !h0.is_finite() {
        return Err(CoreError::DegenerateEntropy(h0));
    }
    if n == 0 {
        return Err(CoreError::InvalidArgument("dimension must be >= 1".into()));
    }
    if count == 0 {
        return Ok(rho0);
    }
    let rho = rho0 * ((count as f64).powf(1.0 / n as f64) / h0).exp();
    if !rho.is_finite() {
        return Err(CoreError::RhoTooLarge { rho });
    }
    Ok(rho)
}

/// The annealing schedule with its frozen reference entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annealing {
    pub rho0: f64,
    pub h0: f64,
}

impl Annealing {
    pub fn rho(&self, count: usize, n: usize) -> Result<f64> {
        anneal_rho(self.rho0, self.h0, count, n)
    }
}

/// Boltzmann posterior `p(x) ∝ exp(−ρ f̂(x))` over the search box.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorModel {
    pub kriging: KrigingModel,
    pub rho: f64,
}

impl PosteriorModel {
    pub fn entropy(&self, space: &SearchSpace, mc_samples: usize, seed: u64) -> Result<f64> {
        posterior_entropy(&self.kriging, self.rho, space, mc_samples, seed)
    }
}

fn mc_points(space: &SearchSpace, mc_samples: usize, seed: u64) -> Result<Array2<f64>> {
    if mc_samples < MIN_MC_SAMPLES {
        return Err(CoreError::InvalidArgument(format!(
            "entropy needs at least {MIN_MC_SAMPLES} Monte Carlo samples, got {mc_samples}"
        )));
    }
    Ok(space.sample_uniform(&mut seed::rng(seed), mc_samples))
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(CoreError::RhoTooLarge { rho });
    }
    Ok(())
}

/// Entropy of `exp(s)`-weighted uniform draws: `log V − log M + lse(s) − Σ softmax(s)·s`.
fn entropy_from_scores(scores: &Array1<f64>, log_volume: f64) -> f64 {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Array1<f64> = scores.mapv(|s| (s - m).exp());
    let z = w.sum();
    let lse = m + z.ln();
    let mean_s = w.iter().zip(scores).map(|(w, s)| w * s).sum::<f64>() / z;
    log_volume - (scores.len() as f64).ln() + lse - mean_s
}

/// Monte Carlo differential entropy of the Boltzmann posterior, from uniform
/// draws in `space`. Deterministic per `seed`.
pub fn posterior_entropy(
    model: &KrigingModel,
    rho: f64,
    space: &SearchSpace,
    mc_samples: usize,
    seed: u64,
) -> Result<f64> {
    check_rho(rho)?;
    let u = mc_points(space, mc_samples, seed)?;
    let f = model.predict_rows(&u)?;
    if f.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::DegenerateEntropy(f64::NAN));
    }
    let h = entropy_from_scores(&f.mapv(|v| -rho * v), space.log_volume());
    if !h.is_finite() {
        return Err(CoreError::RhoTooLarge { rho });
    }
    Ok(h)
}

/// Row indices kept when `total` samples exceed `cap`: a seeded uniform
/// subset, sorted. `None` when no thinning is needed.
pub fn thin_indices(total: usize, cap: usize, seed: u64) -> Option<Vec<usize>> {
    if total <= cap {
        return None;
    }
    let mut idx = index::sample(&mut seed::rng(seed), total, cap).into_vec();
    idx.sort_unstable();
    Some(idx)
}

/// Settings of the tape entropy term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyConfig {
    pub kriging: KrigingConfig,
    pub mc_samples: usize,
    pub data_cap: usize,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            kriging: KrigingConfig::default(),
            mc_samples: 1000,
            data_cap: DEFAULT_DATA_CAP,
        }
    }
}

/// Posterior entropy on the tape. `xs` (N×n) and `ys` (N×1) carry the
/// samples; the Monte Carlo points are constants.
pub fn entropy_on_tape<'t>(
    xs: Var<'t>,
    ys: Var<'t>,
    rho: f64,
    space: &SearchSpace,
    cfg: &EntropyConfig,
    seed: u64,
) -> Result<Var<'t>> {
    check_rho(rho)?;
    let tape = xs.tape();
    let (m, n) = xs.shape();
    if n != space.dim() {
        return Err(CoreError::DimensionMismatch { expected: space.dim(), got: n });
    }
    if m == 0 || ys.shape() != (m, 1) {
        return Err(CoreError::InvalidArgument(format!(
            "entropy needs N×n samples and N×1 values, got {:?} and {:?}",
            xs.shape(),
            ys.shape()
        )));
    }
    let (xs, ys) = match thin_indices(m, cfg.data_cap, seed::derive_seed(seed, &[THIN_TAG])) {
        Some(idx) => (xs.gather_rows(&idx)?, ys.gather_rows(&idx)?),
        None => (xs, ys),
    };
    let m = xs.shape().0;
    let inv = -1.0 / (2.0 * cfg.kriging.length_scale);
    let noise = cfg.kriging.eps * cfg.kriging.eps;
    let k = xs
        .sq_dist(xs)?
        .scale(inv)
        .exp()
        .add(tape.constant(Array2::eye(m) * noise))?;
    let w = k.solve_spd(ys)?;
    let u = tape.constant(mc_points(space, cfg.mc_samples, seed)?);
    let f_hat = u.sq_dist(xs)?.scale(inv).exp().matmul(w)?;
    if !f_hat.map(|a| a.iter().all(|v| v.is_finite())) {
        return Err(CoreError::DegenerateEntropy(f64::NAN));
    }
    let s = f_hat.scale(-rho);
    let weighted = s.softmax(Axis::Cols).mul(s)?.sum();
    let h = s
        .logsumexp()
        .add_scalar(space.log_volume() - (cfg.mc_samples as f64).ln())
        .sub(weighted)?;
    if !h.item().is_finite() {
        return Err(CoreError::RhoTooLarge { rho });
    }
    Ok(h)
}

const THIN_TAG: u64 = 0x7448_494e;

/// Plain-value entropy of a sample set, with the same thinning and draws as
/// [`entropy_on_tape`].
pub fn sample_entropy(
    samples: &[(Vec<f64>, f64)],
    rho: f64,
    space: &SearchSpace,
    cfg: &EntropyConfig,
    seed: u64,
) -> Result<f64> {
    let tape = Tape::new();
    let (x, y) = stack_samples(samples, space.dim())?;
    let h = entropy_on_tape(tape.constant(x), tape.constant(y), rho, space, cfg, seed)?;
    Ok(h.item())
}

/// Stacks `(x, f)` pairs into N×n and N×1 arrays.
pub fn stack_samples(samples: &[(Vec<f64>, f64)], n: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut x = Array2::zeros((samples.len(), n));
    let mut y = Array2::zeros((samples.len(), 1));
    for (i, (xi, fi)) in samples.iter().enumerate() {
        if xi.len() != n {
            return Err(CoreError::DimensionMismatch { expected: n, got: xi.len() });
        }
        x.row_mut(i).assign(&ArrayView1::from(xi.as_slice()));
        y[[i, 0]] = *fi;
    }
    Ok((x, y))
}
