//! Classical reference optimizers and the ablation ladder, all reporting
//! best-so-far curves indexed by function evaluation.

use ndarray::{Array1, Array2};
use rand::Rng;
use std::fmt;
use std::str::FromStr;

use crate::checkpoint::Checkpoint;
use crate::error::{CoreError, Result};
use crate::meta::{budget_curve, initial_positions, ArchFlags};
use crate::objectives::{FunctionInstance, SearchSpace};
use crate::seed;
use crate::training::{adam_update, AdamConfig, AdamState};

/// A run stops once `f` exceeds this multiple of `|f(x0)| + 1`.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

/// Curve of a point-based run.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRun {
    /// Exactly `budget` best-so-far values.
    pub curve: Vec<f64>,
    /// The iterate blew up; the curve was padded with the last best.
    pub diverged: bool,
    pub final_x: Vec<f64>,
}

fn check_budget(budget: usize) -> Result<()> {
    if budget == 0 {
        return Err(CoreError::InvalidArgument("budget must be >= 1".into()));
    }
    Ok(())
}

/// Gradient-driven point run: each evaluation yields `f` and `∇f`, then
/// `step` turns the gradient into a move.
fn point_run(
    inst: &FunctionInstance,
    x0: &[f64],
    budget: usize,
    mut visit: impl FnMut(&[f64], f64),
    mut step: impl FnMut(&mut Array1<f64>, &Array1<f64>) -> Result<()>,
) -> Result<PointRun> {
    check_budget(budget)?;
    let mut x = Array1::from(x0.to_vec());
    let mut curve = Vec::with_capacity(budget);
    let mut best = f64::INFINITY;
    let mut limit = f64::INFINITY;
    let mut diverged = false;
    while curve.len() < budget {
        let (f, g) = inst.evaluate(x.as_slice().expect("contiguous"))?;
        if curve.is_empty() {
            limit = DIVERGENCE_FACTOR * (f.abs() + 1.0);
        }
        if !f.is_finite() || f > limit || g.iter().any(|v| !v.is_finite()) {
            diverged = true;
            if curve.is_empty() {
                return Err(CoreError::NonFinite { stage: "objective", iteration: 0 });
            }
            break;
        }
        visit(x.as_slice().expect("contiguous"), f);
        best = best.min(f);
        curve.push(best);
        if curve.len() < budget {
            step(&mut x, &Array1::from(g))?;
        }
    }
    curve.resize(budget, best);
    Ok(PointRun {
        curve,
        diverged,
        final_x: x.to_vec(),
    })
}

/// Gradient descent with constant learning rate.
pub fn run_gd(inst: &FunctionInstance, x0: &[f64], lr: f64, budget: usize) -> Result<PointRun> {
    point_run(inst, x0, budget, |_, _| {}, |x, g| {
        x.scaled_add(-lr, g);
        Ok(())
    })
}

/// The first `count` points visited by gradient descent, with their values.
pub fn gd_samples(inst: &FunctionInstance, x0: &[f64], lr: f64, count: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut out = Vec::with_capacity(count);
    point_run(
        inst,
        x0,
        count,
        |x, f| out.push((x.to_vec(), f)),
        |x, g| {
            x.scaled_add(-lr, g);
            Ok(())
        },
    )?;
    Ok(out)
}

/// Stochastic gradient descent. The objectives are deterministic, so this
/// coincides with [`run_gd`].
pub fn run_sgd(inst: &FunctionInstance, x0: &[f64], lr: f64, budget: usize) -> Result<PointRun> {
    run_gd(inst, x0, lr, budget)
}

pub fn run_adam(inst: &FunctionInstance, x0: &[f64], lr: f64, budget: usize) -> Result<PointRun> {
    let cfg = AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    let n = x0.len();
    let mut state = AdamState::zeros_like([&Array2::zeros((1, n))]);
    point_run(inst, x0, budget, |_, _| {}, |x, g| {
        let mut p = x.clone().insert_axis(ndarray::Axis(0));
        let grad = g.clone().insert_axis(ndarray::Axis(0));
        adam_update([&mut p], &[grad], &mut state, &cfg)?;
        x.assign(&p.row(0));
        Ok(())
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsoConfig {
    /// Inertia drawn uniformly from this range each iteration.
    pub w_range: (f64, f64),
    /// Attraction coefficients drawn uniformly from this range.
    pub r_range: (f64, f64),
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            w_range: (0.4, 0.9),
            r_range: (0.0, 2.0),
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Velocity-form particle swarm from uniform starts in `space`.
pub fn run_pso(
    inst: &FunctionInstance,
    space: &SearchSpace,
    k: usize,
    budget: usize,
    cfg: &PsoConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let x0 = initial_positions(space, k, seed);
    run_pso_from(inst, x0, budget, cfg, seed::derive_seed(seed, &[PSO_TAG]))
}

const PSO_TAG: u64 = 0x5053_4f;

/// Particle swarm from given start positions (k×n, k ≥ 2); zero initial
/// velocity. Coefficients are redrawn for every particle and iteration.
pub fn run_pso_from(inst: &FunctionInstance, x0: Array2<f64>, budget: usize, cfg: &PsoConfig, seed: u64) -> Result<Vec<f64>> {
    pso_inner(inst, x0, budget, cfg, seed, |_, _| {})
}

/// The first `count` points evaluated by [`run_pso`] with the same arguments.
pub fn pso_samples(
    inst: &FunctionInstance,
    space: &SearchSpace,
    k: usize,
    count: usize,
    cfg: &PsoConfig,
    seed: u64,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let x0 = initial_positions(space, k, seed);
    let mut out = Vec::with_capacity(count);
    pso_inner(inst, x0, count, cfg, seed::derive_seed(seed, &[PSO_TAG]), |x, f| out.push((x.to_vec(), f)))?;
    Ok(out)
}

fn pso_inner(
    inst: &FunctionInstance,
    x0: Array2<f64>,
    budget: usize,
    cfg: &PsoConfig,
    seed: u64,
    mut visit: impl FnMut(&[f64], f64),
) -> Result<Vec<f64>> {
    check_budget(budget)?;
    let (k, n) = x0.dim();
    if k < 2 {
        return Err(CoreError::InvalidArgument("PSO needs k >= 2".into()));
    }
    if n != inst.dim() {
        return Err(CoreError::DimensionMismatch { expected: inst.dim(), got: n });
    }
    let mut rng = seed::rng(seed);
    let mut x = x0;
    let mut v = Array2::<f64>::zeros((k, n));
    let mut pbest = x.clone();
    let mut pbest_f = vec![f64::INFINITY; k];
    let mut gbest = Array1::<f64>::zeros(n);
    let mut gbest_f = f64::INFINITY;
    let mut curve = Vec::with_capacity(budget);
    loop {
        for i in 0..k {
            if curve.len() == budget {
                return Ok(curve);
            }
            let xi = x.row(i);
            let f = inst.value(xi.as_slice().expect("contiguous"))?;
            visit(xi.as_slice().expect("contiguous"), f);
            if f < pbest_f[i] {
                pbest_f[i] = f;
                pbest.row_mut(i).assign(&x.row(i));
            }
            if f < gbest_f {
                gbest_f = f;
                gbest.assign(&x.row(i));
            }
            curve.push(gbest_f);
        }
        for i in 0..k {
            let w = uniform(&mut rng, cfg.w_range);
            let r1 = uniform(&mut rng, cfg.r_range);
            let r2 = uniform(&mut rng, cfg.r_range);
            for d in 0..n {
                let xi = x[[i, d]];
                v[[i, d]] = w * v[[i, d]] + r1 * (pbest[[i, d]] - xi) + r2 * (gbest[d] - xi);
                x[[i, d]] = xi + v[[i, d]];
            }
        }
    }
}

/// Rungs of the ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    /// One particle, gradient input only.
    B0,
    /// B0 restarted k times, best of all restarts.
    B1,
    /// k particles, gradient and momentum, intra-attention.
    B2,
    /// B2 plus population features and inter-attention.
    B3,
    /// B3 trained with the entropy term.
    Proposed,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::B0, Level::B1, Level::B2, Level::B3, Level::Proposed];

    pub fn flags(self) -> ArchFlags {
        match self {
            Level::B0 | Level::B1 => ArchFlags {
                features: [true, false, false, false],
                intra_attention: false,
                inter_attention: false,
            },
            Level::B2 => ArchFlags {
                features: [true, true, false, false],
                intra_attention: true,
                inter_attention: false,
            },
            Level::B3 | Level::Proposed => ArchFlags::full(),
        }
    }

    /// Particles per training rollout.
    pub fn training_particles(self, k: usize) -> usize {
        match self {
            Level::B0 | Level::B1 => 1,
            _ => k,
        }
    }

    pub fn uses_entropy(self) -> bool {
        self == Level::Proposed
    }

    /// Rejects checkpoints trained for a different rung.
    pub fn check(self, ck: &Checkpoint) -> Result<()> {
        if ck.model.flags != self.flags() {
            return Err(CoreError::CheckpointMismatch(format!(
                "checkpoint flags {:?} do not match level {self} ({:?})",
                ck.model.flags,
                self.flags()
            )));
        }
        if (ck.lambda > 0.0) != self.uses_entropy() {
            return Err(CoreError::CheckpointMismatch(format!(
                "checkpoint lambda {} does not match level {self}",
                ck.lambda
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::B0 => "B0",
            Level::B1 => "B1",
            Level::B2 => "B2",
            Level::B3 => "B3",
            Level::Proposed => "proposed",
        })
    }
}

impl FromStr for Level {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "b0" => Ok(Level::B0),
            "b1" => Ok(Level::B1),
            "b2" => Ok(Level::B2),
            "b3" => Ok(Level::B3),
            "proposed" => Ok(Level::Proposed),
            other => Err(CoreError::Parse(format!("unknown ablation level {other:?}"))),
        }
    }
}

/// Seed of restart `r`; restart 0 reuses the base seed.
pub fn restart_seed(base: u64, r: usize) -> u64 {
    if r == 0 {
        base
    } else {
        seed::derive_seed(base, &[RESTART_TAG, r as u64])
    }
}

const RESTART_TAG: u64 = 0x5245_53;

/// Best-so-far curve of one ablation level with `k` particles (or restarts)
/// and `budget` evaluations.
pub fn run_ablation(
    level: Level,
    ck: &Checkpoint,
    inst: &FunctionInstance,
    space: &SearchSpace,
    k: usize,
    budget: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    level.check(ck)?;
    check_budget(budget)?;
    if k == 0 {
        return Err(CoreError::InvalidArgument("k must be >= 1".into()));
    }
    match level {
        Level::B0 => budget_curve(inst, &ck.params, &ck.model, initial_positions(space, 1, seed), budget),
        Level::B1 => {
            if budget < k {
                return Err(CoreError::InvalidArgument(format!(
                    "budget {budget} cannot be split over {k} restarts"
                )));
            }
            let mut curve = Vec::with_capacity(budget);
            let mut best = f64::INFINITY;
            for r in 0..k {
                let share = budget / k + usize::from(r < budget % k);
                let x0 = initial_positions(space, 1, restart_seed(seed, r));
                for v in budget_curve(inst, &ck.params, &ck.model, x0, share)? {
                    best = best.min(v);
                    curve.push(best);
                }
            }
            Ok(curve)
        }
        _ => budget_curve(inst, &ck.params, &ck.model, initial_positions(space, k, seed), budget),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn bowl() -> FunctionInstance {
        FunctionInstance::new(
            crate::objectives::FamilyKind::Quadratic,
            Array2::eye(2),
            Array1::zeros(2),
            Array1::zeros(2),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn gd_contraction_on_bowl() {
        let run = run_gd(&bowl(), &[1.0, 1.0], 0.4, 6).unwrap();
        assert!(!run.diverged);
        for w in run.curve.windows(2) {
            assert!((w[1] / w[0] - 0.04).abs() < 1e-12);
        }
    }

    #[test]
    fn gd_divergence_reported() {
        let run = run_gd(&bowl(), &[1.0, 1.0], 1.5, 1000).unwrap();
        assert!(run.diverged);
        assert_eq!(run.curve.len(), 1000);
        assert_eq!(run.curve[999], 2.0);
    }

    #[test]
    fn pso_at_optimum_stays() {
        let inst = bowl();
        let x0 = Array2::zeros((5, 2));
        let curve = run_pso_from(&inst, x0, 100, &PsoConfig::default(), 3).unwrap();
        assert!(curve.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pso_rejects_single_particle() {
        assert!(run_pso_from(&bowl(), array![[1.0, 1.0]], 10, &PsoConfig::default(), 0).is_err());
    }

    #[test]
    fn level_round_trip() {
        for l in Level::ALL {
            assert_eq!(l.to_string().parse::<Level>().unwrap(), l);
        }
        assert!("B9".parse::<Level>().is_err());
    }
}
