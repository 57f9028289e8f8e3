//! Meta-loss: cumulative regret plus λ times posterior entropy, averaged over
//! functions, plus an L2 penalty on the parameters.

use autodiff::{Tape, Var};
use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::meta::{ModelConfig, ParamVars, Rollout, WindowTrace};
use crate::objectives::{FunctionInstance, SearchSpace};
use crate::posterior::{entropy_on_tape, stack_samples, Annealing, EntropyConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    /// L2 weight `C`.
    pub l2: f64,
    pub entropy: EntropyConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            l2: 1e-4,
            entropy: EntropyConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.l2 >= 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "lambda and C must be >= 0, got {} and {}",
                self.lambda, self.l2
            )));
        }
        Ok(())
    }
}

/// Loss contribution of one window with its parts.
#[derive(Debug, Clone, Copy)]
pub struct WindowLoss<'t> {
    /// `regret + λ·entropy`.
    pub total: Var<'t>,
    pub regret: f64,
    /// `None` when λ = 0 (the term is skipped).
    pub entropy: Option<f64>,
}

/// Entropy of the posterior fitted to every sample seen so far: earlier ones
/// from `prior` as constants, the window's own from `trace`.
pub fn window_entropy<'t>(
    tape: &'t Tape,
    prior: &[(Vec<f64>, f64)],
    trace: &WindowTrace<'t>,
    annealing: &Annealing,
    space: &SearchSpace,
    cfg: &EntropyConfig,
    seed: u64,
) -> Result<Var<'t>> {
    let n = space.dim();
    let mut xs = Vec::new();
    let mut fs = Vec::new();
    if !prior.is_empty() {
        let (x, y) = stack_samples(prior, n)?;
        xs.push(tape.constant(x));
        fs.push(tape.constant(y));
    }
    if let (Some(x), Some(f)) = (trace.xs, trace.fs) {
        xs.push(x);
        fs.push(f);
    }
    if xs.is_empty() {
        return Err(CoreError::InvalidArgument("entropy needs at least one sample".into()));
    }
    let x = tape.concat_rows(&xs)?;
    let f = tape.concat_rows(&fs)?;
    let rho = annealing.rho(x.shape().0, n)?;
    entropy_on_tape(x, f, rho, space, cfg, seed)
}

/// Runs one window of `rollout` and builds its loss term.
#[allow(clippy::too_many_arguments)]
pub fn window_loss<'t>(
    tape: &'t Tape,
    rollout: &mut Rollout<'_>,
    params: &ParamVars<'t>,
    steps: usize,
    annealing: Option<&Annealing>,
    space: &SearchSpace,
    cfg: &LossConfig,
    seed: u64,
) -> Result<WindowLoss<'t>> {
    let prior = rollout.swarm().history().to_vec();
    let trace = rollout.window(tape, params, steps)?;
    debug_assert_eq!(prior.len(), trace.prior_samples);
    let regret = trace.regret.item();
    if cfg.lambda == 0.0 {
        return Ok(WindowLoss {
            total: trace.regret,
            regret,
            entropy: None,
        });
    }
    let annealing = annealing.ok_or_else(|| {
        CoreError::InvalidArgument("entropy term needs an annealing schedule (h0)".into())
    })?;
    let h = window_entropy(tape, &prior, &trace, annealing, space, &cfg.entropy, seed)?;
    Ok(WindowLoss {
        total: trace.regret.add(h.scale(cfg.lambda))?,
        regret,
        entropy: Some(h.item()),
    })
}

/// One training function: instance, start positions and the seed of its
/// Monte Carlo draws.
#[derive(Debug, Clone)]
pub struct Episode {
    pub inst: FunctionInstance,
    pub x0: Array2<f64>,
    pub seed: u64,
}

/// Full meta-loss of `episodes` unrolled for `iterations` on a single tape
/// (no truncation). Returns `(1/m) Σ (regret + λ h) + C‖φ‖²`.
#[allow(clippy::too_many_arguments)]
pub fn meta_loss<'t>(
    tape: &'t Tape,
    params: &ParamVars<'t>,
    episodes: &[Episode],
    model: &ModelConfig,
    iterations: usize,
    annealing: Option<&Annealing>,
    space: &SearchSpace,
    cfg: &LossConfig,
) -> Result<Var<'t>> {
    cfg.validate()?;
    if episodes.is_empty() {
        return Err(CoreError::InvalidArgument("meta-loss needs at least one trajectory".into()));
    }
    let mut acc: Option<Var<'t>> = None;
    for ep in episodes {
        let mut r = Rollout::start(&ep.inst, model, ep.x0.clone())?;
        let term = window_loss(
            tape,
            &mut r,
            params,
            iterations,
            annealing,
            space,
            cfg,
            seed::derive_seed(ep.seed, &[0]),
        )?;
        acc = Some(match acc {
            Some(a) => a.add(term.total)?,
            None => term.total,
        });
    }
    let mean = acc.expect("non-empty").scale(1.0 / episodes.len() as f64);
    Ok(mean.add(params.sq_norm()?.scale(cfg.l2))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::MetaParams;
    use ndarray::array;

    #[test]
    fn regret_only_reduction() {
        let inst = FunctionInstance::canonical_rastrigin(2).unwrap();
        let space = SearchSpace::default_box(2).unwrap();
        let params = MetaParams::init(2, 4, 0.1, 1);
        let model = ModelConfig {
            hidden: 4,
            ..ModelConfig::default()
        };
        let x0 = array![[1.0, 2.0], [-0.5, 0.3]];
        let cfg = LossConfig {
            lambda: 0.0,
            l2: 0.0,
            ..LossConfig::default()
        };
        let tape = Tape::new();
        let pv = params.lift(&tape, true);
        let ep = Episode {
            inst: inst.clone(),
            x0: x0.clone(),
            seed: 5,
        };
        let loss = meta_loss(&tape, &pv, &[ep], &model, 3, None, &space, &cfg).unwrap();
        let rec = crate::meta::rollout_from(&inst, &params, &model, x0, 3).unwrap();
        assert!((loss.item() - rec.regret()).abs() < 1e-9 * rec.regret().abs());
    }

    #[test]
    fn entropy_term_requires_schedule() {
        let inst = FunctionInstance::canonical_rastrigin(2).unwrap();
        let space = SearchSpace::default_box(2).unwrap();
        let params = MetaParams::init(2, 4, 0.1, 1);
        let model = ModelConfig {
            hidden: 4,
            ..ModelConfig::default()
        };
        let tape = Tape::new();
        let pv = params.lift(&tape, true);
        let ep = Episode {
            inst,
            x0: array![[1.0, 2.0]],
            seed: 5,
        };
        assert!(meta_loss(&tape, &pv, &[ep], &model, 2, None, &space, &LossConfig::default()).is_err());
        assert!(meta_loss(&tape, &pv, &[], &model, 2, None, &space, &LossConfig::default()).is_err());
    }
}
