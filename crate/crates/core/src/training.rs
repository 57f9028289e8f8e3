//! Meta-training: fresh functions each epoch, truncated unrolls, gradient
//! accumulation in a fixed order, clipping and Adam.

use std::time::Instant;

use autodiff::Tape;
use ndarray::Array2;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::error::{CoreError, Result};
use crate::loss::{window_loss, Episode, LossConfig};
use crate::meta::{initial_positions, MetaParams, ModelConfig, Rollout, DEFAULT_STEP_SCALE};
use crate::objectives::{Family, FunctionInstance, SearchSpace};
use crate::posterior::{sample_entropy, Annealing};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like<'a>(arrays: impl IntoIterator<Item = &'a Array2<f64>>) -> Self {
        let m: Vec<_> = arrays.into_iter().map(|a| Array2::zeros(a.dim())).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One bias-corrected Adam step. Returns `false` (and changes nothing) when
/// any gradient entry is non-finite.
pub fn adam_update<'a>(
    params: impl IntoIterator<Item = &'a mut Array2<f64>>,
    grads: &[Array2<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<bool> {
    let params: Vec<&mut Array2<f64>> = params.into_iter().collect();
    if params.len() != grads.len() || state.m.len() != grads.len() {
        return Err(CoreError::DimensionMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.dim() != g.dim() || m.dim() != g.dim() {
            return Err(CoreError::InvalidArgument(format!(
                "gradient shape {:?} does not match parameter shape {:?}",
                g.dim(),
                p.dim()
            )));
        }
    }
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Ok(false);
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        m.zip_mut_with(g, |m, &g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
        v.zip_mut_with(g, |v, &g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
        ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
            *p -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
        });
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub family: Family,
    pub space: SearchSpace,
    pub k: usize,
    /// Updates per training function.
    pub iterations: usize,
    pub epochs: usize,
    /// Functions per epoch (m).
    pub batch: usize,
    /// Truncation length of the unroll.
    pub window: usize,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    /// Global-norm clip threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub rho0: f64,
    pub model: ModelConfig,
    pub step_scale: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults for an `n`-dimensional family.
    pub fn new(family: Family, n: usize) -> Result<Self> {
        Ok(Self {
            family,
            space: SearchSpace::default_box(n)?,
            k: 4,
            iterations: 40,
            epochs: 300,
            batch: 8,
            window: 20,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
            rho0: 1.0,
            model: ModelConfig::default(),
            step_scale: DEFAULT_STEP_SCALE,
            seed: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(CoreError::InvalidArgument(format!("{what} must be >= 1")));
        if self.k == 0 {
            return bad("k");
        }
        if self.iterations == 0 {
            return bad("iterations");
        }
        if self.batch == 0 {
            return bad("batch");
        }
        if self.window == 0 {
            return bad("window");
        }
        if self.model.hidden == 0 {
            return bad("hidden");
        }
        if !(self.rho0 > 0.0) {
            return Err(CoreError::InvalidArgument("rho0 must be > 0".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(CoreError::InvalidArgument("clip_norm must be > 0".into()));
            }
        }
        self.model.flags.validate()?;
        self.loss.validate()
    }

    /// The m training functions of `epoch` (0-based).
    pub fn episodes(&self, epoch: usize) -> Vec<Episode> {
        (0..self.batch)
            .map(|q| {
                let tags = [epoch as u64, q as u64];
                Episode {
                    inst: FunctionInstance::sample(self.family, &self.space, derive_seed(self.seed, &[FUNCTION_TAG, tags[0], tags[1]])),
                    x0: initial_positions(&self.space, self.k, derive_seed(self.seed, &[START_TAG, tags[0], tags[1]])),
                    seed: derive_seed(self.seed, &[MC_TAG, tags[0], tags[1]]),
                }
            })
            .collect()
    }

    pub fn initial_params(&self) -> MetaParams {
        MetaParams::init(
            self.dim(),
            self.model.hidden,
            self.step_scale,
            derive_seed(self.seed, &[INIT_TAG]),
        )
    }
}

const FUNCTION_TAG: u64 = 1;
const START_TAG: u64 = 2;
const MC_TAG: u64 = 3;
const INIT_TAG: u64 = 4;

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_regret: f64,
    /// Mean summed window entropy; 0 when λ = 0.
    pub mean_entropy: f64,
    pub loss: f64,
    /// Norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
    pub skipped: bool,
    pub wall_ms: u128,
}

/// Gradient and loss parts contributed by one training function.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeGradient {
    pub seed: u64,
    pub grads: Vec<Array2<f64>>,
    pub regret: f64,
    pub entropy: f64,
}

/// Gradient of `(regret + λ Σ window entropies) · scale` for one function,
/// unrolled in truncated windows.
pub fn episode_gradient(
    ep: &Episode,
    params: &MetaParams,
    cfg: &TrainConfig,
    annealing: Option<&Annealing>,
    scale: f64,
) -> Result<EpisodeGradient> {
    let mut rollout = Rollout::start(&ep.inst, &cfg.model, ep.x0.clone())?;
    let mut grads: Vec<Array2<f64>> = params.arrays().iter().map(|a| Array2::zeros(a.dim())).collect();
    let mut regret = 0.0;
    let mut entropy = 0.0;
    let mut done = 0;
    let mut w = 0u64;
    while done < cfg.iterations {
        let len = cfg.window.min(cfg.iterations - done);
        let tape = Tape::new();
        let pv = params.lift(&tape, true);
        let term = window_loss(
            &tape,
            &mut rollout,
            &pv,
            len,
            annealing,
            &cfg.space,
            &cfg.loss,
            derive_seed(ep.seed, &[w]),
        )?;
        let g = tape.backward(term.total.scale(scale))?;
        for (acc, v) in grads.iter_mut().zip(&pv.all) {
            if let Some(gv) = g.get(*v) {
                *acc += gv;
            }
        }
        regret += term.regret;
        entropy += term.entropy.unwrap_or(0.0);
        done += len;
        w += 1;
    }
    Ok(EpisodeGradient {
        seed: ep.seed,
        grads,
        regret,
        entropy,
    })
}

/// Sums per-function gradients in seed order, so the result does not depend
/// on the order the functions were processed in.
pub fn reduce_gradients(mut parts: Vec<EpisodeGradient>, shapes: &[(usize, usize)]) -> (Vec<Array2<f64>>, f64, f64) {
    parts.sort_by_key(|p| p.seed);
    let mut total: Vec<Array2<f64>> = shapes.iter().map(|&s| Array2::zeros(s)).collect();
    let mut regret = 0.0;
    let mut entropy = 0.0;
    for p in &parts {
        for (t, g) in total.iter_mut().zip(&p.grads) {
            *t += g;
        }
        regret += p.regret;
        entropy += p.entropy;
    }
    (total, regret, entropy)
}

pub fn global_norm(grads: &[Array2<f64>]) -> f64 {
    grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Reference entropy `h₀`: mean posterior entropy at `ρ₀` over the first
/// epoch's functions rolled out with `params`.
pub fn initial_entropy(params: &MetaParams, cfg: &TrainConfig) -> Result<f64> {
    let eps = cfg.episodes(0);
    let hs = eps
        .par_iter()
        .map(|ep| {
            let mut r = Rollout::start(&ep.inst, &cfg.model, ep.x0.clone())?;
            r.advance(params, cfg.iterations, cfg.window)?;
            let rec = r.finish();
            sample_entropy(&rec.samples(), cfg.rho0, &cfg.space, &cfg.loss.entropy, derive_seed(ep.seed, &[H0_TAG]))
        })
        .collect::<Result<Vec<f64>>>()?;
    let h0 = hs.iter().sum::<f64>() / hs.len() as f64;
    if !(h0 > 0.0) || !h0.is_finite() {
        return Err(CoreError::DegenerateEntropy(h0));
    }
    Ok(h0)
}

const H0_TAG: u64 = 0x6830;

/// A fresh checkpoint for `cfg` at epoch 0.
pub fn initial_checkpoint(cfg: &TrainConfig) -> Checkpoint {
    let params = cfg.initial_params();
    Checkpoint {
        adam: AdamState::zeros_like(params.arrays()),
        params,
        model: cfg.model,
        lambda: cfg.loss.lambda,
        epoch: 0,
        h0: None,
    }
}

/// Trains until `cfg.epochs`, starting from `resume` when given. `log` sees
/// every finished epoch together with the updated checkpoint.
pub fn train(
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    mut log: impl FnMut(&EpochRecord, &Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut ck = match resume {
        Some(ck) => {
            ck.check_compatible(&cfg.model, cfg.loss.lambda, cfg.dim())?;
            ck
        }
        None => initial_checkpoint(cfg),
    };
    if ck.epoch >= cfg.epochs {
        return Ok(ck);
    }
    if cfg.loss.lambda > 0.0 && ck.h0.is_none() {
        ck.h0 = Some(initial_entropy(&ck.params, cfg)?);
    }
    let annealing = ck.h0.map(|h0| Annealing { rho0: cfg.rho0, h0 });
    let shapes: Vec<_> = ck.params.arrays().iter().map(|a| a.dim()).collect();
    let scale = 1.0 / cfg.batch as f64;
    for epoch in ck.epoch..cfg.epochs {
        let start = Instant::now();
        let episodes = cfg.episodes(epoch);
        let params = &ck.params;
        let parts = episodes
            .par_iter()
            .map(|ep| episode_gradient(ep, params, cfg, annealing.as_ref(), scale))
            .collect::<Result<Vec<_>>>()?;
        let (mut grads, regret, entropy) = reduce_gradients(parts, &shapes);
        for (g, p) in grads.iter_mut().zip(ck.params.arrays()) {
            g.scaled_add(2.0 * cfg.loss.l2, p);
        }
        let mean_regret = regret * scale;
        let mean_entropy = entropy * scale;
        let loss = mean_regret + cfg.loss.lambda * mean_entropy + cfg.loss.l2 * ck.params.sq_norm();
        let grad_norm = global_norm(&grads);
        let mut clipped = false;
        if let Some(limit) = cfg.clip_norm {
            if grad_norm.is_finite() && grad_norm > limit {
                let f = limit / grad_norm;
                grads.iter_mut().for_each(|g| *g *= f);
                clipped = true;
            }
        }
        let applied = adam_update(ck.params.arrays_mut(), &grads, &mut ck.adam, &cfg.adam)?;
        ck.epoch = epoch + 1;
        let record = EpochRecord {
            epoch: epoch + 1,
            mean_regret,
            mean_entropy,
            loss,
            grad_norm,
            clipped,
            skipped: !applied,
            wall_ms: start.elapsed().as_millis(),
        };
        log(&record, &ck)?;
    }
    Ok(ck)
}
