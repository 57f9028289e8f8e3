//! The learned update rule: features → intra-attention → inter-attention →
//! coordinate-wise LSTM → step, and the rollout driver built on it.

use autodiff::{Tape, Var};
use ndarray::Array2;
use rand::Rng;

use crate::attention::{cross_share, inter_attend, intra_attend, trace_share, IntraAttentionParams, IntraVars};
use crate::error::{CoreError, Result};
use crate::objectives::{FunctionInstance, SearchSpace};
use crate::seed;
use crate::swarm::{Feature, FeatureConfig, SwarmState, SwarmVars};

/// Switches for every architectural component, so ablations can turn each
/// one off independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchFlags {
    /// Enabled inputs, in [`Feature::ALL`] order.
    pub features: [bool; 4],
    pub intra_attention: bool,
    pub inter_attention: bool,
}

impl ArchFlags {
    pub fn full() -> Self {
        Self {
            features: [true; 4],
            intra_attention: true,
            inter_attention: true,
        }
    }

    pub fn enabled_features(&self) -> Vec<Feature> {
        Feature::ALL
            .iter()
            .zip(self.features)
            .filter_map(|(f, on)| on.then_some(*f))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.features.iter().any(|&f| f) {
            return Err(CoreError::InvalidArgument("at least one feature must be enabled".into()));
        }
        Ok(())
    }
}

/// Non-trainable settings of the update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub gamma: f64,
    /// Length-scale of the inter-particle position kernel.
    pub length_scale: f64,
    pub features: FeatureConfig,
    pub flags: ArchFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 20,
            gamma: 1.0,
            length_scale: 1.0,
            features: FeatureConfig::default(),
            flags: ArchFlags::full(),
        }
    }
}

/// All weights of the meta-optimizer. Only the arrays are trained;
/// `step_scale` is a fixed output multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaParams {
    pub intra: IntraAttentionParams,
    /// 1×4H input weights, gate blocks ordered input, forget, output, candidate.
    pub lstm_wx: Array2<f64>,
    /// H×4H recurrent weights.
    pub lstm_wh: Array2<f64>,
    /// 1×4H gate biases.
    pub lstm_b: Array2<f64>,
    /// H×1 hidden → step.
    pub out_proj: Array2<f64>,
    /// H×1 hidden → attention context.
    pub ctx_proj: Array2<f64>,
    pub step_scale: f64,
}

pub const PARAM_NAMES: [&str; 8] = [
    "intra.w",
    "intra.u",
    "intra.v",
    "lstm.wx",
    "lstm.wh",
    "lstm.b",
    "out_proj",
    "ctx_proj",
];

pub const DEFAULT_STEP_SCALE: f64 = 0.1;

impl MetaParams {
    pub fn zeros(n: usize, hidden: usize) -> Self {
        Self {
            intra: IntraAttentionParams::zeros(n),
            lstm_wx: Array2::zeros((1, 4 * hidden)),
            lstm_wh: Array2::zeros((hidden, 4 * hidden)),
            lstm_b: Array2::zeros((1, 4 * hidden)),
            out_proj: Array2::zeros((hidden, 1)),
            ctx_proj: Array2::zeros((hidden, 1)),
            step_scale: DEFAULT_STEP_SCALE,
        }
    }

    /// Weights uniform in [−0.1, 0.1]; forget-gate bias 1, other biases 0.
    pub fn init(n: usize, hidden: usize, step_scale: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut uni = |shape: (usize, usize)| Array2::from_shape_simple_fn(shape, || rng.random_range(-0.1..0.1));
        let intra = IntraAttentionParams {
            w: uni((n, n)),
            u: uni((n, n)),
            v: uni((n, 1)),
        };
        let lstm_wx = uni((1, 4 * hidden));
        let lstm_wh = uni((hidden, 4 * hidden));
        let out_proj = uni((hidden, 1));
        let ctx_proj = uni((hidden, 1));
        let mut lstm_b = Array2::zeros((1, 4 * hidden));
        lstm_b.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        Self {
            intra,
            lstm_wx,
            lstm_wh,
            lstm_b,
            out_proj,
            ctx_proj,
            step_scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.intra.dim()
    }

    pub fn hidden(&self) -> usize {
        self.lstm_wh.nrows()
    }

    /// Trainable arrays in [`PARAM_NAMES`] order.
    pub fn arrays(&self) -> [&Array2<f64>; 8] {
        [
            &self.intra.w,
            &self.intra.u,
            &self.intra.v,
            &self.lstm_wx,
            &self.lstm_wh,
            &self.lstm_b,
            &self.out_proj,
            &self.ctx_proj,
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut Array2<f64>; 8] {
        [
            &mut self.intra.w,
            &mut self.intra.u,
            &mut self.intra.v,
            &mut self.lstm_wx,
            &mut self.lstm_wh,
            &mut self.lstm_b,
            &mut self.out_proj,
            &mut self.ctx_proj,
        ]
    }

    pub fn to_vec(&self) -> Vec<Array2<f64>> {
        self.arrays().iter().map(|a| (*a).clone()).collect()
    }

    /// Rebuilds parameters from arrays in [`PARAM_NAMES`] order.
    pub fn from_arrays(arrays: Vec<Array2<f64>>, step_scale: f64) -> Result<Self> {
        let [w, u, v, wx, wh, b, out, ctx]: [Array2<f64>; 8] = arrays
            .try_into()
            .map_err(|a: Vec<_>| CoreError::InvalidArgument(format!("expected 8 arrays, got {}", a.len())))?;
        let p = Self {
            intra: IntraAttentionParams { w, u, v },
            lstm_wx: wx,
            lstm_wh: wh,
            lstm_b: b,
            out_proj: out,
            ctx_proj: ctx,
            step_scale,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let h = self.hidden();
        let expect = [
            (n, n),
            (n, n),
            (n, 1),
            (1, 4 * h),
            (h, 4 * h),
            (1, 4 * h),
            (h, 1),
            (h, 1),
        ];
        for ((name, a), shape) in PARAM_NAMES.iter().zip(self.arrays()).zip(expect) {
            if a.dim() != shape {
                return Err(CoreError::InvalidArgument(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    a.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn sq_norm(&self) -> f64 {
        self.arrays().iter().flat_map(|a| a.iter()).map(|v| v * v).sum()
    }

    /// Places the arrays on `tape`, as parameters when `trainable`.
    pub fn lift<'t>(&self, tape: &'t Tape, trainable: bool) -> ParamVars<'t> {
        let put = |a: &Array2<f64>| {
            if trainable {
                tape.param(a.clone())
            } else {
                tape.constant(a.clone())
            }
        };
        let all: Vec<Var<'t>> = self.arrays().iter().map(|a| put(a)).collect();
        ParamVars::from_vars(&all, self.step_scale)
    }
}

/// [`MetaParams`] on a tape.
#[derive(Debug, Clone)]
pub struct ParamVars<'t> {
    pub intra: IntraVars<'t>,
    pub wx: Var<'t>,
    pub wh: Var<'t>,
    pub b: Var<'t>,
    pub out_proj: Var<'t>,
    pub ctx_proj: Var<'t>,
    pub step_scale: f64,
    /// Same variables in [`PARAM_NAMES`] order.
    pub all: Vec<Var<'t>>,
}

impl<'t> ParamVars<'t> {
    /// `vars` in [`PARAM_NAMES`] order.
    pub fn from_vars(vars: &[Var<'t>], step_scale: f64) -> Self {
        assert_eq!(vars.len(), 8, "expected 8 parameter variables");
        Self {
            intra: IntraVars {
                w: vars[0],
                u: vars[1],
                v: vars[2],
            },
            wx: vars[3],
            wh: vars[4],
            b: vars[5],
            out_proj: vars[6],
            ctx_proj: vars[7],
            step_scale,
            all: vars.to_vec(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.shape().0
    }

    /// `‖φ‖²` on the tape.
    pub fn sq_norm(&self) -> Result<Var<'t>> {
        let mut acc = self.all[0].sq_norm();
        for v in &self.all[1..] {
            acc = acc.add(v.sq_norm())?;
        }
        Ok(acc)
    }
}

/// Hidden and cell state of one particle's coordinate-wise LSTM (n×H each).
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Array2<f64>,
    pub cell: Array2<f64>,
}

/// Per-particle LSTM state stacked particle-major: rows `i·n .. (i+1)·n`
/// belong to particle `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    pub hidden: Array2<f64>,
    pub cell: Array2<f64>,
    n: usize,
}

impl PopulationState {
    pub fn zeros(k: usize, n: usize, hidden: usize) -> Self {
        Self {
            hidden: Array2::zeros((k * n, hidden)),
            cell: Array2::zeros((k * n, hidden)),
            n,
        }
    }

    pub fn particle(&self, i: usize) -> RecurrentState {
        let rows = ndarray::s![i * self.n..(i + 1) * self.n, ..];
        RecurrentState {
            hidden: self.hidden.slice(rows).to_owned(),
            cell: self.cell.slice(rows).to_owned(),
        }
    }
}

/// What one update step produced on the tape.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput<'t> {
    /// k×n proposed moves.
    pub steps: Var<'t>,
    pub hidden: Var<'t>,
    pub cell: Var<'t>,
    /// k×F feature weights over the enabled features.
    pub weights: Var<'t>,
    pub q: Option<Var<'t>>,
    pub m: Option<Var<'t>>,
}

fn check_finite(v: Var<'_>, stage: &'static str, iteration: usize) -> Result<()> {
    if v.map(|a| a.iter().all(|x| x.is_finite())) {
        Ok(())
    } else {
        Err(CoreError::NonFinite { stage, iteration })
    }
}

/// One application of the learned update rule to every particle.
pub fn swarm_step<'t>(
    swarm: &SwarmVars<'t>,
    hidden: Var<'t>,
    cell: Var<'t>,
    params: &ParamVars<'t>,
    cfg: &ModelConfig,
) -> Result<StepOutput<'t>> {
    let tape = swarm.x.tape();
    let (k, n) = swarm.x.shape();
    let h = params.hidden();
    let iter = swarm.t;
    let all = swarm.features(&cfg.features)?;
    let selected: Vec<Var<'t>> = Feature::ALL
        .iter()
        .enumerate()
        .filter(|(i, _)| cfg.flags.features[*i])
        .map(|(i, _)| all[i])
        .collect();
    if selected.is_empty() {
        return Err(CoreError::InvalidArgument("no features enabled".into()));
    }
    for f in &selected {
        check_finite(*f, "features", iter)?;
    }

    let (c, weights) = if cfg.flags.intra_attention {
        let context = hidden.matmul(params.ctx_proj)?.reshape(k, n)?;
        intra_attend(&selected, context, &params.intra)?
    } else {
        let share = 1.0 / selected.len() as f64;
        let mut acc = selected[0];
        for f in &selected[1..] {
            acc = acc.add(*f)?;
        }
        let uniform = tape.constant(Array2::from_elem((k, selected.len()), share));
        (acc.scale(share), uniform)
    };
    check_finite(c, "intra-attention", iter)?;

    let (e, q, m) = if cfg.flags.inter_attention {
        let out = inter_attend(c, swarm.x, cfg.gamma, cfg.length_scale)?;
        (out.e, Some(out.q), Some(out.m))
    } else {
        (c, None, None)
    };
    check_finite(e, "inter-attention", iter)?;

    let input = e.reshape(k * n, 1)?;
    let gates = input
        .matmul(params.wx)?
        .add(hidden.matmul(params.wh)?)?
        .add(tape.ones(k * n, 1).matmul(params.b)?)?;
    let input_gate = gates.slice_cols(0, h)?.sigmoid();
    let forget_gate = gates.slice_cols(h, h)?.sigmoid();
    let output_gate = gates.slice_cols(2 * h, h)?.sigmoid();
    let candidate = gates.slice_cols(3 * h, h)?.tanh();
    let cell = forget_gate.mul(cell)?.add(input_gate.mul(candidate)?)?;
    let hidden = output_gate.mul(cell.tanh())?;
    check_finite(hidden, "lstm", iter)?;

    let steps = hidden
        .matmul(params.out_proj)?
        .scale(params.step_scale)
        .reshape(k, n)?;
    check_finite(steps, "step", iter)?;
    Ok(StepOutput {
        steps,
        hidden,
        cell,
        weights,
        q,
        m,
    })
}

/// Everything logged for one update.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    /// Positions the step was computed from (k×n).
    pub positions: Array2<f64>,
    pub values: Vec<f64>,
    pub steps: Array2<f64>,
    /// k×4 feature weights; disabled features carry 0.
    pub feature_weights: Array2<f64>,
    pub q: Option<Array2<f64>>,
    pub m: Option<Array2<f64>>,
    pub trace_share: Option<f64>,
    /// Off-diagonal share, computed directly so it stays resolvable near 0.
    pub cross_share: Option<f64>,
}

/// Full record of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub k: usize,
    pub n: usize,
    pub iterations: Vec<IterationLog>,
    pub final_positions: Array2<f64>,
    pub final_values: Vec<f64>,
    /// Best value after each function evaluation, in evaluation order.
    pub best_so_far: Vec<f64>,
}

impl TrajectoryRecord {
    /// Every evaluated `(x, f)`, initial samples first.
    pub fn samples(&self) -> Vec<(Vec<f64>, f64)> {
        let mut out = Vec::with_capacity(self.best_so_far.len());
        let sets = self
            .iterations
            .iter()
            .map(|it| (&it.positions, &it.values))
            .chain(std::iter::once((&self.final_positions, &self.final_values)));
        for (x, f) in sets {
            for i in 0..self.k {
                out.push((x.row(i).to_vec(), f[i]));
            }
        }
        out
    }

    /// Sum of all sampled objective values.
    pub fn regret(&self) -> f64 {
        self.samples().iter().map(|(_, f)| f).sum()
    }

    pub fn final_best(&self) -> f64 {
        *self.best_so_far.last().expect("at least one evaluation")
    }
}

/// Variables produced by one truncated window, for the loss.
#[derive(Debug, Clone)]
pub struct WindowTrace<'t> {
    /// Sum of the window's sampled values, plus the initial samples (as
    /// constants) for the first window.
    pub regret: Var<'t>,
    /// New samples of the window, stacked (w·k)×n and (w·k)×1.
    pub xs: Option<Var<'t>>,
    pub fs: Option<Var<'t>>,
    /// Number of samples observed before the window started.
    pub prior_samples: usize,
}

/// Drives a swarm through successive windows. Between windows all state is
/// plain data, so each window can live on its own tape.
#[derive(Debug, Clone)]
pub struct Rollout<'a> {
    inst: &'a FunctionInstance,
    model: ModelConfig,
    swarm: SwarmState,
    recurrent: PopulationState,
    iterations: Vec<IterationLog>,
    best_so_far: Vec<f64>,
    initial_pending: bool,
}

impl<'a> Rollout<'a> {
    pub fn start(inst: &'a FunctionInstance, model: &ModelConfig, x0: Array2<f64>) -> Result<Self> {
        model.flags.validate()?;
        let (k, n) = x0.dim();
        if n != inst.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: inst.dim(),
                got: n,
            });
        }
        let swarm = SwarmState::initialize(inst, x0, &model.features)?;
        let mut best_so_far = Vec::new();
        push_best(&mut best_so_far, swarm.values().iter().copied());
        Ok(Self {
            inst,
            model: *model,
            recurrent: PopulationState::zeros(k, n, model.hidden),
            swarm,
            iterations: Vec::new(),
            best_so_far,
            initial_pending: true,
        })
    }

    pub fn swarm(&self) -> &SwarmState {
        &self.swarm
    }

    pub fn recurrent(&self) -> &PopulationState {
        &self.recurrent
    }

    pub fn iterations_done(&self) -> usize {
        self.iterations.len()
    }

    /// Runs `steps` updates on `tape`, where `params` already live, and
    /// advances the plain state.
    pub fn window<'t>(&mut self, tape: &'t Tape, params: &ParamVars<'t>, steps: usize) -> Result<WindowTrace<'t>> {
        if params.hidden() != self.model.hidden {
            return Err(CoreError::InvalidArgument(format!(
                "parameters have hidden size {}, model expects {}",
                params.hidden(),
                self.model.hidden
            )));
        }
        let prior_samples = self.swarm.history().len();
        let mut vars = SwarmVars::lift(tape, &self.swarm)?;
        let mut hidden = tape.constant(self.recurrent.hidden.clone());
        let mut cell = tape.constant(self.recurrent.cell.clone());
        let mut regret = if self.initial_pending {
            tape.scalar(self.swarm.values().sum())
        } else {
            tape.scalar(0.0)
        };
        let mut xs = Vec::with_capacity(steps);
        let mut fs = Vec::with_capacity(steps);
        let mut history = self.swarm.history().to_vec();
        for _ in 0..steps {
            let out = swarm_step(&vars, hidden, cell, params, &self.model)?;
            self.iterations.push(self.log(&vars, &out)?);
            let next = vars.apply_steps(out.steps, self.inst, &self.model.features)?;
            check_finite(next.f, "objective", next.t)?;
            let fv = next.f.value();
            push_best(&mut self.best_so_far, fv.iter().copied());
            let xv = next.x.value();
            for i in 0..xv.nrows() {
                history.push((xv.row(i).to_vec(), fv[[i, 0]]));
            }
            regret = regret.add(next.f.sum())?;
            xs.push(next.x);
            fs.push(next.f);
            vars = next;
            hidden = out.hidden;
            cell = out.cell;
        }
        self.initial_pending = false;
        self.swarm = vars.to_state(history);
        self.recurrent.hidden = hidden.value();
        self.recurrent.cell = cell.value();
        let (xs, fs) = if xs.is_empty() {
            (None, None)
        } else {
            (Some(tape.concat_rows(&xs)?), Some(tape.concat_rows(&fs)?))
        };
        Ok(WindowTrace {
            regret,
            xs,
            fs,
            prior_samples,
        })
    }

    fn log(&self, vars: &SwarmVars<'_>, out: &StepOutput<'_>) -> Result<IterationLog> {
        let k = vars.k();
        let w = out.weights.value();
        let mut feature_weights = Array2::zeros((k, 4));
        let mut col = 0;
        for (slot, on) in self.model.flags.features.iter().enumerate() {
            if *on {
                feature_weights.column_mut(slot).assign(&w.column(col));
                col += 1;
            }
        }
        let q = out.q.map(|v| v.value());
        let m = out.m.map(|v| v.value());
        let share = match (&q, &m) {
            (Some(q), Some(m)) => Some((trace_share(q, m, self.model.gamma)?, cross_share(q, m, self.model.gamma)?)),
            _ => None,
        };
        Ok(IterationLog {
            positions: vars.x.value(),
            values: vars.f.value().column(0).to_vec(),
            steps: out.steps.value(),
            feature_weights,
            q,
            m,
            trace_share: share.map(|s| s.0),
            cross_share: share.map(|s| s.1),
        })
    }

    /// Runs `steps` more updates without gradients, in windows of `window`.
    pub fn advance(&mut self, params: &MetaParams, steps: usize, window: usize) -> Result<()> {
        let window = window.max(1);
        let mut left = steps;
        while left > 0 {
            let len = left.min(window);
            let tape = Tape::new();
            let pv = params.lift(&tape, false);
            self.window(&tape, &pv, len)?;
            left -= len;
        }
        Ok(())
    }

    pub fn finish(self) -> TrajectoryRecord {
        TrajectoryRecord {
            k: self.swarm.k(),
            n: self.swarm.n(),
            iterations: self.iterations,
            final_positions: self.swarm.positions().clone(),
            final_values: self.swarm.values().to_vec(),
            best_so_far: self.best_so_far,
        }
    }
}

fn push_best(curve: &mut Vec<f64>, values: impl Iterator<Item = f64>) {
    let mut best = curve.last().copied().unwrap_or(f64::INFINITY);
    for v in values {
        if v < best {
            best = v;
        }
        curve.push(best);
    }
}

/// Tape window length used when no gradients are needed.
pub const INFERENCE_WINDOW: usize = 20;

/// Uniform initial positions for `k` particles.
pub fn initial_positions(space: &SearchSpace, k: usize, seed: u64) -> Array2<f64> {
    space.sample_uniform(&mut seed::rng(seed), k)
}

/// `T` updates of `k` particles started uniformly in `space` from `seed`.
pub fn rollout(
    inst: &FunctionInstance,
    params: &MetaParams,
    model: &ModelConfig,
    space: &SearchSpace,
    k: usize,
    iterations: usize,
    seed: u64,
) -> Result<TrajectoryRecord> {
    if k == 0 {
        return Err(CoreError::InvalidArgument("k must be >= 1".into()));
    }
    rollout_from(inst, params, model, initial_positions(space, k, seed), iterations)
}

pub fn rollout_from(
    inst: &FunctionInstance,
    params: &MetaParams,
    model: &ModelConfig,
    x0: Array2<f64>,
    iterations: usize,
) -> Result<TrajectoryRecord> {
    if iterations == 0 {
        return Err(CoreError::InvalidArgument("rollout needs T >= 1".into()));
    }
    let mut r = Rollout::start(inst, model, x0)?;
    r.advance(params, iterations, INFERENCE_WINDOW)?;
    Ok(r.finish())
}

/// Best-so-far curve with exactly `budget` entries: ⌈budget/k⌉ sample sets
/// are drawn and the curve is cut at `budget`.
pub fn budget_curve(
    inst: &FunctionInstance,
    params: &MetaParams,
    model: &ModelConfig,
    x0: Array2<f64>,
    budget: usize,
) -> Result<Vec<f64>> {
    let k = x0.nrows();
    if k == 0 || budget < k {
        return Err(CoreError::InvalidArgument(format!(
            "budget {budget} is smaller than the swarm size {k}"
        )));
    }
    let sets = budget.div_ceil(k);
    let mut r = Rollout::start(inst, model, x0)?;
    r.advance(params, sets - 1, INFERENCE_WINDOW)?;
    let mut curve = r.finish().best_so_far;
    curve.truncate(budget);
    Ok(curve)
}
