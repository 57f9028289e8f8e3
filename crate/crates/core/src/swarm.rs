//! Particle bookkeeping and the four per-particle input features.
//!
//! State lives either as plain arrays ([`SwarmState`]) or as variables on a
//! differentiation tape ([`SwarmVars`]). The tape form is the single
//! implementation of the update rules; the plain form lifts itself onto a
//! scratch tape when it needs them.

use autodiff::{Axis, Tape, Var};
use ndarray::{Array1, Array2};

use crate::error::{CoreError, Result};
use crate::objectives::FunctionInstance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    /// Momentum decay.
    pub beta: f64,
    /// Gaussian similarity scale of the attraction weights.
    pub attraction_alpha: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            beta: 0.9,
            attraction_alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Gradient,
    Momentum,
    Velocity,
    Attraction,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::Gradient,
        Feature::Momentum,
        Feature::Velocity,
        Feature::Attraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Gradient => "gradient",
            Feature::Momentum => "momentum",
            Feature::Velocity => "velocity",
            Feature::Attraction => "attraction",
        }
    }
}

/// The n×4 feature matrix of one particle, stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub gradient: Vec<f64>,
    pub momentum: Vec<f64>,
    pub velocity: Vec<f64>,
    pub attraction: Vec<f64>,
}

/// Snapshot of one particle.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub momentum: Vec<f64>,
    pub prev_step: Vec<f64>,
}

/// k particles in an n-dimensional space, one particle per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    positions: Array2<f64>,
    values: Array1<f64>,
    gradients: Array2<f64>,
    momentum: Array2<f64>,
    best_positions: Array2<f64>,
    best_values: Array1<f64>,
    prev_steps: Array2<f64>,
    t: usize,
    evaluated: bool,
    history: Vec<(Vec<f64>, f64)>,
}

fn col(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(ndarray::Axis(1))
}

fn flat(v: &Array2<f64>) -> Array1<f64> {
    v.column(0).to_owned()
}

impl SwarmState {
    /// Particles at `positions` that have not been evaluated yet.
    pub fn new(positions: Array2<f64>) -> Result<Self> {
        let (k, n) = positions.dim();
        if k == 0 || n == 0 {
            return Err(CoreError::InvalidArgument(format!(
                "swarm needs k >= 1 and n >= 1, got {k}x{n}"
            )));
        }
        Ok(Self {
            values: Array1::from_elem(k, f64::NAN),
            gradients: Array2::zeros((k, n)),
            momentum: Array2::zeros((k, n)),
            best_positions: positions.clone(),
            best_values: Array1::from_elem(k, f64::INFINITY),
            prev_steps: Array2::zeros((k, n)),
            positions,
            t: 0,
            evaluated: false,
            history: Vec::new(),
        })
    }

    /// Evaluates every particle at its starting position (iteration 1).
    pub fn initialize(inst: &FunctionInstance, positions: Array2<f64>, cfg: &FeatureConfig) -> Result<Self> {
        Self::new(positions)?.evaluate(inst, cfg)
    }

    /// Evaluates an unevaluated swarm; a no-op error for an evaluated one.
    pub fn evaluate(self, inst: &FunctionInstance, cfg: &FeatureConfig) -> Result<Self> {
        if self.evaluated {
            return Err(CoreError::InvalidArgument("swarm already evaluated".into()));
        }
        let tape = Tape::new();
        let x = tape.constant(self.positions.clone());
        let vars = SwarmVars::initialize(inst, x, cfg)?;
        Ok(vars.to_state(Vec::new()))
    }

    pub fn k(&self) -> usize {
        self.positions.nrows()
    }

    pub fn n(&self) -> usize {
        self.positions.ncols()
    }

    /// Iteration counter; 1 after the initial evaluation.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_evaluated(&self) -> bool {
        self.evaluated
    }

    pub fn positions(&self) -> &Array2<f64> {
        &self.positions
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn best_values(&self) -> &Array1<f64> {
        &self.best_values
    }

    pub fn best_positions(&self) -> &Array2<f64> {
        &self.best_positions
    }

    pub fn prev_steps(&self) -> &Array2<f64> {
        &self.prev_steps
    }

    /// Every `(x, f)` pair observed so far, in evaluation order.
    pub fn history(&self) -> &[(Vec<f64>, f64)] {
        &self.history
    }

    pub fn particle(&self, i: usize) -> Result<ParticleState> {
        self.check_index(i)?;
        Ok(ParticleState {
            x: self.positions.row(i).to_vec(),
            value: self.values[i],
            gradient: self.gradients.row(i).to_vec(),
            best_x: self.best_positions.row(i).to_vec(),
            best_f: self.best_values[i],
            momentum: self.momentum.row(i).to_vec(),
            prev_step: self.prev_steps.row(i).to_vec(),
        })
    }

    pub fn global_best(&self) -> (Vec<f64>, f64) {
        let mut best = 0;
        for i in 1..self.k() {
            if self.best_values[i] < self.best_values[best] {
                best = i;
            }
        }
        (self.best_positions.row(best).to_vec(), self.best_values[best])
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.k() {
            return Err(CoreError::InvalidArgument(format!(
                "particle {i} out of range for k = {}",
                self.k()
            )));
        }
        Ok(())
    }

    pub fn compute_features(&self, i: usize, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
        self.check_index(i)?;
        let tape = Tape::new();
        let vars = SwarmVars::lift(&tape, self)?;
        let [g, m, v, a] = vars.features(cfg)?;
        let row = |x: Var<'_>| x.map(|a| a.row(i).to_vec());
        Ok(FeatureMatrix {
            gradient: row(g),
            momentum: row(m),
            velocity: row(v),
            attraction: row(a),
        })
    }

    /// Row-normalized weights behind the attraction feature (k×k).
    pub fn attraction_weights(&self, cfg: &FeatureConfig) -> Result<Array2<f64>> {
        let tape = Tape::new();
        let vars = SwarmVars::lift(&tape, self)?;
        Ok(vars.attraction_weights(cfg)?.value())
    }

    /// Moves every particle by its row of `steps` and evaluates the new positions.
    pub fn apply_steps(&self, steps: &Array2<f64>, inst: &FunctionInstance, cfg: &FeatureConfig) -> Result<Self> {
        let tape = Tape::new();
        let vars = SwarmVars::lift(&tape, self)?;
        let next = vars.apply_steps(tape.constant(steps.clone()), inst, cfg)?;
        Ok(next.to_state(self.history.clone()))
    }
}

/// Swarm state as tape variables. `f` and `best_f` are k×1; the rest k×n.
#[derive(Debug, Clone, Copy)]
pub struct SwarmVars<'t> {
    pub x: Var<'t>,
    pub f: Var<'t>,
    pub grad: Var<'t>,
    pub momentum: Var<'t>,
    pub best_x: Var<'t>,
    pub best_f: Var<'t>,
    pub prev_step: Var<'t>,
    pub t: usize,
}

impl<'t> SwarmVars<'t> {
    /// Evaluates `x0` and starts the bookkeeping at iteration 1.
    pub fn initialize(inst: &FunctionInstance, x0: Var<'t>, cfg: &FeatureConfig) -> Result<Self> {
        let tape = x0.tape();
        let (f, grad) = inst.evaluate_on_tape(x0)?;
        let momentum = grad.scale(1.0 - cfg.beta);
        let (k, n) = x0.shape();
        Ok(Self {
            x: x0,
            f,
            grad,
            momentum,
            best_x: x0,
            best_f: f,
            prev_step: tape.zeros(k, n),
            t: 1,
        })
    }

    /// Copies a plain state onto `tape` as constants.
    pub fn lift(tape: &'t Tape, s: &SwarmState) -> Result<Self> {
        if !s.evaluated {
            return Err(CoreError::UnevaluatedParticle(0));
        }
        Ok(Self {
            x: tape.constant(s.positions.clone()),
            f: tape.constant(col(&s.values)),
            grad: tape.constant(s.gradients.clone()),
            momentum: tape.constant(s.momentum.clone()),
            best_x: tape.constant(s.best_positions.clone()),
            best_f: tape.constant(col(&s.best_values)),
            prev_step: tape.constant(s.prev_steps.clone()),
            t: s.t,
        })
    }

    /// Plain snapshot; the history is extended by the current samples when
    /// the snapshot is the first one taken at this iteration.
    pub fn to_state(&self, mut history: Vec<(Vec<f64>, f64)>) -> SwarmState {
        let positions = self.x.value();
        let values = flat(&self.f.value());
        let k = positions.nrows();
        if history.len() < k * self.t {
            for i in 0..k {
                history.push((positions.row(i).to_vec(), values[i]));
            }
        }
        SwarmState {
            positions,
            values,
            gradients: self.grad.value(),
            momentum: self.momentum.value(),
            best_positions: self.best_x.value(),
            best_values: flat(&self.best_f.value()),
            prev_steps: self.prev_step.value(),
            t: self.t,
            evaluated: true,
            history,
        }
    }

    pub fn k(&self) -> usize {
        self.x.shape().0
    }

    pub fn n(&self) -> usize {
        self.x.shape().1
    }

    /// Softmax weights over strictly better particles, one row per particle.
    /// A particle with no better neighbour puts all weight on itself, which
    /// makes its attraction exactly zero.
    pub fn attraction_weights(&self, cfg: &FeatureConfig) -> Result<Var<'t>> {
        let tape = self.x.tape();
        let k = self.k();
        let f = self.f.value();
        let mut mask = Array2::from_elem((k, k), f64::NEG_INFINITY);
        for i in 0..k {
            let mut any = false;
            for j in 0..k {
                if f[[j, 0]] < f[[i, 0]] {
                    mask[[i, j]] = 0.0;
                    any = true;
                }
            }
            if !any {
                mask[[i, i]] = 0.0;
            }
        }
        let logits = self
            .x
            .sq_dist(self.x)?
            .scale(-cfg.attraction_alpha)
            .add(tape.constant(mask))?;
        Ok(logits.softmax(Axis::Rows))
    }

    /// `[gradient, momentum, velocity, attraction]`, each k×n.
    pub fn features(&self, cfg: &FeatureConfig) -> Result<[Var<'t>; 4]> {
        let velocity = self.x.sub(self.best_x)?;
        let w = self.attraction_weights(cfg)?;
        let attraction = self.x.sub(w.matmul(self.x)?)?;
        Ok([self.grad, self.momentum, velocity, attraction])
    }

    /// `x ← x + steps`, then evaluation and best/momentum bookkeeping.
    pub fn apply_steps(&self, steps: Var<'t>, inst: &FunctionInstance, cfg: &FeatureConfig) -> Result<Self> {
        if steps.shape() != self.x.shape() {
            return Err(autodiff::AdError::ShapeMismatch {
                op: "apply_steps",
                lhs: self.x.shape(),
                rhs: steps.shape(),
            }
            .into());
        }
        if let Some(particle) = steps.map(|s| {
            s.rows()
                .into_iter()
                .position(|r| r.iter().any(|v| !v.is_finite()))
        }) {
            return Err(CoreError::NonFiniteStep {
                particle,
                iteration: self.t,
            });
        }
        let tape = self.x.tape();
        let x = self.x.add(steps)?;
        let (f, grad) = inst.evaluate_on_tape(x)?;
        let momentum = self
            .momentum
            .scale(cfg.beta)
            .add(grad.scale(1.0 - cfg.beta))?;
        let fv = f.value();
        let old = self.best_f.value();
        let improved: Vec<bool> = (0..self.k()).map(|i| fv[[i, 0]] < old[[i, 0]]).collect();
        let best_x = tape.select_rows(x, self.best_x, &improved)?;
        let best_f = tape.select_rows(f, self.best_f, &improved)?;
        Ok(Self {
            x,
            f,
            grad,
            momentum,
            best_x,
            best_f,
            prev_step: steps,
            t: self.t + 1,
        })
    }
}
