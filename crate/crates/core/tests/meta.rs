use autodiff::{grad_check, Tape};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use swarmopt::attention::{inter_attend, intra_attend, IntraAttentionParams};
use swarmopt::meta::{rollout, rollout_from, MetaParams, ModelConfig, ParamVars, Rollout};
use swarmopt::objectives::{Family, FamilyKind, FunctionInstance, SearchSpace};
use swarmopt::swarm::SwarmVars;
use swarmopt::{ArchFlags, CoreError};

fn small_model(hidden: usize) -> ModelConfig {
    ModelConfig {
        hidden,
        ..ModelConfig::default()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar LSTM pipeline for one particle in one dimension.
struct ScalarOracle {
    p: MetaParams,
    gamma: f64,
    beta: f64,
    h: Vec<f64>,
    c: Vec<f64>,
}

impl ScalarOracle {
    fn step(&mut self, feats: [f64; 4]) -> f64 {
        let hd = self.h.len();
        let ctx: f64 = (0..hd).map(|j| self.h[j] * self.p.ctx_proj[[j, 0]]).sum();
        let (w, u, v) = (self.p.intra.w[[0, 0]], self.p.intra.u[[0, 0]], self.p.intra.v[[0, 0]]);
        let scores: Vec<f64> = feats.iter().map(|f| (w * f + u * ctx).tanh() * v).collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let z: f64 = ex.iter().sum();
        let c_att: f64 = feats.iter().zip(&ex).map(|(f, e)| f * e / z).sum();
        let e = self.gamma * c_att + c_att;
        let gate = |j: usize| {
            e * self.p.lstm_wx[[0, j]] + (0..hd).map(|i| self.h[i] * self.p.lstm_wh[[i, j]]).sum::<f64>() + self.p.lstm_b[[0, j]]
        };
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for j in 0..hd {
            let i_g = sigmoid(gate(j));
            let f_g = sigmoid(gate(hd + j));
            let o_g = sigmoid(gate(2 * hd + j));
            let cand = gate(3 * hd + j).tanh();
            c[j] = f_g * self.c[j] + i_g * cand;
            h[j] = o_g * c[j].tanh();
        }
        self.h = h;
        self.c = c;
        self.p.step_scale * (0..hd).map(|j| self.h[j] * self.p.out_proj[[j, 0]]).sum::<f64>()
    }
}

#[test]
fn single_particle_single_coordinate_matches_scalar_lstm() {
    let inst = FunctionInstance::new(FamilyKind::Rastrigin, array![[1.3]], Array1::from(vec![0.4]), Array1::from(vec![0.7]), 2.0).unwrap();
    let mut params = MetaParams::init(1, 3, 0.1, 11);
    params.lstm_b.mapv_inplace(|b| b + 0.05);
    params.intra.v[[0, 0]] = 0.8;
    params.ctx_proj.fill(0.6);
    params.out_proj.mapv_inplace(|v| v * 20.0);
    let model = small_model(3);
    let x0 = 1.9;
    let rec = rollout_from(&inst, &params, &model, array![[x0]], 4).unwrap();

    let mut oracle = ScalarOracle {
        p: params.clone(),
        gamma: model.gamma,
        beta: model.features.beta,
        h: vec![0.0; 3],
        c: vec![0.0; 3],
    };
    let (mut f, g) = inst.evaluate(&[x0]).unwrap();
    let mut g = g[0];
    let mut x = x0;
    let mut mom = (1.0 - oracle.beta) * g;
    let (mut best_x, mut best_f) = (x, f);
    for (t, it) in rec.iterations.iter().enumerate() {
        let step = oracle.step([g, mom, x - best_x, 0.0]);
        assert!((it.steps[[0, 0]] - step).abs() < 1e-12, "iteration {t}: {} vs {step}", it.steps[[0, 0]]);
        x += step;
        let (fv, gv) = inst.evaluate(&[x]).unwrap();
        f = fv;
        g = gv[0];
        mom = oracle.beta * mom + (1.0 - oracle.beta) * g;
        if f < best_f {
            best_f = f;
            best_x = x;
        }
    }
    assert!((rec.final_positions[[0, 0]] - x).abs() < 1e-12);
    assert!((rec.final_best() - best_f).abs() < 1e-12);
}

#[test]
fn zero_parameters_never_move() {
    let inst = FunctionInstance::canonical_rastrigin(3).unwrap();
    let space = SearchSpace::default_box(3).unwrap();
    let params = MetaParams::zeros(3, 5);
    let rec = rollout(&inst, &params, &small_model(5), &space, 4, 6, 2).unwrap();
    let x0 = &rec.iterations[0].positions;
    for it in &rec.iterations {
        assert_eq!(&it.positions, x0);
        assert!(it.steps.iter().all(|&s| s == 0.0));
    }
    assert_eq!(&rec.final_positions, x0);
}

#[test]
fn one_iteration_gives_two_sample_sets() {
    let inst = FunctionInstance::canonical_rastrigin(2).unwrap();
    let space = SearchSpace::default_box(2).unwrap();
    let params = MetaParams::init(2, 4, 0.1, 0);
    let rec = rollout(&inst, &params, &small_model(4), &space, 3, 1, 9).unwrap();
    assert_eq!(rec.best_so_far.len(), 6);
    assert_eq!(rec.samples().len(), 6);
    assert!(matches!(
        rollout(&inst, &params, &small_model(4), &space, 3, 0, 9),
        Err(CoreError::InvalidArgument(_))
    ));
    assert!(rollout(&inst, &params, &small_model(4), &space, 0, 3, 9).is_err());
}

#[test]
fn fixed_seed_is_bitwise_reproducible() {
    let space = SearchSpace::default_box(4).unwrap();
    let inst = FunctionInstance::sample(Family::Rastrigin { alpha: 5.0 }, &space, 3);
    let params = MetaParams::init(4, 6, 0.1, 1);
    let a = rollout(&inst, &params, &small_model(6), &space, 5, 30, 77).unwrap();
    let b = rollout(&inst, &params, &small_model(6), &space, 5, 30, 77).unwrap();
    assert_eq!(a, b);
}

#[test]
fn full_pipeline_gradient_matches_finite_differences() {
    let inst = FunctionInstance::canonical_rastrigin(2).unwrap();
    let model = small_model(4);
    let mut params = MetaParams::init(2, 4, 0.1, 5);
    params.intra.v.mapv_inplace(|v| v * 10.0);
    params.out_proj.mapv_inplace(|v| v * 10.0);
    let x0 = array![[1.3, -0.45], [-2.2, 0.8]];
    let step_scale = params.step_scale;
    let report = grad_check(
        |tape: &Tape, vars| -> Result<_, CoreError> {
            let pv = ParamVars::from_vars(vars, step_scale);
            let mut r = Rollout::start(&inst, &model, x0.clone())?;
            Ok(r.window(tape, &pv, 3)?.regret)
        },
        &params.to_vec(),
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn attention_gradients_match_finite_differences() {
    let feats: Vec<Array2<f64>> = (0..4)
        .map(|r| Array2::from_shape_fn((3, 2), |(i, j)| ((r * 7 + i * 3 + j) as f64 * 0.37).sin()))
        .collect();
    let pos = array![[0.1, 0.4], [1.0, -0.3], [-0.6, 0.9]];
    let ctx = array![[0.2, -0.1], [0.5, 0.3], [-0.4, 0.1]];
    let params = vec![
        array![[0.5, -0.3], [0.2, 0.8]],
        array![[0.1, 0.4], [-0.6, 0.2]],
        array![[0.9], [-0.7]],
        ctx.clone(),
        pos.clone(),
    ];
    let weights = Array2::from_shape_fn((3, 2), |(i, j)| 1.0 + (i * 2 + j) as f64 * 0.25);
    let report = grad_check(
        |tape: &Tape, v| -> Result<_, CoreError> {
            let fs: Vec<_> = feats.iter().map(|f| tape.constant(f.clone())).collect();
            let intra = swarmopt::attention::IntraVars { w: v[0], u: v[1], v: v[2] };
            let (c, p) = intra_attend(&fs, v[3], &intra)?;
            let out = inter_attend(c, v[4], 1.0, 1.0)?;
            let w = tape.constant(weights.clone());
            Ok(out.e.mul(w)?.sum().add(p.sq_norm())?)
        },
        &params,
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn lstm_gradients_match_finite_differences() {
    let inst = FunctionInstance::canonical_rastrigin(2).unwrap();
    let model = ModelConfig {
        hidden: 3,
        flags: ArchFlags {
            features: [true; 4],
            intra_attention: false,
            inter_attention: false,
        },
        ..ModelConfig::default()
    };
    let params = MetaParams::init(2, 3, 0.1, 8);
    let x0 = array![[0.3, -1.2], [2.0, 0.5]];
    let report = grad_check(
        |tape: &Tape, v| -> Result<_, CoreError> {
            let pv = ParamVars::from_vars(v, 0.1);
            let sw = SwarmVars::initialize(&inst, tape.constant(x0.clone()), &model.features)?;
            let h = tape.constant(Array2::from_elem((4, 3), 0.2));
            let c = tape.constant(Array2::from_elem((4, 3), -0.1));
            let out = swarmopt::meta::swarm_step(&sw, h, c, &pv, &model)?;
            Ok(out.steps.scale(10.0).sq_norm().add(out.cell.sum())?.add(out.hidden.sum())?)
        },
        &params.to_vec(),
        1e-6,
    )
    .unwrap();
    // intra-attention weights are unused here and have zero gradient
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

fn permute_rows(a: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(a.dim(), |(i, j)| a[[perm[i], j]])
}

fn permute_square(a: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(a.dim(), |(i, j)| a[[perm[i], perm[j]]])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn particle_permutation_permutes_steps(seed in any::<u64>(), shift in 0usize..4) {
        let space = SearchSpace::default_box(3).unwrap();
        let inst = FunctionInstance::sample(Family::Rastrigin { alpha: 2.0 }, &space, seed);
        let params = MetaParams::init(3, 4, 0.1, seed ^ 1);
        let model = small_model(4);
        let x0 = space.sample_uniform(&mut swarmopt::seed::rng(seed), 4);
        let perm: Vec<usize> = (0..4).map(|i| (i + shift) % 4).collect();
        let a = rollout_from(&inst, &params, &model, x0.clone(), 5).unwrap();
        let b = rollout_from(&inst, &params, &model, permute_rows(&x0, &perm), 5).unwrap();
        for (ia, ib) in a.iterations.iter().zip(&b.iterations) {
            let diff = (&permute_rows(&ia.steps, &perm) - &ib.steps).mapv(f64::abs);
            prop_assert!(diff.iter().all(|&d| d < 1e-10), "{diff:?}");
        }
    }

    #[test]
    fn coordinate_permutation_permutes_trajectory(seed in any::<u64>(), shift in 1usize..3, intra in any::<bool>()) {
        let n = 3;
        let space = SearchSpace::default_box(n).unwrap();
        let inst = FunctionInstance::sample(Family::Rastrigin { alpha: 1.0 }, &space, seed);
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let pa = Array2::from_shape_fn((n, n), |(i, j)| inst.a[[i, perm[j]]]);
        let pinst = FunctionInstance::new(
            FamilyKind::Rastrigin,
            pa,
            inst.b.clone(),
            Array1::from_shape_fn(n, |i| inst.c[perm[i]]),
            inst.alpha,
        ).unwrap();
        let model = ModelConfig {
            hidden: 4,
            flags: ArchFlags { features: [true; 4], intra_attention: intra, inter_attention: false },
            ..ModelConfig::default()
        };
        let params = MetaParams::init(n, 4, 0.1, seed);
        // the intra-attention maps act on whole vectors, so they are carried along
        let mut pparams = params.clone();
        pparams.intra = IntraAttentionParams {
            w: permute_square(&params.intra.w, &perm),
            u: permute_square(&params.intra.u, &perm),
            v: permute_rows(&params.intra.v, &perm),
        };
        let x0 = space.sample_uniform(&mut swarmopt::seed::rng(seed), 1);
        let px0 = Array2::from_shape_fn((1, n), |(_, j)| x0[[0, perm[j]]]);
        let a = rollout_from(&inst, &params, &model, x0, 6).unwrap();
        let b = rollout_from(&pinst, &pparams, &model, px0, 6).unwrap();
        for (ia, ib) in a.iterations.iter().zip(&b.iterations) {
            for j in 0..n {
                prop_assert!((ia.steps[[0, perm[j]]] - ib.steps[[0, j]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn best_so_far_is_monotone(seed in any::<u64>(), k in 1usize..6, t in 1usize..25) {
        let space = SearchSpace::default_box(2).unwrap();
        let inst = FunctionInstance::sample(Family::Quadratic, &space, seed);
        let params = MetaParams::init(2, 4, 0.5, seed);
        let rec = rollout(&inst, &params, &small_model(4), &space, k, t, seed).unwrap();
        prop_assert_eq!(rec.best_so_far.len(), k * (t + 1));
        prop_assert!(rec.best_so_far.windows(2).all(|w| w[1] <= w[0]));
        let min = rec.samples().iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(rec.final_best(), min);
    }

    #[test]
    fn attention_logs_are_normalized(seed in any::<u64>(), k in 1usize..7) {
        let space = SearchSpace::default_box(2).unwrap();
        let inst = FunctionInstance::sample(Family::Rastrigin { alpha: 3.0 }, &space, seed);
        let params = MetaParams::init(2, 4, 0.1, seed);
        let rec = rollout(&inst, &params, &small_model(4), &space, k, 4, seed).unwrap();
        for it in &rec.iterations {
            for row in it.feature_weights.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
            let share = it.trace_share.unwrap();
            prop_assert!(share > 0.0 && share <= 1.0);
            let cross = it.cross_share.unwrap();
            prop_assert!((share + cross - 1.0).abs() < 1e-12);
            if k > 1 {
                prop_assert!(cross > 0.0);
            } else {
                prop_assert_eq!(cross, 0.0);
            }
        }
    }
}

#[test]
fn disabled_features_get_zero_weight() {
    let inst = FunctionInstance::canonical_rastrigin(2).unwrap();
    let space = SearchSpace::default_box(2).unwrap();
    let model = ModelConfig {
        hidden: 4,
        flags: ArchFlags {
            features: [true, true, false, false],
            intra_attention: true,
            inter_attention: false,
        },
        ..ModelConfig::default()
    };
    let rec = rollout(&inst, &MetaParams::init(2, 4, 0.1, 3), &model, &space, 3, 3, 1).unwrap();
    for it in &rec.iterations {
        assert!(it.feature_weights.column(2).iter().all(|&w| w == 0.0));
        assert!(it.feature_weights.column(3).iter().all(|&w| w == 0.0));
        assert!(it.q.is_none() && it.trace_share.is_none() && it.cross_share.is_none());
    }
}

#[test]
fn mismatched_hidden_size_rejected() {
    let inst = FunctionInstance::canonical_rastrigin(2).unwrap();
    let space = SearchSpace::default_box(2).unwrap();
    let err = rollout(&inst, &MetaParams::init(2, 4, 0.1, 3), &small_model(5), &space, 2, 2, 0).unwrap_err();
    assert!(matches!(err, CoreError::InvalidArgument(_)));
}
