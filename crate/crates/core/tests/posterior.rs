use autodiff::{grad_check, Tape};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use swarmopt::loss::{meta_loss, Episode, LossConfig};
use swarmopt::meta::{MetaParams, ModelConfig, ParamVars};
use swarmopt::objectives::{FunctionInstance, SearchSpace};
use swarmopt::posterior::{
    anneal_rho, posterior_entropy, EntropyConfig, KrigingConfig, KrigingModel, PosteriorModel,
};
use swarmopt::seed;
use swarmopt::CoreError;

fn random_data(seed: u64, m: usize) -> (Array2<f64>, Vec<f64>) {
    let space = SearchSpace::default_box(2).unwrap();
    let mut rng = seed::rng(seed);
    let x = space.sample_uniform(&mut rng, m);
    let inst = FunctionInstance::canonical_rastrigin(2).unwrap();
    let y = x
        .rows()
        .into_iter()
        .map(|r| inst.value(r.as_slice().unwrap()).unwrap() * rng.random_range(0.5..1.5))
        .collect();
    (x, y)
}

/// Dense solve of (K + eps² I) w = y, then κ(q)ᵀ w.
fn dense_oracle(x: &Array2<f64>, y: &[f64], cfg: KrigingConfig, queries: &Array2<f64>) -> Vec<f64> {
    let m = x.nrows();
    let kern = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
        (-d2 / (2.0 * cfg.length_scale)).exp()
    };
    let row = |i: usize| x.row(i).to_vec();
    let k = DMatrix::from_fn(m, m, |i, j| kern(&row(i), &row(j)) + if i == j { cfg.eps * cfg.eps } else { 0.0 });
    let w = k.lu().solve(&DVector::from_column_slice(y)).unwrap();
    queries
        .rows()
        .into_iter()
        .map(|q| {
            let q = q.to_vec();
            (0..m).map(|i| kern(&q, &row(i)) * w[i]).sum()
        })
        .collect()
}

#[test]
fn zero_noise_interpolates_twenty_points() {
    let (x, y) = random_data(3, 20);
    let cfg = KrigingConfig { length_scale: 1.0, eps: 0.0 };
    let model = KrigingModel::fit(x.clone(), &y, cfg).unwrap();
    for (i, yi) in y.iter().enumerate() {
        let p = model.predict(x.row(i).as_slice().unwrap()).unwrap();
        assert!((p - yi).abs() < 1e-8, "point {i}: {p} vs {yi}");
    }
}

#[test]
fn prediction_matches_dense_solve() {
    let (x, y) = random_data(8, 20);
    let space = SearchSpace::default_box(2).unwrap();
    let queries = space.sample_uniform(&mut seed::rng(99), 50);
    for cfg in [KrigingConfig::default(), KrigingConfig { length_scale: 1.0, eps: 0.0 }] {
        let model = KrigingModel::fit(x.clone(), &y, cfg).unwrap();
        let ours = model.predict_rows(&queries).unwrap();
        let oracle = dense_oracle(&x, &y, cfg, &queries);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // Entrywise shrinkage can fail for clustered points; the residual as a
    // whole is always shorter than the data.
    #[test]
    fn noisy_fit_shrinks_toward_zero(seed in any::<u64>(), m in 1usize..25, eps in 0.1f64..5.0) {
        let (x, y) = random_data(seed, m);
        let model = KrigingModel::fit(x.clone(), &y, KrigingConfig { length_scale: 1.0, eps }).unwrap();
        let mut r2 = 0.0;
        let mut y2 = 0.0;
        for (i, yi) in y.iter().enumerate() {
            let p = model.predict(x.row(i).as_slice().unwrap()).unwrap();
            r2 += (p - yi).powi(2);
            y2 += yi * yi;
        }
        prop_assert!(r2 <= y2 * (1.0 + 1e-12));
    }

    #[test]
    fn single_noisy_point_lies_between_prior_and_datum(y in -100.0f64..100.0, eps in 0.1f64..5.0) {
        let model = KrigingModel::fit(Array2::zeros((1, 2)), &[y], KrigingConfig { length_scale: 1.0, eps }).unwrap();
        let p = model.predict(&[0.0, 0.0]).unwrap();
        prop_assert!(p.abs() <= y.abs() && p * y >= 0.0);
    }

    #[test]
    fn rho_matches_scalar_formula(h0 in 0.1f64..50.0, count in 0usize..5000, n in 1usize..20, rho0 in 0.1f64..3.0) {
        let expect = if count == 0 { rho0 } else { rho0 * ((count as f64).powf(1.0 / n as f64) / h0).exp() };
        prop_assume!(expect.is_finite() && (rho0 * ((count as f64 + 1.0).powf(1.0 / n as f64) / h0).exp()).is_finite());
        let rho = anneal_rho(rho0, h0, count, n).unwrap();
        prop_assert!((rho - expect).abs() <= 1e-12 * expect);
        prop_assert!(anneal_rho(rho0, h0, count + 1, n).unwrap() >= rho);
        prop_assert!(rho >= rho0);
    }
}

#[test]
fn overflowing_rho_rejected() {
    assert!(matches!(anneal_rho(1.0, 0.1, 1000, 1), Err(CoreError::RhoTooLarge { .. })));
}

#[test]
fn annealing_hand_evaluation() {
    let rho = anneal_rho(1.0, 4.6527, 100, 2).unwrap();
    assert!((rho - 8.578).abs() < 1e-3);
    assert!((rho - (10.0f64 / 4.6527).exp()).abs() < 1e-9);
}

fn reference_model() -> KrigingModel {
    let (x, y) = random_data(21, 20);
    KrigingModel::fit(x, &y, KrigingConfig::default()).unwrap()
}

/// Midpoint-rule differential entropy on a g×g grid over the box.
fn grid_entropy(model: &KrigingModel, rho: f64, space: &SearchSpace, g: usize) -> f64 {
    let (lo, hi) = (space.lo(), space.hi());
    let dx = (hi[0] - lo[0]) / g as f64;
    let dy = (hi[1] - lo[1]) / g as f64;
    let mut s = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            let q = [lo[0] + (i as f64 + 0.5) * dx, lo[1] + (j as f64 + 0.5) * dy];
            s.push(-rho * model.predict(&q).unwrap());
        }
    }
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = s.iter().map(|v| (v - m).exp()).sum::<f64>() * dx * dy;
    let log_z = m + z.ln();
    let mean: f64 = s.iter().map(|v| (v - m).exp() * v).sum::<f64>() * dx * dy / z;
    log_z - mean
}

#[test]
fn entropy_at_zero_rho_is_log_volume() {
    let space = SearchSpace::default_box(2).unwrap();
    let h = posterior_entropy(&reference_model(), 0.0, &space, 10_000, 1).unwrap();
    assert!((h - 2.0 * 10.24f64.ln()).abs() < 1e-6);
    assert!((h - 4.6527).abs() < 1e-4);
}

#[test]
fn monte_carlo_entropy_matches_grid_quadrature() {
    let space = SearchSpace::default_box(2).unwrap();
    let model = reference_model();
    for rho in [0.1, 1.0] {
        let post = PosteriorModel { kriging: model.clone(), rho };
        let mc = post.entropy(&space, 10_000, 4).unwrap();
        let grid = grid_entropy(&model, rho, &space, 200);
        assert!((mc - grid).abs() < 0.05, "rho {rho}: mc {mc} grid {grid}");
    }
}

#[test]
fn entropy_decreases_with_rho() {
    let space = SearchSpace::default_box(2).unwrap();
    let model = reference_model();
    let hs: Vec<f64> = [0.1, 1.0, 10.0]
        .iter()
        .map(|&r| posterior_entropy(&model, r, &space, 10_000, 5).unwrap())
        .collect();
    assert!(hs[0] > hs[1] && hs[1] > hs[2], "{hs:?}");
}

#[test]
fn doubling_samples_barely_moves_estimate() {
    let space = SearchSpace::default_box(2).unwrap();
    let model = reference_model();
    let a = posterior_entropy(&model, 1.0, &space, 10_000, 6).unwrap();
    let b = posterior_entropy(&model, 1.0, &space, 20_000, 6).unwrap();
    assert!((a - b).abs() < 0.02, "{a} vs {b}");
}

fn episodes() -> Vec<Episode> {
    let space = SearchSpace::default_box(2).unwrap();
    (0..2)
        .map(|q| Episode {
            inst: FunctionInstance::sample(swarmopt::Family::Rastrigin { alpha: 1.0 }, &space, 40 + q),
            x0: space.sample_uniform(&mut seed::rng(50 + q), 2),
            seed: 60 + q,
        })
        .collect()
}

fn schedule() -> swarmopt::posterior::Annealing {
    swarmopt::posterior::Annealing { rho0: 1.0, h0: 4.0 }
}

#[test]
fn loss_decomposes_into_regret_and_entropy() {
    let space = SearchSpace::default_box(2).unwrap();
    let model = ModelConfig { hidden: 4, ..ModelConfig::default() };
    let params = MetaParams::init(2, 4, 0.1, 3);
    let eps = episodes();
    let ann = schedule();
    let value = |lambda: f64| {
        let tape = Tape::new();
        let pv = params.lift(&tape, false);
        let cfg = LossConfig { lambda, l2: 1e-3, ..LossConfig::default() };
        meta_loss(&tape, &pv, &eps, &model, 3, Some(&ann), &space, &cfg).unwrap().item()
    };
    let base = value(0.0);
    let one = value(1.0);
    let mean_h = one - base;
    let lam = 2.5;
    assert!((value(lam) - base - lam * mean_h).abs() < 1e-12 * value(lam).abs().max(1.0));
    assert!(mean_h.is_finite() && mean_h != 0.0);
}

#[test]
fn zero_parameters_add_no_penalty() {
    let space = SearchSpace::default_box(2).unwrap();
    let model = ModelConfig { hidden: 4, ..ModelConfig::default() };
    let params = MetaParams::zeros(2, 4);
    let eps = episodes();
    let loss = |l2: f64| {
        let tape = Tape::new();
        let pv = params.lift(&tape, false);
        let cfg = LossConfig { lambda: 0.0, l2, ..LossConfig::default() };
        meta_loss(&tape, &pv, &eps, &model, 2, None, &space, &cfg).unwrap().item()
    };
    assert_eq!(loss(0.0), loss(5.0));
}

#[test]
fn full_meta_loss_gradient_matches_finite_differences() {
    let space = SearchSpace::default_box(2).unwrap();
    let model = ModelConfig { hidden: 4, ..ModelConfig::default() };
    let mut params = MetaParams::init(2, 4, 0.1, 12);
    params.out_proj.mapv_inplace(|v| v * 10.0);
    let eps = &episodes()[..1];
    let ann = schedule();
    let cfg = LossConfig {
        lambda: 1.0,
        entropy: EntropyConfig { mc_samples: 500, ..EntropyConfig::default() },
        ..LossConfig::default()
    };
    let report = grad_check(
        |tape: &Tape, v| -> Result<_, CoreError> {
            let pv = ParamVars::from_vars(v, 0.1);
            meta_loss(tape, &pv, eps, &model, 3, Some(&ann), &space, &cfg)
        },
        &params.to_vec(),
        1e-4,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn empty_trajectory_list_rejected() {
    let space = SearchSpace::default_box(2).unwrap();
    let tape = Tape::new();
    let pv = MetaParams::zeros(2, 4).lift(&tape, true);
    let model = ModelConfig { hidden: 4, ..ModelConfig::default() };
    let err = meta_loss(&tape, &pv, &[], &model, 2, None, &space, &LossConfig::default()).unwrap_err();
    assert!(matches!(err, CoreError::InvalidArgument(_)));
}
