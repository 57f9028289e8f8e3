use autodiff::Tape;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use swarmopt::attention::inter_attend;
use swarmopt::seed::rng;
use swarmopt::{FeatureConfig, Family, FunctionInstance, SearchSpace, SwarmState};

#[test]
fn sampled_entries_are_standard_normal() {
    let space = SearchSpace::default_box(4).unwrap();
    let mut all = Vec::new();
    for s in 0..500 {
        let inst = FunctionInstance::sample(Family::Rastrigin { alpha: 1.0 }, &space, s);
        all.extend(inst.a.iter().chain(inst.b.iter()).chain(inst.c.iter()).copied());
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var - 1.0).abs() < 0.03, "var {var}");
}

#[test]
fn canonical_rastrigin_positive_away_from_origin() {
    let inst = FunctionInstance::canonical_rastrigin(2).unwrap();
    assert!(inst.value(&[0.0, 0.0]).unwrap().abs() < 1e-12);
    let steps = 101;
    for i in 0..steps {
        for j in 0..steps {
            let x = -5.12 + 10.24 * i as f64 / (steps - 1) as f64;
            let y = -5.12 + 10.24 * j as f64 / (steps - 1) as f64;
            if x.abs() + y.abs() > 1e-9 {
                assert!(inst.value(&[x, y]).unwrap() > 0.0, "({x}, {y})");
            }
        }
    }
}

#[test]
fn record_round_trip_is_exact() {
    let space = SearchSpace::default_box(5).unwrap();
    for family in [Family::Quadratic, Family::Rastrigin { alpha: 10.0 }] {
        let inst = FunctionInstance::sample(family, &space, 42);
        let back = FunctionInstance::from_record(&inst.to_record()).unwrap();
        assert_eq!(inst, back);
    }
    assert!(FunctionInstance::from_record("rastrigin,2,1.0,1,2").is_err());
    assert!(FunctionInstance::from_record("cubic,1,1.0,1,2,3").is_err());
}

#[test]
fn attention_matrices_are_column_stochastic() {
    let mut r = rng(9);
    for k in [1usize, 2, 4, 10] {
        for _ in 0..100 {
            let n = r.random_range(1..6);
            let h = r.random_range(1..5);
            let scale = 10f64.powf(r.random_range(-1.0..1.5));
            let x = Array2::from_shape_simple_fn((k, n), || scale * r.sample::<f64, _>(StandardNormal));
            let c = Array2::from_shape_simple_fn((k, h), || scale * r.sample::<f64, _>(StandardNormal));
            let tape = Tape::new();
            let out = inter_attend(tape.constant(c), tape.constant(x), 1.0, 1.0).unwrap();
            for mat in [out.q.value(), out.m.value()] {
                assert!(mat.iter().all(|v| v.is_finite() && *v >= 0.0));
                for col in mat.columns() {
                    assert!((col.sum() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn attraction_weights_are_row_stochastic() {
    let space = SearchSpace::default_box(3).unwrap();
    let inst = FunctionInstance::sample(Family::Rastrigin { alpha: 1.0 }, &space, 2);
    let cfg = FeatureConfig::default();
    for k in [1usize, 2, 4, 10] {
        let x0 = space.sample_uniform(&mut rng(k as u64), k);
        let s = SwarmState::initialize(&inst, x0, &cfg).unwrap();
        let w = s.attraction_weights(&cfg).unwrap();
        for row in w.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), x in prop::collection::vec(-5.0f64..5.0, 3)) {
        let space = SearchSpace::default_box(3).unwrap();
        let inst = FunctionInstance::sample(Family::Rastrigin { alpha: 2.0 }, &space, seed);
        let (_, g) = inst.evaluate(&x).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut p = x.clone();
            let mut m = x.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (inst.value(&p).unwrap() - inst.value(&m).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + g[i].abs()), "{} vs {}", fd, g[i]);
        }
    }

    #[test]
    fn tape_evaluation_matches_plain(seed in any::<u64>(), k in 1usize..5) {
        let space = SearchSpace::default_box(2).unwrap();
        let inst = FunctionInstance::sample(Family::Rastrigin { alpha: 1.0 }, &space, seed);
        let x = space.sample_uniform(&mut rng(seed ^ 1), k);
        let tape = Tape::new();
        let (v, g) = inst.evaluate_on_tape(tape.constant(x.clone())).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let (pv, pg) = inst.evaluate(row.as_slice().unwrap()).unwrap();
            prop_assert!((v.value()[[i, 0]] - pv).abs() <= 1e-10 * (1.0 + pv.abs()));
            for j in 0..2 {
                prop_assert!((g.value()[[i, j]] - pg[j]).abs() <= 1e-10 * (1.0 + pg[j].abs()));
            }
        }
    }
}
