//! Repeated evaluation of optimizers on a function battery.

use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;
use std::sync::Arc;

use swarmopt::baselines::{run_ablation, run_adam, run_gd, run_pso, run_sgd, Level, PsoConfig};
use swarmopt::meta::{budget_curve, initial_positions};
use swarmopt::{Checkpoint, CoreError, FunctionInstance, SearchSpace};

use crate::plot::{line_chart, Series};
use crate::stats::mean_std;
use crate::{io_err, start_seed, CliError};

/// Best-so-far values are reported at every multiple of this many evaluations.
pub const REPORT_EVERY: usize = 50;

#[derive(Debug, Clone)]
pub enum Method {
    Gd { lr: f64 },
    Sgd { lr: f64 },
    Adam { lr: f64 },
    Pso(PsoConfig),
    /// A rung of the ablation ladder.
    Level { level: Level, ck: Arc<Checkpoint> },
    /// A checkpoint run with whatever architecture it was trained with.
    Learned(Arc<Checkpoint>),
}

fn start_point(space: &SearchSpace, seed: u64) -> Vec<f64> {
    initial_positions(space, 1, seed).row(0).to_vec()
}

impl Method {
    /// Number of particles (or restarts) the method uses for swarm size `k`.
    pub fn particles(&self, k: usize) -> usize {
        match self {
            Method::Gd { .. } | Method::Sgd { .. } | Method::Adam { .. } => 1,
            Method::Level { level: Level::B0, .. } => 1,
            _ => k,
        }
    }

    pub fn run(&self, inst: &FunctionInstance, space: &SearchSpace, k: usize, budget: usize, seed: u64) -> Result<Vec<f64>, CoreError> {
        match self {
            Method::Gd { lr } => Ok(run_gd(inst, &start_point(space, seed), *lr, budget)?.curve),
            Method::Sgd { lr } => Ok(run_sgd(inst, &start_point(space, seed), *lr, budget)?.curve),
            Method::Adam { lr } => Ok(run_adam(inst, &start_point(space, seed), *lr, budget)?.curve),
            Method::Pso(cfg) => run_pso(inst, space, k, budget, cfg, seed),
            Method::Level { level, ck } => run_ablation(*level, ck, inst, space, k, budget, seed),
            Method::Learned(ck) => budget_curve(inst, &ck.params, &ck.model, initial_positions(space, k, seed), budget),
        }
    }
}

/// What every method is evaluated on.
#[derive(Debug, Clone)]
pub struct Setup {
    pub space: SearchSpace,
    pub functions: Vec<FunctionInstance>,
    pub k: usize,
    pub budget: usize,
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub name: String,
    pub k: usize,
    /// Per repeat, battery-mean best-so-far after every `REPORT_EVERY` evaluations.
    pub marks: Vec<Vec<f64>>,
    /// Per repeat, battery-mean best value at the full budget.
    pub finals: Vec<f64>,
}

impl MethodResult {
    pub fn final_mean_std(&self) -> (f64, f64) {
        mean_std(&self.finals)
    }
}

/// Runs `method` from `repeats` start sets on every test function. Runs fan
/// out over the thread pool; averages are taken in index order.
pub fn evaluate(setup: &Setup, name: &str, method: &Method) -> Result<MethodResult, CliError> {
    let m = setup.functions.len();
    let budget = setup.budget;
    let runs = (0..setup.repeats * m)
        .into_par_iter()
        .map(|idx| {
            let (r, j) = (idx / m, idx % m);
            let curve = method.run(&setup.functions[j], &setup.space, setup.k, budget, start_seed(setup.seed, r, j))?;
            let marks: Vec<f64> = (1..=budget / REPORT_EVERY).map(|i| curve[i * REPORT_EVERY - 1]).collect();
            Ok((marks, curve[budget - 1]))
        })
        .collect::<Result<Vec<_>, CoreError>>()?;
    let mut marks = Vec::with_capacity(setup.repeats);
    let mut finals = Vec::with_capacity(setup.repeats);
    for chunk in runs.chunks(m) {
        let mut acc = vec![0.0; budget / REPORT_EVERY];
        let mut fin = 0.0;
        for (mk, f) in chunk {
            acc.iter_mut().zip(mk).for_each(|(a, v)| *a += v);
            fin += f;
        }
        marks.push(acc.into_iter().map(|v| v / m as f64).collect());
        finals.push(fin / m as f64);
    }
    Ok(MethodResult {
        name: name.to_string(),
        k: method.particles(setup.k),
        marks,
        finals,
    })
}

#[derive(Debug, Serialize)]
struct ResultRow<'a> {
    method: &'a str,
    evals: usize,
    mean_best_f: f64,
    std_best_f: f64,
    n: usize,
    k: usize,
    seed_group: u64,
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    method: &'a str,
    mean_final_f: f64,
    std_final_f: f64,
    repeats: usize,
    functions: usize,
    budget: usize,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

/// Results CSV, one row per method and reporting point.
pub fn write_results(path: &Path, setup: &Setup, results: &[MethodResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for res in results {
        for i in 0..setup.budget / REPORT_EVERY {
            let column: Vec<f64> = res.marks.iter().map(|m| m[i]).collect();
            let (mean, std) = mean_std(&column);
            w.serialize(ResultRow {
                method: &res.name,
                evals: (i + 1) * REPORT_EVERY,
                mean_best_f: mean,
                std_best_f: std,
                n: setup.space.dim(),
                k: res.k,
                seed_group: setup.seed,
            })
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Final-budget mean and spread per method.
pub fn write_summary(path: &Path, setup: &Setup, results: &[MethodResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for res in results {
        let (mean, std) = res.final_mean_std();
        w.serialize(SummaryRow {
            method: &res.name,
            mean_final_f: mean,
            std_final_f: std,
            repeats: setup.repeats,
            functions: setup.functions.len(),
            budget: setup.budget,
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_curves_svg(path: &Path, title: &str, results: &[MethodResult]) -> Result<(), CliError> {
    let series: Vec<Series> = results
        .iter()
        .map(|res| {
            let points = (0..res.marks.first().map_or(0, Vec::len))
                .map(|i| {
                    let column: Vec<f64> = res.marks.iter().map(|m| m[i]).collect();
                    (((i + 1) * REPORT_EVERY) as f64, mean_std(&column).0)
                })
                .collect();
            Series::new(res.name.clone(), points)
        })
        .collect();
    let svg = line_chart(title, "function evaluations", "mean best f", &series, true);
    std::fs::write(path, svg).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(budget: usize) -> Setup {
        let space = SearchSpace::default_box(2).unwrap();
        Setup {
            functions: vec![FunctionInstance::canonical_rastrigin(2).unwrap(); 3],
            space,
            k: 4,
            budget,
            repeats: 5,
            seed: 1,
        }
    }

    #[test]
    fn marks_follow_reporting_grid() {
        let s = setup(230);
        let r = evaluate(&s, "pso", &Method::Pso(PsoConfig::default())).unwrap();
        assert_eq!(r.marks.len(), 5);
        assert!(r.marks.iter().all(|m| m.len() == 4));
        assert!(r.marks.iter().zip(&r.finals).all(|(m, f)| m[3] >= *f));
    }

    #[test]
    fn point_methods_use_one_particle() {
        let s = setup(100);
        let r = evaluate(&s, "gd", &Method::Gd { lr: 1e-3 }).unwrap();
        assert_eq!(r.k, 1);
        let sgd = evaluate(&s, "sgd", &Method::Sgd { lr: 1e-3 }).unwrap();
        assert_eq!(r.finals, sgd.finals);
    }
}
