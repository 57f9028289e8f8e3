//! The five subcommands. Each writes `resolved-config.toml` plus its own
//! artifacts into the output directory and returns what it wrote in memory.

use ndarray::Axis;
use serde::{Deserialize, Serialize};
use std::fs::OpenOptions;
use std::path::Path;
use std::sync::Arc;

use swarmopt::baselines::{gd_samples, pso_samples, Level};
use swarmopt::meta::{initial_positions, rollout};
use swarmopt::{train as run_training, Checkpoint, Feature};

use crate::config::ExperimentConfig;
use crate::eval::{evaluate as eval_method, write_curves_svg, write_results, write_summary, Method, MethodResult, Setup};
use crate::plot::{line_chart, path_chart, Series};
use crate::stats::{mann_whitney, RankTest};
use crate::{io_err, start_seed, CliError};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

fn prepare(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("resolved-config.toml");
    std::fs::write(&path, cfg.to_toml()?).map_err(io_err(&path))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

/// Loads a checkpoint and checks it fits an `n`-dimensional problem.
pub fn load_checkpoint(path: &Path, n: usize) -> Result<Arc<Checkpoint>, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("missing checkpoint {}", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    if ck.params.dim() != n {
        return Err(CliError::Config(format!(
            "checkpoint {} was trained for n = {}, config has n = {n}",
            path.display(),
            ck.params.dim()
        )));
    }
    Ok(Arc::new(ck))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub mean_regret: f64,
    pub mean_entropy: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: u128,
}

pub fn read_train_log(path: &Path) -> Result<Vec<LogRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

/// Trains (or resumes from `out/checkpoint.txt`), saving the checkpoint after
/// every epoch and appending to the training log.
pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<Checkpoint, CliError> {
    let tc = cfg.train_config()?;
    prepare(cfg, out)?;
    let ck_path = out.join(CHECKPOINT_FILE);
    let log_path = out.join(TRAIN_LOG_FILE);
    let resume = if ck_path.exists() { Some(Checkpoint::load(&ck_path)?) } else { None };
    let append = resume.is_some() && log_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    let mut log = csv::WriterBuilder::new().has_headers(!append).from_writer(file);
    let tmp = out.join(format!("{CHECKPOINT_FILE}.tmp"));
    let mut failure = None;
    let result = run_training(&tc, resume, |rec, ck| {
        let row = LogRow {
            epoch: rec.epoch,
            mean_regret: rec.mean_regret,
            mean_entropy: rec.mean_entropy,
            loss: rec.loss,
            grad_norm: rec.grad_norm,
            wall_ms: if cfg.log_wall_time { rec.wall_ms } else { 0 },
        };
        let step = log
            .serialize(row)
            .map_err(csv_err(&log_path))
            .and_then(|_| log.flush().map_err(io_err(&log_path)))
            .and_then(|_| ck.save(&tmp).map_err(CliError::from))
            .and_then(|_| std::fs::rename(&tmp, &ck_path).map_err(io_err(&ck_path)));
        step.map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            swarmopt::CoreError::InvalidArgument(msg)
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let ck = result?;
    if !ck_path.exists() {
        ck.save(&ck_path)?;
    }
    drop(log);
    let rows = read_train_log(&log_path)?;
    let series = [
        Series::new("regret", rows.iter().map(|r| (r.epoch as f64, r.mean_regret)).collect()),
        Series::new("loss", rows.iter().map(|r| (r.epoch as f64, r.loss)).collect()),
    ];
    let svg_path = out.join("train_log.svg");
    std::fs::write(&svg_path, line_chart("training", "epoch", "value", &series, true)).map_err(io_err(&svg_path))?;
    Ok(ck)
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup, CliError> {
    Ok(Setup {
        space: cfg.space()?,
        functions: cfg.test_functions()?,
        k: cfg.k(),
        budget: cfg.budget,
        repeats: cfg.repeats,
        seed: cfg.seed,
    })
}

/// Resolves a method name from the config into a runnable method.
pub fn method_for(cfg: &ExperimentConfig, name: &str) -> Result<Method, CliError> {
    Ok(match name {
        "gd" => Method::Gd { lr: cfg.gd_lr },
        "sgd" => Method::Sgd { lr: cfg.gd_lr },
        "adam" => Method::Adam { lr: cfg.adam_lr },
        "pso" => {
            if cfg.k() < 2 {
                return Err(CliError::Config("pso needs k >= 2".into()));
            }
            Method::Pso(cfg.pso())
        }
        other => {
            let level: Level = other
                .parse()
                .map_err(|_| CliError::Config(format!("unknown method `{other}`")))?;
            let key = level.to_string().to_ascii_lowercase();
            let path = cfg
                .checkpoints
                .get(&key)
                .ok_or_else(|| CliError::Config(format!("missing checkpoint for method `{other}`")))?;
            let ck = load_checkpoint(path, cfg.n)?;
            level.check(&ck)?;
            Method::Level { level, ck }
        }
    })
}

fn run_all(cfg: &ExperimentConfig, out: &Path, title: &str, methods: &[(String, Method)]) -> Result<(Setup, Vec<MethodResult>), CliError> {
    let setup = setup(cfg)?;
    let results = methods
        .iter()
        .map(|(name, m)| eval_method(&setup, name, m))
        .collect::<Result<Vec<_>, _>>()?;
    write_results(&out.join("results.csv"), &setup, &results)?;
    write_summary(&out.join("summary.csv"), &setup, &results)?;
    write_curves_svg(&out.join("curves.svg"), title, &results)?;
    Ok((setup, results))
}

/// Compares the configured `methods` on the configured test functions.
pub fn evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<MethodResult>, CliError> {
    if cfg.methods.is_empty() {
        return Err(CliError::Config("`methods` is empty".into()));
    }
    let methods = cfg
        .methods
        .iter()
        .map(|name| Ok((name.clone(), method_for(cfg, name)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    prepare(cfg, out)?;
    Ok(run_all(cfg, out, "evaluation", &methods)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub results: Vec<MethodResult>,
    /// Rank tests between neighbouring rungs, on final values per repeat.
    pub tests: Vec<(String, String, RankTest)>,
}

#[derive(Debug, Serialize)]
struct RankRow<'a> {
    first: &'a str,
    second: &'a str,
    u: f64,
    p_value: f64,
}

/// Runs every rung of the ladder from its own checkpoint.
pub fn ablate(cfg: &ExperimentConfig, out: &Path) -> Result<AblationReport, CliError> {
    let methods = Level::ALL
        .iter()
        .map(|l| {
            let name = l.to_string().to_ascii_lowercase();
            Ok((name.clone(), method_for(cfg, &name)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    prepare(cfg, out)?;
    let (_, results) = run_all(cfg, out, "ablation", &methods)?;
    let tests: Vec<_> = results
        .windows(2)
        .map(|w| (w[1].name.clone(), w[0].name.clone(), mann_whitney(&w[1].finals, &w[0].finals)))
        .collect();
    let path = out.join("rank_tests.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for (a, b, t) in &tests {
        w.serialize(RankRow {
            first: a,
            second: b,
            u: t.u,
            p_value: t.p,
        })
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(AblationReport { results, tests })
}

/// Runs each `transfer` checkpoint on the canonical Rastrigin function.
pub fn transfer(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<MethodResult>, CliError> {
    if cfg.transfer.is_empty() {
        return Err(CliError::Config("`transfer` lists no checkpoints".into()));
    }
    let methods = cfg
        .transfer
        .iter()
        .map(|t| Ok((format!("alpha={}", t.alpha), Method::Learned(load_checkpoint(&t.checkpoint, cfg.n)?))))
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut canonical = cfg.clone();
    canonical.protocol = crate::config::Protocol::Canonical;
    prepare(&canonical, out)?;
    Ok(run_all(&canonical, out, "transfer to Rastrigin", &methods)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpretReport {
    /// Per iteration: feature weights summed over particles, normalized to 1.
    pub feature_weights: Vec<[f64; 4]>,
    /// Per iteration share of self-impact; empty without inter-particle attention.
    pub trace_share: Vec<f64>,
    /// Per iteration share of cross-particle impact, same length as `trace_share`.
    pub cross_share: Vec<f64>,
    /// `(method, samples)` in visiting order; empty when paths are off.
    pub paths: Vec<(String, Vec<(Vec<f64>, f64)>)>,
}

#[derive(Debug, Serialize)]
struct PathRow<'a> {
    method: &'a str,
    index: usize,
    x1: f64,
    x2: f64,
    f: f64,
}

/// Attention diagnostics of one rollout and, for n = 2, sample paths of the
/// learned optimizer, PSO and GD.
pub fn interpret(cfg: &ExperimentConfig, out: &Path) -> Result<InterpretReport, CliError> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("`checkpoint` is required".into()))?;
    if cfg.paths && cfg.n != 2 {
        return Err(CliError::Config(format!("path plots need n = 2, config has n = {}", cfg.n)));
    }
    let ck = load_checkpoint(path, cfg.n)?;
    let space = cfg.space()?;
    let inst = cfg.test_functions()?.swap_remove(0);
    let k = cfg.k();
    let seed = start_seed(cfg.seed, 0, 0);
    prepare(cfg, out)?;

    let rec = rollout(&inst, &ck.params, &ck.model, &space, k, cfg.interpret_iterations, seed)?;
    let feature_weights: Vec<[f64; 4]> = rec
        .iterations
        .iter()
        .map(|it| {
            let sums = it.feature_weights.sum_axis(Axis(0));
            let total = sums.sum();
            std::array::from_fn(|f| sums[f] / total)
        })
        .collect();
    let trace_share: Vec<f64> = rec.iterations.iter().map_while(|it| it.trace_share).collect();
    let cross_share: Vec<f64> = rec.iterations.iter().map_while(|it| it.cross_share).collect();
    let (trace_share, cross_share) = if trace_share.len() == rec.iterations.len() {
        (trace_share, cross_share)
    } else {
        (Vec::new(), Vec::new())
    };

    let fw_path = out.join("feature_weights.csv");
    let mut w = csv::Writer::from_path(&fw_path).map_err(csv_err(&fw_path))?;
    let mut header = vec!["iteration"];
    header.extend(Feature::ALL.iter().map(|f| f.name()));
    w.write_record(&header).map_err(csv_err(&fw_path))?;
    for (t, row) in feature_weights.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err(&fw_path))?;
    }
    w.flush().map_err(io_err(&fw_path))?;
    let series: Vec<Series> = Feature::ALL
        .iter()
        .enumerate()
        .map(|(f, feat)| {
            Series::new(
                feat.name(),
                feature_weights.iter().enumerate().map(|(t, row)| ((t + 1) as f64, row[f])).collect(),
            )
        })
        .collect();
    let svg = out.join("feature_weights.svg");
    std::fs::write(&svg, line_chart("feature attention", "iteration", "share", &series, false)).map_err(io_err(&svg))?;

    if !trace_share.is_empty() {
        let ts_path = out.join("trace_share.csv");
        let mut w = csv::Writer::from_path(&ts_path).map_err(csv_err(&ts_path))?;
        w.write_record(["iteration", "trace_share", "cross_share"]).map_err(csv_err(&ts_path))?;
        for (t, (v, c)) in trace_share.iter().zip(&cross_share).enumerate() {
            w.write_record([(t + 1).to_string(), v.to_string(), c.to_string()])
                .map_err(csv_err(&ts_path))?;
        }
        w.flush().map_err(io_err(&ts_path))?;
        let series = [Series::new(
            "self share",
            trace_share.iter().enumerate().map(|(t, v)| ((t + 1) as f64, *v)).collect(),
        )];
        let svg = out.join("trace_share.svg");
        std::fs::write(&svg, line_chart("trace share", "iteration", "share", &series, false)).map_err(io_err(&svg))?;
    }

    let mut paths = Vec::new();
    if cfg.paths {
        let count = cfg.path_samples;
        let sets = count.div_ceil(k).saturating_sub(1).max(1);
        let mut learned = rollout(&inst, &ck.params, &ck.model, &space, k, sets, seed)?.samples();
        learned.truncate(count);
        let pso = pso_samples(&inst, &space, k.max(2), count, &cfg.pso(), seed)?;
        let x0 = initial_positions(&space, 1, seed).row(0).to_vec();
        let gd = gd_samples(&inst, &x0, cfg.gd_lr, count)?;
        paths = vec![("learned".to_string(), learned), ("pso".to_string(), pso), ("gd".to_string(), gd)];

        let p_path = out.join("paths.csv");
        let mut w = csv::Writer::from_path(&p_path).map_err(csv_err(&p_path))?;
        for (name, samples) in &paths {
            for (i, (x, f)) in samples.iter().enumerate() {
                w.serialize(PathRow {
                    method: name,
                    index: i,
                    x1: x[0],
                    x2: x[1],
                    f: *f,
                })
                .map_err(csv_err(&p_path))?;
            }
        }
        w.flush().map_err(io_err(&p_path))?;
        let series: Vec<Series> = paths
            .iter()
            .map(|(name, s)| Series::new(name.clone(), s.iter().map(|(x, _)| (x[0], x[1])).collect()))
            .collect();
        let svg = out.join("paths.svg");
        std::fs::write(&svg, path_chart(&format!("first {count} samples"), &series)).map_err(io_err(&svg))?;
    }
    Ok(InterpretReport {
        feature_weights,
        trace_share,
        cross_share,
        paths,
    })
}
