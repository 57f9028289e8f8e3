use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use swarmopt::Checkpoint;
use swarmopt_cli::commands::{read_train_log, CHECKPOINT_FILE, TRAIN_LOG_FILE};

const TINY: &str = "n = 2\nepochs = 2\nbatch = 2\niterations = 6\nwindow = 3\nhidden = 5\nmc_samples = 200\n";

fn workdir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(cmd: &str, cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarmopt"))
        .args([cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "4"])
        .output()
        .unwrap()
}

fn train_tiny(dir: &Path, level: &str) -> PathBuf {
    let cfg = write(dir, &format!("train-{level}.toml"), &format!("{TINY}level = \"{level}\"\n"));
    let out = dir.join(format!("train-{level}"));
    let o = run("train", &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join(CHECKPOINT_FILE)
}

#[test]
fn train_writes_checkpoint_and_resumes() {
    let dir = workdir("train");
    let ck = train_tiny(&dir, "proposed");
    assert_eq!(Checkpoint::load(&ck).unwrap().epoch, 2);
    let out = dir.join("train-proposed");
    assert!(out.join("resolved-config.toml").is_file());
    assert!(out.join("train_log.svg").is_file());

    let cfg = write(&dir, "more.toml", &TINY.replace("epochs = 2", "epochs = 4"));
    assert!(run("train", &cfg, &out).status.success());
    let epochs: Vec<usize> = read_train_log(&out.join(TRAIN_LOG_FILE)).unwrap().iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![1, 2, 3, 4]);
    assert_eq!(Checkpoint::load(&ck).unwrap().epoch, 4);
}

#[test]
fn resume_with_other_level_is_rejected() {
    let dir = workdir("resume-mismatch");
    train_tiny(&dir, "proposed");
    let cfg = write(&dir, "b3.toml", &format!("{TINY}level = \"b3\"\n"));
    assert_eq!(run("train", &cfg, &dir.join("train-proposed")).status.code(), Some(2));
}

#[test]
fn evaluate_reports_every_fifty_evaluations() {
    let dir = workdir("evaluate");
    let ck = train_tiny(&dir, "proposed");
    let cfg = write(
        &dir,
        "eval.toml",
        &format!(
            "n = 2\nbudget = 230\nrepeats = 2\ntest_size = 3\nmethods = [\"gd\", \"pso\", \"proposed\"]\ncheckpoints = {{ proposed = {:?} }}\n",
            ck
        ),
    );
    let out = dir.join("out");
    let o = run("evaluate", &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,evals,mean_best_f,std_best_f,n,k,seed_group"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3 * 4);
    for method in ["gd", "pso", "proposed"] {
        let evals: Vec<&str> = rows.iter().filter(|r| r[0] == method).map(|r| r[1]).collect();
        assert_eq!(evals, ["50", "100", "150", "200"]);
    }
    assert!(rows.iter().all(|r| r[6] == "4"));
    assert!(out.join("curves.svg").is_file() && out.join("summary.csv").is_file());
}

#[test]
fn transfer_emits_one_group_per_alpha() {
    let dir = workdir("transfer");
    let ck = train_tiny(&dir, "proposed");
    let mut body = String::from("n = 2\nbudget = 100\nrepeats = 2\n");
    for a in [0.0, 5.0, 10.0] {
        body.push_str(&format!("[[transfer]]\nalpha = {a:.1}\ncheckpoint = {ck:?}\n"));
    }
    let cfg = write(&dir, "transfer.toml", &body);
    let out = dir.join("out");
    assert!(run("transfer", &cfg, &out).status.success());
    let text = std::fs::read_to_string(out.join("results.csv")).unwrap();
    for a in ["alpha=0", "alpha=5", "alpha=10"] {
        assert_eq!(text.lines().filter(|l| l.starts_with(&format!("{a},"))).count(), 2);
    }
}

#[test]
fn ablate_writes_rank_tests() {
    let dir = workdir("ablate");
    let b0 = train_tiny(&dir, "b0");
    let mut body = format!("n = 2\nbudget = 100\nrepeats = 4\ntest_size = 2\n[checkpoints]\nb0 = {b0:?}\nb1 = {b0:?}\n");
    for level in ["b2", "b3", "proposed"] {
        body.push_str(&format!("{level} = {:?}\n", train_tiny(&dir, level)));
    }
    let cfg = write(&dir, "ablate.toml", &body);
    let out = dir.join("out");
    let o = run("ablate", &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let tests = std::fs::read_to_string(out.join("rank_tests.csv")).unwrap();
    assert_eq!(tests.lines().count(), 5);

    let swapped = body.replace(&format!("b2 = {:?}", dir.join("train-b2").join(CHECKPOINT_FILE)), &format!("b2 = {b0:?}"));
    let cfg = write(&dir, "swapped.toml", &swapped);
    assert_eq!(run("ablate", &cfg, &dir.join("bad")).status.code(), Some(2));
}

#[test]
fn interpret_rejects_paths_outside_the_plane() {
    let dir = workdir("interpret");
    let train_cfg = write(&dir, "t.toml", &TINY.replace("n = 2", "n = 3"));
    assert!(run("train", &train_cfg, &dir.join("t")).status.success());
    let ck = dir.join("t").join(CHECKPOINT_FILE);
    let cfg = write(&dir, "i.toml", &format!("n = 3\ncheckpoint = {ck:?}\n"));
    assert_eq!(run("interpret", &cfg, &dir.join("a")).status.code(), Some(2));
    let cfg = write(&dir, "i2.toml", &format!("n = 3\npaths = false\ncheckpoint = {ck:?}\n"));
    let out = dir.join("b");
    assert!(run("interpret", &cfg, &out).status.success());
    assert!(out.join("feature_weights.csv").is_file() && !out.join("paths.csv").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = workdir("config-errors");
    let o = run("evaluate", &write(&dir, "a.toml", "n = 2\nbudjet = 5\n"), &dir.join("a"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budjet"));
    let o = run("evaluate", &write(&dir, "b.toml", "methods = [\"b3\"]\n"), &dir.join("b"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing checkpoint"));
    let o = run("evaluate", &write(&dir, "c.toml", "methods = [\"cmaes\"]\n"), &dir.join("c"));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run("train", &dir.join("absent.toml"), &dir.join("d")).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_swarmopt"))
        .args(["evaluate", "--config", dir.join("a.toml").to_str().unwrap(), "--out", "x"])
        .env("SWARMOPT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_with_three() {
    let dir = workdir("numeric");
    let ck_path = train_tiny(&dir, "proposed");
    let mut ck = Checkpoint::load(&ck_path).unwrap();
    ck.params.out_proj.mapv_inplace(|v| v * 1e300);
    ck.params.step_scale = 1e300;
    let broken = dir.join("broken.txt");
    ck.save(&broken).unwrap();
    let cfg = write(
        &dir,
        "eval.toml",
        &format!("n = 2\nbudget = 100\nrepeats = 1\ntest_size = 1\nmethods = [\"proposed\"]\ncheckpoints = {{ proposed = {broken:?} }}\n"),
    );
    let o = run("evaluate", &cfg, &dir.join("out"));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
