//! Experiment configuration: flat TOML, unknown keys rejected, every default
//! made explicit by [`ExperimentConfig::resolve`] and echoed next to the outputs.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use swarmopt::baselines::{Level, PsoConfig};
use swarmopt::posterior::EntropyConfig;
use swarmopt::{Family, FunctionInstance, SearchSpace, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Quadratic,
    Rastrigin,
}

/// How test functions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// `test_size` functions drawn from the family, shared by all repeats.
    Battery,
    /// The single canonical Rastrigin function; `test_size` is ignored.
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferEntry {
    /// Wave amplitude the checkpoint was trained with.
    pub alpha: f64,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub family: FamilyName,
    /// Defaults to 10 for Rastrigin and 0 for quadratics.
    pub alpha: Option<f64>,
    pub n: usize,
    /// Defaults to 4 for n ≤ 2 and 10 otherwise.
    pub k: Option<usize>,
    pub budget: usize,
    pub repeats: usize,
    pub test_size: usize,
    pub protocol: Protocol,
    pub seed: u64,

    #[serde(with = "level_name")]
    pub level: Level,
    /// Defaults to 1 for `proposed` and 0 for every other level.
    pub lambda: Option<f64>,
    pub epochs: usize,
    pub batch: usize,
    pub iterations: usize,
    pub window: usize,
    pub lr: f64,
    pub l2: f64,
    /// 0 disables clipping.
    pub clip_norm: f64,
    pub rho0: f64,
    pub hidden: usize,
    pub gamma: f64,
    pub mc_samples: usize,
    pub step_scale: f64,
    pub log_wall_time: bool,

    pub methods: Vec<String>,
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub gd_lr: f64,
    pub adam_lr: f64,
    pub pso_w: [f64; 2],
    pub pso_r: [f64; 2],
    pub transfer: Vec<TransferEntry>,

    pub checkpoint: Option<PathBuf>,
    pub interpret_iterations: usize,
    pub path_samples: usize,
    pub paths: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            family: FamilyName::Quadratic,
            alpha: None,
            n: 2,
            k: None,
            budget: 1000,
            repeats: 100,
            test_size: 128,
            protocol: Protocol::Battery,
            seed: 0,
            level: Level::Proposed,
            lambda: None,
            epochs: 300,
            batch: 8,
            iterations: 40,
            window: 20,
            lr: 1e-3,
            l2: 1e-4,
            clip_norm: 5.0,
            rho0: 1.0,
            hidden: 20,
            gamma: 1.0,
            mc_samples: 1000,
            step_scale: 0.1,
            log_wall_time: false,
            methods: vec!["gd".into(), "adam".into(), "pso".into()],
            checkpoints: BTreeMap::new(),
            gd_lr: 0.01,
            adam_lr: 0.1,
            pso_w: [0.4, 0.9],
            pso_r: [0.0, 2.0],
            transfer: Vec::new(),
            checkpoint: None,
            interpret_iterations: 20,
            path_samples: 80,
            paths: true,
        }
    }
}

mod level_name {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};
    use swarmopt::baselines::Level;

    pub fn serialize<S: Serializer>(level: &Level, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&level.to_string().to_ascii_lowercase())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Level, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    /// Reads `path`, applies the seed override and resolves defaults.
    /// Relative checkpoint paths are taken relative to the config file.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text)?.resolve(seed, base)
    }

    pub fn resolve(mut self, seed: Option<u64>, base: &Path) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.k.get_or_insert(if self.n <= 2 { 4 } else { 10 });
        self.alpha.get_or_insert(match self.family {
            FamilyName::Quadratic => 0.0,
            FamilyName::Rastrigin => 10.0,
        });
        self.lambda
            .get_or_insert(if self.level.uses_entropy() { 1.0 } else { 0.0 });
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.checkpoints.values_mut().for_each(join);
        self.transfer.iter_mut().for_each(|t| join(&mut t.checkpoint));
        if let Some(p) = self.checkpoint.as_mut() {
            join(p);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("n", self.n),
            ("budget", self.budget),
            ("repeats", self.repeats),
            ("test_size", self.test_size),
            ("k", self.k()),
            ("batch", self.batch),
            ("iterations", self.iterations),
            ("window", self.window),
            ("hidden", self.hidden),
            ("interpret_iterations", self.interpret_iterations),
            ("path_samples", self.path_samples),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(config_err(format!("`{name}` must be >= 1")));
        }
        let alpha = self.alpha();
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(config_err(format!("`alpha` must be finite and >= 0, got {alpha}")));
        }
        if self.family == FamilyName::Quadratic && alpha != 0.0 {
            return Err(config_err("`alpha` must be 0 for the quadratic family"));
        }
        let lambda = self.lambda();
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(config_err(format!("`lambda` must be finite and >= 0, got {lambda}")));
        }
        if (lambda > 0.0) != self.level.uses_entropy() {
            return Err(config_err(format!(
                "`lambda` = {lambda} does not fit level `{}`; only `proposed` trains with lambda > 0",
                self.level
            )));
        }
        for (name, v) in [("lr", self.lr), ("gd_lr", self.gd_lr), ("adam_lr", self.adam_lr), ("rho0", self.rho0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(format!("`{name}` must be finite and > 0, got {v}")));
            }
        }
        if !(self.clip_norm >= 0.0) || !(self.l2 >= 0.0) {
            return Err(config_err("`clip_norm` and `l2` must be >= 0"));
        }
        if self.mc_samples < 100 {
            return Err(config_err("`mc_samples` must be >= 100"));
        }
        for (name, [lo, hi]) in [("pso_w", self.pso_w), ("pso_r", self.pso_r)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(config_err(format!("`{name}` must be an ordered pair, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or(4)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(0.0)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(0.0)
    }

    pub fn family(&self) -> Family {
        match self.family {
            FamilyName::Quadratic => Family::Quadratic,
            FamilyName::Rastrigin => Family::Rastrigin { alpha: self.alpha() },
        }
    }

    pub fn space(&self) -> Result<SearchSpace, CliError> {
        Ok(SearchSpace::default_box(self.n)?)
    }

    pub fn pso(&self) -> PsoConfig {
        PsoConfig {
            w_range: (self.pso_w[0], self.pso_w[1]),
            r_range: (self.pso_r[0], self.pso_r[1]),
        }
    }

    /// Functions every method is evaluated on.
    pub fn test_functions(&self) -> Result<Vec<FunctionInstance>, CliError> {
        match self.protocol {
            Protocol::Canonical => Ok(vec![FunctionInstance::canonical_rastrigin(self.n)?]),
            Protocol::Battery => {
                let space = self.space()?;
                Ok((0..self.test_size)
                    .map(|j| FunctionInstance::sample(self.family(), &space, crate::battery_seed(self.seed, j)))
                    .collect())
            }
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let mut tc = TrainConfig::new(self.family(), self.n)?;
        tc.k = self.level.training_particles(self.k());
        tc.iterations = self.iterations;
        tc.epochs = self.epochs;
        tc.batch = self.batch;
        tc.window = self.window;
        tc.loss.lambda = self.lambda();
        tc.loss.l2 = self.l2;
        tc.loss.entropy = EntropyConfig {
            mc_samples: self.mc_samples,
            ..EntropyConfig::default()
        };
        tc.adam.lr = self.lr;
        tc.clip_norm = (self.clip_norm > 0.0).then_some(self.clip_norm);
        tc.rho0 = self.rho0;
        tc.model.hidden = self.hidden;
        tc.model.gamma = self.gamma;
        tc.model.flags = self.level.flags();
        tc.step_scale = self.step_scale;
        tc.seed = self.seed;
        tc.validate()?;
        Ok(tc)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| config_err(format!("cannot render config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::parse(text)?.resolve(None, Path::new("cfg"))
    }

    #[test]
    fn unknown_key_is_named() {
        let err = resolve("n = 2\nbudjet = 10\n").unwrap_err();
        assert!(err.to_string().contains("budjet"), "{err}");
    }

    #[test]
    fn defaults_follow_dimension_and_level() {
        let c = resolve("n = 10\nfamily = \"rastrigin\"\nlevel = \"b2\"\n").unwrap();
        assert_eq!(c.k, Some(10));
        assert_eq!(c.alpha, Some(10.0));
        assert_eq!(c.lambda, Some(0.0));
        let c = resolve("").unwrap();
        assert_eq!((c.k, c.alpha, c.lambda), (Some(4), Some(0.0), Some(1.0)));
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = resolve("checkpoints = { proposed = \"a.txt\" }\n[[transfer]]\nalpha = 5.0\ncheckpoint = \"b.txt\"\n").unwrap();
        assert_eq!(c.checkpoints["proposed"], Path::new("cfg").join("a.txt"));
        let back = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn inconsistent_values_rejected() {
        assert!(resolve("level = \"b3\"\nlambda = 1.0\n").is_err());
        assert!(resolve("family = \"quadratic\"\nalpha = 3.0\n").is_err());
        assert!(resolve("budget = 0\n").is_err());
        assert!(resolve("level = \"b7\"\n").is_err());
        assert!(resolve("pso_w = [0.9, 0.4]\n").is_err());
    }

    #[test]
    fn training_config_carries_level_flags() {
        let c = resolve("level = \"b0\"\nk = 6\n").unwrap();
        let tc = c.train_config().unwrap();
        assert_eq!(tc.k, 1);
        assert_eq!(tc.model.flags, Level::B0.flags());
        assert_eq!(tc.loss.lambda, 0.0);
    }
}
