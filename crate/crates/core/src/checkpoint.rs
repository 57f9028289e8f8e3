//! Versioned text checkpoints. Every number is written with 17 significant
//! digits so a save/load cycle reproduces the values bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::meta::{ArchFlags, MetaParams, ModelConfig, PARAM_NAMES};
use crate::objectives::{fmt_f64, parse_f64};
use crate::swarm::FeatureConfig;
use crate::training::AdamState;

const MAGIC: &str = "swarmopt-checkpoint 1";

/// Trained parameters plus everything needed to resume or to check which
/// architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MetaParams,
    pub model: ModelConfig,
    /// Entropy weight the parameters were trained with.
    pub lambda: f64,
    /// Completed epochs.
    pub epoch: usize,
    /// Frozen reference entropy of the annealing schedule.
    pub h0: Option<f64>,
    pub adam: AdamState,
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn write_array(out: &mut String, tag: &str, name: &str, a: &Array2<f64>) {
    let _ = writeln!(out, "{tag} {name} {} {}", a.nrows(), a.ncols());
    for row in a.rows() {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

impl Checkpoint {
    pub fn check_compatible(&self, model: &ModelConfig, lambda: f64, n: usize) -> Result<()> {
        if self.model != *model {
            return Err(CoreError::CheckpointMismatch(format!(
                "checkpoint model {:?} differs from configured {:?}",
                self.model, model
            )));
        }
        if self.lambda != lambda {
            return Err(CoreError::CheckpointMismatch(format!(
                "checkpoint trained with lambda {}, configured {}",
                self.lambda, lambda
            )));
        }
        if self.params.dim() != n {
            return Err(CoreError::CheckpointMismatch(format!(
                "checkpoint dimension {}, configured {n}",
                self.params.dim()
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "epoch {}", self.epoch);
        let _ = writeln!(out, "dim {}", self.params.dim());
        let _ = writeln!(out, "hidden {}", m.hidden);
        let _ = writeln!(out, "step_scale {}", fmt_f64(self.params.step_scale));
        let _ = writeln!(out, "gamma {}", fmt_f64(m.gamma));
        let _ = writeln!(out, "length_scale {}", fmt_f64(m.length_scale));
        let _ = writeln!(out, "momentum_beta {}", fmt_f64(m.features.beta));
        let _ = writeln!(out, "attraction_alpha {}", fmt_f64(m.features.attraction_alpha));
        let feats: Vec<&str> = m.flags.features.iter().map(|&b| flag(b)).collect();
        let _ = writeln!(out, "features {}", feats.join(" "));
        let _ = writeln!(out, "intra_attention {}", flag(m.flags.intra_attention));
        let _ = writeln!(out, "inter_attention {}", flag(m.flags.inter_attention));
        let _ = writeln!(out, "lambda {}", fmt_f64(self.lambda));
        match self.h0 {
            Some(h) => {
                let _ = writeln!(out, "h0 {}", fmt_f64(h));
            }
            None => {
                let _ = writeln!(out, "h0 none");
            }
        }
        let _ = writeln!(out, "adam_t {}", self.adam.t);
        for (name, a) in PARAM_NAMES.iter().zip(self.params.arrays()) {
            write_array(&mut out, "param", name, a);
        }
        for (name, a) in PARAM_NAMES.iter().zip(&self.adam.m) {
            write_array(&mut out, "adam_m", name, a);
        }
        for (name, a) in PARAM_NAMES.iter().zip(&self.adam.v) {
            write_array(&mut out, "adam_v", name, a);
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| CoreError::Parse(format!("checkpoint ends before {what}")))
        };
        let magic = next("header")?;
        if magic != MAGIC {
            return Err(CoreError::Parse(format!("not a checkpoint (header {magic:?})")));
        }
        fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| CoreError::Parse(format!("expected `{key}`, found {line:?}")))
        }
        fn int(s: &str) -> Result<usize> {
            s.trim().parse().map_err(|_| CoreError::Parse(format!("bad integer {s:?}")))
        }
        fn bit(s: &str) -> Result<bool> {
            match s.trim() {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(CoreError::Parse(format!("bad flag {other:?}"))),
            }
        }
        let epoch = int(field(next("epoch")?, "epoch")?)?;
        let dim = int(field(next("dim")?, "dim")?)?;
        let hidden = int(field(next("hidden")?, "hidden")?)?;
        let step_scale = parse_f64(field(next("step_scale")?, "step_scale")?)?;
        let gamma = parse_f64(field(next("gamma")?, "gamma")?)?;
        let length_scale = parse_f64(field(next("length_scale")?, "length_scale")?)?;
        let beta = parse_f64(field(next("momentum_beta")?, "momentum_beta")?)?;
        let attraction_alpha = parse_f64(field(next("attraction_alpha")?, "attraction_alpha")?)?;
        let feats = field(next("features")?, "features")?
            .split_whitespace()
            .map(bit)
            .collect::<Result<Vec<bool>>>()?;
        let features: [bool; 4] = feats
            .try_into()
            .map_err(|_| CoreError::Parse("features needs 4 flags".into()))?;
        let intra = bit(field(next("intra_attention")?, "intra_attention")?)?;
        let inter = bit(field(next("inter_attention")?, "inter_attention")?)?;
        let lambda = parse_f64(field(next("lambda")?, "lambda")?)?;
        let h0 = match field(next("h0")?, "h0")? {
            "none" => None,
            v => Some(parse_f64(v)?),
        };
        let adam_t = field(next("adam_t")?, "adam_t")?
            .parse::<u64>()
            .map_err(|_| CoreError::Parse("bad adam_t".into()))?;
        let mut read_group = |tag: &str| -> Result<Vec<Array2<f64>>> {
            let mut out = Vec::with_capacity(PARAM_NAMES.len());
            for name in PARAM_NAMES {
                let head = next(tag)?;
                let rest = field(head, tag)?;
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 || parts[0] != name {
                    return Err(CoreError::Parse(format!("expected `{tag} {name} <rows> <cols>`, found {head:?}")));
                }
                let (r, c) = (int(parts[1])?, int(parts[2])?);
                let mut vals = Vec::with_capacity(r * c);
                for _ in 0..r {
                    let row = next(name)?
                        .split_whitespace()
                        .map(parse_f64)
                        .collect::<Result<Vec<f64>>>()?;
                    if row.len() != c {
                        return Err(CoreError::Parse(format!("{tag} {name}: row of {} values, expected {c}", row.len())));
                    }
                    vals.extend(row);
                }
                out.push(Array2::from_shape_vec((r, c), vals).expect("sizes checked"));
            }
            Ok(out)
        };
        let arrays = read_group("param")?;
        let m = read_group("adam_m")?;
        let v = read_group("adam_v")?;
        if next("end")? != "end" {
            return Err(CoreError::Parse("missing `end` marker".into()));
        }
        let params = MetaParams::from_arrays(arrays, step_scale)?;
        if params.dim() != dim || params.hidden() != hidden {
            return Err(CoreError::Parse(format!(
                "arrays have n = {}, H = {}; header says {dim}, {hidden}",
                params.dim(),
                params.hidden()
            )));
        }
        for ((p, m), v) in params.arrays().iter().zip(&m).zip(&v) {
            if p.dim() != m.dim() || p.dim() != v.dim() {
                return Err(CoreError::Parse("optimizer state shape differs from parameters".into()));
            }
        }
        Ok(Self {
            params,
            model: ModelConfig {
                hidden,
                gamma,
                length_scale,
                features: FeatureConfig { beta, attraction_alpha },
                flags: ArchFlags {
                    features,
                    intra_attention: intra,
                    inter_attention: inter,
                },
            },
            lambda,
            epoch,
            h0,
            adam: AdamState { m, v, t: adam_t },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| CoreError::InvalidArgument(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}
