//! Central finite-difference verification of tape gradients.

use std::error::Error as StdError;

use thiserror::Error;

use crate::tape::{Array, Tape, Var};

type BoxError = Box<dyn StdError + Send + Sync>;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("non-finite loss {value} at parameter {param}, entry {entry}")]
    NonFinite {
        param: usize,
        entry: usize,
        value: f64,
    },
    #[error("evaluation failed: {0}")]
    Eval(BoxError),
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over entries of `|a − d| / (|a| + |d| + 1e-12)`.
    pub max_rel_error: f64,
    /// `(parameter, flat entry)` attaining the maximum.
    pub worst: Option<(usize, usize)>,
    pub entries: usize,
}

fn eval<F, E>(f: &F, params: &[Array], as_params: bool) -> Result<(f64, Vec<Array>), GradCheckError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, E>,
    E: Into<BoxError>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params
        .iter()
        .map(|p| {
            if as_params {
                tape.param(p.clone())
            } else {
                tape.constant(p.clone())
            }
        })
        .collect();
    let loss = f(&tape, &vars).map_err(|e| GradCheckError::Eval(e.into()))?;
    let value = loss.item();
    if !as_params {
        return Ok((value, Vec::new()));
    }
    let grads = tape
        .backward(loss)
        .map_err(|e| GradCheckError::Eval(Box::new(e)))?;
    Ok((value, vars.iter().map(|&v| grads.wrt(v)).collect()))
}

/// Compares reverse-mode gradients of `f` at `params` with central differences
/// of half-width `step`.
pub fn grad_check<F, E>(f: F, params: &[Array], step: f64) -> Result<GradCheckReport, GradCheckError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, E>,
    E: Into<BoxError>,
{
    let (base, analytic) = eval(&f, params, true)?;
    if !base.is_finite() {
        return Err(GradCheckError::NonFinite {
            param: 0,
            entry: 0,
            value: base,
        });
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    let mut work: Vec<Array> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for (ei, &orig) in p.iter().enumerate() {
            let at = |w: &mut Vec<Array>, v: f64| {
                let a = &mut w[pi];
                let cols = a.ncols();
                a[[ei / cols, ei % cols]] = v;
            };
            at(&mut work, orig + step);
            let (plus, _) = eval(&f, &work, false)?;
            at(&mut work, orig - step);
            let (minus, _) = eval(&f, &work, false)?;
            at(&mut work, orig);
            for v in [plus, minus] {
                if !v.is_finite() {
                    return Err(GradCheckError::NonFinite {
                        param: pi,
                        entry: ei,
                        value: v,
                    });
                }
            }
            let fd = (plus - minus) / (2.0 * step);
            let an = analytic[pi].iter().nth(ei).copied().unwrap_or(0.0);
            let rel = (an - fd).abs() / (an.abs() + fd.abs() + 1e-12);
            report.entries += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((pi, ei));
            }
        }
    }
    Ok(report)
}
