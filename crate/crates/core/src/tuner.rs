//! Randomized hyperparameter search over cross-validated trials.
//!
//! A search space is an ordered list of named distributions; trial i of a
//! seeded search draws each dimension in declaration order from an rng
//! derived from (seed, i), so any trial can be reproduced in isolation.
//! Trials are ranked by mean validation F1 (micro); ties go to the lower
//! trial index. Failed trials are logged and excluded from ranking.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::gbt::GbtParams;
use crate::models::iforest::{IfParams, MaxSamples};
use crate::rng::stream_rng;

/// Stream offset separating trial draws from other consumers of the seed.
const TRIAL_STREAM: u64 = 3_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Dist {
    /// Inclusive integer range.
    IntUniform { lo: i64, hi: i64 },
    RealUniform { lo: f64, hi: f64 },
    /// Uniform in log space over [lo, hi), lo > 0.
    LogUniform { lo: f64, hi: f64 },
    Categorical { options: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<(String, Dist)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_i64(&self) -> Result<i64> {
        match self {
            ParamValue::Int(v) => Ok(*v),
            other => Err(Error::InvalidParam(format!("expected integer, got {other:?}"))),
        }
    }

    pub fn as_f64(&self) -> Result<f64> {
        match self {
            ParamValue::Real(v) => Ok(*v),
            ParamValue::Int(v) => Ok(*v as f64),
            other => Err(Error::InvalidParam(format!("expected number, got {other:?}"))),
        }
    }
}

pub type ParamDraw = Vec<(String, ParamValue)>;

pub fn lookup<'a>(draw: &'a ParamDraw, name: &str) -> Result<&'a ParamValue> {
    draw.iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::InvalidParam(format!("missing parameter {name}")))
}

/// Draw one parameter vector for trial `i`, consuming the rng in
/// declaration order.
pub fn sample_params(space: &SearchSpace, seed: u64, trial: usize) -> ParamDraw {
    let mut rng = stream_rng(seed, TRIAL_STREAM + trial as u64);
    space
        .dims
        .iter()
        .map(|(name, dist)| {
            let value = match dist {
                Dist::IntUniform { lo, hi } => ParamValue::Int(rng.gen_range(*lo..=*hi)),
                Dist::RealUniform { lo, hi } => ParamValue::Real(rng.gen_range(*lo..*hi)),
                Dist::LogUniform { lo, hi } => {
                    let u = rng.gen_range(lo.ln()..hi.ln());
                    ParamValue::Real(u.exp())
                }
                Dist::Categorical { options } => {
                    ParamValue::Text(options[rng.gen_range(0..options.len())].clone())
                }
            };
            (name.clone(), value)
        })
        .collect()
}

/// JSON rendering of a draw in declaration order.
pub fn params_json(draw: &ParamDraw) -> String {
    let mut s = String::from("{");
    for (i, (name, value)) in draw.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = match value {
            ParamValue::Int(v) => write!(s, "\"{name}\":{v}"),
            ParamValue::Real(v) => write!(s, "\"{name}\":{v}"),
            ParamValue::Text(v) => write!(s, "\"{name}\":{}", serde_json::json!(v)),
        };
    }
    s.push('}');
    s
}

// ---------------------------------------------------------------------
// model search spaces
// ---------------------------------------------------------------------

pub fn gbt_space() -> SearchSpace {
    SearchSpace {
        dims: vec![
            ("n_estimators".into(), Dist::IntUniform { lo: 3, hi: 300 }),
            ("learning_rate".into(), Dist::LogUniform { lo: 0.006, hi: 1.0 }),
            ("gamma".into(), Dist::RealUniform { lo: 10.0, hi: 60.0 }),
            ("max_depth".into(), Dist::IntUniform { lo: 0, hi: 9 }),
            ("min_child_weight".into(), Dist::RealUniform { lo: 1.0, hi: 3.0 }),
            ("subsample".into(), Dist::RealUniform { lo: 0.3, hi: 1.0 }),
            ("colsample_bytree".into(), Dist::RealUniform { lo: 0.1, hi: 1.0 }),
        ],
    }
}

pub fn iforest_space() -> SearchSpace {
    SearchSpace {
        dims: vec![
            ("n_estimators".into(), Dist::IntUniform { lo: 6, hi: 200 }),
            ("max_samples".into(), Dist::IntUniform { lo: 8, hi: 64 }),
            ("contamination".into(), Dist::RealUniform { lo: 0.40, hi: 0.76 }),
            ("max_features".into(), Dist::RealUniform { lo: 0.05, hi: 1.0 }),
        ],
    }
}

/// Map a draw onto boosting parameters. A drawn depth of 0 means
/// "unlimited" (capped at 64), matching the usual boosted-tree reading.
pub fn gbt_params(draw: &ParamDraw) -> Result<GbtParams> {
    let depth = lookup(draw, "max_depth")?.as_i64()?;
    let params = GbtParams {
        n_estimators: lookup(draw, "n_estimators")?.as_i64()? as usize,
        learning_rate: lookup(draw, "learning_rate")?.as_f64()?,
        gamma: lookup(draw, "gamma")?.as_f64()?,
        max_depth: if depth == 0 { 64 } else { depth as usize },
        min_child_weight: lookup(draw, "min_child_weight")?.as_f64()?,
        subsample: lookup(draw, "subsample")?.as_f64()?,
        colsample_bytree: lookup(draw, "colsample_bytree")?.as_f64()?,
        ..GbtParams::default()
    };
    params.validate()?;
    Ok(params)
}

pub fn iforest_params(draw: &ParamDraw) -> Result<IfParams> {
    let params = IfParams {
        n_estimators: lookup(draw, "n_estimators")?.as_i64()? as usize,
        max_samples: MaxSamples::Fixed(lookup(draw, "max_samples")?.as_i64()? as usize),
        contamination: lookup(draw, "contamination")?.as_f64()?,
        max_features: lookup(draw, "max_features")?.as_f64()?,
    };
    params.validate()?;
    Ok(params)
}

// ---------------------------------------------------------------------
// search
// ---------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub f1_train: f64,
    pub f1_valid: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub params: ParamDraw,
    pub f1_train_mean: f64,
    pub f1_train_std: f64,
    pub f1_valid_mean: f64,
    pub f1_valid_std: f64,
    pub failed: bool,
    pub error: Option<String>,
}

fn mean_and_population_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run one parameter draw over k folds; any fold error fails the trial.
pub fn cross_validate<F>(k: usize, mut run_fold: F) -> Result<Vec<FoldScore>>
where
    F: FnMut(usize) -> Result<FoldScore>,
{
    (0..k).map(&mut run_fold).collect()
}

/// Randomized search: n_iter draws, each cross-validated with
/// `run_fold(trial, params, fold)`. Failed trials are kept in the table
/// (flagged) but never ranked.
pub fn random_search<F>(
    space: &SearchSpace,
    n_iter: usize,
    k: usize,
    seed: u64,
    mut run_fold: F,
) -> Vec<TrialSummary>
where
    F: FnMut(usize, &ParamDraw, usize) -> Result<FoldScore>,
{
    let mut trials = Vec::with_capacity(n_iter);
    for trial in 0..n_iter {
        let params = sample_params(space, seed, trial);
        match cross_validate(k, |fold| run_fold(trial, &params, fold)) {
            Ok(scores) => {
                let train: Vec<f64> = scores.iter().map(|s| s.f1_train).collect();
                let valid: Vec<f64> = scores.iter().map(|s| s.f1_valid).collect();
                let (tm, ts) = mean_and_population_std(&train);
                let (vm, vs) = mean_and_population_std(&valid);
                trials.push(TrialSummary {
                    trial,
                    params,
                    f1_train_mean: tm,
                    f1_train_std: ts,
                    f1_valid_mean: vm,
                    f1_valid_std: vs,
                    failed: false,
                    error: None,
                });
            }
            Err(e) => {
                log::warn!("trial {trial} failed: {e}");
                trials.push(TrialSummary {
                    trial,
                    params,
                    f1_train_mean: f64::NAN,
                    f1_train_std: f64::NAN,
                    f1_valid_mean: f64::NAN,
                    f1_valid_std: f64::NAN,
                    failed: true,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    trials
}

/// Index of the winning trial: highest mean validation F1, ties to the
/// lower trial index. Errors when every trial failed.
pub fn best_trial(trials: &[TrialSummary]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in trials.iter().enumerate() {
        if t.failed {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) if t.f1_valid_mean > trials[b].f1_valid_mean => best = Some(i),
            _ => {}
        }
    }
    best.ok_or_else(|| Error::Search("all trials failed".into()))
}

/// Leaderboard CSV: one row per trial in trial order.
pub fn leaderboard_csv(trials: &[TrialSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "trial",
        "params",
        "f1_train_mean",
        "f1_train_std",
        "f1_valid_mean",
        "f1_valid_std",
    ])?;
    for t in trials {
        let fmt = |x: f64| if x.is_nan() { String::new() } else { x.to_string() };
        w.write_record([
            t.trial.to_string(),
            params_json(&t.params),
            fmt(t.f1_train_mean),
            fmt(t.f1_train_std),
            fmt(t.f1_valid_mean),
            fmt(t.f1_valid_std),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Search(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
