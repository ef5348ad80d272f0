// SPDX-License-Identifier: MIT OR Apache-2.0
//! `risk-curve`: Monte-Carlo per-token risk of the constructed model and the
//! reference predictors on the same draws.

use anyhow::{bail, Result};
use icl_repr::data::encode::encode_supervised;
use icl_repr::data::instances::{sample_mixture_instance, sample_supervised_instance_with, MixtureSpec};
use icl_repr::engine::read_supervised_predictions;
use icl_repr::oracles::{mixture_bayes_predictor, monte_carlo_risk, phi_ridge_sequence_with, LossMatrix, RegSchedule};
use serde::Serialize;

use crate::config::{ExperimentConfig, Setting};
use crate::experiment::{input_dist, representation, setup, with_workers};
use crate::report::{num, Output, Table};

/// Half-width multiplier of the reported per-token intervals.
pub const CI_Z: f64 = 1.96;
/// Comparisons "a ≤ b" allow this many standard errors of the paired difference.
pub const COMPARE_SE: f64 = 3.0;

#[derive(Debug, Clone, Serialize)]
pub struct PredictorSummary {
    pub name: String,
    pub window_mean: f64,
    pub window_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub lhs: String,
    pub rhs: String,
    /// Mean of `lhs − rhs` over the window, paired by trial.
    pub diff: f64,
    pub diff_se: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskReport {
    pub trials: usize,
    pub window_from: usize,
    pub lambda_star: f64,
    pub predictors: Vec<PredictorSummary>,
    pub comparisons: Vec<Comparison>,
}

impl RiskReport {
    pub fn predictor(&self, name: &str) -> Option<&PredictorSummary> {
        self.predictors.iter().find(|p| p.name == name)
    }

    pub fn comparison(&self, lhs: &str, rhs: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.lhs == lhs && c.rhs == rhs)
    }
}

fn compare(names: &[String], losses: &[LossMatrix], from: usize, lhs: &str, rhs: &str) -> Comparison {
    let ix = |n: &str| names.iter().position(|m| m == n).expect("known predictor");
    let (diff, diff_se) = losses[ix(lhs)].paired_diff(&losses[ix(rhs)], from);
    Comparison {
        lhs: lhs.into(),
        rhs: rhs.into(),
        diff,
        diff_se,
        holds: diff <= COMPARE_SE * diff_se,
    }
}

fn factor_label(f: f64) -> String {
    format!("{f}x")
}

/// `λ⋆ = σ²/τ²`, or the configured λ when that is degenerate.
pub fn lambda_star(cfg: &ExperimentConfig) -> f64 {
    let (s, t) = (cfg.noise.sigma, cfg.noise.tau);
    if s > 0.0 && t > 0.0 {
        s * s / (t * t)
    } else {
        cfg.ridge.lambda
    }
}

/// Predictor names, their losses, and the `(lhs, rhs)` pairs to compare.
type Curves = (Vec<String>, Vec<LossMatrix>, Vec<(String, String)>);

fn supervised_curve(cfg: &ExperimentConfig) -> Result<Curves> {
    let ls = lambda_star(cfg);
    let model = if cfg.risk.include_tf { Some(setup(cfg)?) } else { None };
    let rep = match &model {
        Some(s) => s.rep.clone(),
        None => representation(cfg, 0)?,
    };
    let compiled = model.as_ref().map(|s| s.model.compile());
    let mut names = Vec::new();
    if model.is_some() {
        names.push("tf".to_string());
    }
    let mut schedules = Vec::new();
    for &f in &cfg.risk.lambda_factors {
        names.push(format!("ridge_const_{}", factor_label(f)));
        schedules.push(RegSchedule::Constant(f * ls));
    }
    for &f in &cfg.risk.lambda_factors {
        names.push(format!("ridge_post_{}", factor_label(f)));
        schedules.push(RegSchedule::PosteriorMean { noise_to_prior: f * ls });
    }
    if model.is_some() {
        names.push("ridge_model_lambda".into());
        schedules.push(RegSchedule::Constant(cfg.ridge.lambda));
    }
    names.push("zero".into());
    let losses = with_workers(cfg.workers, || {
        monte_carlo_risk(cfg.trials, cfg.seed, |g| {
            let inst = sample_supervised_instance_with(&rep, input_dist(cfg), cfg.noise.tau, cfg.noise.sigma, cfg.dims.n, g)?;
            let mut preds = Vec::with_capacity(names.len());
            if let (Some(s), Some(tf)) = (&model, &compiled) {
                let out = tf.forward(&encode_supervised(&inst, s.model.tf.hidden_dim)?)?;
                preds.push(read_supervised_predictions(&out, &s.model.layout)?);
            }
            for sch in &schedules {
                preds.push(phi_ridge_sequence_with(&inst, &rep, sch)?.predictions);
            }
            preds.push(vec![0.0; inst.len()]);
            Ok((inst.ys, preds))
        })
    })??;
    let mut checks = Vec::new();
    if cfg.risk.lambda_factors.contains(&1.0) {
        for &f in cfg.risk.lambda_factors.iter().filter(|&&f| f != 1.0) {
            for kind in ["const", "post"] {
                checks.push((
                    format!("ridge_{kind}_{}", factor_label(1.0)),
                    format!("ridge_{kind}_{}", factor_label(f)),
                ));
            }
        }
    }
    Ok((names, losses, checks))
}

fn mixture_curve(cfg: &ExperimentConfig) -> Result<Curves> {
    let k = cfg.dims.tasks;
    let reps = (0..k).map(|j| representation(cfg, j)).collect::<Result<Vec<_>>>()?;
    let spec = MixtureSpec::new(reps.clone())?;
    let ls = lambda_star(cfg);
    let sch = if cfg.noise.sigma > 0.0 && cfg.noise.tau > 0.0 {
        RegSchedule::PosteriorMean { noise_to_prior: ls }
    } else {
        RegSchedule::Constant(ls)
    };
    let mut names = vec!["mixture_bayes".to_string(), "oracle_ridge".into()];
    names.extend((0..k).map(|j| format!("task{j}_ridge")));
    if k > 1 {
        names.push("wrong_task_ridge".into());
    }
    names.push("zero".into());
    let dist = input_dist(cfg);
    let losses = with_workers(cfg.workers, || {
        monte_carlo_risk(cfg.trials, cfg.seed, |g| {
            let (inst, j) = sample_mixture_instance(&spec, dist, cfg.noise.tau, cfg.noise.sigma, cfg.dims.n, g)?;
            let mix = mixture_bayes_predictor(&inst, &reps, &vec![sch; k], cfg.noise.sigma)?;
            let mut preds = vec![mix.predictions, mix.per_task[j].clone()];
            preds.extend(mix.per_task.iter().cloned());
            if k > 1 {
                preds.push(mix.per_task[(j + 1) % k].clone());
            }
            preds.push(vec![0.0; inst.len()]);
            Ok((inst.ys, preds))
        })
    })??;
    let mut checks = vec![("oracle_ridge".to_string(), "mixture_bayes".to_string())];
    for j in 0..k {
        checks.push(("mixture_bayes".into(), format!("task{j}_ridge")));
    }
    if k > 1 {
        checks.push(("mixture_bayes".into(), "wrong_task_ridge".into()));
    }
    Ok((names, losses, checks))
}

pub fn risk_curve(cfg: &ExperimentConfig) -> Result<Output<RiskReport>> {
    let (names, losses, checks) = match cfg.setting {
        Setting::Supervised => supervised_curve(cfg)?,
        Setting::Mixture => mixture_curve(cfg)?,
        Setting::Dynamical => bail!("risk-curve supports the supervised and mixture settings"),
    };
    let from = cfg.risk.window_from.clamp(1, cfg.dims.n);
    let mut table = Table::new("curve", vec!["predictor", "token", "mean", "se", "half_width"]);
    let mut predictors = Vec::new();
    for (name, l) in names.iter().zip(&losses) {
        let c = l.curve();
        for (i, (m, se)) in c.mean.iter().zip(&c.se).enumerate() {
            table.push(vec![name.clone(), (i + 1).to_string(), num(*m), num(*se), num(CI_Z * se)]);
        }
        let (window_mean, window_se) = l.window(from);
        predictors.push(PredictorSummary {
            name: name.clone(),
            window_mean,
            window_se,
        });
    }
    let comparisons: Vec<Comparison> = checks.iter().map(|(a, b)| compare(&names, &losses, from, a, b)).collect();
    let mut cmp = Table::new("comparisons", vec!["lhs", "rhs", "diff", "diff_se", "holds"]);
    for c in &comparisons {
        cmp.push(vec![c.lhs.clone(), c.rhs.clone(), num(c.diff), num(c.diff_se), c.holds.to_string()]);
    }
    Ok(Output {
        command: "risk-curve",
        pass: true,
        report: RiskReport {
            trials: cfg.trials,
            window_from: from,
            lambda_star: lambda_star(cfg),
            predictors,
            comparisons,
        },
        tables: vec![table, cmp],
    })
}
