// SPDX-License-Identifier: MIT OR Apache-2.0
//! `verify-fixed` and `verify-dyn`: run the constructed model on fresh
//! instances and compare predictions and intermediate formats with oracles.

use std::collections::BTreeMap;

use anyhow::{bail, Result};
use icl_repr::constructions::{Landmarks, Resources};
use icl_repr::data::encode::{encode_dynamical, encode_supervised};
use icl_repr::data::instances::{history, DynInstance, IclInstance};
use icl_repr::data::representation::{leaky_relu, RepresentationFn};
use icl_repr::engine::{read_dyn_predictions, read_supervised_predictions, CompiledTransformer, TokenMatrix};
use icl_repr::oracles::{multiout_ridge_sequence, phi_ridge_sequence};
use icl_repr::rng::{stream, Purpose};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Setting};
use crate::experiment::{
    dyn_violations, sample_dynamical, sample_supervised, sample_until, setup, supervised_violations, with_workers,
    BoundsReport, Setup,
};
use crate::report::{num, Output, Table};

/// Landmark formats must hold to this max-abs residual.
pub const LANDMARK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub resources: Resources,
    pub resources_match_stated: bool,
    pub landmarks: Landmarks,
    pub bounds: BoundsReport,
    pub gd_steps: usize,
    pub trials: usize,
    pub accepted: usize,
    pub exhausted: usize,
    pub total_resamples: usize,
    /// Trials in which at least one draw was rejected for this reason.
    pub violations: BTreeMap<String, usize>,
    pub eps: f64,
    pub max_error: f64,
    pub landmark_tolerance: f64,
    pub max_landmark_residual: BTreeMap<String, f64>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone)]
struct TrialRow {
    resamples: usize,
    accepted: bool,
    rejected: Vec<String>,
    max_error: f64,
    residuals: Vec<f64>,
}

fn col_residual(h: &TokenMatrix, t: usize, expect: &[f64]) -> f64 {
    h.column(t)
        .iter()
        .zip(expect)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn with_tail(dim: usize, input: &TokenMatrix, t: usize, body: &[(usize, &[f64])]) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    let ts = input.layout().tail_start();
    for (r, v) in e.iter_mut().enumerate().skip(ts) {
        *v = input.get(r, t);
    }
    for (start, v) in body {
        e[*start..start + v.len()].copy_from_slice(v);
    }
    e
}

/// Max-abs distance of `state` from `[Φ(x_i); 0; 0; p] / [Φ(x_i); y_i; 0; p]`.
fn rep_format_residual(state: &TokenMatrix, input: &TokenMatrix, inst: &IclInstance, rep: &RepresentationFn) -> Result<f64> {
    let dim = state.hidden_dim();
    let mut worst = 0.0f64;
    for (i, x) in inst.xs.iter().enumerate() {
        let phi = rep.apply(x)?;
        let y = [inst.ys[i]];
        let ex = with_tail(dim, input, 2 * i, &[(0, &phi)]);
        let ey = with_tail(dim, input, 2 * i + 1, &[(0, &phi), (rep.dim, &y)]);
        worst = worst
            .max(col_residual(state, 2 * i, &ex))
            .max(col_residual(state, 2 * i + 1, &ey));
    }
    Ok(worst)
}

fn run_trials<F>(cfg: &ExperimentConfig, f: F) -> Result<Vec<TrialRow>>
where
    F: Fn(u64) -> Result<TrialRow> + Sync,
{
    with_workers(cfg.workers, || (0..cfg.trials as u64).into_par_iter().map(&f).collect::<Result<Vec<_>>>())?
}

fn fixed_trial(cfg: &ExperimentConfig, s: &Setup, tf: &CompiledTransformer, t: u64) -> Result<TrialRow> {
    let mut rng = stream(cfg.seed, Purpose::Trial, t);
    let c = sample_until(
        cfg.bounds.max_resamples,
        || sample_supervised(cfg, &s.rep, &mut rng),
        |i| supervised_violations(&s.spec, &s.rep, i),
    )?;
    let rejected = c.rejected.iter().map(ToString::to_string).collect();
    let Some(inst) = c.value else {
        return Ok(TrialRow {
            resamples: c.resamples,
            accepted: false,
            rejected,
            max_error: f64::NAN,
            residuals: vec![f64::NAN],
        });
    };
    let h = encode_supervised(&inst, s.model.tf.hidden_dim)?;
    let trace = tf.forward_trace(&h, false)?;
    let yhat = read_supervised_predictions(trace.states.last().expect("nonempty"), &s.model.layout)?;
    let oracle = phi_ridge_sequence(&inst, &s.rep, s.spec.lambda)?.predictions;
    let max_error = yhat.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let rep_res = rep_format_residual(&trace.states[s.model.landmarks.rep_end], &h, &inst, &s.rep)?;
    Ok(TrialRow {
        resamples: c.resamples,
        accepted: true,
        rejected,
        max_error,
        residuals: vec![rep_res],
    })
}

fn dyn_residuals(
    trace: &icl_repr::engine::HiddenTrace,
    h: &TokenMatrix,
    inst: &DynInstance,
    rep: &RepresentationFn,
    lm: &Landmarks,
) -> Result<Vec<f64>> {
    let (d, k, dd) = (inst.state_dim(), inst.k, rep.dim);
    let dim = h.hidden_dim();
    let post = &trace.post_attention.as_ref().expect("recorded")[0];
    let (mut r7, mut r8, mut r9) = (0.0f64, 0.0f64, 0.0f64);
    for i in 1..=inst.len() {
        let t = i - 1;
        let xbar = history(&inst.xs, i, k, d);
        r7 = r7.max(col_residual(post, t, &with_tail(dim, h, t, &[(0, &xbar)])));
        let z: Vec<f64> = rep.weights[0].matvec(&xbar)?.into_iter().map(|v| leaky_relu(v, rep.slope)).collect();
        let x = &inst.xs[t];
        r8 = r8.max(col_residual(&trace.states[1], t, &with_tail(dim, h, t, &[(0, &z), (dd, x)])));
        let phi = rep.apply(&xbar)?;
        let prev = rep.apply(&history(&inst.xs, i - 1, k, d))?;
        let e9 = with_tail(dim, h, t, &[(0, &phi), (dd + d, &prev), (2 * dd + d, x)]);
        r9 = r9.max(col_residual(&trace.states[lm.rep_end], t, &e9));
    }
    Ok(vec![r7, r8, r9])
}

fn dyn_trial(cfg: &ExperimentConfig, s: &Setup, tf: &CompiledTransformer, t: u64) -> Result<TrialRow> {
    let mut rng = stream(cfg.seed, Purpose::Trial, t);
    let c = sample_until(
        cfg.bounds.max_resamples,
        || sample_dynamical(cfg, &s.rep, &mut rng),
        |i| dyn_violations(&s.spec, &s.rep, i),
    )?;
    let rejected = c.rejected.iter().map(ToString::to_string).collect();
    let Some(inst) = c.value else {
        return Ok(TrialRow {
            resamples: c.resamples,
            accepted: false,
            rejected,
            max_error: f64::NAN,
            residuals: vec![f64::NAN; 3],
        });
    };
    let h = encode_dynamical(&inst, s.model.tf.hidden_dim)?;
    let trace = tf.forward_trace(&h, true)?;
    let pred = read_dyn_predictions(trace.states.last().expect("nonempty"), &s.model.layout, inst.state_dim())?;
    let oracle = multiout_ridge_sequence(&inst, &s.rep, s.spec.lambda)?.predictions;
    let max_error = pred
        .iter()
        .zip(&oracle)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max);
    Ok(TrialRow {
        resamples: c.resamples,
        accepted: true,
        rejected,
        max_error,
        residuals: dyn_residuals(&trace, &h, &inst, &s.rep, &s.model.landmarks)?,
    })
}

fn assemble(
    command: &'static str,
    cfg: &ExperimentConfig,
    s: &Setup,
    gd_steps: usize,
    residual_names: &[&'static str],
    rows: Vec<TrialRow>,
) -> Output<VerifyReport> {
    let mut header = vec!["trial", "resamples", "accepted", "max_error"];
    header.extend_from_slice(residual_names);
    let mut table = Table::new("trials", header);
    let mut violations = BTreeMap::new();
    let mut max_res: BTreeMap<String, f64> = residual_names.iter().map(|n| (n.to_string(), 0.0)).collect();
    let (mut accepted, mut total_resamples, mut max_error) = (0, 0, 0.0f64);
    let mut failures = Vec::new();
    for (t, r) in rows.iter().enumerate() {
        let mut row = vec![t.to_string(), r.resamples.to_string(), r.accepted.to_string(), num(r.max_error)];
        row.extend(r.residuals.iter().map(|v| num(*v)));
        table.push(row);
        total_resamples += r.resamples;
        for k in &r.rejected {
            *violations.entry(k.clone()).or_insert(0) += 1;
        }
        if !r.accepted {
            failures.push(format!(
                "trial {t}: no valid instance after {} resamples ({})",
                r.resamples,
                r.rejected.join(", ")
            ));
            continue;
        }
        accepted += 1;
        max_error = max_error.max(r.max_error);
        if r.max_error > s.spec.eps {
            failures.push(format!("trial {t}: prediction error {} > ε = {}", r.max_error, s.spec.eps));
        }
        for (name, v) in residual_names.iter().zip(&r.residuals) {
            let m = max_res.get_mut(*name).expect("seeded");
            *m = m.max(*v);
            if *v > LANDMARK_TOL {
                failures.push(format!("trial {t}: {name} residual {v} > {LANDMARK_TOL}"));
            }
        }
    }
    let report = VerifyReport {
        resources: s.model.resources,
        resources_match_stated: s.model.resources.matches_stated(),
        landmarks: s.model.landmarks,
        bounds: s.bounds.clone(),
        gd_steps,
        trials: cfg.trials,
        accepted,
        exhausted: cfg.trials - accepted,
        total_resamples,
        violations,
        eps: s.spec.eps,
        max_error,
        landmark_tolerance: LANDMARK_TOL,
        max_landmark_residual: max_res,
        failures,
    };
    Output {
        command,
        pass: report.failures.is_empty(),
        report,
        tables: vec![table],
    }
}

pub fn verify_fixed(cfg: &ExperimentConfig) -> Result<Output<VerifyReport>> {
    if cfg.setting != Setting::Supervised {
        bail!("verify-fixed needs setting = \"supervised\"");
    }
    let s = setup(cfg)?;
    let tf = s.model.compile();
    let rows = run_trials(cfg, |t| fixed_trial(cfg, &s, &tf, t))?;
    Ok(assemble("verify-fixed", cfg, &s, s.spec.gd_steps(), &["rep_format_residual"], rows))
}

pub fn verify_dyn(cfg: &ExperimentConfig) -> Result<Output<VerifyReport>> {
    if cfg.setting != Setting::Dynamical {
        bail!("verify-dyn needs setting = \"dynamical\"");
    }
    let s = setup(cfg)?;
    let tf = s.model.compile();
    let rows = run_trials(cfg, |t| dyn_trial(cfg, &s, &tf, t))?;
    Ok(assemble(
        "verify-dyn",
        cfg,
        &s,
        s.spec.gd_steps_dyn(),
        &["copy_residual", "layer1_residual", "rep_end_residual"],
        rows,
    ))
}
