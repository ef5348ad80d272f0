// SPDX-License-Identifier: MIT OR Apache-2.0
//! `probe`: linear probes of named targets across the model's landmarks.

use anyhow::{bail, Result};
use icl_repr::constructions::BuiltModel;
use icl_repr::data::encode::{encode_dynamical, encode_supervised};
use icl_repr::data::instances::history;
use icl_repr::engine::TokenMatrix;
use icl_repr::numerics::{DenseMatrix, DenseVector};
use icl_repr::oracles::{multiout_ridge_sequence, phi_ridge_sequence};
use icl_repr::probe::{
    collect_hidden_states, fit_probe, probe_all, probe_error_per_token, Parity, ProbeDataset, StateIndex,
};
use icl_repr::rng::{stream, Purpose};
use serde::Serialize;

use crate::config::{ExperimentConfig, Setting};
use crate::experiment::{sample_dynamical, sample_supervised, setup, with_workers, Setup};
use crate::report::{num, Output, Table};

/// Named probing targets; `values[n][i]` for instance `n`, token `i`.
pub struct Targets {
    pub names: Vec<String>,
    pub values: Vec<Vec<Vec<DenseVector>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub state: String,
    pub parity: &'static str,
    pub target: String,
    pub error: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    pub train_instances: usize,
    pub test_instances: usize,
}

impl ProbeReport {
    pub fn error(&self, state: StateIndex, parity: Parity, target: &str) -> Option<f64> {
        let s = state.to_string();
        self.rows
            .iter()
            .find(|r| r.state == s && r.parity == parity.as_str() && r.target == target)
            .map(|r| r.error)
    }
}

pub fn default_states(model: &BuiltModel) -> Vec<StateIndex> {
    let lm = model.landmarks;
    let mut v = vec![StateIndex::Layer(0)];
    if model.input_layout.mode == icl_repr::data::layout::Mode::Dynamical {
        v.push(StateIndex::PostAttention(lm.copy));
    }
    v.extend((1..=lm.rep_end).map(StateIndex::Layer));
    v.push(StateIndex::Layer(lm.gd_start));
    v.push(StateIndex::Layer(lm.prediction));
    v.dedup();
    v
}

fn supervised_inputs(cfg: &ExperimentConfig, s: &Setup, purpose: Purpose, rep_ix: u64, n: usize) -> Result<(Vec<TokenMatrix>, Targets)> {
    let mut inputs = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    let mut pred = Vec::with_capacity(n);
    for j in 0..n as u64 {
        let inst = sample_supervised(cfg, &s.rep, &mut stream(cfg.seed, purpose, (rep_ix << 32) | j))?;
        let seq = phi_ridge_sequence(&inst, &s.rep, s.spec.lambda)?;
        phi.push(inst.xs.iter().map(|x| s.rep.apply(x)).collect::<icl_repr::Result<Vec<_>>>()?);
        pred.push(seq.predictions.iter().map(|p| vec![*p]).collect());
        inputs.push(encode_supervised(&inst, s.model.tf.hidden_dim)?);
    }
    Ok((
        inputs,
        Targets {
            names: vec!["phi".into(), "ridge_prediction".into()],
            values: vec![phi, pred],
        },
    ))
}

fn dynamical_inputs(cfg: &ExperimentConfig, s: &Setup, purpose: Purpose, rep_ix: u64, n: usize) -> Result<(Vec<TokenMatrix>, Targets)> {
    let (d, k) = (cfg.dims.d, cfg.dims.k);
    let b1 = &s.rep.weights[0];
    let mut names: Vec<String> = vec!["phi".into(), "phi_prev".into(), "phi_prev2".into(), "prediction".into()];
    names.extend((0..k).map(|j| format!("b1_lag{j}")));
    let mut values = vec![Vec::with_capacity(n); names.len()];
    let mut inputs = Vec::with_capacity(n);
    for j in 0..n as u64 {
        let inst = sample_dynamical(cfg, &s.rep, &mut stream(cfg.seed, purpose, (rep_ix << 32) | j))?;
        let seq = multiout_ridge_sequence(&inst, &s.rep, s.spec.lambda)?;
        let phi_at = |i: usize| s.rep.apply(&history(&inst.xs, i, k, d));
        let mut per: Vec<Vec<DenseVector>> = vec![Vec::with_capacity(inst.len()); names.len()];
        for i in 1..=inst.len() {
            per[0].push(phi_at(i)?);
            per[1].push(phi_at(i - 1)?);
            per[2].push(phi_at(i.saturating_sub(2))?);
            per[3].push(seq.predictions[i - 1].clone());
            for lag in 0..k {
                // Block k−1−lag of x̄_i holds x_{i−lag}.
                let block = k - 1 - lag;
                let x = if i > lag { inst.xs[i - lag - 1].clone() } else { vec![0.0; d] };
                let cols = DenseMatrix::from_fn(b1.rows(), d, |r, c| b1[(r, block * d + c)]);
                per[4 + lag].push(cols.matvec(&x)?);
            }
        }
        for (dst, src) in values.iter_mut().zip(per) {
            dst.push(src);
        }
        inputs.push(encode_dynamical(&inst, s.model.tf.hidden_dim)?);
    }
    Ok((inputs, Targets { names, values }))
}

fn inputs_for(cfg: &ExperimentConfig, s: &Setup, purpose: Purpose, rep_ix: u64, n: usize) -> Result<(Vec<TokenMatrix>, Targets)> {
    match cfg.setting {
        Setting::Supervised => supervised_inputs(cfg, s, purpose, rep_ix, n),
        Setting::Dynamical => dynamical_inputs(cfg, s, purpose, rep_ix, n),
        Setting::Mixture => bail!("probing needs a supervised or dynamical model"),
    }
}

/// Probe errors averaged over replicates with fresh train and test draws.
pub fn run_probe(cfg: &ExperimentConfig, s: &Setup, states: &[StateIndex]) -> Result<Output<ProbeReport>> {
    let parities: Vec<Parity> = match cfg.setting {
        Setting::Supervised => vec![Parity::X, Parity::Y],
        _ => vec![Parity::X],
    };
    let reps = cfg.probe.replicates;
    // sums[target][state][parity]
    let mut sums: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut per_token = Table::new("per_token", vec!["state", "parity", "target", "replicate", "token", "error"]);
    let mut names = Vec::new();
    for r in 0..reps as u64 {
        let (train_in, train_t) = inputs_for(cfg, s, Purpose::ProbeTrain, r, cfg.probe.train)?;
        let (test_in, test_t) = inputs_for(cfg, s, Purpose::ProbeTest, r, cfg.probe.test)?;
        names = train_t.names.clone();
        if sums.is_empty() {
            sums = vec![vec![vec![0.0; parities.len()]; states.len()]; names.len()];
        }
        let (train, test) = with_workers(cfg.workers, || -> Result<_> {
            Ok((
                collect_hidden_states(&s.model, &train_in, &train_t.values[0], states, &parities)?,
                collect_hidden_states(&s.model, &test_in, &test_t.values[0], states, &parities)?,
            ))
        })??;
        for (ti, name) in names.iter().enumerate() {
            let ds = ProbeDataset {
                states: states.to_vec(),
                parities: parities.clone(),
                train: train.with_targets(&train_t.values[ti])?,
                test: test.with_targets(&test_t.values[ti])?,
            };
            let errs = with_workers(cfg.workers, || probe_all(&ds))??;
            for (si, row) in errs.iter().enumerate() {
                for (pi, e) in row.iter().enumerate() {
                    sums[ti][si][pi] += e;
                }
            }
            if cfg.probe.per_token {
                for (si, st) in states.iter().enumerate() {
                    for (pi, p) in parities.iter().enumerate() {
                        let probe = fit_probe(&ds, si, pi)?;
                        for (i, e) in probe_error_per_token(&probe, &ds, si, pi)?.into_iter().enumerate() {
                            per_token.push(vec![
                                st.to_string(),
                                p.as_str().into(),
                                name.clone(),
                                r.to_string(),
                                (i + 1).to_string(),
                                num(e),
                            ]);
                        }
                    }
                }
            }
        }
    }
    let mut table = Table::new("errors", vec!["state", "parity", "target", "error", "replicates"]);
    let mut rows = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        for (si, st) in states.iter().enumerate() {
            for (pi, p) in parities.iter().enumerate() {
                let e = sums[ti][si][pi] / reps as f64;
                table.push(vec![st.to_string(), p.as_str().into(), name.clone(), num(e), reps.to_string()]);
                rows.push(ProbeRow {
                    state: st.to_string(),
                    parity: p.as_str(),
                    target: name.clone(),
                    error: e,
                    replicates: reps,
                });
            }
        }
    }
    let mut tables = vec![table];
    if cfg.probe.per_token {
        tables.push(per_token);
    }
    Ok(Output {
        command: "probe",
        pass: true,
        report: ProbeReport {
            rows,
            train_instances: cfg.probe.train,
            test_instances: cfg.probe.test,
        },
        tables,
    })
}

pub fn probe(cfg: &ExperimentConfig) -> Result<Output<ProbeReport>> {
    let s = setup(cfg)?;
    let states: Vec<StateIndex> = if cfg.probe.layers.is_empty() {
        default_states(&s.model)
    } else {
        cfg.probe.layers.iter().map(|&l| StateIndex::Layer(l)).collect()
    };
    run_probe(cfg, &s, &states)
}
