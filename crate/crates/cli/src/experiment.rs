// SPDX-License-Identifier: MIT OR Apache-2.0
//! Shared setup: representations, pilot bounds, checked sampling, models.

use anyhow::{bail, Context, Result};
use icl_repr::constructions::{
    build_dyn_tf, build_fixed_rep_tf, check_dyn_bounds, check_supervised_bounds, dyn_hidden_dim,
    fixed_rep_hidden_dim, BoundViolation, BuiltModel, RidgeSpec, ViolationKind,
};
use icl_repr::data::instances::{
    history, sample_dynamical_instance, sample_supervised_instance_with, DynInstance, IclInstance, InputDist,
};
use icl_repr::data::layout::SlotLayout;
use icl_repr::data::representation::{sample_representation, RepresentationFn};
use icl_repr::numerics::{norm, DenseVector};
use icl_repr::oracles::{features_of, multiout_ridge_sequence, ridge_sequence, RegSchedule};
use icl_repr::rng::{stream, Purpose, StreamRng};
use serde::Serialize;

use crate::config::{ExperimentConfig, Setting};

/// Runs `f` on a pool with the configured worker count.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building the worker pool")?;
    Ok(pool.install(f))
}

/// Representation `j` of the run (task index for mixtures).
pub fn representation(cfg: &ExperimentConfig, j: usize) -> Result<RepresentationFn> {
    let d = &cfg.dims;
    let d_in = if cfg.setting == Setting::Dynamical { d.k * d.d } else { d.d };
    Ok(sample_representation(
        d_in,
        d.rep_dim,
        d.rep_depth,
        d.slope,
        d.normalize,
        &mut stream(cfg.seed, Purpose::Representation, j as u64),
    )?)
}

/// Level-set inputs for normalized representations, so the constructed
/// `Φ̃` and the oracle's `Φ` coincide.
pub fn input_dist(cfg: &ExperimentConfig) -> InputDist {
    if cfg.dims.normalize {
        InputDist::RepresentationSphere
    } else {
        InputDist::Gaussian
    }
}

pub fn sample_supervised(cfg: &ExperimentConfig, rep: &RepresentationFn, rng: &mut StreamRng) -> Result<IclInstance> {
    Ok(sample_supervised_instance_with(
        rep,
        input_dist(cfg),
        cfg.noise.tau,
        cfg.noise.sigma,
        cfg.dims.n,
        rng,
    )?)
}

pub fn sample_dynamical(cfg: &ExperimentConfig, rep: &RepresentationFn, rng: &mut StreamRng) -> Result<DynInstance> {
    Ok(sample_dynamical_instance(
        rep,
        cfg.dims.k,
        cfg.noise.tau,
        cfg.noise.sigma,
        cfg.dims.n,
        rng,
    )?)
}

/// Where each bound came from.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub b_x: f64,
    pub b_w: f64,
    pub b_y: f64,
    pub b_x_source: &'static str,
    pub b_w_source: &'static str,
    pub b_y_source: &'static str,
    pub pilot_max_feature_norm: f64,
    pub pilot_max_weight_norm: f64,
    pub pilot_max_label: f64,
}

fn pick(over: Option<f64>, pilot: f64) -> (f64, &'static str) {
    match over {
        Some(v) => (v, "override"),
        None => (pilot, "pilot"),
    }
}

fn finish_bounds(cfg: &ExperimentConfig, max_phi: f64, max_w: f64, max_y: f64, unit_features: bool) -> Result<(RidgeSpec, BoundsReport)> {
    let m = cfg.bounds.margin;
    let (b_x, b_x_source) = match cfg.bounds.b_x {
        Some(v) => (v, "override"),
        None if unit_features => (1.0, "normalized"),
        None => (m * max_phi, "pilot"),
    };
    let (b_w, b_w_source) = pick(cfg.bounds.b_w, 2.0 * m * max_w);
    let (b_y, b_y_source) = pick(cfg.bounds.b_y, 2.0 * m * max_y);
    if cfg.ridge.eps >= b_x * b_w / 2.0 {
        bail!(
            "ridge.eps = {} must be below B_x·B_w/2 = {} (B_x = {b_x}, B_w = {b_w})",
            cfg.ridge.eps,
            b_x * b_w / 2.0
        );
    }
    let spec = RidgeSpec::new(cfg.ridge.lambda, cfg.ridge.eps, b_x, b_w, b_y)?;
    Ok((
        spec,
        BoundsReport {
            b_x,
            b_w,
            b_y,
            b_x_source,
            b_w_source,
            b_y_source,
            pilot_max_feature_norm: max_phi,
            pilot_max_weight_norm: max_w,
            pilot_max_label: max_y,
        },
    ))
}

/// Pilot batch on its own stream, then bounds with the configured margin.
pub fn supervised_spec(cfg: &ExperimentConfig, rep: &RepresentationFn) -> Result<(RidgeSpec, BoundsReport)> {
    let (mut mp, mut mw, mut my) = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..cfg.bounds.pilot_trials {
        let inst = sample_supervised(cfg, rep, &mut stream(cfg.seed, Purpose::Pilot, t as u64))?;
        let feats = features_of(&inst, rep)?;
        let seq = ridge_sequence(&feats, &inst.ys, &RegSchedule::Constant(cfg.ridge.lambda))?;
        mp = feats.iter().map(|f| norm(f)).fold(mp, f64::max);
        mw = seq.weights.iter().map(|w| norm(w)).fold(mw, f64::max);
        my = inst.ys.iter().map(|y| y.abs()).fold(my, f64::max);
    }
    finish_bounds(cfg, mp, mw, my, cfg.dims.normalize)
}

pub fn dyn_features(inst: &DynInstance, rep: &RepresentationFn) -> Result<Vec<DenseVector>> {
    let d = inst.state_dim();
    (1..=inst.len())
        .map(|i| Ok(rep.apply(&history(&inst.xs, i, inst.k, d))?))
        .collect()
}

pub fn dynamical_spec(cfg: &ExperimentConfig, rep: &RepresentationFn) -> Result<(RidgeSpec, BoundsReport)> {
    let (mut mp, mut mw, mut my) = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..cfg.bounds.pilot_trials {
        let inst = sample_dynamical(cfg, rep, &mut stream(cfg.seed, Purpose::Pilot, t as u64))?;
        let seq = multiout_ridge_sequence(&inst, rep, cfg.ridge.lambda)?;
        mp = dyn_features(&inst, rep)?.iter().map(|f| norm(f)).fold(mp, f64::max);
        for w in &seq.weights {
            mw = (0..w.cols()).map(|c| norm(&w.column(c))).fold(mw, f64::max);
        }
        my = inst.xs.iter().flatten().map(|v| v.abs()).fold(my, f64::max);
    }
    finish_bounds(cfg, mp, mw, my, false)
}

pub fn build_supervised_model(cfg: &ExperimentConfig, rep: &RepresentationFn, spec: &RidgeSpec) -> Result<BuiltModel> {
    let dim = fixed_rep_hidden_dim(cfg.dims.d, cfg.dims.rep_dim);
    Ok(build_fixed_rep_tf(rep, spec, &SlotLayout::supervised_input(cfg.dims.d, dim)?)?)
}

pub fn build_dynamical_model(cfg: &ExperimentConfig, rep: &RepresentationFn, spec: &RidgeSpec) -> Result<BuiltModel> {
    if rep.normalize {
        bail!("dims.normalize must be false for the dynamical construction (it computes the unnormalized representation)");
    }
    let dim = dyn_hidden_dim(cfg.dims.d, cfg.dims.rep_dim, cfg.dims.k);
    Ok(build_dyn_tf(rep, cfg.dims.k, spec, &SlotLayout::dynamical_input(cfg.dims.d, dim)?)?)
}

/// Everything a run needs: representation, bounds and the built model.
pub struct Setup {
    pub rep: RepresentationFn,
    pub spec: RidgeSpec,
    pub bounds: BoundsReport,
    pub model: BuiltModel,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let rep = representation(cfg, 0)?;
    let (spec, bounds, model) = match cfg.setting {
        Setting::Supervised => {
            let (s, b) = supervised_spec(cfg, &rep)?;
            let m = build_supervised_model(cfg, &rep, &s)?;
            (s, b, m)
        }
        Setting::Dynamical => {
            if cfg.dims.normalize {
                bail!("dims.normalize must be false in the dynamical setting");
            }
            let (s, b) = dynamical_spec(cfg, &rep)?;
            let m = build_dynamical_model(cfg, &rep, &s)?;
            (s, b, m)
        }
        Setting::Mixture => bail!("no transformer construction for the mixture setting; use risk-curve"),
    };
    Ok(Setup { rep, spec, bounds, model })
}

/// Outcome of sampling until the preconditions hold.
pub struct Checked<T> {
    pub value: Option<T>,
    pub resamples: usize,
    pub rejected: Vec<ViolationKind>,
}

pub fn sample_until<T>(
    max_resamples: usize,
    mut draw: impl FnMut() -> Result<T>,
    check: impl Fn(&T) -> Result<Vec<BoundViolation>>,
) -> Result<Checked<T>> {
    let mut rejected = Vec::new();
    for attempt in 0..=max_resamples {
        let v = draw()?;
        let bad = check(&v)?;
        if bad.is_empty() {
            return Ok(Checked {
                value: Some(v),
                resamples: attempt,
                rejected,
            });
        }
        for b in bad {
            if !rejected.contains(&b.kind) {
                rejected.push(b.kind);
            }
        }
    }
    Ok(Checked {
        value: None,
        resamples: max_resamples,
        rejected,
    })
}

pub fn supervised_violations(spec: &RidgeSpec, rep: &RepresentationFn, inst: &IclInstance) -> Result<Vec<BoundViolation>> {
    let feats = features_of(inst, rep)?;
    let seq = ridge_sequence(&feats, &inst.ys, &RegSchedule::Constant(spec.lambda))?;
    Ok(check_supervised_bounds(spec, &feats, &inst.ys, &seq.weights))
}

pub fn dyn_violations(spec: &RidgeSpec, rep: &RepresentationFn, inst: &DynInstance) -> Result<Vec<BoundViolation>> {
    let feats = dyn_features(inst, rep)?;
    let seq = multiout_ridge_sequence(inst, rep, spec.lambda)?;
    Ok(check_dyn_bounds(spec, &feats, &inst.xs, &seq.weights))
}
