// SPDX-License-Identifier: MIT OR Apache-2.0
//! Closed-form and iterative reference predictors.

use rayon::prelude::*;

use crate::constructions::RidgeSpec;
use crate::data::instances::{history, DynInstance, IclInstance};
use crate::data::representation::RepresentationFn;
use crate::error::{Error, Result};
use crate::numerics::{dot, ridge_solve, DenseMatrix, DenseVector};
use crate::rng::{stream, Purpose, StreamRng};

/// Ridge penalty as a function of the number of fitted pairs `n = i − 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegSchedule {
    Constant(f64),
    /// `λ_i = (σ²/τ²)/(i−1)`: the posterior mean under a `N(0, τ²I)` prior
    /// once the loss is divided by `i − 1`.
    PosteriorMean { noise_to_prior: f64 },
}

impl RegSchedule {
    pub fn lambda(&self, n: usize) -> f64 {
        match *self {
            RegSchedule::Constant(l) => l,
            RegSchedule::PosteriorMean { noise_to_prior } => noise_to_prior / n.max(1) as f64,
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            RegSchedule::Constant(l) => l,
            RegSchedule::PosteriorMean { noise_to_prior } => noise_to_prior,
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("ridge penalty {v} must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSequence {
    /// `weights[i−1] = ŵ_i`, fitted on the first `i − 1` pairs.
    pub weights: Vec<DenseVector>,
    /// `predictions[i−1] = ⟨ŵ_i, x_i⟩`.
    pub predictions: Vec<f64>,
    /// Penalty used at each token (unused at `i = 1`).
    pub lambdas: Vec<f64>,
}

/// Per-token ridge on `(features[j], ys[j])`, `j < i`, with divisor `i − 1`.
pub fn ridge_sequence(features: &[DenseVector], ys: &[f64], schedule: &RegSchedule) -> Result<RidgeSequence> {
    schedule.validate()?;
    if features.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            op: "ridge_sequence",
            left: (features.len(), 1),
            right: (ys.len(), 1),
        });
    }
    let p = features.first().map_or(0, Vec::len);
    let n = features.len();
    let mut out = RidgeSequence {
        weights: Vec::with_capacity(n),
        predictions: Vec::with_capacity(n),
        lambdas: Vec::with_capacity(n),
    };
    for i in 1..=n {
        let lambda = schedule.lambda(i - 1);
        let w = if i == 1 {
            vec![0.0; p]
        } else {
            let x = DenseMatrix::from_rows(&features[..i - 1], p)?;
            ridge_solve(&x, &ys[..i - 1], lambda, i - 1)?
        };
        out.predictions.push(dot(&w, &features[i - 1]));
        out.weights.push(w);
        out.lambdas.push(lambda);
    }
    Ok(out)
}

pub fn features_of(inst: &IclInstance, rep: &RepresentationFn) -> Result<Vec<DenseVector>> {
    inst.xs.iter().map(|x| rep.apply(x)).collect()
}

/// Ridge on `(Φ(x_j), y_j)` with a constant penalty.
pub fn phi_ridge_sequence(inst: &IclInstance, rep: &RepresentationFn, lambda: f64) -> Result<RidgeSequence> {
    phi_ridge_sequence_with(inst, rep, &RegSchedule::Constant(lambda))
}

pub fn phi_ridge_sequence_with(
    inst: &IclInstance,
    rep: &RepresentationFn,
    schedule: &RegSchedule,
) -> Result<RidgeSequence> {
    ridge_sequence(&features_of(inst, rep)?, &inst.ys, schedule)
}

/// `∇ L̂(w) = (1/n) Σ_j (⟨w, x_j⟩ − y_j) x_j + λ w` over the given pairs.
pub fn ridge_gradient(xs: &[DenseVector], ys: &[f64], w: &[f64], lambda: f64) -> DenseVector {
    let mut g: DenseVector = w.iter().map(|v| lambda * v).collect();
    let n = xs.len();
    if n == 0 {
        return g;
    }
    for (x, y) in xs.iter().zip(ys) {
        let r = (dot(w, x) - y) / n as f64;
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi += r * xi;
        }
    }
    g
}

/// One explicit step `w − step · ∇L̂(w)`.
pub fn gd_step(xs: &[DenseVector], ys: &[f64], w: &[f64], lambda: f64, step: f64) -> DenseVector {
    let g = ridge_gradient(xs, ys, w, lambda);
    w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect()
}

/// Which realised step size the iterates follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `(i−1)/(2i−1) · 2/β`, interleaved x/y tokens.
    Interleaved,
    /// `(i−1)/i · 1/β`, one token per state.
    PerToken,
}

impl StepRule {
    pub fn step(self, spec: &RidgeSpec, i: usize) -> f64 {
        match self {
            StepRule::Interleaved => spec.step_size(i),
            StepRule::PerToken => spec.step_size_dyn(i),
        }
    }
}

/// `out[i−1][t] = w_i^t` for `t = 0..=t_max`, starting from zero.
pub fn gd_iterates(
    features: &[DenseVector],
    ys: &[f64],
    spec: &RidgeSpec,
    rule: StepRule,
    t_max: usize,
) -> Vec<Vec<DenseVector>> {
    let p = features.first().map_or(0, Vec::len);
    (1..=features.len())
        .map(|i| {
            let step = rule.step(spec, i);
            let mut traj = Vec::with_capacity(t_max + 1);
            let mut w = vec![0.0; p];
            traj.push(w.clone());
            for _ in 0..t_max {
                w = gd_step(&features[..i - 1], &ys[..i - 1], &w, spec.lambda, step);
                traj.push(w.clone());
            }
            traj
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRidgeSequence {
    /// `weights[i−1] = Ŵ_i` (`D × d`), fitted on `(Φ(x̄_j), x_{j+1})`, `j < i`.
    pub weights: Vec<DenseMatrix>,
    /// `predictions[i−1] = Ŵ_iᵀ Φ(x̄_i)`, the forecast of `x_{i+1}`.
    pub predictions: Vec<DenseVector>,
    pub lambda: f64,
}

/// Columnwise ridge for the trajectory, divisor `i − 1`.
pub fn multiout_ridge_sequence(inst: &DynInstance, rep: &RepresentationFn, lambda: f64) -> Result<MatrixRidgeSequence> {
    RegSchedule::Constant(lambda).validate()?;
    let d = inst.state_dim();
    let n = inst.len();
    let feats: Vec<DenseVector> = (1..=n)
        .map(|i| rep.apply(&history(&inst.xs, i, inst.k, d)))
        .collect::<Result<_>>()?;
    let dd = rep.dim;
    let mut weights = Vec::with_capacity(n);
    let mut predictions = Vec::with_capacity(n);
    for i in 1..=n {
        let mut w = DenseMatrix::zeros(dd, d);
        if i > 1 {
            let x = DenseMatrix::from_rows(&feats[..i - 1], dd)?;
            for c in 0..d {
                let y: Vec<f64> = inst.xs[1..i].iter().map(|s| s[c]).collect();
                w.set_column(c, &ridge_solve(&x, &y, lambda, i - 1)?);
            }
        }
        predictions.push(w.matvec_t(&feats[i - 1])?);
        weights.push(w);
    }
    Ok(MatrixRidgeSequence {
        weights,
        predictions,
        lambda,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrediction {
    pub predictions: Vec<f64>,
    /// `weights[i−1][j]`: posterior weight of task `j` at token `i`.
    pub weights: Vec<Vec<f64>>,
    /// Per-task ridge predictions `ŷ_i^{(j)}`, `[task][token]`.
    pub per_task: Vec<Vec<f64>>,
}

/// Evidence-weighted average of per-task ridge predictors. The log-weight of
/// task `j` at token `i` is `−Σ_{m<i} (y_m − ŷ_m^{(j)})² / (2σ²)`; at `σ = 0`
/// the weight is spread evenly over the tasks with the smallest residual sum.
pub fn mixture_bayes_predictor(
    inst: &IclInstance,
    reps: &[RepresentationFn],
    schedules: &[RegSchedule],
    sigma: f64,
) -> Result<MixturePrediction> {
    if reps.is_empty() || reps.len() != schedules.len() {
        return Err(Error::InvalidParameter(format!(
            "{} representations but {} penalties",
            reps.len(),
            schedules.len()
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise σ = {sigma} must be ≥ 0")));
    }
    let per_task: Vec<Vec<f64>> = reps
        .iter()
        .zip(schedules)
        .map(|(r, s)| phi_ridge_sequence_with(inst, r, s).map(|q| q.predictions))
        .collect::<Result<_>>()?;
    let k = reps.len();
    let n = inst.len();
    let mut sse = vec![0.0; k];
    let mut predictions = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let w = if sigma > 0.0 {
            let logw: Vec<f64> = sse.iter().map(|s| -s / (2.0 * sigma * sigma)).collect();
            let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect::<Vec<_>>()
        } else {
            let m = sse.iter().copied().fold(f64::INFINITY, f64::min);
            let hits = sse.iter().filter(|&&s| s == m).count() as f64;
            sse.iter().map(|&s| if s == m { 1.0 / hits } else { 0.0 }).collect()
        };
        predictions.push((0..k).map(|j| w[j] * per_task[j][i]).sum());
        weights.push(w);
        for j in 0..k {
            let r = inst.ys[i] - per_task[j][i];
            sse[j] += r * r;
        }
    }
    Ok(MixturePrediction {
        predictions,
        weights,
        per_task,
    })
}

/// Per-trial, per-token losses `½(ŷ_i − y_i)²` of one predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    pub losses: Vec<Vec<f64>>,
}

/// Mean risk per token with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub n_trials: usize,
}

impl RiskCurve {
    /// Confidence half-width `z · se` per token.
    pub fn half_width(&self, z: f64) -> Vec<f64> {
        self.se.iter().map(|s| z * s).collect()
    }
}

fn mean_se(v: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

impl LossMatrix {
    pub fn n_trials(&self) -> usize {
        self.losses.len()
    }

    pub fn curve(&self) -> RiskCurve {
        let n_tok = self.losses.first().map_or(0, Vec::len);
        let (mean, se) = (0..n_tok)
            .map(|t| mean_se(self.losses.iter().map(move |l| l[t]).collect::<Vec<_>>().into_iter()))
            .unzip();
        RiskCurve {
            mean,
            se,
            n_trials: self.n_trials(),
        }
    }

    /// Risk averaged over 1-based tokens `i ≥ from`, with the standard error
    /// of the per-trial averages.
    pub fn window(&self, from: usize) -> (f64, f64) {
        let avgs: Vec<f64> = self.losses.iter().map(|l| window_avg(l, from)).collect();
        mean_se(avgs.into_iter())
    }

    /// Paired difference `self − other` over the same window.
    pub fn paired_diff(&self, other: &LossMatrix, from: usize) -> (f64, f64) {
        let d: Vec<f64> = self
            .losses
            .iter()
            .zip(&other.losses)
            .map(|(a, b)| window_avg(a, from) - window_avg(b, from))
            .collect();
        mean_se(d.into_iter())
    }
}

fn window_avg(l: &[f64], from: usize) -> f64 {
    let s = &l[from.max(1) - 1..];
    s.iter().sum::<f64>() / s.len() as f64
}

/// Runs `trial` on stream `(seed, MonteCarlo, t)` for every `t` in parallel.
/// Each trial returns the labels and one prediction vector per predictor;
/// results are gathered by trial index, so the output does not depend on
/// scheduling.
pub fn monte_carlo_risk<F>(n_trials: usize, seed: u64, trial: F) -> Result<Vec<LossMatrix>>
where
    F: Fn(&mut StreamRng) -> Result<(Vec<f64>, Vec<Vec<f64>>)> + Sync,
{
    if n_trials < 2 {
        return Err(Error::InvalidParameter(format!(
            "Monte-Carlo risk needs at least 2 trials, got {n_trials}"
        )));
    }
    let runs: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..n_trials)
        .into_par_iter()
        .map(|t| trial(&mut stream(seed, Purpose::MonteCarlo, t as u64)))
        .collect::<Result<_>>()?;
    let k = runs[0].1.len();
    let mut out = vec![LossMatrix { losses: Vec::with_capacity(n_trials) }; k];
    for (ys, preds) in runs {
        if preds.len() != k {
            return Err(Error::InvalidParameter("trials returned different predictor counts".into()));
        }
        for (m, p) in out.iter_mut().zip(preds) {
            m.losses
                .push(p.iter().zip(&ys).map(|(a, y)| 0.5 * (a - y) * (a - y)).collect());
        }
    }
    Ok(out)
}
