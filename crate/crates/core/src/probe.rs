// SPDX-License-Identifier: MIT OR Apache-2.0
//! Token-wise linear probes on hidden traces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constructions::BuiltModel;
use crate::engine::TokenMatrix;
use crate::error::{Error, Result};
use crate::numerics::{least_squares, DenseMatrix, DenseVector};

/// Which hidden state a probe reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateIndex {
    /// Output of layer `ℓ`; `Layer(0)` is the encoded input.
    Layer(usize),
    /// Residual stream after the attention of layer `ℓ`, before its MLP.
    PostAttention(usize),
}

impl std::fmt::Display for StateIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateIndex::Layer(l) => write!(f, "{l}"),
            StateIndex::PostAttention(l) => write!(f, "{l}a"),
        }
    }
}

/// Token of pair `i` that is probed. Dynamical models have one token per
/// step and use `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    X,
    Y,
}

impl Parity {
    pub fn as_str(self) -> &'static str {
        match self {
            Parity::X => "x",
            Parity::Y => "y",
        }
    }
}

/// Hidden states of one split, pooled over instances and token index.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSplit {
    /// `designs[s][q]`: rows are `(instance, i)` in instance-major order.
    pub designs: Vec<Vec<DenseMatrix>>,
    /// One row per `(instance, i)`, shared by both parities.
    pub targets: DenseMatrix,
    pub n_instances: usize,
    pub n_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub states: Vec<StateIndex>,
    pub parities: Vec<Parity>,
    pub train: ProbeSplit,
    pub test: ProbeSplit,
}

impl ProbeSplit {
    /// Same hidden states, different target (`targets[n][i]` as in
    /// [`collect_hidden_states`]).
    pub fn with_targets(&self, targets: &[Vec<DenseVector>]) -> Result<ProbeSplit> {
        if targets.len() != self.n_instances || targets.iter().any(|t| t.len() != self.n_tokens) {
            return Err(Error::InvalidParameter("targets do not match the collected states".into()));
        }
        Ok(ProbeSplit {
            designs: self.designs.clone(),
            targets: target_matrix(targets, self.n_tokens)?,
            n_instances: self.n_instances,
            n_tokens: self.n_tokens,
        })
    }
}

fn target_matrix(targets: &[Vec<DenseVector>], n_tokens: usize) -> Result<DenseMatrix> {
    let q = targets.first().and_then(|t| t.first()).map_or(0, Vec::len);
    let mut t = DenseMatrix::zeros(targets.len() * n_tokens, q);
    for (n, tg) in targets.iter().enumerate() {
        for (i, v) in tg.iter().enumerate() {
            if v.len() != q {
                return Err(Error::InvalidParameter("targets differ in dimension".into()));
            }
            t.row_mut(n * n_tokens + i).copy_from_slice(v);
        }
    }
    Ok(t)
}

fn column_of(parity: Parity, interleaved: bool, i: usize) -> usize {
    match (interleaved, parity) {
        (true, Parity::X) => 2 * i,
        (true, Parity::Y) => 2 * i + 1,
        (false, _) => i,
    }
}

/// Runs every input through the model and gathers the requested states.
/// `targets[n][i]` is the probing target at pair (or step) `i + 1` of
/// instance `n`.
pub fn collect_hidden_states(
    model: &BuiltModel,
    inputs: &[TokenMatrix],
    targets: &[Vec<DenseVector>],
    states: &[StateIndex],
    parities: &[Parity],
) -> Result<ProbeSplit> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} inputs and {} target sequences",
            inputs.len(),
            targets.len()
        )));
    }
    let interleaved = model.input_layout.mode == crate::data::layout::Mode::Supervised;
    let n_tokens = targets[0].len();
    let depth = model.depth();
    for s in states {
        let l = match *s {
            StateIndex::Layer(l) => l,
            StateIndex::PostAttention(l) if l >= 1 => l,
            StateIndex::PostAttention(_) => depth + 1,
        };
        if l > depth {
            return Err(Error::InvalidParameter(format!("state {s} outside depth {depth}")));
        }
    }
    let need_post = states.iter().any(|s| matches!(s, StateIndex::PostAttention(_)));
    let compiled = model.compile();
    // [instance][state][parity] -> rows
    let per_inst: Vec<Vec<Vec<Vec<DenseVector>>>> = inputs
        .par_iter()
        .zip(targets)
        .map(|(h, tg)| {
            let tokens = if interleaved { h.seq_len() / 2 } else { h.seq_len() };
            if tg.len() != n_tokens || tokens != n_tokens {
                return Err(Error::InvalidParameter("instances differ in length".into()));
            }
            let trace = compiled.forward_trace(h, need_post)?;
            Ok(states
                .iter()
                .map(|s| {
                    let m = match *s {
                        StateIndex::Layer(l) => &trace.states[l],
                        StateIndex::PostAttention(l) => &trace.post_attention.as_ref().expect("recorded")[l - 1],
                    };
                    parities
                        .iter()
                        .map(|&p| (0..n_tokens).map(|i| m.column(column_of(p, interleaved, i))).collect())
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows = inputs.len() * n_tokens;
    let dim = model.tf.hidden_dim;
    let mut designs = Vec::with_capacity(states.len());
    for s in 0..states.len() {
        let mut by_parity = Vec::with_capacity(parities.len());
        for p in 0..parities.len() {
            let mut m = DenseMatrix::zeros(rows, dim);
            for (n, inst) in per_inst.iter().enumerate() {
                for (i, v) in inst[s][p].iter().enumerate() {
                    m.row_mut(n * n_tokens + i).copy_from_slice(v);
                }
            }
            by_parity.push(m);
        }
        designs.push(by_parity);
    }
    Ok(ProbeSplit {
        designs,
        targets: target_matrix(targets, n_tokens)?,
        n_instances: inputs.len(),
        n_tokens,
    })
}

/// Affine probe on standardized hidden coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    mean: DenseVector,
    /// Zero for constant coordinates, which are dropped.
    inv_scale: DenseVector,
    target_mean: DenseVector,
    weights: DenseMatrix,
}

impl Probe {
    fn standardize(&self, x: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(x.rows(), x.cols(), |r, c| (x[(r, c)] - self.mean[c]) * self.inv_scale[c])
    }

    pub fn predict(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = crate::numerics::matmul(&self.standardize(x), &self.weights)?;
        for r in 0..out.rows() {
            for (v, m) in out.row_mut(r).iter_mut().zip(&self.target_mean) {
                *v += m;
            }
        }
        Ok(out)
    }
}

fn column_means(x: &DenseMatrix) -> DenseVector {
    let n = x.rows().max(1) as f64;
    (0..x.cols()).map(|c| (0..x.rows()).map(|r| x[(r, c)]).sum::<f64>() / n).collect()
}

/// Ordinary least squares from standardized states to targets.
pub fn fit_probe_on(x: &DenseMatrix, y: &DenseMatrix) -> Result<Probe> {
    let mean = column_means(x);
    let n = x.rows().max(1) as f64;
    let inv_scale = (0..x.cols())
        .map(|c| {
            let sd = ((0..x.rows()).map(|r| (x[(r, c)] - mean[c]).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 1e-12 * (1.0 + mean[c].abs()) {
                1.0 / sd
            } else {
                0.0
            }
        })
        .collect();
    let target_mean = column_means(y);
    let mut probe = Probe {
        mean,
        inv_scale,
        target_mean,
        weights: DenseMatrix::zeros(x.cols(), y.cols()),
    };
    let xs = probe.standardize(x);
    let yc = DenseMatrix::from_fn(y.rows(), y.cols(), |r, c| y[(r, c)] - probe.target_mean[c]);
    probe.weights = least_squares(&xs, &yc)?;
    Ok(probe)
}

pub fn fit_probe(ds: &ProbeDataset, state: usize, parity: usize) -> Result<Probe> {
    fit_probe_on(&ds.train.designs[state][parity], &ds.train.targets)
}

/// `mean ‖ĝ − g‖² / mean ‖g‖²` over the rows of `x`.
pub fn normalized_error(probe: &Probe, x: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::InvalidParameter("empty probe test set".into()));
    }
    let pred = probe.predict(x)?;
    let resid: f64 = pred.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
    let scale: f64 = y.as_slice().iter().map(|v| v * v).sum();
    if scale == 0.0 {
        return Ok(if resid == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(resid / scale)
}

/// Held-out normalized error of a fitted probe.
pub fn probe_error(probe: &Probe, ds: &ProbeDataset, state: usize, parity: usize) -> Result<f64> {
    normalized_error(probe, &ds.test.designs[state][parity], &ds.test.targets)
}

/// Held-out error split by token index `i` (1-based position `i + 1`).
pub fn probe_error_per_token(probe: &Probe, ds: &ProbeDataset, state: usize, parity: usize) -> Result<Vec<f64>> {
    let x = &ds.test.designs[state][parity];
    let y = &ds.test.targets;
    let n_tok = ds.test.n_tokens;
    (0..n_tok)
        .map(|i| {
            let rows: Vec<usize> = (0..ds.test.n_instances).map(|n| n * n_tok + i).collect();
            let xs = DenseMatrix::from_fn(rows.len(), x.cols(), |r, c| x[(rows[r], c)]);
            let ys = DenseMatrix::from_fn(rows.len(), y.cols(), |r, c| y[(rows[r], c)]);
            normalized_error(probe, &xs, &ys)
        })
        .collect()
}

/// Fit on train and evaluate on test for every `(state, parity)` cell.
pub fn probe_all(ds: &ProbeDataset) -> Result<Vec<Vec<f64>>> {
    let cells: Vec<(usize, usize)> = (0..ds.states.len())
        .flat_map(|s| (0..ds.parities.len()).map(move |p| (s, p)))
        .collect();
    let errs: Vec<f64> = cells
        .par_iter()
        .map(|&(s, p)| probe_error(&fit_probe(ds, s, p)?, ds, s, p))
        .collect::<Result<_>>()?;
    Ok(errs.chunks(ds.parities.len()).map(<[f64]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    fn randn(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        DenseMatrix::random_normal(rows, cols, 1.0, &mut stream(seed, Purpose::Misc, 0))
    }

    #[test]
    fn realizable_target_is_recovered() {
        let x = randn(200, 6, 1);
        let a = randn(6, 2, 2);
        let mut y = crate::numerics::matmul(&x, &a).unwrap();
        y.as_mut_slice().iter_mut().for_each(|v| *v += 3.0);
        let xt = randn(50, 6, 3);
        let mut yt = crate::numerics::matmul(&xt, &a).unwrap();
        yt.as_mut_slice().iter_mut().for_each(|v| *v += 3.0);
        let p = fit_probe_on(&x, &y).unwrap();
        assert!(normalized_error(&p, &xt, &yt).unwrap() <= 1e-8);
    }

    #[test]
    fn constant_columns_are_ignored() {
        let mut x = randn(100, 4, 4);
        for r in 0..100 {
            x[(r, 1)] = 7.0;
        }
        let y = DenseMatrix::from_fn(100, 1, |r, _| 2.0 * x[(r, 0)]);
        let p = fit_probe_on(&x, &y).unwrap();
        assert!(normalized_error(&p, &x, &y).unwrap() <= 1e-12);
    }

    #[test]
    fn null_target_has_unit_error() {
        let x = randn(2000, 5, 5);
        let y = randn(2000, 3, 6);
        let xt = randn(2000, 5, 7);
        let yt = randn(2000, 3, 8);
        let e = normalized_error(&fit_probe_on(&x, &y).unwrap(), &xt, &yt).unwrap();
        assert!((e - 1.0).abs() < 0.05, "{e}");
    }

    #[test]
    fn train_rows_reused_as_test_do_no_worse() {
        let x = randn(80, 10, 9);
        let mut g = stream(10, Purpose::Misc, 0);
        let y = DenseMatrix::from_fn(80, 1, |r, _| x[(r, 2)] + 0.5 * g.random::<f64>());
        let p = fit_probe_on(&x, &y).unwrap();
        let train = normalized_error(&p, &x, &y).unwrap();
        let xt = randn(80, 10, 11);
        let yt = DenseMatrix::from_fn(80, 1, |r, _| xt[(r, 2)] + 0.5 * g.random::<f64>());
        assert!(train <= normalized_error(&p, &xt, &yt).unwrap());
    }

    #[test]
    fn zero_probe_has_unit_error() {
        let y = randn(500, 2, 12);
        let probe = Probe {
            mean: vec![0.0],
            inv_scale: vec![0.0],
            target_mean: vec![0.0, 0.0],
            weights: DenseMatrix::zeros(1, 2),
        };
        let e = normalized_error(&probe, &DenseMatrix::zeros(500, 1), &y).unwrap();
        assert_eq!(e, 1.0);
        assert!(normalized_error(&probe, &DenseMatrix::zeros(0, 1), &DenseMatrix::zeros(0, 2)).is_err());
    }
}
