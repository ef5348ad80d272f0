// SPDX-License-Identifier: MIT OR Apache-2.0
//! Preconditions under which a construction's guarantee holds.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::RidgeSpec;
use crate::numerics::{norm, DenseMatrix, DenseVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    FeatureNorm,
    Label,
    RidgeWeight,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::FeatureNorm => "‖x‖ > B_x",
            ViolationKind::Label => "|y| > B_y",
            ViolationKind::RidgeWeight => "‖ŵ‖ > B_w/2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub kind: ViolationKind,
    /// 1-based token index.
    pub token: usize,
    pub value: f64,
    pub bound: f64,
}

impl fmt::Display for BoundViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at token {} ({:.6} > {:.6})",
            self.kind, self.token, self.value, self.bound
        )
    }
}

/// Relative slack so that a norm equal to its bound up to rounding (a
/// normalized feature with norm `1 + 2⁻⁵²`) is not a violation.
const ROUNDING: f64 = 1e-12;

fn push(out: &mut Vec<BoundViolation>, kind: ViolationKind, token: usize, value: f64, bound: f64) {
    if value > bound * (1.0 + ROUNDING) {
        out.push(BoundViolation {
            kind,
            token,
            value,
            bound,
        });
    }
}

/// `‖Φ_i‖ ≤ B_x`, `|y_i| ≤ B_y`, `‖ŵ_i‖ ≤ B_w/2` for every token.
pub fn check_supervised_bounds(
    spec: &RidgeSpec,
    features: &[DenseVector],
    ys: &[f64],
    ridge_weights: &[DenseVector],
) -> Vec<BoundViolation> {
    let mut out = Vec::new();
    for (i, f) in features.iter().enumerate() {
        push(&mut out, ViolationKind::FeatureNorm, i + 1, norm(f), spec.b_x);
    }
    for (i, y) in ys.iter().enumerate() {
        push(&mut out, ViolationKind::Label, i + 1, y.abs(), spec.b_y);
    }
    for (i, w) in ridge_weights.iter().enumerate() {
        push(&mut out, ViolationKind::RidgeWeight, i + 1, norm(w), spec.b_w / 2.0);
    }
    out
}

/// Dynamical analogue: feature norms, `‖x_i‖_∞ ≤ B_y`, and the largest
/// column norm of `Ŵ_i` at most `B_w/2`.
pub fn check_dyn_bounds(
    spec: &RidgeSpec,
    features: &[DenseVector],
    xs: &[DenseVector],
    ridge_weights: &[DenseMatrix],
) -> Vec<BoundViolation> {
    let mut out = Vec::new();
    for (i, f) in features.iter().enumerate() {
        push(&mut out, ViolationKind::FeatureNorm, i + 1, norm(f), spec.b_x);
    }
    for (i, x) in xs.iter().enumerate() {
        let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        push(&mut out, ViolationKind::Label, i + 1, m, spec.b_y);
    }
    for (i, w) in ridge_weights.iter().enumerate() {
        let m = (0..w.cols()).map(|c| norm(&w.column(c))).fold(0.0, f64::max);
        push(&mut out, ViolationKind::RidgeWeight, i + 1, m, spec.b_w / 2.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_each_precondition() {
        let spec = RidgeSpec::new(0.1, 0.05, 1.0, 2.0, 1.0).unwrap();
        let v = check_supervised_bounds(&spec, &[vec![0.5, 0.5]], &[1.5], &[vec![1.2, 0.0]]);
        let kinds: Vec<String> = v.iter().map(|b| b.kind.to_string()).collect();
        assert_eq!(kinds, vec!["|y| > B_y", "‖ŵ‖ > B_w/2"]);
        assert!(check_supervised_bounds(&spec, &[vec![0.6, 0.0]], &[0.9], &[vec![0.9]]).is_empty());
    }
}
