// SPDX-License-Identifier: MIT OR Apache-2.0
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{norm, random_orthogonal, DenseMatrix, DenseVector};

/// Leaky-ReLU MLP `x ↦ σ_ρ(B_L ⋯ σ_ρ(B_1 x))`, optionally normalised to the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationFn {
    pub weights: Vec<DenseMatrix>,
    pub slope: f64,
    pub normalize: bool,
    pub d_in: usize,
    pub dim: usize,
}

/// `σ_ρ(t) = max(t, ρt)`.
pub fn leaky_relu(t: f64, slope: f64) -> f64 {
    if t >= 0.0 {
        t
    } else {
        slope * t
    }
}

impl RepresentationFn {
    pub fn new(weights: Vec<DenseMatrix>, slope: f64, normalize: bool) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("representation needs at least one layer".into()));
        }
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::InvalidParameter(format!("leaky slope {slope} not in (0,1)")));
        }
        let d_in = weights[0].cols();
        let dim = weights[0].rows();
        for b in weights.iter().skip(1) {
            if b.shape() != (dim, dim) {
                return Err(Error::DimensionMismatch {
                    op: "representation layer",
                    left: (dim, dim),
                    right: b.shape(),
                });
            }
        }
        Ok(Self {
            weights,
            slope,
            normalize,
            d_in,
            dim,
        })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// `Φ̃(x)`, the representation before normalisation.
    pub fn apply_unnormalized(&self, x: &[f64]) -> Result<DenseVector> {
        if x.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                op: "apply_representation",
                left: (self.dim, self.d_in),
                right: (x.len(), 1),
            });
        }
        let mut h = x.to_vec();
        for b in &self.weights {
            h = b.matvec(&h)?;
            for v in &mut h {
                *v = leaky_relu(*v, self.slope);
            }
        }
        Ok(h)
    }

    /// `Φ(x)`; with normalisation a zero pre-image maps to the zero vector.
    pub fn apply(&self, x: &[f64]) -> Result<DenseVector> {
        let h = self.apply_unnormalized(x)?;
        if !self.normalize {
            return Ok(h);
        }
        let n = norm(&h);
        if n == 0.0 {
            return Ok(h);
        }
        Ok(h.into_iter().map(|v| v / n).collect())
    }

    /// Same weights, normalisation switched off.
    pub fn unnormalized(&self) -> Self {
        Self {
            normalize: false,
            ..self.clone()
        }
    }
}

pub fn apply_representation(rep: &RepresentationFn, x: &[f64]) -> Result<DenseVector> {
    rep.apply(x)
}

/// Haar-orthogonal weights: `B_1` is `D × d_in`, deeper layers `D × D`.
pub fn sample_representation<R: Rng + ?Sized>(
    d_in: usize,
    dim: usize,
    depth: usize,
    slope: f64,
    normalize: bool,
    rng: &mut R,
) -> Result<RepresentationFn> {
    if depth == 0 {
        return Err(Error::InvalidParameter("representation depth must be ≥ 1".into()));
    }
    let mut weights = Vec::with_capacity(depth);
    weights.push(random_orthogonal(dim, d_in, rng)?);
    for _ in 1..depth {
        weights.push(random_orthogonal(dim, dim, rng)?);
    }
    RepresentationFn::new(weights, slope, normalize)
}
