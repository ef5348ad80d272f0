// SPDX-License-Identifier: MIT OR Apache-2.0
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::representation::RepresentationFn;
use crate::error::{Error, Result};
use crate::numerics::{dot, norm, DenseMatrix, DenseVector};

pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

/// Supervised in-context instance `y_i = ⟨w, Φ(x_i)⟩ + σ z_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclInstance {
    pub xs: Vec<DenseVector>,
    pub ys: Vec<f64>,
    pub w_true: DenseVector,
    pub sigma: f64,
    pub tau: f64,
    pub rep_id: usize,
}

impl IclInstance {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }
}

/// Trajectory `x_{i+1} = Wᵀ Φ(x̄_i) + σ z_i` with `x̄_i = [x_{i−k+1}; …; x_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynInstance {
    pub xs: Vec<DenseVector>,
    /// `D × d`.
    pub w_true: DenseMatrix,
    /// `noise[i]` drives the step from `x_{i+1}` to `x_{i+2}` (0-based storage).
    pub noise: Vec<DenseVector>,
    pub k: usize,
    pub sigma: f64,
    pub tau: f64,
}

impl DynInstance {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub reps: Vec<RepresentationFn>,
}

impl MixtureSpec {
    pub fn new(reps: Vec<RepresentationFn>) -> Result<Self> {
        let first = reps
            .first()
            .ok_or_else(|| Error::InvalidParameter("mixture needs at least one task".into()))?;
        if reps.iter().any(|r| r.d_in != first.d_in || r.dim != first.dim) {
            return Err(Error::InvalidParameter(
                "mixture representations must share input and feature dimensions".into(),
            ));
        }
        Ok(Self { reps })
    }
}

/// Input law for supervised instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InputDist {
    /// `x ~ N(0, I_d)`.
    #[default]
    Gaussian,
    /// Gaussian draw rescaled onto `{x : ‖Φ̃(x)‖ = 1}`. Because `Φ̃` is
    /// positively homogeneous, `Φ(x)` keeps its law while `Φ̃(x) = Φ(x)`.
    RepresentationSphere,
}

fn gaussian_vec<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> DenseVector {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn draw_input<R: Rng + ?Sized>(
    rep: &RepresentationFn,
    dist: InputDist,
    rng: &mut R,
) -> Result<DenseVector> {
    loop {
        let x = gaussian_vec(rep.d_in, 1.0, rng);
        match dist {
            InputDist::Gaussian => return Ok(x),
            InputDist::RepresentationSphere => {
                let n = norm(&rep.apply_unnormalized(&x)?);
                if n > 0.0 {
                    return Ok(x.into_iter().map(|v| v / n).collect());
                }
            }
        }
    }
}

pub fn sample_supervised_instance<R: Rng + ?Sized>(
    rep: &RepresentationFn,
    tau: f64,
    sigma: f64,
    n: usize,
    rng: &mut R,
) -> Result<IclInstance> {
    sample_supervised_instance_with(rep, InputDist::Gaussian, tau, sigma, n, rng)
}

pub fn sample_supervised_instance_with<R: Rng + ?Sized>(
    rep: &RepresentationFn,
    dist: InputDist,
    tau: f64,
    sigma: f64,
    n: usize,
    rng: &mut R,
) -> Result<IclInstance> {
    check_scales(tau, sigma)?;
    let w_true = gaussian_vec(rep.dim, tau, rng);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = draw_input(rep, dist, rng)?;
        let z: f64 = StandardNormal.sample(rng);
        let y = dot(&w_true, &rep.apply(&x)?) + sigma * z;
        xs.push(x);
        ys.push(y);
    }
    Ok(IclInstance {
        xs,
        ys,
        w_true,
        sigma,
        tau,
        rep_id: 0,
    })
}

fn check_scales(tau: f64, sigma: f64) -> Result<()> {
    if !(tau >= 0.0 && sigma >= 0.0 && tau.is_finite() && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "prior scale τ = {tau} and noise σ = {sigma} must be finite and ≥ 0"
        )));
    }
    Ok(())
}

/// `x̄_i = [x_{i−k+1}; …; x_i]` for 1-based `i`, with `x_j = 0` for `j ≤ 0`.
pub fn history(xs: &[DenseVector], i: usize, k: usize, d: usize) -> DenseVector {
    let mut h = Vec::with_capacity(k * d);
    for back in (0..k).rev() {
        if i > back {
            h.extend_from_slice(&xs[i - back - 1]);
        } else {
            h.extend(std::iter::repeat_n(0.0, d));
        }
    }
    h
}

/// Next state from a stored history; shared by the sampler and replay checks.
pub fn dyn_step(
    rep: &RepresentationFn,
    w: &DenseMatrix,
    xs: &[DenseVector],
    i: usize,
    k: usize,
    sigma: f64,
    z: &[f64],
) -> Result<DenseVector> {
    let d = w.cols();
    let phi = rep.apply(&history(xs, i, k, d))?;
    let mut next = w.matvec_t(&phi)?;
    for (v, zc) in next.iter_mut().zip(z) {
        *v += sigma * zc;
    }
    Ok(next)
}

pub fn sample_dynamical_instance<R: Rng + ?Sized>(
    rep: &RepresentationFn,
    k: usize,
    tau: f64,
    sigma: f64,
    n: usize,
    rng: &mut R,
) -> Result<DynInstance> {
    check_scales(tau, sigma)?;
    if k == 0 || !rep.d_in.is_multiple_of(k) {
        return Err(Error::InvalidParameter(format!(
            "representation input dimension {} is not k·d for k = {k}",
            rep.d_in
        )));
    }
    let d = rep.d_in / k;
    let w_true = DenseMatrix::from_fn(rep.dim, d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        tau * z
    });
    let mut xs = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n.saturating_sub(1));
    if n > 0 {
        xs.push(gaussian_vec(d, 1.0, rng));
    }
    for i in 1..n {
        let z = gaussian_vec(d, 1.0, rng);
        let next = dyn_step(rep, &w_true, &xs, i, k, sigma, &z)?;
        noise.push(z);
        xs.push(next);
    }
    Ok(DynInstance {
        xs,
        w_true,
        noise,
        k,
        sigma,
        tau,
    })
}

/// Uniform task index, then a supervised draw from that task's representation.
pub fn sample_mixture_instance<R: Rng + ?Sized>(
    spec: &MixtureSpec,
    dist: InputDist,
    tau: f64,
    sigma: f64,
    n: usize,
    rng: &mut R,
) -> Result<(IclInstance, usize)> {
    let j = rng.random_range(0..spec.reps.len());
    let mut inst = sample_supervised_instance_with(&spec.reps[j], dist, tau, sigma, n, rng)?;
    inst.rep_id = j;
    Ok((inst, j))
}
