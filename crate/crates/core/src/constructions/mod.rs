// SPDX-License-Identifier: MIT OR Apache-2.0
//! Explicit weights for copying, representation, in-context gradient descent
//! and prediction layers, and the full transformers assembled from them.

mod bounds;
mod dynamical;
mod supervised;

pub use bounds::{check_dyn_bounds, check_supervised_bounds, BoundViolation, ViolationKind};
pub use dynamical::{
    build_dyn_copy_layer, build_dyn_mlp_module, build_dyn_tf, build_multiout_ridge_tf,
    dyn_hidden_dim,
};
pub use supervised::{
    build_copy_layer, build_fixed_rep_tf, build_gd_layer, build_linear_pred_layer,
    build_mlp_rep_module, build_ridge_tf, fixed_rep_hidden_dim,
};

use serde::{Deserialize, Serialize};

use crate::data::layout::SlotLayout;
use crate::data::representation::RepresentationFn;
use crate::engine::{AttentionHead, CompiledTransformer, TransformerWeights};
use crate::error::{Error, Result};

/// Ridge parameters and the bounds the construction is sized for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeSpec {
    pub lambda: f64,
    pub eps: f64,
    /// Bound on the feature norm (`B_x`, or `B_Φ` on top of a representation).
    pub b_x: f64,
    pub b_w: f64,
    pub b_y: f64,
}

impl RidgeSpec {
    pub fn new(lambda: f64, eps: f64, b_x: f64, b_w: f64, b_y: f64) -> Result<Self> {
        let s = Self {
            lambda,
            eps,
            b_x,
            b_w,
            b_y,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("eps", self.eps),
            ("b_x", self.b_x),
            ("b_w", self.b_w),
            ("b_y", self.b_y),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        if self.eps >= self.b_x * self.b_w / 2.0 {
            return Err(Error::InvalidParameter(format!(
                "eps = {} must be below B_x·B_w/2 = {}",
                self.eps,
                self.b_x * self.b_w / 2.0
            )));
        }
        Ok(())
    }

    /// `κ = 1 + B_x²/λ`.
    pub fn kappa(&self) -> f64 {
        1.0 + self.b_x * self.b_x / self.lambda
    }

    /// Smoothness `β = B_x² + λ`.
    pub fn beta(&self) -> f64 {
        self.b_x * self.b_x + self.lambda
    }

    /// `η = 2/β`.
    pub fn eta(&self) -> f64 {
        2.0 / self.beta()
    }

    fn log_ratio(&self) -> f64 {
        (self.b_x * self.b_w / (2.0 * self.eps)).ln()
    }

    /// `T = ⌈3κ ln(B_x B_w / (2ε))⌉`.
    pub fn gd_steps(&self) -> usize {
        (3.0 * self.kappa() * self.log_ratio()).ceil() as usize
    }

    /// Copy layer, `T` GD layers and the prediction layer.
    pub fn ridge_depth(&self) -> usize {
        self.gd_steps() + 2
    }

    /// Realised step at x-token `i` of the interleaved format: `(i−1)/(2i−1)·η`.
    pub fn step_size(&self, i: usize) -> f64 {
        if i == 0 {
            return 0.0;
        }
        (i - 1) as f64 / (2 * i - 1) as f64 * self.eta()
    }

    /// Step used by the dynamical construction, `η = 1/β`.
    pub fn eta_dyn(&self) -> f64 {
        1.0 / self.beta()
    }

    /// Realised dynamical step at token `i`: `(i−1)/i · 1/β`.
    pub fn step_size_dyn(&self, i: usize) -> f64 {
        if i == 0 {
            return 0.0;
        }
        (i - 1) as f64 / i as f64 * self.eta_dyn()
    }

    /// `⌈4κ ln(B_x B_w / (2ε))⌉`, enough for the `(i−1)/i` step schedule.
    pub fn gd_steps_dyn(&self) -> usize {
        (4.0 * self.kappa() * self.log_ratio()).ceil() as usize
    }

    /// Margin `R = max(B_x B_w, B_y)` used by the indicator scores.
    pub fn margin(&self) -> f64 {
        (self.b_x * self.b_w).max(self.b_y)
    }
}

/// Trace state indices (`states[ℓ]` is the output of layer `ℓ`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Landmarks {
    /// Layer that performs the copy. In the dynamical model the copied
    /// history is visible after the attention of this layer and the first
    /// representation layer after its MLP.
    pub copy: usize,
    /// Last layer of the representation module (0 when there is none).
    pub rep_module_end: usize,
    /// First state where every token is in ridge-ready format.
    pub rep_end: usize,
    /// First GD layer.
    pub gd_start: usize,
    /// Prediction layer (the last layer).
    pub prediction: usize,
}

impl Landmarks {
    pub fn validate(&self, depth: usize) -> Result<()> {
        let ok = self.copy <= self.rep_end
            && self.rep_module_end <= self.rep_end
            && self.rep_end < self.gd_start
            && self.gd_start <= self.prediction
            && self.prediction == depth;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "landmarks {self:?} inconsistent with depth {depth}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Ridge,
    FixedRep,
    MultiOutputRidge,
    Dynamical,
}

/// Built resource counts next to the stated counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resources {
    pub depth: usize,
    pub max_heads: usize,
    pub hidden_dim: usize,
    pub stated_depth: usize,
    pub stated_heads: usize,
    pub stated_hidden_dim: usize,
}

impl Resources {
    pub fn matches_stated(&self) -> bool {
        self.depth == self.stated_depth
            && self.max_heads == self.stated_heads
            && self.hidden_dim == self.stated_hidden_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltModel {
    pub kind: ModelKind,
    pub tf: TransformerWeights,
    /// Layout of the encoded input.
    pub input_layout: SlotLayout,
    /// Layout after the representation stage; predictions are read from it.
    pub layout: SlotLayout,
    pub landmarks: Landmarks,
    pub spec: RidgeSpec,
    pub rep: Option<RepresentationFn>,
    pub resources: Resources,
}

impl BuiltModel {
    pub fn depth(&self) -> usize {
        self.tf.num_layers()
    }

    pub fn compile(&self) -> CompiledTransformer {
        self.tf.compile()
    }

    pub fn validate(&self) -> Result<()> {
        self.tf.validate()?;
        self.input_layout.validate()?;
        self.layout.validate()?;
        self.landmarks.validate(self.depth())?;
        self.spec.validate()
    }
}

pub(crate) fn head(dim: usize) -> AttentionHead {
    AttentionHead::zeros(dim)
}
