// SPDX-License-Identifier: MIT OR Apache-2.0
//! Constructions for trajectories `x_1, …, x_N` with one token per state.

use std::ops::Range;

use super::{head, BuiltModel, Landmarks, ModelKind, Resources, RidgeSpec};
use crate::data::layout::{dyn_tail, Mode, SlotKind, SlotLayout};
use crate::data::representation::RepresentationFn;
use crate::engine::{AttentionHead, AttentionLayer, Layer, MlpLayer, TransformerWeights};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// `max{2(k+1), D}·d + 3(D+d) + 5`.
pub fn dyn_hidden_dim(d: usize, rep_dim: usize, k: usize) -> usize {
    (2 * (k + 1)).max(rep_dim) * d + 3 * (rep_dim + d) + 5
}

struct Dyn<'a> {
    l: &'a SlotLayout,
}

impl Dyn<'_> {
    fn new(l: &SlotLayout) -> Result<Dyn<'_>> {
        if l.mode != Mode::Dynamical {
            return Err(Error::Layout("expected a dynamical layout".into()));
        }
        Ok(Dyn { l })
    }
    fn one(&self) -> usize {
        self.l.tail(dyn_tail::ONE)
    }
    fn pos(&self) -> usize {
        self.l.tail(dyn_tail::POS)
    }
    fn pos2(&self) -> usize {
        self.l.tail(dyn_tail::POS2)
    }
    fn pos3(&self) -> usize {
        self.l.tail(dyn_tail::POS3)
    }

    /// Score `i(1 − (j − i + a)²)`: token `i` attends to token `i − a` with weight 1.
    fn select_back(&self, h: &mut AttentionHead, a: usize) {
        let a = a as f64;
        h.q[(0, self.pos3())] = 1.0;
        h.q[(1, self.pos2())] = 1.0;
        h.q[(2, self.pos())] = 1.0;
        h.k[(0, self.one())] = -1.0;
        h.k[(1, self.pos())] = 2.0;
        h.k[(1, self.one())] = 2.0 * a;
        h.k[(2, self.pos2())] = -1.0;
        h.k[(2, self.pos())] = -2.0 * a;
        h.k[(2, self.one())] = 1.0 - a * a;
    }
}

/// `k+1` heads: clear `x_i`, then write `x_{i−k'+1}` into history block
/// `k − k'` for `k' = 1..k`.
pub fn build_dyn_copy_layer(k: usize, layout: &SlotLayout) -> Result<AttentionLayer> {
    let s = Dyn::new(layout)?;
    let f = layout.require(SlotKind::Features)?;
    let d = f.len();
    if k == 0 {
        return Err(Error::InvalidParameter("memory length k must be ≥ 1".into()));
    }
    if layout.total < k * d + 4 {
        return Err(Error::HiddenDimTooSmall {
            what: "dynamical copy layer",
            needed: k * d + 4,
            got: layout.total,
        });
    }
    let dim = layout.total;
    let mut heads = Vec::with_capacity(k + 1);
    let mut erase = head(dim);
    s.select_back(&mut erase, 0);
    for c in 0..d {
        erase.v[(f.start + c, f.start + c)] = -1.0;
    }
    heads.push(erase);
    for kp in 1..=k {
        let mut h = head(dim);
        s.select_back(&mut h, kp - 1);
        for c in 0..d {
            h.v[((k - kp) * d + c, f.start + c)] = 1.0;
        }
        heads.push(h);
    }
    Ok(AttentionLayer { heads })
}

/// Hidden units `±u` that zero `rows` of the residual when listed before any writer.
fn erase_units(w1: &mut DenseMatrix, w2: &mut DenseMatrix, unit: &mut usize, rows: Range<usize>) {
    let n = rows.len();
    for (o, r) in rows.enumerate() {
        w1[(*unit + o, r)] = 1.0;
        w2[(r, *unit + o)] = -1.0;
        w1[(*unit + n + o, r)] = -1.0;
        w2[(r, *unit + n + o)] = 1.0;
    }
    *unit += 2 * n;
}

/// Hidden units `±Bv` writing `σ_ρ(Bv)` to `out..out+D`.
fn leaky_units(
    w1: &mut DenseMatrix,
    w2: &mut DenseMatrix,
    unit: &mut usize,
    b: &DenseMatrix,
    slope: f64,
    input: Range<usize>,
    out: usize,
) {
    let rows = b.rows();
    for r in 0..rows {
        for (c, col) in input.clone().enumerate() {
            w1[(*unit + r, col)] = b[(r, c)];
            w1[(*unit + rows + r, col)] = -b[(r, c)];
        }
        w2[(out + r, *unit + r)] = 1.0;
        w2[(out + r, *unit + rows + r)] = -slope;
    }
    *unit += 2 * rows;
}

/// Hidden units `±v` adding `v = h[src]` to `h[dst]`.
fn pass_units(w1: &mut DenseMatrix, w2: &mut DenseMatrix, unit: &mut usize, src: Range<usize>, dst: usize) {
    let n = src.len();
    for (o, r) in src.enumerate() {
        w1[(*unit + o, r)] = 1.0;
        w2[(dst + o, *unit + o)] = 1.0;
        w1[(*unit + n + o, r)] = -1.0;
        w2[(dst + o, *unit + n + o)] = -1.0;
    }
    *unit += 2 * n;
}

/// Self-selecting heads that clear `[0, D)` and `scratch`, then move the scratch to `[0, D)`.
fn move_heads(s: &Dyn, rep_dim: usize, scratch: usize) -> Vec<AttentionHead> {
    let dim = s.l.total;
    let mut erase_front = head(dim);
    let mut erase_scratch = head(dim);
    let mut mv = head(dim);
    for h in [&mut erase_front, &mut erase_scratch, &mut mv] {
        s.select_back(h, 0);
    }
    for r in 0..rep_dim {
        erase_front.v[(r, r)] = -1.0;
        erase_scratch.v[(scratch + r, scratch + r)] = -1.0;
        mv.v[(r, scratch + r)] = 1.0;
    }
    vec![erase_front, erase_scratch, mv]
}

/// Copy layer plus the representation layers: after layer 1 the tokens read
/// `[σ_ρ(B_1 x̄_i); x_i; 0; p_i]`, after layer `L+1` they read
/// `[Φ̃(x̄_i); 0_d; Φ̃(x̄_{i−1}); x_i; 0; p_i]`. `layout` is the dynamical
/// input layout.
pub fn build_dyn_mlp_module(rep: &RepresentationFn, k: usize, layout: &SlotLayout) -> Result<Vec<Layer>> {
    let s = Dyn::new(layout)?;
    let d = layout.require(SlotKind::Features)?.len();
    if k == 0 || rep.d_in != k * d {
        return Err(Error::InvalidParameter(format!(
            "representation input {} is not k·d = {}·{d}",
            rep.d_in, k
        )));
    }
    let (dd, depth, dim) = (rep.dim, rep.depth(), layout.total);
    let needed = 2 * (k + 1) * d + 3 * dd + 2 * d + 5;
    if dim < needed {
        return Err(Error::HiddenDimTooSmall {
            what: "dynamical representation module",
            needed,
            got: dim,
        });
    }
    let ridge = SlotLayout::dynamical_ridge(d, dd, dim)?;
    let prev = ridge.require(SlotKind::PrevFeatures)?;
    let target = ridge.require(SlotKind::Target)?;
    let scratch = ridge.require(SlotKind::Workspace)?.start;
    let xi = dd..dd + d;

    let mut layers = Vec::with_capacity(depth + 1);
    // Layer 1: copy, then σ_ρ(B_1 x̄) into [0, D) and x_i into [D, D+d).
    let mut w1 = DenseMatrix::zeros(dim, dim);
    let mut w2 = DenseMatrix::zeros(dim, dim);
    let mut unit = 0;
    erase_units(&mut w1, &mut w2, &mut unit, 0..k * d);
    leaky_units(&mut w1, &mut w2, &mut unit, &rep.weights[0], rep.slope, 0..k * d, 0);
    pass_units(&mut w1, &mut w2, &mut unit, (k - 1) * d..k * d, dd);
    layers.push(Layer {
        attn: build_dyn_copy_layer(k, layout)?,
        mlp: MlpLayer::new(w1, w2),
    });
    for l in 2..=depth {
        let attn = if l == 2 {
            AttentionLayer::identity()
        } else {
            AttentionLayer {
                heads: move_heads(&s, dd, scratch),
            }
        };
        let mut w1 = DenseMatrix::zeros(dim, dim);
        let mut w2 = DenseMatrix::zeros(dim, dim);
        let mut unit = 0;
        leaky_units(&mut w1, &mut w2, &mut unit, &rep.weights[l - 1], rep.slope, 0..dd, scratch);
        layers.push(Layer {
            attn,
            mlp: MlpLayer::new(w1, w2),
        });
    }
    // Final layer: settle Φ̃ in [0, D), move x_i to the target block and copy
    // the previous token's representation.
    let mut heads = if depth >= 2 { move_heads(&s, dd, scratch) } else { Vec::new() };
    let mut relocate = head(dim);
    s.select_back(&mut relocate, 0);
    for c in 0..d {
        relocate.v[(target.start + c, xi.start + c)] = 1.0;
        relocate.v[(xi.start + c, xi.start + c)] = -1.0;
    }
    heads.push(relocate);
    let mut copy_prev = head(dim);
    s.select_back(&mut copy_prev, 1);
    let src = if depth >= 2 { scratch } else { 0 };
    for r in 0..dd {
        copy_prev.v[(prev.start + r, src + r)] = 1.0;
    }
    heads.push(copy_prev);
    layers.push(Layer {
        attn: AttentionLayer { heads },
        mlp: MlpLayer::identity(dim),
    });
    Ok(layers)
}

struct MultiSlots {
    f: Range<usize>,
    pred: Range<usize>,
    prev: Range<usize>,
    target: Range<usize>,
    ws: Range<usize>,
}

fn multi_slots(l: &SlotLayout, d_out: usize) -> Result<MultiSlots> {
    let f = l.require(SlotKind::Features)?;
    let pred = l.require(SlotKind::Prediction)?;
    let prev = l.require(SlotKind::PrevFeatures)?;
    let target = l.require(SlotKind::Target)?;
    let ws = l.require(SlotKind::Workspace)?;
    if pred.len() != d_out || target.len() != d_out || ws.len() != f.len() * d_out || prev.len() != f.len() {
        return Err(Error::Layout(format!(
            "layout does not match {} features and {d_out} outputs",
            f.len()
        )));
    }
    Ok(MultiSlots {
        f,
        pred,
        prev,
        target,
        ws,
    })
}

/// Three heads per output coordinate `c`: the residual pair with margin
/// `M = 2R`, and a decay head with score `(i−1)(j−i+1)`.
fn multi_gd_layer(spec: &RidgeSpec, layout: &SlotLayout, d_out: usize) -> Result<AttentionLayer> {
    let s = Dyn::new(layout)?;
    let MultiSlots { f, prev, target, ws, .. } = multi_slots(layout, d_out)?;
    let p = f.len();
    let m = 2.0 * spec.margin();
    let eta = spec.eta_dyn();
    let dim = layout.total;
    let mut heads = Vec::with_capacity(3 * d_out);
    for c in 0..d_out {
        let wc = ws.start + c * p;
        let mut h1 = head(dim);
        let mut h2 = head(dim);
        for j in 0..p {
            h1.q[(j, wc + j)] = 1.0;
            h1.k[(j, prev.start + j)] = 1.0;
            h1.v[(wc + j, prev.start + j)] = -eta;
            h2.v[(wc + j, prev.start + j)] = eta;
        }
        h1.q[(p, s.one())] = -1.0;
        h1.k[(p, target.start + c)] = 1.0;
        for h in [&mut h1, &mut h2] {
            h.q[(p + 1, s.one())] = m;
            h.k[(p + 1, s.one())] = 1.0;
        }
        let mut h3 = head(dim);
        h3.q[(0, s.pos())] = 1.0;
        h3.q[(1, s.pos2())] = 1.0;
        h3.q[(2, s.one())] = 1.0;
        h3.k[(0, s.pos())] = 1.0;
        h3.k[(0, s.one())] = 2.0;
        h3.k[(1, s.one())] = -1.0;
        h3.k[(2, s.pos())] = -1.0;
        h3.k[(2, s.one())] = -1.0;
        for j in 0..p {
            h3.v[(wc + j, wc + j)] = -eta * spec.lambda;
        }
        heads.extend([h1, h2, h3]);
    }
    Ok(AttentionLayer { heads })
}

/// Two heads per coordinate writing `⟨w_c, Φ_i⟩` into the prediction block.
fn multi_pred_layer(spec: &RidgeSpec, layout: &SlotLayout, d_out: usize) -> Result<AttentionLayer> {
    let s = Dyn::new(layout)?;
    let MultiSlots { f, pred, ws, .. } = multi_slots(layout, d_out)?;
    let p = f.len();
    let r = spec.margin();
    let dim = layout.total;
    let mut heads = Vec::with_capacity(2 * d_out);
    for c in 0..d_out {
        for (with_w, sign) in [(true, 1.0), (false, -1.0)] {
            let mut h = head(dim);
            if with_w {
                for j in 0..p {
                    h.q[(j, ws.start + c * p + j)] = 1.0;
                    h.k[(j, f.start + j)] = 1.0;
                }
            }
            h.q[(p, s.pos())] = 1.0;
            h.k[(p, s.one())] = -2.0 * r;
            h.q[(p + 1, s.one())] = 1.0;
            h.k[(p + 1, s.pos())] = 2.0 * r;
            h.k[(p + 1, s.one())] = r;
            h.v[(pred.start + c, s.pos())] = sign;
            heads.push(h);
        }
    }
    Ok(AttentionLayer { heads })
}

fn multi_layers(spec: &RidgeSpec, layout: &SlotLayout, d_out: usize) -> Result<Vec<Layer>> {
    let dim = layout.total;
    let gd = multi_gd_layer(spec, layout, d_out)?;
    let mut layers: Vec<Layer> = (0..spec.gd_steps_dyn())
        .map(|_| Layer {
            attn: gd.clone(),
            mlp: MlpLayer::identity(dim),
        })
        .collect();
    layers.push(Layer {
        attn: multi_pred_layer(spec, layout, d_out)?,
        mlp: MlpLayer::identity(dim),
    });
    Ok(layers)
}

/// `d_out` separable ridge problems solved by GD, inputs already in the
/// post-representation format. `layout` is a dynamical ridge layout.
pub fn build_multiout_ridge_tf(spec: &RidgeSpec, d_out: usize, layout: &SlotLayout) -> Result<BuiltModel> {
    spec.validate()?;
    let p = layout.require(SlotKind::Features)?.len();
    let needed = p * d_out + 2 * (p + d_out) + 5;
    if layout.total < needed {
        return Err(Error::HiddenDimTooSmall {
            what: "multi-output ridge transformer",
            needed,
            got: layout.total,
        });
    }
    let layers = multi_layers(spec, layout, d_out)?;
    let tf = TransformerWeights::new(layout.total, layers)?;
    let t = spec.gd_steps_dyn();
    let model = BuiltModel {
        kind: ModelKind::MultiOutputRidge,
        resources: Resources {
            depth: tf.num_layers(),
            max_heads: tf.max_heads(),
            hidden_dim: layout.total,
            stated_depth: t + 1,
            stated_heads: 3 * d_out,
            stated_hidden_dim: needed,
        },
        tf,
        input_layout: layout.clone(),
        layout: layout.clone(),
        landmarks: Landmarks {
            copy: 0,
            rep_module_end: 0,
            rep_end: 0,
            gd_start: 1,
            prediction: t + 1,
        },
        spec: *spec,
        rep: None,
    };
    model.validate()?;
    Ok(model)
}

/// Copy, representation and multi-output ridge stages. `layout` is the
/// dynamical input layout with hidden dimension [`dyn_hidden_dim`].
pub fn build_dyn_tf(rep: &RepresentationFn, k: usize, spec: &RidgeSpec, layout: &SlotLayout) -> Result<BuiltModel> {
    spec.validate()?;
    let d = layout.require(SlotKind::Features)?.len();
    let dd = rep.dim;
    let dim = layout.total;
    let want = dyn_hidden_dim(d, dd, k);
    if dim != want {
        return Err(Error::HiddenDimTooSmall {
            what: "dynamical transformer (exact width max{2(k+1),D}d + 3(D+d) + 5)",
            needed: want,
            got: dim,
        });
    }
    let ridge = SlotLayout::dynamical_ridge(d, dd, dim)?;
    let mut layers = build_dyn_mlp_module(rep, k, layout)?;
    layers.extend(multi_layers(spec, &ridge, d)?);
    let tf = TransformerWeights::new(dim, layers)?;
    let (depth, t) = (rep.depth(), spec.gd_steps_dyn());
    let model = BuiltModel {
        kind: ModelKind::Dynamical,
        resources: Resources {
            depth: tf.num_layers(),
            max_heads: tf.max_heads(),
            hidden_dim: dim,
            stated_depth: depth + t + 2,
            stated_heads: (3 * d).max(5),
            stated_hidden_dim: want,
        },
        tf,
        input_layout: layout.clone(),
        layout: ridge,
        landmarks: Landmarks {
            copy: 1,
            rep_module_end: depth + 1,
            rep_end: depth + 1,
            gd_start: depth + 2,
            prediction: depth + t + 2,
        },
        spec: *spec,
        rep: Some(rep.clone()),
    };
    model.validate()?;
    Ok(model)
}
