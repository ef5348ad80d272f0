// SPDX-License-Identifier: MIT OR Apache-2.0
//! Interleaved `(x, y)` token constructions.

use std::ops::Range;

use super::{head, BuiltModel, Landmarks, ModelKind, Resources, RidgeSpec};
use crate::data::layout::{sup_tail, Mode, SlotKind, SlotLayout};
use crate::data::representation::RepresentationFn;
use crate::engine::{AttentionHead, AttentionLayer, Layer, MlpLayer, TransformerWeights};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Hidden dimension of the fixed-representation transformer, `2D + d + 10`.
pub fn fixed_rep_hidden_dim(d: usize, rep_dim: usize) -> usize {
    2 * rep_dim + d + 10
}

struct Sup<'a> {
    l: &'a SlotLayout,
}

impl Sup<'_> {
    fn new(l: &SlotLayout) -> Result<Sup<'_>> {
        if l.mode != Mode::Supervised {
            return Err(Error::Layout("expected a supervised layout".into()));
        }
        l.require(SlotKind::Tail)?;
        Ok(Sup { l })
    }
    fn t(&self, o: usize) -> usize {
        self.l.tail(o)
    }
    fn one(&self) -> usize {
        self.t(sup_tail::ONE)
    }
    fn pos(&self) -> usize {
        self.t(sup_tail::POS)
    }
    fn pos2(&self) -> usize {
        self.t(sup_tail::POS2)
    }
    fn pos3(&self) -> usize {
        self.t(sup_tail::POS3)
    }
    fn pair(&self) -> usize {
        self.t(sup_tail::PAIR)
    }
    fn is_x(&self) -> usize {
        self.t(sup_tail::IS_X)
    }
    fn pair_is_x(&self) -> usize {
        self.t(sup_tail::PAIR_IS_X)
    }
}

struct RidgeSlots {
    f: Range<usize>,
    label: usize,
    ws: Range<usize>,
}

fn ridge_slots(l: &SlotLayout) -> Result<RidgeSlots> {
    let f = l.require(SlotKind::Features)?;
    let label = l.require(SlotKind::Label)?.start;
    let ws = l.require(SlotKind::Workspace)?;
    if ws.len() != f.len() {
        return Err(Error::Layout("workspace and feature blocks differ in size".into()));
    }
    Ok(RidgeSlots { f, label, ws })
}

/// Single head with score `k(1 − (k−ℓ−1)²)`: token `k` receives the
/// feature block of token `k−1`.
pub fn build_copy_layer(layout: &SlotLayout) -> Result<AttentionLayer> {
    let s = Sup::new(layout)?;
    let f = layout.require(SlotKind::Features)?;
    let mut h = head(layout.total);
    h.q[(0, s.pos3())] = 1.0;
    h.q[(1, s.pos2())] = 1.0;
    h.q[(2, s.pos())] = 1.0;
    h.k[(0, s.one())] = -1.0;
    h.k[(1, s.pos())] = 2.0;
    h.k[(1, s.one())] = 2.0;
    h.k[(2, s.pos2())] = -1.0;
    h.k[(2, s.pos())] = -2.0;
    for r in f {
        h.v[(r, r)] = 1.0;
    }
    Ok(AttentionLayer { heads: vec![h] })
}

/// Two heads writing `⟨w_i, x_i⟩` into the label slot of x-token `i`.
///
/// Scores are `±(⟨w_k, x_ℓ⟩) + R(2(ℓ−k)+1) − 2R(1 − ind_x)`; only `ℓ = k`
/// survives the ReLU at x-token queries and nothing survives at y-tokens.
pub fn build_linear_pred_layer(spec: &RidgeSpec, layout: &SlotLayout) -> Result<AttentionLayer> {
    let s = Sup::new(layout)?;
    let RidgeSlots { f, label, ws } = ridge_slots(layout)?;
    let p = f.len();
    let r = spec.margin();
    let dim = layout.total;
    let mut heads = Vec::with_capacity(2);
    for (with_w, sign) in [(true, 1.0), (false, -1.0)] {
        let mut h = head(dim);
        if with_w {
            for j in 0..p {
                h.q[(j, ws.start + j)] = 1.0;
                h.k[(j, f.start + j)] = 1.0;
            }
        }
        h.q[(p, s.pos())] = 1.0;
        h.k[(p, s.one())] = -2.0 * r;
        h.q[(p + 1, s.one())] = 1.0;
        h.k[(p + 1, s.pos())] = 2.0 * r;
        h.k[(p + 1, s.one())] = r;
        h.q[(p + 2, s.is_x())] = 2.0 * r;
        h.q[(p + 2, s.one())] = -2.0 * r;
        h.k[(p + 2, s.one())] = 1.0;
        h.v[(label, s.pos())] = sign;
        heads.push(h);
    }
    Ok(AttentionLayer { heads })
}

/// One step of gradient descent on the ridge objective over the preceding
/// pairs, written into the workspace of every x-token.
///
/// Heads one and two differ by `⟨w/2, x_j⟩ − ind_x·y_j` on top of the margin
/// `R(3(i−j) − 1)`; the third head has score `(k−1)(ℓ+1−k)/2` and applies
/// the weight decay.
pub fn build_gd_layer(spec: &RidgeSpec, layout: &SlotLayout) -> Result<AttentionLayer> {
    let s = Sup::new(layout)?;
    let RidgeSlots { f, label, ws } = ridge_slots(layout)?;
    let p = f.len();
    let r = spec.margin();
    let eta = spec.eta();
    let dim = layout.total;

    let margin_rows = |h: &mut AttentionHead| {
        h.q[(p + 1, s.pair())] = 1.0;
        h.k[(p + 1, s.one())] = 3.0 * r;
        h.q[(p + 2, s.one())] = -3.0 * r;
        h.k[(p + 2, s.pair())] = 1.0;
        h.q[(p + 3, s.one())] = -r;
        h.k[(p + 3, s.one())] = 1.0;
    };

    let mut h1 = head(dim);
    for j in 0..p {
        h1.q[(j, ws.start + j)] = 0.5;
        h1.k[(j, f.start + j)] = 1.0;
        h1.v[(ws.start + j, f.start + j)] = -eta;
    }
    h1.q[(p, s.is_x())] = -1.0;
    h1.k[(p, label)] = 1.0;
    margin_rows(&mut h1);

    let mut h2 = head(dim);
    margin_rows(&mut h2);
    for j in 0..p {
        h2.v[(ws.start + j, f.start + j)] = eta;
    }

    let mut h3 = head(dim);
    h3.q[(0, s.pos2())] = 1.0;
    h3.q[(1, s.pos())] = 1.0;
    h3.q[(2, s.one())] = 1.0;
    h3.k[(0, s.one())] = -0.5;
    h3.k[(1, s.pos())] = 0.5;
    h3.k[(1, s.one())] = 1.0;
    h3.k[(2, s.pos())] = -0.5;
    h3.k[(2, s.one())] = -0.5;
    for j in 0..p {
        h3.v[(ws.start + j, ws.start + j)] = -eta * spec.lambda;
    }
    Ok(AttentionLayer {
        heads: vec![h1, h2, h3],
    })
}

/// Writes `σ_ρ(B v)` for `v = h[input]` into `scratch..scratch+D`, with
/// hidden units `±Bv` and `σ_ρ(t) = σ(t) − ρσ(−t)`.
fn rep_mlp(b: &DenseMatrix, slope: f64, input: Range<usize>, scratch: usize, dim: usize) -> MlpLayer {
    let rows = b.rows();
    let mut w1 = DenseMatrix::zeros(dim, dim);
    let mut w2 = DenseMatrix::zeros(dim, dim);
    for r in 0..rows {
        for (c, col) in input.clone().enumerate() {
            w1[(r, col)] = b[(r, c)];
            w1[(rows + r, col)] = -b[(r, c)];
        }
        w2[(scratch + r, r)] = 1.0;
        w2[(scratch + r, rows + r)] = -slope;
    }
    MlpLayer::new(w1, w2)
}

/// Five heads: clear the old x-token features and the scratch block, move
/// the scratch into `[0, D)`, then relocate the y-token label to row `D`.
fn move_layer(
    s: &Sup,
    rep_dim: usize,
    old_features: Range<usize>,
    scratch: usize,
    label_src: usize,
) -> AttentionLayer {
    let dim = s.l.total;
    let select = |h: &mut AttentionHead, on_x: bool| {
        h.q[(0, s.pos2())] = 1.0;
        h.q[(1, s.pos())] = 1.0;
        if on_x {
            h.q[(2, s.pair_is_x())] = 2.0;
            h.q[(2, s.is_x())] = -1.0;
        } else {
            h.q[(2, s.pos())] = 1.0;
            h.q[(2, s.pair_is_x())] = -2.0;
            h.q[(2, s.is_x())] = 1.0;
        }
        h.k[(0, s.one())] = -1.0;
        h.k[(1, s.pos())] = 1.0;
        h.k[(2, s.one())] = 1.0;
    };
    let mut erase_old = head(dim);
    select(&mut erase_old, true);
    for r in old_features {
        erase_old.v[(r, r)] = -1.0;
    }
    let mut erase_scratch = head(dim);
    select(&mut erase_scratch, true);
    let mut mv = head(dim);
    select(&mut mv, true);
    for r in 0..rep_dim {
        erase_scratch.v[(scratch + r, scratch + r)] = -1.0;
        mv.v[(r, scratch + r)] = 1.0;
    }
    let mut erase_label = head(dim);
    select(&mut erase_label, false);
    erase_label.v[(label_src, label_src)] = -1.0;
    let mut write_label = head(dim);
    select(&mut write_label, false);
    write_label.v[(rep_dim, label_src)] = 1.0;
    AttentionLayer {
        heads: vec![erase_old, erase_scratch, mv, erase_label, write_label],
    }
}

/// `L+1` layers computing `Φ̃(x_i)` into `[0, D)` of x-tokens and moving
/// `y_i` to row `D` of y-tokens. `layout` is the supervised input layout.
pub fn build_mlp_rep_module(rep: &RepresentationFn, layout: &SlotLayout) -> Result<Vec<Layer>> {
    let s = Sup::new(layout)?;
    let f = layout.require(SlotKind::Features)?;
    let label = layout.require(SlotKind::Label)?.start;
    let (d, dd, depth) = (rep.d_in, rep.dim, rep.depth());
    if f.len() != d || f.start != 0 {
        return Err(Error::Layout(format!(
            "representation expects a {d}-dimensional input block at row 0"
        )));
    }
    let dim = layout.total;
    let mut needed = dd + d + 10;
    if depth >= 2 {
        needed = needed.max(2 * dd + 9);
    }
    if dim < needed {
        return Err(Error::HiddenDimTooSmall {
            what: "representation module",
            needed,
            got: dim,
        });
    }
    let scratch = |l: usize| if l == 1 { d + 1 } else { dd + 1 };
    let input = |l: usize| if l == 1 { 0..d } else { 0..dd };
    let label_at = |l: usize| if l == 1 { label } else { dd };

    let mut layers = Vec::with_capacity(depth + 1);
    for l in 1..=depth {
        let attn = if l == 1 {
            AttentionLayer::identity()
        } else {
            move_layer(&s, dd, input(l - 1), scratch(l - 1), label_at(l - 1))
        };
        let mlp = rep_mlp(&rep.weights[l - 1], rep.slope, input(l), scratch(l), dim);
        layers.push(Layer { attn, mlp });
    }
    layers.push(Layer {
        attn: move_layer(&s, dd, input(depth), scratch(depth), label_at(depth)),
        mlp: MlpLayer::identity(dim),
    });
    Ok(layers)
}

fn ridge_layers(spec: &RidgeSpec, layout: &SlotLayout) -> Result<Vec<Layer>> {
    let dim = layout.total;
    let gd = build_gd_layer(spec, layout)?;
    let mut layers = Vec::with_capacity(spec.ridge_depth());
    layers.push(Layer {
        attn: build_copy_layer(layout)?,
        mlp: MlpLayer::identity(dim),
    });
    for _ in 0..spec.gd_steps() {
        layers.push(Layer {
            attn: gd.clone(),
            mlp: MlpLayer::identity(dim),
        });
    }
    layers.push(Layer {
        attn: build_linear_pred_layer(spec, layout)?,
        mlp: MlpLayer::identity(dim),
    });
    Ok(layers)
}

/// Copy layer, `T` GD layers, prediction layer; attention only.
/// `layout` is a supervised ridge layout.
pub fn build_ridge_tf(spec: &RidgeSpec, layout: &SlotLayout) -> Result<BuiltModel> {
    spec.validate()?;
    let p = layout.require(SlotKind::Features)?.len();
    ridge_slots(layout)?;
    let dim = layout.total;
    if dim < 2 * p + 10 {
        return Err(Error::HiddenDimTooSmall {
            what: "in-context ridge transformer",
            needed: 2 * p + 10,
            got: dim,
        });
    }
    let layers = ridge_layers(spec, layout)?;
    let tf = TransformerWeights::new(dim, layers)?;
    let t = spec.gd_steps();
    let model = BuiltModel {
        kind: ModelKind::Ridge,
        resources: Resources {
            depth: tf.num_layers(),
            max_heads: tf.max_heads(),
            hidden_dim: dim,
            stated_depth: t + 2,
            stated_heads: 3,
            stated_hidden_dim: 2 * p + 10,
        },
        tf,
        input_layout: SlotLayout::supervised_input(p, dim)?,
        layout: layout.clone(),
        landmarks: Landmarks {
            copy: 1,
            rep_module_end: 0,
            rep_end: 1,
            gd_start: 2,
            prediction: t + 2,
        },
        spec: *spec,
        rep: None,
    };
    model.validate()?;
    Ok(model)
}

/// Representation module followed by the ridge stack. `layout` is the
/// supervised input layout with hidden dimension `2D + d + 10`.
pub fn build_fixed_rep_tf(rep: &RepresentationFn, spec: &RidgeSpec, layout: &SlotLayout) -> Result<BuiltModel> {
    spec.validate()?;
    let (d, dd, depth) = (rep.d_in, rep.dim, rep.depth());
    let dim = layout.total;
    let want = fixed_rep_hidden_dim(d, dd);
    if dim != want {
        return Err(Error::HiddenDimTooSmall {
            what: "fixed-representation transformer (exact width 2D+d+10)",
            needed: want,
            got: dim,
        });
    }
    let ridge_layout = SlotLayout::supervised_ridge(dd, dim)?;
    let mut layers = build_mlp_rep_module(rep, layout)?;
    layers.extend(ridge_layers(spec, &ridge_layout)?);
    let tf = TransformerWeights::new(dim, layers)?;
    let t = spec.gd_steps();
    let model = BuiltModel {
        kind: ModelKind::FixedRep,
        resources: Resources {
            depth: tf.num_layers(),
            max_heads: tf.max_heads(),
            hidden_dim: dim,
            stated_depth: depth + t + 3,
            stated_heads: 5,
            stated_hidden_dim: want,
        },
        tf,
        input_layout: layout.clone(),
        layout: ridge_layout,
        landmarks: Landmarks {
            copy: depth + 2,
            rep_module_end: depth + 1,
            rep_end: depth + 2,
            gd_start: depth + 3,
            prediction: depth + t + 3,
        },
        spec: *spec,
        rep: Some(rep.clone()),
    };
    model.validate()?;
    Ok(model)
}
