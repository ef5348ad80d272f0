// SPDX-License-Identifier: MIT OR Apache-2.0
//! Forward-only decoder transformer with normalised-ReLU attention.
//!
//! Token `k` (1-based) of an attention layer maps to
//! `h_k + Σ_m (1/k) Σ_{ℓ≤k} relu(⟨Q_m h_k, K_m h_ℓ⟩) V_m h_ℓ`; an MLP maps
//! `h ↦ h + W2 relu(W1 h)`. There is no normalisation layer and no softmax.
//!
//! Weights are stored densely and compiled to sparse rows for evaluation.
//! Summation orders are fixed (ascending hidden index, ascending key, one
//! head at a time), so a prefix of the sequence produces bitwise identical
//! columns and the construction layers that erase before they write are exact.

use serde::{Deserialize, Serialize};

use crate::data::layout::SlotLayout;
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, DenseVector};

/// Hidden states, one column per token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    data: DenseMatrix,
    layout: SlotLayout,
}

impl TokenMatrix {
    pub fn new(data: DenseMatrix, layout: SlotLayout) -> Result<Self> {
        if data.rows() != layout.total {
            return Err(Error::DimensionMismatch {
                op: "TokenMatrix",
                left: data.shape(),
                right: (layout.total, data.cols()),
            });
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("TokenMatrix"));
        }
        Ok(Self { data, layout })
    }

    pub fn from_columns(cols: &[DenseVector], layout: SlotLayout) -> Result<Self> {
        let h = layout.total;
        if let Some(c) = cols.iter().find(|c| c.len() != h) {
            return Err(Error::DimensionMismatch {
                op: "TokenMatrix::from_columns",
                left: (h, cols.len()),
                right: (c.len(), 1),
            });
        }
        let data = DenseMatrix::from_fn(h, cols.len(), |r, c| cols[c][r]);
        Self::new(data, layout)
    }

    pub fn hidden_dim(&self) -> usize {
        self.data.rows()
    }

    pub fn seq_len(&self) -> usize {
        self.data.cols()
    }

    pub fn data(&self) -> &DenseMatrix {
        &self.data
    }

    pub fn layout(&self) -> &SlotLayout {
        &self.layout
    }

    /// Column of 0-based token index `t`.
    pub fn column(&self, t: usize) -> DenseVector {
        self.data.column(t)
    }

    pub fn get(&self, row: usize, t: usize) -> f64 {
        self.data[(row, t)]
    }

    pub fn columns(&self) -> Vec<DenseVector> {
        (0..self.seq_len()).map(|t| self.column(t)).collect()
    }

    /// First `k` tokens.
    pub fn prefix(&self, k: usize) -> TokenMatrix {
        let k = k.min(self.seq_len());
        TokenMatrix {
            data: DenseMatrix::from_fn(self.hidden_dim(), k, |r, c| self.data[(r, c)]),
            layout: self.layout.clone(),
        }
    }

    pub fn with_layout(mut self, layout: SlotLayout) -> Result<Self> {
        if layout.total != self.hidden_dim() {
            return Err(Error::Layout(format!(
                "layout total {} does not match hidden dimension {}",
                layout.total,
                self.hidden_dim()
            )));
        }
        self.layout = layout;
        Ok(self)
    }

    pub fn max_abs_diff(&self, other: &TokenMatrix) -> f64 {
        self.data.max_abs_diff(&other.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    pub q: DenseMatrix,
    pub k: DenseMatrix,
    pub v: DenseMatrix,
}

impl AttentionHead {
    pub fn zeros(dim: usize) -> Self {
        Self {
            q: DenseMatrix::zeros(dim, dim),
            k: DenseMatrix::zeros(dim, dim),
            v: DenseMatrix::zeros(dim, dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttentionLayer {
    pub heads: Vec<AttentionHead>,
}

impl AttentionLayer {
    pub fn identity() -> Self {
        Self { heads: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpLayer {
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
    pub identity: bool,
}

impl MlpLayer {
    pub fn identity(dim: usize) -> Self {
        Self {
            w1: DenseMatrix::zeros(dim, dim),
            w2: DenseMatrix::zeros(dim, dim),
            identity: true,
        }
    }

    pub fn new(w1: DenseMatrix, w2: DenseMatrix) -> Self {
        Self {
            w1,
            w2,
            identity: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub attn: AttentionLayer,
    pub mlp: MlpLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerWeights {
    pub hidden_dim: usize,
    pub layers: Vec<Layer>,
}

impl TransformerWeights {
    pub fn new(hidden_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let tf = Self { hidden_dim, layers };
        tf.validate()?;
        Ok(tf)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn max_heads(&self) -> usize {
        self.layers.iter().map(|l| l.attn.heads.len()).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let sq = (self.hidden_dim, self.hidden_dim);
        let check = |m: &DenseMatrix, op: &'static str| -> Result<()> {
            if m.shape() != sq {
                return Err(Error::DimensionMismatch {
                    op,
                    left: sq,
                    right: m.shape(),
                });
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(op));
            }
            Ok(())
        };
        for layer in &self.layers {
            for h in &layer.attn.heads {
                check(&h.q, "attention Q")?;
                check(&h.k, "attention K")?;
                check(&h.v, "attention V")?;
            }
            check(&layer.mlp.w1, "MLP W1")?;
            check(&layer.mlp.w2, "MLP W2")?;
            if layer.mlp.identity && !(layer.mlp.w1.is_zero() && layer.mlp.w2.is_zero()) {
                return Err(Error::InvalidParameter(
                    "identity MLP must have zero weights".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn compile(&self) -> CompiledTransformer {
        CompiledTransformer {
            hidden_dim: self.hidden_dim,
            layers: self
                .layers
                .iter()
                .map(|l| CompiledLayer {
                    attn: CompiledAttention::new(&l.attn),
                    mlp: CompiledMlp::new(&l.mlp),
                })
                .collect(),
        }
    }
}

/// Hidden states after the input and after every layer.
#[derive(Debug, Clone)]
pub struct HiddenTrace {
    pub states: Vec<TokenMatrix>,
    /// `post_attention[ℓ]` is the state inside layer `ℓ+1`, between attention and MLP.
    pub post_attention: Option<Vec<TokenMatrix>>,
}

// --- compiled form -------------------------------------------------------

/// Rows with at least one nonzero entry, each as ascending `(col, value)` pairs.
#[derive(Debug, Clone)]
struct SparseRows {
    rows: Vec<(usize, Vec<(usize, f64)>)>,
}

impl SparseRows {
    fn from_dense(m: &DenseMatrix) -> Self {
        let rows = (0..m.rows())
            .filter_map(|r| {
                let entries: Vec<(usize, f64)> = m
                    .row(r)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c, v))
                    .collect();
                (!entries.is_empty()).then_some((r, entries))
            })
            .collect();
        Self { rows }
    }

    fn row_ids(&self) -> Vec<usize> {
        self.rows.iter().map(|(r, _)| *r).collect()
    }

    fn restrict(&self, keep: &[usize]) -> Vec<Vec<(usize, f64)>> {
        keep.iter()
            .map(|r| {
                self.rows
                    .iter()
                    .find(|(rr, _)| rr == r)
                    .map(|(_, e)| e.clone())
                    .unwrap_or_default()
            })
            .collect()
    }
}

fn sparse_dot(entries: &[(usize, f64)], h: &[f64]) -> f64 {
    let mut s = 0.0;
    for &(c, v) in entries {
        s += v * h[c];
    }
    s
}

#[derive(Debug, Clone)]
struct CompiledHead {
    /// Query/key rows that can both be nonzero, ascending.
    q_rows: Vec<Vec<(usize, f64)>>,
    k_rows: Vec<Vec<(usize, f64)>>,
    out_rows: Vec<usize>,
    v_rows: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone)]
struct CompiledAttention {
    heads: Vec<CompiledHead>,
}

impl CompiledAttention {
    fn new(layer: &AttentionLayer) -> Self {
        let heads = layer
            .heads
            .iter()
            .map(|h| {
                let q = SparseRows::from_dense(&h.q);
                let k = SparseRows::from_dense(&h.k);
                let kr = k.row_ids();
                let score_rows: Vec<usize> =
                    q.row_ids().into_iter().filter(|r| kr.contains(r)).collect();
                let v = SparseRows::from_dense(&h.v);
                CompiledHead {
                    q_rows: q.restrict(&score_rows),
                    k_rows: k.restrict(&score_rows),
                    out_rows: v.row_ids(),
                    v_rows: v.rows.into_iter().map(|(_, e)| e).collect(),
                }
            })
            .collect();
        Self { heads }
    }

    fn forward(&self, tokens: &[DenseVector]) -> Vec<DenseVector> {
        let mut out: Vec<DenseVector> = tokens.to_vec();
        for head in &self.heads {
            if head.out_rows.is_empty() || head.q_rows.is_empty() {
                continue;
            }
            let keys: Vec<Vec<f64>> = tokens
                .iter()
                .map(|h| head.k_rows.iter().map(|e| sparse_dot(e, h)).collect())
                .collect();
            let values: Vec<Vec<f64>> = tokens
                .iter()
                .map(|h| head.v_rows.iter().map(|e| sparse_dot(e, h)).collect())
                .collect();
            let mut acc = vec![0.0; head.out_rows.len()];
            for (t, h) in tokens.iter().enumerate() {
                let q: Vec<f64> = head.q_rows.iter().map(|e| sparse_dot(e, h)).collect();
                let k_norm = (t + 1) as f64;
                acc.iter_mut().for_each(|a| *a = 0.0);
                for (key, value) in keys[..=t].iter().zip(&values[..=t]) {
                    let mut s = 0.0;
                    for (a, b) in q.iter().zip(key) {
                        s += a * b;
                    }
                    if s > 0.0 {
                        let w = s / k_norm;
                        for (a, v) in acc.iter_mut().zip(value) {
                            *a += w * v;
                        }
                    }
                }
                let o = &mut out[t];
                for (&r, a) in head.out_rows.iter().zip(&acc) {
                    o[r] += a;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct CompiledMlp {
    identity: bool,
    /// Hidden units with a nonzero input row, ascending.
    w1_rows: Vec<(usize, Vec<(usize, f64)>)>,
    /// For each hidden unit of `w1_rows`, its ascending output column of W2.
    w2_cols: Vec<Vec<(usize, f64)>>,
}

impl CompiledMlp {
    fn new(mlp: &MlpLayer) -> Self {
        if mlp.identity {
            return Self {
                identity: true,
                w1_rows: Vec::new(),
                w2_cols: Vec::new(),
            };
        }
        let w1 = SparseRows::from_dense(&mlp.w1);
        let w2_cols = w1
            .rows
            .iter()
            .map(|(j, _)| {
                (0..mlp.w2.rows())
                    .filter_map(|r| {
                        let v = mlp.w2[(r, *j)];
                        (v != 0.0).then_some((r, v))
                    })
                    .collect()
            })
            .collect();
        Self {
            identity: false,
            w1_rows: w1.rows,
            w2_cols,
        }
    }

    fn forward_token(&self, h: &[f64]) -> DenseVector {
        let mut out = h.to_vec();
        if self.identity {
            return out;
        }
        // All hidden units read the input before any output is written.
        let act: Vec<f64> = self
            .w1_rows
            .iter()
            .map(|(_, e)| sparse_dot(e, h).max(0.0))
            .collect();
        for (s, col) in act.iter().zip(&self.w2_cols) {
            if *s > 0.0 {
                for &(r, w) in col {
                    out[r] += w * s;
                }
            }
        }
        out
    }

    fn forward(&self, tokens: &[DenseVector]) -> Vec<DenseVector> {
        tokens.iter().map(|h| self.forward_token(h)).collect()
    }
}

#[derive(Debug, Clone)]
struct CompiledLayer {
    attn: CompiledAttention,
    mlp: CompiledMlp,
}

/// Sparse, evaluation-ready form of [`TransformerWeights`].
#[derive(Debug, Clone)]
pub struct CompiledTransformer {
    hidden_dim: usize,
    layers: Vec<CompiledLayer>,
}

impl CompiledTransformer {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn check(&self, h: &TokenMatrix) -> Result<()> {
        if h.hidden_dim() != self.hidden_dim {
            return Err(Error::DimensionMismatch {
                op: "tf_forward",
                left: (self.hidden_dim, self.hidden_dim),
                right: (h.hidden_dim(), h.seq_len()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, h: &TokenMatrix) -> Result<TokenMatrix> {
        self.forward_range(h, 0, self.layers.len())
    }

    /// Applies layers `from..to` (0-based, half-open).
    pub fn forward_range(&self, h: &TokenMatrix, from: usize, to: usize) -> Result<TokenMatrix> {
        self.check(h)?;
        let mut tokens = h.columns();
        for layer in &self.layers[from..to] {
            tokens = layer.attn.forward(&tokens);
            tokens = layer.mlp.forward(&tokens);
        }
        TokenMatrix::from_columns(&tokens, h.layout().clone())
    }

    pub fn forward_trace(&self, h: &TokenMatrix, record_post_attention: bool) -> Result<HiddenTrace> {
        self.check(h)?;
        let layout = h.layout().clone();
        let mut tokens = h.columns();
        let mut states = vec![h.clone()];
        let mut post = record_post_attention.then(Vec::new);
        for layer in &self.layers {
            tokens = layer.attn.forward(&tokens);
            if let Some(p) = post.as_mut() {
                p.push(TokenMatrix::from_columns(&tokens, layout.clone())?);
            }
            tokens = layer.mlp.forward(&tokens);
            states.push(TokenMatrix::from_columns(&tokens, layout.clone())?);
        }
        Ok(HiddenTrace {
            states,
            post_attention: post,
        })
    }
}

fn check_layer_dim(h: &TokenMatrix, m: &DenseMatrix, op: &'static str) -> Result<()> {
    if m.shape() != (h.hidden_dim(), h.hidden_dim()) {
        return Err(Error::DimensionMismatch {
            op,
            left: m.shape(),
            right: (h.hidden_dim(), h.seq_len()),
        });
    }
    Ok(())
}

pub fn attention_forward(layer: &AttentionLayer, h: &TokenMatrix) -> Result<TokenMatrix> {
    for head in &layer.heads {
        check_layer_dim(h, &head.q, "attention_forward")?;
        check_layer_dim(h, &head.k, "attention_forward")?;
        check_layer_dim(h, &head.v, "attention_forward")?;
    }
    let out = CompiledAttention::new(layer).forward(&h.columns());
    TokenMatrix::from_columns(&out, h.layout().clone())
}

pub fn mlp_forward(layer: &MlpLayer, h: &TokenMatrix) -> Result<TokenMatrix> {
    check_layer_dim(h, &layer.w1, "mlp_forward")?;
    check_layer_dim(h, &layer.w2, "mlp_forward")?;
    let out = CompiledMlp::new(layer).forward(&h.columns());
    TokenMatrix::from_columns(&out, h.layout().clone())
}

pub fn tf_forward(tf: &TransformerWeights, h: &TokenMatrix) -> Result<TokenMatrix> {
    tf.compile().forward(h)
}

pub fn tf_forward_trace(tf: &TransformerWeights, h: &TokenMatrix) -> Result<HiddenTrace> {
    tf.compile().forward_trace(h, false)
}

/// `ŷ_i` read from the prediction slot of x-token `2i−1`.
pub fn read_supervised_predictions(h: &TokenMatrix, layout: &SlotLayout) -> Result<Vec<f64>> {
    if !h.seq_len().is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "supervised sequence length {} is odd",
            h.seq_len()
        )));
    }
    let row = layout.prediction();
    if row.len() != 1 {
        return Err(Error::Layout("no scalar prediction slot".into()));
    }
    Ok((0..h.seq_len() / 2).map(|i| h.get(row.start, 2 * i)).collect())
}

/// `x̂_{i+1}` read from the prediction block of token `i`.
pub fn read_dyn_predictions(h: &TokenMatrix, layout: &SlotLayout, d: usize) -> Result<Vec<DenseVector>> {
    let rows = layout.prediction();
    if rows.len() < d {
        return Err(Error::Layout(format!(
            "prediction block has {} rows, need {d}",
            rows.len()
        )));
    }
    Ok((0..h.seq_len())
        .map(|t| (rows.start..rows.start + d).map(|r| h.get(r, t)).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::layout::SlotLayout;
    use crate::numerics::{matmul, DenseMatrix};
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;

    fn layout(dim: usize) -> SlotLayout {
        SlotLayout::dynamical_input(dim - 4, dim).unwrap()
    }

    fn random_tokens(dim: usize, t: usize, seed: u64) -> TokenMatrix {
        let m = DenseMatrix::random_normal(dim, t, 1.0, &mut stream(seed, Purpose::Misc, 1));
        TokenMatrix::new(m, layout(dim)).unwrap()
    }

    fn random_model(dim: usize, layers: usize, heads: usize, seed: u64) -> TransformerWeights {
        let mut g = stream(seed, Purpose::RandomWeights, 0);
        let s = 0.3 / (dim as f64).sqrt();
        let layers = (0..layers)
            .map(|_| Layer {
                attn: AttentionLayer {
                    heads: (0..heads)
                        .map(|_| AttentionHead {
                            q: DenseMatrix::random_normal(dim, dim, s, &mut g),
                            k: DenseMatrix::random_normal(dim, dim, s, &mut g),
                            v: DenseMatrix::random_normal(dim, dim, s, &mut g),
                        })
                        .collect(),
                },
                mlp: MlpLayer::new(
                    DenseMatrix::random_normal(dim, dim, s, &mut g),
                    DenseMatrix::random_normal(dim, dim, s, &mut g),
                ),
            })
            .collect();
        TransformerWeights::new(dim, layers).unwrap()
    }

    /// Direct evaluation of the attention formula with dense products.
    fn naive_attention(layer: &AttentionLayer, h: &TokenMatrix) -> DenseMatrix {
        let x = h.data();
        let mut out = x.clone();
        for head in &layer.heads {
            let q = matmul(&head.q, x).unwrap();
            let k = matmul(&head.k, x).unwrap();
            let v = matmul(&head.v, x).unwrap();
            for t in 0..x.cols() {
                for l in 0..=t {
                    let s: f64 = (0..x.rows()).map(|r| q[(r, t)] * k[(r, l)]).sum();
                    let w = s.max(0.0) / (t + 1) as f64;
                    for r in 0..x.rows() {
                        out[(r, t)] += w * v[(r, l)];
                    }
                }
            }
        }
        out
    }

    fn naive_mlp(layer: &MlpLayer, h: &TokenMatrix) -> DenseMatrix {
        let x = h.data();
        let mut a = matmul(&layer.w1, x).unwrap();
        a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        let y = matmul(&layer.w2, &a).unwrap();
        DenseMatrix::from_fn(x.rows(), x.cols(), |r, c| x[(r, c)] + y[(r, c)])
    }

    #[test]
    fn zero_queries_leave_tokens_unchanged() {
        let h = random_tokens(8, 5, 1);
        let mut head = AttentionHead::zeros(8);
        head.v = DenseMatrix::identity(8);
        let out = attention_forward(&AttentionLayer { heads: vec![head] }, &h).unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn hand_evaluated_two_token_head() {
        // Hidden dim 5 (one data row plus a 4-entry tail); scalar q/k/v on row 0.
        let mut head = AttentionHead::zeros(5);
        head.q[(0, 0)] = 2.0;
        head.k[(0, 0)] = 1.5;
        head.v[(1, 0)] = -3.0;
        let data = DenseMatrix::from_fn(5, 2, |r, c| if r == 0 { [1.0, -0.5][c] } else { 0.0 });
        let h = TokenMatrix::new(data, SlotLayout::dynamical_input(1, 5).unwrap()).unwrap();
        let out = attention_forward(&AttentionLayer { heads: vec![head] }, &h).unwrap();
        // Token 1: relu(2·1·1.5·1)/1 · (−3·1) = −9.
        assert!((out.get(1, 0) + 9.0).abs() < 1e-14);
        // Token 2: query 2·(−0.5) = −1; scores −1.5 and 0.75 → (0 + 0.75·1.5)/2.
        let expect = (0.75 * (-3.0 * -0.5)) / 2.0;
        assert!((out.get(1, 1) - expect).abs() < 1e-14);
    }

    #[test]
    fn attention_matches_direct_formula() {
        let h = random_tokens(9, 7, 2);
        let tf = random_model(9, 1, 3, 3);
        let out = attention_forward(&tf.layers[0].attn, &h).unwrap();
        let o = naive_attention(&tf.layers[0].attn, &h);
        assert!(out.data().max_abs_diff(&o) <= 1e-14 * o.frobenius_norm().max(1.0));
    }

    #[test]
    fn mlp_cases() {
        let h = random_tokens(6, 4, 4);
        assert_eq!(mlp_forward(&MlpLayer::identity(6), &h).unwrap(), h);
        let nonneg = DenseMatrix::from_fn(6, 3, |r, c| (r + c) as f64 * 0.5);
        let hp = TokenMatrix::new(nonneg, layout(6)).unwrap();
        let m = MlpLayer::new(DenseMatrix::identity(6), DenseMatrix::identity(6).scale(-1.0));
        assert!(mlp_forward(&m, &hp).unwrap().data().is_zero());
        let tf = random_model(6, 1, 0, 5);
        let out = mlp_forward(&tf.layers[0].mlp, &h).unwrap();
        let o = naive_mlp(&tf.layers[0].mlp, &h);
        assert!(out.data().max_abs_diff(&o) <= 1e-14 * o.frobenius_norm().max(1.0));
    }

    #[test]
    fn zero_model_is_identity_and_trace_consistent() {
        let h = random_tokens(7, 6, 6);
        let zero = TransformerWeights::new(
            7,
            (0..3)
                .map(|_| Layer {
                    attn: AttentionLayer {
                        heads: vec![AttentionHead::zeros(7)],
                    },
                    mlp: MlpLayer::identity(7),
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(tf_forward(&zero, &h).unwrap(), h);
        let tf = random_model(7, 3, 2, 7);
        let trace = tf_forward_trace(&tf, &h).unwrap();
        assert_eq!(trace.states.len(), 4);
        assert_eq!(trace.states[0], h);
        assert_eq!(trace.states[3], tf_forward(&tf, &h).unwrap());
    }

    #[test]
    fn validate_rejects_bad_shapes() {
        let mut tf = random_model(5, 1, 1, 8);
        tf.layers[0].attn.heads[0].q = DenseMatrix::zeros(4, 5);
        assert!(tf.validate().is_err());
        let mut tf = random_model(5, 1, 1, 8);
        tf.layers[0].mlp.identity = true;
        assert!(tf.validate().is_err());
    }

    #[test]
    fn prediction_readers() {
        let l = SlotLayout::supervised_input(2, 12).unwrap();
        let h = TokenMatrix::new(DenseMatrix::zeros(12, 4), l.clone()).unwrap();
        assert_eq!(read_supervised_predictions(&h, &l).unwrap(), vec![0.0, 0.0]);
        let odd = TokenMatrix::new(DenseMatrix::zeros(12, 3), l.clone()).unwrap();
        assert!(read_supervised_predictions(&odd, &l).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn prefix_runs_are_bitwise_identical(seed in 0u64..10_000, t in 2usize..9) {
            let tf = random_model(8, 3, 2, seed);
            let h = random_tokens(8, t, seed + 1);
            let full = tf_forward(&tf, &h).unwrap();
            for k in 1..=t {
                let p = tf_forward(&tf, &h.prefix(k)).unwrap();
                prop_assert_eq!(p.column(k - 1), full.column(k - 1));
            }
        }

        #[test]
        fn nonpositive_scores_return_input(seed in 0u64..10_000) {
            // Q h · K h = −(a·h)² ≤ 0 for K = −Q.
            let mut g = stream(seed, Purpose::RandomWeights, 1);
            let a = DenseMatrix::random_normal(1, 6, 1.0, &mut g);
            let mut q = DenseMatrix::zeros(6, 6);
            q.row_mut(0).copy_from_slice(a.row(0));
            let head = AttentionHead { k: q.scale(-1.0), q, v: DenseMatrix::random_normal(6, 6, 1.0, &mut g) };
            let h = random_tokens(6, 1, seed);
            let out = attention_forward(&AttentionLayer { heads: vec![head] }, &h).unwrap();
            prop_assert_eq!(out, h);
        }
    }
}
