// SPDX-License-Identifier: MIT OR Apache-2.0
//! Token formats with polynomial positional tails.
//!
//! Supervised: column `2i−1` is `[x_i; 0; 0…; 1, k, k², k³, i, i², 1, i]` and
//! column `2i` is `[0; y_i; 0…; 1, k, k², k³, i, i², 0, 0]`, `k` being the
//! column index. Dynamical: column `i` is `[x_i; 0…; 1, i, i², i³]`.

use super::instances::{DynInstance, IclInstance};
use super::layout::{dyn_tail, sup_tail, SlotKind, SlotLayout};
use crate::engine::TokenMatrix;
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, DenseVector};

/// Supervised tail for pair `i` (1-based); `is_x` selects the x-token.
pub fn supervised_tail(i: usize, is_x: bool) -> [f64; 8] {
    let k = if is_x { 2 * i - 1 } else { 2 * i } as f64;
    let i = i as f64;
    let ind = if is_x { 1.0 } else { 0.0 };
    let mut t = [0.0; 8];
    t[sup_tail::ONE] = 1.0;
    t[sup_tail::POS] = k;
    t[sup_tail::POS2] = k * k;
    t[sup_tail::POS3] = k * k * k;
    t[sup_tail::PAIR] = i;
    t[sup_tail::PAIR2] = i * i;
    t[sup_tail::IS_X] = ind;
    t[sup_tail::PAIR_IS_X] = i * ind;
    t
}

pub fn dynamical_tail(i: usize) -> [f64; 4] {
    let i = i as f64;
    let mut t = [0.0; 4];
    t[dyn_tail::ONE] = 1.0;
    t[dyn_tail::POS] = i;
    t[dyn_tail::POS2] = i * i;
    t[dyn_tail::POS3] = i * i * i;
    t
}

pub fn encode_supervised(inst: &IclInstance, hidden_dim: usize) -> Result<TokenMatrix> {
    let d = inst.input_dim();
    let layout = SlotLayout::supervised_input(d, hidden_dim)?;
    let label = layout.require(SlotKind::Label)?.start;
    let ts = layout.tail_start();
    let n = inst.len();
    let mut m = DenseMatrix::zeros(hidden_dim, 2 * n);
    for i in 1..=n {
        let (cx, cy) = (2 * i - 2, 2 * i - 1);
        let x = &inst.xs[i - 1];
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                op: "encode_supervised",
                left: (d, 1),
                right: (x.len(), 1),
            });
        }
        for (r, &v) in x.iter().enumerate() {
            m[(r, cx)] = v;
        }
        m[(label, cy)] = inst.ys[i - 1];
        for (o, v) in supervised_tail(i, true).into_iter().enumerate() {
            m[(ts + o, cx)] = v;
        }
        for (o, v) in supervised_tail(i, false).into_iter().enumerate() {
            m[(ts + o, cy)] = v;
        }
    }
    TokenMatrix::new(m, layout)
}

pub fn encode_dynamical(inst: &DynInstance, hidden_dim: usize) -> Result<TokenMatrix> {
    let d = inst.state_dim();
    let layout = SlotLayout::dynamical_input(d, hidden_dim)?;
    let ts = layout.tail_start();
    let mut m = DenseMatrix::zeros(hidden_dim, inst.len());
    for (c, x) in inst.xs.iter().enumerate() {
        for (r, &v) in x.iter().enumerate() {
            m[(r, c)] = v;
        }
        for (o, v) in dynamical_tail(c + 1).into_iter().enumerate() {
            m[(ts + o, c)] = v;
        }
    }
    TokenMatrix::new(m, layout)
}

/// Reads `(x_i, y_i)` back from a supervised encoding.
pub fn decode_supervised(h: &TokenMatrix) -> Result<(Vec<DenseVector>, Vec<f64>)> {
    let l = h.layout();
    let f = l.require(SlotKind::Features)?;
    let label = l.require(SlotKind::Label)?.start;
    let n = h.seq_len() / 2;
    let xs = (0..n).map(|i| f.clone().map(|r| h.get(r, 2 * i)).collect()).collect();
    let ys = (0..n).map(|i| h.get(label, 2 * i + 1)).collect();
    Ok((xs, ys))
}

pub fn decode_dynamical(h: &TokenMatrix) -> Result<Vec<DenseVector>> {
    let f = h.layout().require(SlotKind::Features)?;
    Ok((0..h.seq_len())
        .map(|t| f.clone().map(|r| h.get(r, t)).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::instances::{sample_dynamical_instance, sample_supervised_instance};
    use crate::data::representation::sample_representation;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;

    #[test]
    fn first_pair_tails() {
        assert_eq!(supervised_tail(1, true), [1.0; 8]);
        assert_eq!(supervised_tail(1, false), [1.0, 2.0, 4.0, 8.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(dynamical_tail(2), [1.0, 2.0, 4.0, 8.0]);
    }

    #[test]
    fn indicator_slot_by_parity() {
        for i in 1..30 {
            assert_eq!(supervised_tail(i, true)[sup_tail::IS_X], 1.0);
            assert_eq!(supervised_tail(i, false)[sup_tail::IS_X], 0.0);
        }
    }

    #[test]
    fn encoding_rejects_small_hidden_dim() {
        let rep = sample_representation(3, 4, 1, 0.01, true, &mut stream(1, Purpose::Misc, 0)).unwrap();
        let inst = sample_supervised_instance(&rep, 1.0, 0.1, 4, &mut stream(1, Purpose::Trial, 0)).unwrap();
        assert!(encode_supervised(&inst, 12).is_err());
        assert!(encode_supervised(&inst, 13).is_ok());
    }

    #[test]
    fn dynamical_encoding_layout() {
        let rep = sample_representation(6, 4, 1, 0.01, false, &mut stream(2, Purpose::Misc, 0)).unwrap();
        let inst = sample_dynamical_instance(&rep, 3, 0.3, 0.1, 5, &mut stream(2, Purpose::Trial, 0)).unwrap();
        let h = encode_dynamical(&inst, 12).unwrap();
        assert_eq!(decode_dynamical(&h).unwrap(), inst.xs);
        for t in 0..5 {
            for r in 2..8 {
                assert_eq!(h.get(r, t), 0.0);
            }
        }
        assert!(encode_dynamical(&inst, 5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn decoding_inverts_encoding(seed in 0u64..10_000, d in 1usize..5, n in 1usize..8, pad in 0usize..4) {
            let rep = sample_representation(d, 3, 1, 0.01, true, &mut stream(seed, Purpose::Misc, 0)).unwrap();
            let inst = sample_supervised_instance(&rep, 1.0, 0.2, n, &mut stream(seed, Purpose::Trial, 0)).unwrap();
            let h = encode_supervised(&inst, d + 10 + pad).unwrap();
            let (xs, ys) = decode_supervised(&h).unwrap();
            prop_assert_eq!(xs, inst.xs.clone());
            prop_assert_eq!(ys, inst.ys.clone());
            // Data rows of the wrong parity and the padding stay zero.
            let label = d;
            for i in 0..n {
                prop_assert_eq!(h.get(label, 2 * i), 0.0);
                for r in 0..d {
                    prop_assert_eq!(h.get(r, 2 * i + 1), 0.0);
                }
                for r in d + 1..d + 2 + pad {
                    prop_assert_eq!(h.get(r, 2 * i), 0.0);
                    prop_assert_eq!(h.get(r, 2 * i + 1), 0.0);
                }
            }
        }
    }
}
