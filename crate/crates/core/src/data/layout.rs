// SPDX-License-Identifier: MIT OR Apache-2.0
//! Named slot ranges over the hidden dimension.
//!
//! Two layouts exist per setting: the *input* layout produced by the encoders
//! and the *ridge* layout the GD and prediction layers operate on. The
//! representation modules are the layers that move tokens from one to the
//! other.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the positional tail for supervised tokens.
pub const SUPERVISED_TAIL: usize = 8;
/// Length of the positional tail for dynamical tokens.
pub const DYNAMICAL_TAIL: usize = 4;

/// Offsets into the supervised tail. `k` is the token position, `i` the pair index.
pub mod sup_tail {
    pub const ONE: usize = 0;
    pub const POS: usize = 1;
    pub const POS2: usize = 2;
    pub const POS3: usize = 3;
    pub const PAIR: usize = 4;
    pub const PAIR2: usize = 5;
    pub const IS_X: usize = 6;
    pub const PAIR_IS_X: usize = 7;
}

/// Offsets into the dynamical tail.
pub mod dyn_tail {
    pub const ONE: usize = 0;
    pub const POS: usize = 1;
    pub const POS2: usize = 2;
    pub const POS3: usize = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Supervised,
    Dynamical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKind {
    /// Raw input or representation block.
    Features,
    /// Supervised label; also the prediction slot of x-tokens.
    Label,
    /// Dynamical prediction block.
    Prediction,
    /// Dynamical: representation of the previous history.
    PrevFeatures,
    /// Dynamical: regression target (the current state).
    Target,
    /// GD iterate storage.
    Workspace,
    Padding,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub kind: SlotKind,
    pub start: usize,
    pub len: usize,
}

impl Slot {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotLayout {
    pub mode: Mode,
    pub total: usize,
    pub slots: Vec<Slot>,
}

fn build(mode: Mode, total: usize, blocks: &[(SlotKind, usize)], tail: usize) -> Result<SlotLayout> {
    let used: usize = blocks.iter().map(|b| b.1).sum::<usize>() + tail;
    if used > total {
        return Err(Error::Layout(format!(
            "{mode:?} layout needs {used} rows, hidden dimension is {total}"
        )));
    }
    let mut slots = Vec::with_capacity(blocks.len() + 2);
    let mut at = 0;
    for &(kind, len) in blocks {
        slots.push(Slot { kind, start: at, len });
        at += len;
    }
    if total - tail > at {
        slots.push(Slot {
            kind: SlotKind::Padding,
            start: at,
            len: total - tail - at,
        });
    }
    slots.push(Slot {
        kind: SlotKind::Tail,
        start: total - tail,
        len: tail,
    });
    let layout = SlotLayout { mode, total, slots };
    layout.validate()?;
    Ok(layout)
}

impl SlotLayout {
    /// `[x; label; padding; tail]`, as produced by the supervised encoder.
    pub fn supervised_input(d: usize, total: usize) -> Result<Self> {
        if total < d + 10 {
            return Err(Error::HiddenDimTooSmall {
                what: "supervised encoding",
                needed: d + 10,
                got: total,
            });
        }
        build(
            Mode::Supervised,
            total,
            &[(SlotKind::Features, d), (SlotKind::Label, 1)],
            SUPERVISED_TAIL,
        )
    }

    /// `[features (p); label; workspace (p); padding; tail]`.
    pub fn supervised_ridge(p: usize, total: usize) -> Result<Self> {
        if total < 2 * p + 10 {
            return Err(Error::HiddenDimTooSmall {
                what: "in-context ridge layout",
                needed: 2 * p + 10,
                got: total,
            });
        }
        build(
            Mode::Supervised,
            total,
            &[
                (SlotKind::Features, p),
                (SlotKind::Label, 1),
                (SlotKind::Workspace, p),
            ],
            SUPERVISED_TAIL,
        )
    }

    /// `[x; padding; tail]`, as produced by the dynamical encoder.
    pub fn dynamical_input(d: usize, total: usize) -> Result<Self> {
        if total < d + DYNAMICAL_TAIL {
            return Err(Error::HiddenDimTooSmall {
                what: "dynamical encoding",
                needed: d + DYNAMICAL_TAIL,
                got: total,
            });
        }
        build(Mode::Dynamical, total, &[(SlotKind::Features, d)], DYNAMICAL_TAIL)
    }

    /// `[Φ(x̄_i) (D); prediction (d); Φ(x̄_{i−1}) (D); x_i (d); workspace (D·d); padding; tail]`.
    pub fn dynamical_ridge(d: usize, rep_dim: usize, total: usize) -> Result<Self> {
        let needed = rep_dim * d + 2 * (rep_dim + d) + DYNAMICAL_TAIL;
        if total < needed {
            return Err(Error::HiddenDimTooSmall {
                what: "multi-output ridge layout",
                needed,
                got: total,
            });
        }
        build(
            Mode::Dynamical,
            total,
            &[
                (SlotKind::Features, rep_dim),
                (SlotKind::Prediction, d),
                (SlotKind::PrevFeatures, rep_dim),
                (SlotKind::Target, d),
                (SlotKind::Workspace, rep_dim * d),
            ],
            DYNAMICAL_TAIL,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let mut at = 0;
        for s in &self.slots {
            if s.start != at {
                return Err(Error::Layout(format!(
                    "slot {:?} starts at {} but previous slot ends at {at}",
                    s.kind, s.start
                )));
            }
            at += s.len;
        }
        if at != self.total {
            return Err(Error::Layout(format!("slots cover {at} rows of {}", self.total)));
        }
        let want = match self.mode {
            Mode::Supervised => SUPERVISED_TAIL,
            Mode::Dynamical => DYNAMICAL_TAIL,
        };
        match self.slots.last() {
            Some(t) if t.kind == SlotKind::Tail && t.len == want => Ok(()),
            _ => Err(Error::Layout(format!("positional tail must have {want} entries"))),
        }
    }

    pub fn get(&self, kind: SlotKind) -> Option<Range<usize>> {
        self.slots.iter().find(|s| s.kind == kind).map(Slot::range)
    }

    pub fn require(&self, kind: SlotKind) -> Result<Range<usize>> {
        self.get(kind)
            .ok_or_else(|| Error::Layout(format!("layout has no {kind:?} slot")))
    }

    pub fn features(&self) -> Range<usize> {
        self.get(SlotKind::Features).unwrap_or(0..0)
    }

    pub fn tail_start(&self) -> usize {
        self.slots.last().map_or(0, |s| s.start)
    }

    /// Absolute row of a tail entry.
    pub fn tail(&self, offset: usize) -> usize {
        self.tail_start() + offset
    }

    /// Rows read as predictions: the label slot (supervised), the prediction
    /// block if present, otherwise the state block (dynamical).
    pub fn prediction(&self) -> Range<usize> {
        match self.mode {
            Mode::Supervised => self.get(SlotKind::Label).unwrap_or(0..0),
            Mode::Dynamical => self
                .get(SlotKind::Prediction)
                .unwrap_or_else(|| self.features()),
        }
    }
}
