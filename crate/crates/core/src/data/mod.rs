// SPDX-License-Identifier: MIT OR Apache-2.0
//! Representations, instance samplers and token encodings.

pub mod encode;
pub mod instances;
pub mod layout;
pub mod representation;

pub use encode::{decode_dynamical, decode_supervised, encode_dynamical, encode_supervised};
pub use instances::{
    history, sample_dynamical_instance, sample_mixture_instance, sample_supervised_instance,
    sample_supervised_instance_with, DynInstance, IclInstance, InputDist, MixtureSpec,
};
pub use layout::{Mode, SlotKind, SlotLayout};
pub use representation::{apply_representation, sample_representation, RepresentationFn};
