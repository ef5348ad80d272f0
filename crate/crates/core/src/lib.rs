// SPDX-License-Identifier: MIT OR Apache-2.0
//! Explicit decoder-transformer constructions that run in-context ridge
//! regression on top of a fixed leaky-ReLU representation, together with the
//! oracles and linear probes used to check them.

pub mod constructions;
pub mod data;
pub mod engine;
pub mod error;
pub mod io;
pub mod numerics;
pub mod oracles;
pub mod probe;
pub mod rng;

pub use error::{Error, Result};
