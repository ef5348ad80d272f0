// SPDX-License-Identifier: MIT OR Apache-2.0
//! Configuration-driven experiment runners behind the `icl-repr` binary.

pub mod build;
pub mod config;
pub mod experiment;
pub mod probe_run;
pub mod report;
pub mod risk;
pub mod verify;

pub use config::{ExperimentConfig, Overrides, Setting};
pub use report::{Output, Table};
