// SPDX-License-Identifier: MIT OR Apache-2.0
//! `build`: construct the model, write it, and check the written file
//! reproduces the in-memory model's outputs bitwise.

use anyhow::{Context, Result};
use icl_repr::constructions::{Landmarks, Resources};
use icl_repr::data::encode::{encode_dynamical, encode_supervised};
use icl_repr::io::{load_model, save_model};
use icl_repr::rng::{stream, Purpose};
use serde::Serialize;

use crate::config::{ExperimentConfig, Setting};
use crate::experiment::{sample_dynamical, sample_supervised, setup, BoundsReport};
use crate::report::Output;

#[derive(Debug, Clone, Serialize)]
pub struct BuildReport {
    pub kind: String,
    pub resources: Resources,
    pub resources_match_stated: bool,
    pub landmarks: Landmarks,
    pub bounds: BoundsReport,
    pub files: Vec<String>,
    pub file_bytes: Vec<u64>,
    pub round_trip_bitwise: bool,
}

pub fn build(cfg: &ExperimentConfig) -> Result<Output<BuildReport>> {
    let s = setup(cfg)?;
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut rng = stream(cfg.seed, Purpose::Misc, 0);
    let h = match cfg.setting {
        Setting::Dynamical => encode_dynamical(&sample_dynamical(cfg, &s.rep, &mut rng)?, s.model.tf.hidden_dim)?,
        _ => encode_supervised(&sample_supervised(cfg, &s.rep, &mut rng)?, s.model.tf.hidden_dim)?,
    };
    let reference = s.model.compile().forward(&h)?;
    let mut files = Vec::new();
    let mut file_bytes = Vec::new();
    let mut bitwise = true;
    for name in ["model.bin", "model.json"] {
        let path = cfg.out.join(name);
        save_model(&s.model, &path)?;
        let back = load_model(&path)?;
        let out = back.compile().forward(&h)?;
        bitwise &= back == s.model
            && out
                .data()
                .as_slice()
                .iter()
                .zip(reference.data().as_slice())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        file_bytes.push(std::fs::metadata(&path)?.len());
        files.push(name.to_string());
    }
    let report = BuildReport {
        kind: format!("{:?}", s.model.kind),
        resources: s.model.resources,
        resources_match_stated: s.model.resources.matches_stated(),
        landmarks: s.model.landmarks,
        bounds: s.bounds,
        files,
        file_bytes,
        round_trip_bitwise: bitwise,
    };
    Ok(Output {
        command: "build",
        pass: report.round_trip_bitwise,
        report,
        tables: Vec::new(),
    })
}
