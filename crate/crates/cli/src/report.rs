// SPDX-License-Identifier: MIT OR Apache-2.0
//! CSV tables and the JSON run summary.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// A CSV table in long format.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: Vec<&'static str>) -> Self {
        Self {
            name: name.into(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

/// Shortest representation that parses back to the same `f64`, in
/// scientific notation outside `[1e-4, 1e15)`.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a, R: Serialize> {
    pub schema_version: u32,
    pub command: &'static str,
    pub pass: bool,
    pub config: &'a ExperimentConfig,
    pub report: &'a R,
}

/// Result of one subcommand.
#[derive(Debug, Clone)]
pub struct Output<R> {
    pub command: &'static str,
    pub pass: bool,
    pub report: R,
    pub tables: Vec<Table>,
}

impl<R: Serialize> Output<R> {
    pub fn summary_json(&self, cfg: &ExperimentConfig) -> Result<String> {
        let s = Summary {
            schema_version: SCHEMA_VERSION,
            command: self.command,
            pass: self.pass,
            config: cfg,
            report: &self.report,
        };
        Ok(serde_json::to_string_pretty(&s)?)
    }

    /// Writes `<command>_<table>.csv` files and `<command>_summary.json`.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::new();
        for t in &self.tables {
            let p = dir.join(format!("{}_{}.csv", self.command.replace('-', "_"), t.name));
            std::fs::write(&p, t.to_csv()?).with_context(|| format!("writing {}", p.display()))?;
            written.push(p);
        }
        let p = dir.join(format!("{}_summary.json", self.command.replace('-', "_")));
        std::fs::write(&p, self.summary_json(cfg)?).with_context(|| format!("writing {}", p.display()))?;
        written.push(p);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rows() {
        let mut t = Table::new("x", vec!["a", "b"]);
        t.push(vec!["1".into(), num(0.1 + 0.2)]);
        assert_eq!(t.to_csv().unwrap(), "a,b\n1,0.30000000000000004\n");
        assert_eq!(num(5.2e-9), "5.2e-9");
        assert_eq!(num(f64::NAN), "NaN");
    }
}
