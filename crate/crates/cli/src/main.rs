// SPDX-License-Identifier: MIT OR Apache-2.0
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use icl_repr_cli::{build, probe_run, risk, verify, ExperimentConfig, Output, Overrides, Setting};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "icl-repr", version, about = "Build and verify transformers that run in-context ridge regression over a fixed representation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Construct the model and write model.bin / model.json
    Build(Overrides),
    /// Check the supervised construction against the ridge oracle
    VerifyFixed(Overrides),
    /// Check the dynamical construction against the multi-output ridge oracle
    VerifyDyn(Overrides),
    /// Linear probes of hidden states at the model's landmarks
    Probe(Overrides),
    /// Monte-Carlo per-token risk of the model and reference predictors
    RiskCurve(Overrides),
    /// Print the resolved configuration as TOML
    Config(Overrides),
}

fn emit<R: Serialize>(cfg: &ExperimentConfig, out: Output<R>) -> Result<bool> {
    for p in out.write(cfg, &cfg.out)? {
        eprintln!("wrote {}", p.display());
    }
    println!("{}", out.summary_json(cfg)?);
    Ok(out.pass)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Build(o) => {
            let cfg = o.resolve(Setting::Supervised)?;
            emit(&cfg, build::build(&cfg)?)
        }
        Cmd::VerifyFixed(o) => {
            let cfg = o.resolve(Setting::Supervised)?;
            emit(&cfg, verify::verify_fixed(&cfg)?)
        }
        Cmd::VerifyDyn(o) => {
            let cfg = o.resolve(Setting::Dynamical)?;
            emit(&cfg, verify::verify_dyn(&cfg)?)
        }
        Cmd::Probe(o) => {
            let cfg = o.resolve(Setting::Supervised)?;
            emit(&cfg, probe_run::probe(&cfg)?)
        }
        Cmd::RiskCurve(o) => {
            let cfg = o.resolve(Setting::Supervised)?;
            emit(&cfg, risk::risk_curve(&cfg)?)
        }
        Cmd::Config(o) => {
            print!("{}", o.resolve(Setting::Supervised)?.to_toml()?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
