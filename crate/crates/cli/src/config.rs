// SPDX-License-Identifier: MIT OR Apache-2.0
//! Experiment configuration: per-setting defaults, a TOML file merged on
//! top, then command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Supervised,
    Dynamical,
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    /// Input (state) dimension.
    pub d: usize,
    /// Representation width `D`.
    pub rep_dim: usize,
    /// Representation depth `L`.
    pub rep_depth: usize,
    /// History length of the dynamical setting.
    pub k: usize,
    /// Number of representations in the mixture setting.
    pub tasks: usize,
    /// Sequence length `N`.
    pub n: usize,
    pub slope: f64,
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Noise {
    pub sigma: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ridge {
    pub lambda: f64,
    pub eps: f64,
}

/// Explicit bounds override the pilot estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub b_x: Option<f64>,
    pub b_w: Option<f64>,
    pub b_y: Option<f64>,
    pub pilot_trials: usize,
    pub margin: f64,
    pub max_resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSettings {
    pub train: usize,
    pub test: usize,
    pub replicates: usize,
    /// Layer outputs to probe; empty means the landmark set.
    pub layers: Vec<usize>,
    pub per_token: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSettings {
    /// Multipliers of `λ⋆ = σ²/τ²`.
    pub lambda_factors: Vec<f64>,
    pub include_tf: bool,
    /// Tokens `i ≥ window_from` enter the averaged summary.
    pub window_from: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub seed: u64,
    pub trials: usize,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub out: PathBuf,
    pub dims: Dims,
    pub noise: Noise,
    pub ridge: Ridge,
    pub bounds: Bounds,
    pub probe: ProbeSettings,
    pub risk: RiskSettings,
}

impl ExperimentConfig {
    /// Defaults: the small verification scale for each setting.
    pub fn defaults(setting: Setting) -> Self {
        let dims = match setting {
            Setting::Dynamical => Dims {
                d: 3,
                rep_dim: 4,
                rep_depth: 2,
                k: 3,
                tasks: 1,
                n: 20,
                slope: 0.01,
                normalize: false,
            },
            Setting::Supervised | Setting::Mixture => Dims {
                d: 4,
                rep_dim: 4,
                rep_depth: 2,
                k: 1,
                tasks: if setting == Setting::Mixture { 3 } else { 1 },
                n: 20,
                slope: 0.01,
                normalize: true,
            },
        };
        let (tau, lambda, trials) = match setting {
            Setting::Dynamical => (0.2, 1.0, 50),
            Setting::Supervised => (1.0, 0.1, 100),
            Setting::Mixture => (1.0, 0.01, 2000),
        };
        Self {
            setting,
            seed: 0,
            trials,
            workers: 0,
            out: PathBuf::from("out"),
            dims,
            noise: Noise { sigma: 0.1, tau },
            ridge: Ridge { lambda, eps: 0.05 },
            bounds: Bounds {
                b_x: None,
                b_w: None,
                b_y: None,
                pilot_trials: 64,
                margin: 1.25,
                max_resamples: 20,
            },
            probe: ProbeSettings {
                train: 512,
                test: 64,
                replicates: 3,
                layers: Vec::new(),
                per_token: false,
            },
            risk: RiskSettings {
                lambda_factors: vec![0.1, 1.0, 10.0],
                include_tf: setting == Setting::Supervised,
                window_from: 5,
            },
        }
    }

    /// Parses a TOML document over the defaults of its `setting` (or of
    /// `fallback` when the file does not name one).
    pub fn from_toml_str(text: &str, fallback: Setting) -> Result<Self> {
        let file: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        let setting = match file.get("setting") {
            Some(v) => v.clone().try_into::<Setting>().context("field `setting`")?,
            None => fallback,
        };
        let mut base = toml::Table::try_from(Self::defaults(setting)).context("serialising defaults")?;
        merge(&mut base, file);
        let cfg: Self = toml::Value::Table(base).try_into().context("config field has the wrong type or name")?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: Setting) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text, fallback)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Static checks; bound-dependent checks happen once the bounds are known.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        for (name, v) in [
            ("trials", self.trials),
            ("dims.d", d.d),
            ("dims.rep_dim", d.rep_dim),
            ("dims.rep_depth", d.rep_depth),
            ("dims.k", d.k),
            ("dims.tasks", d.tasks),
            ("dims.n", d.n),
            ("bounds.pilot_trials", self.bounds.pilot_trials),
            ("probe.train", self.probe.train),
            ("probe.test", self.probe.test),
            ("probe.replicates", self.probe.replicates),
        ] {
            if v < 1 {
                bail!("{name} must be at least 1");
            }
        }
        for (name, v) in [("noise.sigma", self.noise.sigma), ("noise.tau", self.noise.tau)] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!("{name} = {v} must be finite and ≥ 0");
            }
        }
        for (name, v) in [
            ("ridge.lambda", self.ridge.lambda),
            ("ridge.eps", self.ridge.eps),
            ("bounds.margin", self.bounds.margin),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} = {v} must be positive");
            }
        }
        if !(0.0..1.0).contains(&d.slope) {
            bail!("dims.slope = {} must lie in [0, 1)", d.slope);
        }
        for (name, v) in [("bounds.b_x", self.bounds.b_x), ("bounds.b_w", self.bounds.b_w), ("bounds.b_y", self.bounds.b_y)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    bail!("{name} = {v} must be positive");
                }
            }
        }
        if let (Some(bx), Some(bw)) = (self.bounds.b_x, self.bounds.b_w) {
            if self.ridge.eps >= bx * bw / 2.0 {
                bail!("ridge.eps = {} must be below B_x·B_w/2 = {}", self.ridge.eps, bx * bw / 2.0);
            }
        }
        if self.setting == Setting::Mixture && d.tasks < 1 {
            bail!("dims.tasks must be at least 1");
        }
        if self.risk.lambda_factors.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            bail!("risk.lambda_factors must be positive");
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Command-line overrides, applied after the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML config file; unspecified fields keep the defaults of its `setting`
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Setting whose defaults apply when the config names none
    #[arg(long, value_enum)]
    pub setting: Option<Setting>,
    /// Master seed (default 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trial count (default 100 supervised, 50 dynamical, 2000 mixture)
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output directory (default ./out)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads, 0 = all cores (default 0)
    #[arg(long)]
    pub workers: Option<usize>,
    /// Ridge penalty λ (default 0.1 supervised, 1.0 dynamical, 0.01 mixture)
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Target accuracy ε (default 0.05)
    #[arg(long)]
    pub eps: Option<f64>,
    /// Label noise σ (default 0.1)
    #[arg(long)]
    pub noise: Option<f64>,
    /// Representation depth L (default 2)
    #[arg(long)]
    pub rep_depth: Option<usize>,
    /// Representation width D (default 4)
    #[arg(long)]
    pub rep_dim: Option<usize>,
    /// History length k (default 3)
    #[arg(long)]
    pub k: Option<usize>,
    /// Mixture size K (default 3)
    #[arg(long)]
    pub tasks: Option<usize>,
}

impl Overrides {
    pub fn resolve(&self, default_setting: Setting) -> Result<ExperimentConfig> {
        let fallback = self.setting.unwrap_or(default_setting);
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p, fallback)?,
            None => ExperimentConfig::defaults(fallback),
        };
        if let Some(s) = self.setting {
            if s != c.setting {
                bail!("--setting {s:?} conflicts with the config's setting {:?}", c.setting);
            }
        }
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = self.$src.clone() {
                    c.$($dst)+ = v;
                }
            };
        }
        set!(seed => seed);
        set!(trials => trials);
        set!(out => out);
        set!(workers => workers);
        set!(lambda => ridge.lambda);
        set!(eps => ridge.eps);
        set!(noise => noise.sigma);
        set!(rep_depth => dims.rep_depth);
        set!(rep_dim => dims.rep_dim);
        set!(k => dims.k);
        set!(tasks => dims.tasks);
        c.validate()?;
        Ok(c)
    }
}
