//! Run configuration. Everything that affects results lives here, not in flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use wpot::ldp::TargetKind;
use wpot::CompactSetSpec;

/// Version of the configuration schema in `config.schema.json`.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub version: u32,
    pub set: CompactSetSpec,
    /// Weight grammar, e.g. `"x^2"` or `"0"`.
    #[serde(default = "zero_weight")]
    pub weight: String,
    /// Extra weights scanned by `bm`.
    #[serde(default)]
    pub extra_weights: Vec<String>,
    #[serde(default)]
    pub nu: NuConfig,
    pub k: Option<usize>,
    pub k_max: Option<usize>,
    pub k_range: Option<Vec<usize>>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub eps: Option<f64>,
    pub eta: Option<f64>,
    pub delta_bar: Option<f64>,
    pub restarts: Option<usize>,
    pub trials: Option<usize>,
    pub moment_degree: Option<usize>,
    pub tilts: Option<usize>,
    #[serde(default)]
    pub sampler: SamplerKind,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    /// Targets of `rate` and `ldp-verify`.
    pub targets: Option<Vec<TargetKind>>,
    /// Largest KKT residual accepted by `equilibrium`.
    pub kkt_tol: Option<f64>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn zero_weight() -> String {
    "0".into()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Dpp,
    Mcmc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuConfig {
    pub construction: NuConstruction,
    /// Atom count for `arcsine`.
    pub points: Option<usize>,
    /// JSON file `{"atoms": [[re, im, ...], ...], "masses": [...]}` for `file`,
    /// relative to the configuration file.
    pub path: Option<PathBuf>,
}

impl Default for NuConfig {
    fn default() -> Self {
        NuConfig { construction: NuConstruction::Uniform, points: None, path: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuConstruction {
    Bm,
    Arcsine,
    Uniform,
    File,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        if cfg.version != SCHEMA_VERSION {
            bail!("unsupported config version {} (expected {SCHEMA_VERSION})", cfg.version);
        }
        Ok((cfg, bytes))
    }

    pub fn seed(&self) -> anyhow::Result<u64> {
        self.seed.context("`seed` is required for stochastic commands")
    }

    pub fn k(&self) -> anyhow::Result<usize> {
        self.k.context("`k` is required")
    }

    /// `k_range` if given, else `1..=k_max`.
    pub fn ks(&self) -> anyhow::Result<Vec<usize>> {
        match (&self.k_range, self.k_max) {
            (Some(r), _) if !r.is_empty() => Ok(r.clone()),
            (Some(_), _) => bail!("`k_range` is empty"),
            (None, Some(m)) => Ok((1..=m).collect()),
            (None, None) => bail!("`k_range` or `k_max` is required"),
        }
    }
}
