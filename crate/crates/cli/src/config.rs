//! Run configuration: a TOML file with a `[model]` table naming the
//! constants and a `[run]` table with execution settings.

use std::path::{Path, PathBuf};

use anyhow::Context;
use hemato_core::model::ModelParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct RunConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub run: RunSettings,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct RunSettings {
    /// Population scales for finite-K runs and convergence scans.
    pub k_list: Vec<u64>,
    /// Simulation horizon.
    pub horizon: f64,
    /// Output grid spacing for trajectories.
    pub grid_dt: f64,
    /// Replicates per ensemble.
    pub replicates: usize,
    pub seed: u64,
    /// Relative tolerance of the flow integrator.
    pub ode_tol: f64,
    /// Histogram partition of the invariant box.
    pub grid_dims: [usize; 3],
    /// Time discarded before stationary estimates.
    pub burn_in: f64,
    /// Step length of the tau-leaping integrator.
    pub leap_dt: f64,
    pub out_dir: PathBuf,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            k_list: vec![20, 80, 320],
            horizon: 10.0,
            grid_dt: 0.05,
            replicates: 2000,
            seed: 42,
            ode_tol: 1e-9,
            grid_dims: [32, 32, 32],
            burn_in: 1.0,
            leap_dt: 1e-3,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// A loaded configuration plus the content hash of the file it came
/// from and any validation warnings.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
    pub warnings: Vec<String>,
}

/// Reads, parses and validates a configuration file. Parameter-validity
/// violations are errors; a vanishing mutant coupling only warns, since
/// it invalidates the uniqueness-dependent suites but not simulation.
pub fn load_config(path: &Path) -> anyhow::Result<LoadedConfig> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let text = std::str::from_utf8(&bytes).context("config file is not UTF-8")?;
    let config: RunConfig = toml::from_str(text)
        .with_context(|| format!("cannot parse {}", path.display()))?;
    config
        .model
        .validate()
        .map_err(|e| anyhow::anyhow!("{e}"))
        .context("model parameters failed validation")?;

    let run = &config.run;
    if !(run.horizon > 0.0)
        || !(run.grid_dt > 0.0)
        || !(run.ode_tol > 0.0)
        || !(run.leap_dt > 0.0)
        || run.replicates == 0
        || run.k_list.is_empty()
        || run.k_list.iter().any(|&k| k == 0)
        || run.grid_dims.iter().any(|&d| d == 0)
        || !(run.burn_in >= 0.0)
        || run.burn_in >= run.horizon
    {
        anyhow::bail!("run settings out of range: {run:?}");
    }

    let mut warnings = Vec::new();
    if !config.model.regulation_dependent() {
        warnings.push(
            "c3 + q3 = 0: the healthy compartments do not feel the mutants; uniqueness of \
             the invariant measure is not guaranteed and the related suites only report"
                .to_string(),
        );
    }

    let hash = hex_digest(&bytes);
    Ok(LoadedConfig { config, hash, warnings })
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
