//! Configuration files of the single-run subcommands.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nsf_core::harness::GridSection;
use nsf_core::profile::ProfileSpec;
use nsf_core::solver3d::PerturbationSpec;
use nsf_core::ThermoParams;
use serde::de::DeserializeOwned;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotFormat {
    #[default]
    Csv,
    Binary,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Run1D {
    pub n: usize,
    pub t_final: f64,
    pub outputs: usize,
}

impl Default for Run1D {
    fn default() -> Self {
        Run1D {
            n: 256,
            t_final: 1.0,
            outputs: 10,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Solve1DConfig {
    pub thermo: ThermoParams,
    pub profile: ProfileSpec,
    pub run: Run1D,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Run3D {
    pub epsilon: f64,
    pub t_final: f64,
    pub outputs: usize,
    pub format: SnapshotFormat,
}

impl Default for Run3D {
    fn default() -> Self {
        Run3D {
            epsilon: 0.25,
            t_final: 0.25,
            outputs: 5,
            format: SnapshotFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Solve3DConfig {
    pub thermo: ThermoParams,
    pub profile: ProfileSpec,
    pub perturbation: PerturbationSpec,
    pub grid: GridSection,
    pub run: Run3D,
}

fn parse<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(1);
        anyhow::anyhow!("{}:{line}: {}", path.display(), e.message().trim())
    })
}

/// Reads `path`, or returns the defaults when it is `None`.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse(&text, p)
        }
    }
}

pub fn check_run(t_final: f64, outputs: usize) -> Result<()> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        bail!("run.t_final must be positive, got {t_final}");
    }
    if outputs == 0 {
        bail!("run.outputs must be at least 1");
    }
    Ok(())
}
