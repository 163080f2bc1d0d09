//! TOML run specifications.
//!
//! A run file holds a `[system]` description, optional `[train]`
//! hyperparameters, an `[output]` directory and per-command option tables.
//! Relative mesh and output paths are resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lbfgs::LbfgsOptions;
use crate::subspace::config_hash;
use crate::subspace_fit::TrainConfig;
use crate::systems::build::{MeshSource, PartSpec};
use crate::systems::SystemSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub system: SystemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub simulate: SimulateOptions,
    #[serde(default)]
    pub modes: ModesOptions,
    #[serde(default)]
    pub diagnose: DiagnoseOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: default_out() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateOptions {
    pub h: f64,
    pub steps: usize,
    pub lbfgs: LbfgsOptions,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            h: 1.0 / 60.0,
            steps: 120,
            lbfgs: LbfgsOptions {
                grad_tol: 1e-6,
                ..LbfgsOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModesOptions {
    /// Defaults to `train.latent_dim`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    /// Defaults to `train.sigma`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub lbfgs: LbfgsOptions,
}

impl Default for ModesOptions {
    fn default() -> Self {
        ModesOptions {
            latent_dim: None,
            sigma: None,
            lbfgs: LbfgsOptions {
                max_iters: 5000,
                ..LbfgsOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseOptions {
    pub pairs: usize,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions { pairs: 1000 }
    }
}

impl RunSpec {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut spec: RunSpec = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        spec.system.resolve_paths(base);
        if spec.output.dir.is_relative() {
            spec.output.dir = base.join(&spec.output.dir);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run specs serialize to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        for (i, part) in self.system.parts.iter().enumerate() {
            if let PartSpec::Fem2d { mesh, .. } | PartSpec::Fem3d { mesh, .. } | PartSpec::Cloth { mesh, .. } = part {
                if let MeshSource::File(p) = mesh {
                    if !p.is_file() {
                        return Err(Error::config(format!(
                            "system.parts[{i}].mesh.file: mesh file not found: {}",
                            p.display()
                        )));
                    }
                }
            }
        }
        if let Some(t) = &self.train {
            t.validate()?;
            if let Some(m) = t.condition_dim {
                if m != self.system.conditions.len() {
                    return Err(Error::config(format!(
                        "train.condition_dim is {m} but system.conditions lists {}",
                        self.system.conditions.len()
                    )));
                }
            }
        }
        for (i, c) in self.system.conditions.iter().enumerate() {
            if !(c.min <= c.max) || !c.min.is_finite() || !c.max.is_finite() {
                return Err(Error::config(format!("system.conditions[{i}]: need finite min <= max")));
            }
        }
        if !(self.simulate.h > 0.0) {
            return Err(Error::config("simulate.h must be positive"));
        }
        self.simulate.lbfgs.validate()?;
        self.modes.lbfgs.validate()?;
        if self.diagnose.pairs == 0 {
            return Err(Error::config("diagnose.pairs must be positive"));
        }
        Ok(())
    }

    pub fn train_config(&self) -> Result<&TrainConfig> {
        self.train
            .as_ref()
            .ok_or_else(|| Error::config("run spec has no [train] table"))
    }

    /// Hash of the effective configuration, ignoring the output directory.
    pub fn config_hash(&self) -> u64 {
        let mut s = self.clone();
        s.output = OutputSpec::default();
        config_hash(&s.to_toml())
    }
}

/// Reads, resolves and validates a run file.
pub fn parse_run_spec(path: &Path) -> Result<RunSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read run spec '{}': {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    RunSpec::from_toml(&text, &base).map_err(|e| match e {
        Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
        other => other,
    })
}
