use std::path::{Path, PathBuf};

use rigdepth::evaluation::Protocol;
use rigdepth::optimizer::{run_weights, OptimConfig, Preset};
use rigdepth::LossWeights;
use serde::{Deserialize, Serialize};

use crate::error::{io_error, CliError, CliResult};

fn default_weights() -> LossWeights {
    run_weights()
}

fn default_protocol() -> Protocol {
    Protocol::Shared
}

/// Everything an optimization run depends on. The resolved config is
/// archived beside the outputs and reproduces them when passed back in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sample_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Applied on top of `weights` and `optim.toggles` when set.
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default = "default_weights")]
    pub weights: LossWeights,
    #[serde(default)]
    pub optim: OptimConfig,
    /// Protocol of the metrics written after the run.
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
}

impl RunConfig {
    pub fn new(sample_dir: PathBuf, out_dir: PathBuf) -> Self {
        Self {
            sample_dir,
            out_dir,
            preset: None,
            weights: default_weights(),
            optim: OptimConfig::default(),
            protocol: default_protocol(),
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            return Err(CliError::Data(format!("missing file {}", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Folds the preset into weights and toggles.
    pub fn resolve(mut self) -> CliResult<Self> {
        if let Some(p) = self.preset {
            self.weights = p.weights(&self.weights);
            self.optim.toggles = p.toggles();
        }
        self.weights.validate()?;
        self.optim.validate()?;
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
