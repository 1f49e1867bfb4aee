//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjb::GridSpec;
use crate::model::{ModelParams, State};
use crate::rl::{ActionMode, TrainConfig};

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "HAWKES_DIVIDEND_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_paths: usize,
    /// Initial states as `[x, y]` pairs.
    pub states: Vec<[f64; 2]>,
    /// How a learned actor acts during evaluation.
    #[serde(default = "deterministic")]
    pub mode: ActionMode,
}

fn deterministic() -> ActionMode {
    ActionMode::Deterministic
}

impl EvalConfig {
    pub fn baseline() -> Self {
        let mut states = Vec::new();
        for x in [0.0, 0.5, 1.0] {
            for y in [2.0, 3.0, 4.0] {
                states.push([x, y]);
            }
        }
        states.push([0.0, 2.8]);
        states.push([1.0, 2.8]);
        EvalConfig {
            n_paths: 4096,
            states,
            mode: ActionMode::Deterministic,
        }
    }

    pub fn states(&self) -> Vec<State> {
        self.states.iter().map(|s| State::new(s[0], s[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub grid: GridSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn baseline() -> Self {
        RunConfig {
            model: ModelParams::baseline(),
            grid: GridSpec::baseline(),
            train: TrainConfig::baseline(),
            eval: EvalConfig::baseline(),
            output_dir: default_output(),
        }
    }

    /// Parse and validate every section.
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::from_json(&s)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.grid.validate()?;
        self.train.validate()?;
        if self.eval.n_paths < 2 {
            return Err(Error::invalid("eval.n_paths", "need at least 2"));
        }
        if self.eval.states.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("eval.states", "must be finite"));
        }
        Ok(())
    }

    /// `output_dir`, unless the environment overrides it.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}
