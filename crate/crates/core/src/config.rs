//! Run configuration: every tunable knob in one TOML-loadable struct.
//!
//! Seed precedence, lowest first: built-in default (42), the `VPRD_SEED`
//! environment variable, the config file (top-level `seed` or a section's
//! own `seed`), then command-line flags applied by the caller.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::preprocess::PreprocessConfig;
use crate::synthetic::SynthConfig;
use crate::training::TrainConfig;

pub const SEED_ENV: &str = "VPRD_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Seed shared by data generation, splitting, initialization and dropout.
    pub seed: u64,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn parse_seed(value: &str) -> Result<u64> {
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{SEED_ENV}=`{value}` is not an unsigned integer: {e}")))
}

impl Config {
    /// Sets the shared seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
    }

    /// Parses TOML text on top of `env_seed`. Unknown keys are errors.
    pub fn from_toml(text: &str, env_seed: Option<&str>) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let section_seed = |name: &str| {
            table
                .get(name)
                .and_then(|s| s.as_table())
                .is_some_and(|s| s.contains_key("seed"))
        };
        let has_top = table.contains_key("seed");
        let (has_synth, has_train) = (section_seed("synth"), section_seed("train"));
        let mut value = toml::Value::Table(table);
        if !has_top {
            value
                .as_table_mut()
                .expect("table")
                .insert("seed".into(), toml::Value::Integer(DEFAULT_SEED as i64));
        }
        let mut cfg: Config = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let base = match (has_top, env_seed) {
            (true, _) => cfg.seed,
            (false, Some(s)) => parse_seed(s)?,
            (false, None) => DEFAULT_SEED,
        };
        cfg.seed = base;
        if !has_synth {
            cfg.synth.seed = base;
        }
        if !has_train {
            cfg.train.seed = base;
        }
        Ok(cfg)
    }

    /// Defaults, then `VPRD_SEED`, then the optional file.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let env = std::env::var(SEED_ENV).ok();
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text, env.as_deref()).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
            None => Self::from_toml("", env.as_deref()),
        }
    }

    /// Validates every section; returns training warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.synth.validate()?;
        if self.preprocess.otsu_bins < 2 {
            return Err(Error::Config(format!("otsu_bins must be at least 2, got {}", self.preprocess.otsu_bins)));
        }
        if self.eval.comparisons == 0 || !(self.eval.significance > 0.0 && self.eval.significance < 1.0) {
            return Err(Error::Config("eval.comparisons must be positive and significance in (0, 1)".into()));
        }
        self.train.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
