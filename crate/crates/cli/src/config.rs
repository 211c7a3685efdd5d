//! Optional TOML run configuration.
//!
//! ```toml
//! [generator]
//! n_passages = 30
//! drift = 0.25
//!
//! [train]
//! epochs = 4
//! lr = 0.001
//! ```
//!
//! Missing keys keep their defaults; command-line flags override the file.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

use skyline_core::{GeneratorConfig, TrainConfig};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
