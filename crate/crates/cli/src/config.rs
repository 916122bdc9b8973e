//! Optional TOML config file. Every value here can also come from a flag; the flag wins.

use std::path::Path;

use serde::Deserialize;

use reachguide::product_map::MapConfig;
use reachguide::scoring::ScoringConfig;
use reachguide::simulator::{SimConfig, StartDistribution};

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub build: BuildSection,
    #[serde(default)]
    pub simulate: RunSection,
    #[serde(default)]
    pub compare: RunSection,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub start: StartDistribution,
    #[serde(default)]
    pub map: MapConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub serve: ServeSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildSection {
    pub resolution: Option<f64>,
    pub extent: Option<f64>,
    pub gamma: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_sweeps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub mode: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSection {
    pub host: Option<String>,
    pub port: Option<u16>,
    pub idle_timeout: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Data(format!("config {}: {}", path.display(), e.message())))
    }
}
