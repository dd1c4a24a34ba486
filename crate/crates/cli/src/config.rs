use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cl4ctr::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "CL4CTR_SEED";

/// A training run: where the prepared data lives, where outputs go, and the
/// full training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            out_dir: PathBuf::from("runs/cl4ctr"),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every problem with the config and its data directory.
    pub fn problems(&self) -> Vec<String> {
        let mut p = self.train.problems();
        match &self.data_dir {
            None => p.push("data_dir is not set (use --data or data_dir in the config)".into()),
            Some(dir) => {
                for name in crate::commands::PREPARED_FILES {
                    let f = dir.join(name);
                    if !f.is_file() {
                        p.push(format!("missing dataset file {}", f.display()));
                    }
                }
            }
        }
        p
    }
}

/// Parses a snake_case enum name through its serde representation.
pub fn parse_name<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an integer"))?)),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = RunConfig::default().to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("out_dir = \"x\"\nbogus = 1\n").is_err());
        assert!(toml::from_str::<RunConfig>("[train]\nalpah = 1.0\n").is_err());
        assert!(toml::from_str::<RunConfig>("[train.mask]\nmethod = \"feature\"\np = 0.2\n").is_ok());
    }

    #[test]
    fn enum_names_parse() {
        let k: cl4ctr::models::ModelKind = parse_name("fm_dnn").unwrap();
        assert_eq!(k, cl4ctr::models::ModelKind::FmDnn);
        assert!(parse_name::<cl4ctr::models::ModelKind>("deepfm").is_err());
    }
}
