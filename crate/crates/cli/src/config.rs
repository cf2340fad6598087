//! Service configuration: a TOML file plus environment overrides.
//!
//! ```toml
//! catalog = "data/catalog.csv"   # omitted: no catalog, /optimize answers 409
//! default_method = "rnsga2"
//! port = 8080
//! seed = 0
//! feedback_log = "feedback.jsonl"
//! jobs_dir = "jobs"              # optional JSON copies of completed jobs
//!
//! [methods.rnsga2]               # any optimizer setting, see MethodConfigs
//! generations = 40
//! ```
//!
//! `ECOBASKET_PORT` and `ECOBASKET_CATALOG` override `port` and `catalog`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ecobasket::methods::{Method, MethodConfigs};
use serde::{Deserialize, Serialize};

pub const PORT_ENV: &str = "ECOBASKET_PORT";
pub const CATALOG_ENV: &str = "ECOBASKET_CATALOG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub catalog: Option<PathBuf>,
    pub default_method: Method,
    pub port: u16,
    pub seed: u64,
    pub feedback_log: PathBuf,
    pub jobs_dir: Option<PathBuf>,
    pub methods: MethodConfigs,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            catalog: None,
            default_method: Method::Rnsga2,
            port: 8080,
            seed: 0,
            feedback_log: PathBuf::from("feedback.jsonl"),
            jobs_dir: None,
            methods: MethodConfigs::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` if given, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Self::default(),
        };
        config.apply_overrides(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn apply_overrides(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(port) = var(PORT_ENV) {
            self.port = port.trim().parse().with_context(|| format!("{PORT_ENV}={port:?} is not a port"))?;
        }
        if let Some(catalog) = var(CATALOG_ENV) {
            self.catalog = Some(PathBuf::from(catalog));
        }
        Ok(())
    }
}
