//! Versioned TOML configuration holding every pipeline constant.
//!
//! A config file is a TOML document with `version = 1` and any subset of
//! the sections below; missing keys take their defaults. Overrides are
//! `section.key=value` strings with TOML values, e.g.
//! `train.lr=0.001` or `generate.style="LightAppoggiatura"`.
//!
//! The top-level `graph` and `tokenizer` sections are authoritative: they
//! are copied into `generate.graph` and `generate.nianzhi.detect` when the
//! config is resolved.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::EnsembleConfig;
use crate::gnn::{ModelConfig, TrainConfig};
use crate::graph::GraphConfig;
use crate::metrics::OrsConfig;
use crate::nianzhi::DetectorTrainConfig;
use crate::tokenizer::{Mode, NianzhiDetectConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config version {found:?} is not supported (expected {CONFIG_VERSION})")]
    Version { found: Option<i64> },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad override `{0}`: expected key.path=value")]
    BadOverride(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    /// Mode name; see [`named_mode`].
    pub mode: String,
    pub tokenizer: NianzhiDetectConfig,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub detector: DetectorTrainConfig,
    /// Synthetic sequences used to fit a detector when none is supplied.
    pub detector_sequences: usize,
    pub generate: EnsembleConfig,
    pub eval: OrsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            mode: "wukong".into(),
            tokenizer: NianzhiDetectConfig::default(),
            graph: GraphConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            detector: DetectorTrainConfig::default(),
            detector_sequences: 32,
            generate: EnsembleConfig::default(),
            eval: OrsConfig::default(),
        }
    }
}

/// Modes known by name.
pub fn named_mode(name: &str) -> Option<Mode> {
    match name.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
        "wukong" => Some(Mode::wu_kong()),
        _ => None,
    }
}

/// Every `a.b.c` path in `table` that has no counterpart in `reference`.
fn unknown_keys(table: &toml::Table, reference: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, reference.get(k)) {
            (_, None) => out.push(path),
            (toml::Value::Table(t), Some(toml::Value::Table(r))) => unknown_keys(t, r, &path, out),
            _ => {}
        }
    }
}

fn default_table() -> toml::Table {
    toml::Table::try_from(PipelineConfig::default()).expect("default config serializes")
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut keys = path.split('.').peekable();
    let mut cur = table;
    while let Some(k) = keys.next() {
        if k.is_empty() {
            return Err(ConfigError::BadOverride(path.into()));
        }
        if keys.peek().is_none() {
            cur.insert(k.to_string(), value);
            return Ok(());
        }
        cur = match cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new())) {
            toml::Value::Table(t) => t,
            _ => return Err(ConfigError::UnknownKey(path.into())),
        };
    }
    Err(ConfigError::BadOverride(path.into()))
}

/// Parses one `key.path=value` override. Values that are not valid TOML
/// are taken as bare strings.
pub fn parse_override(text: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, raw) = text.split_once('=').ok_or_else(|| ConfigError::BadOverride(text.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::BadOverride(text.into()));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

impl PipelineConfig {
    /// Loads a config document (or the defaults when `text` is `None`) and
    /// applies `overrides` in order.
    pub fn resolve(text: Option<&str>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match text {
            Some(t) => {
                let table: toml::Table = toml::from_str(t).map_err(|e| ConfigError::Parse(e.to_string()))?;
                match table.get("version") {
                    Some(toml::Value::Integer(v)) if *v == CONFIG_VERSION as i64 => {}
                    Some(toml::Value::Integer(v)) => return Err(ConfigError::Version { found: Some(*v) }),
                    _ => return Err(ConfigError::Version { found: None }),
                }
                table
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, value) = parse_override(o)?;
            if key == "version" {
                return Err(ConfigError::Invalid("version cannot be overridden".into()));
            }
            set_path(&mut table, &key, value)?;
        }
        let mut unknown = Vec::new();
        unknown_keys(&table, &default_table(), "", &mut unknown);
        if let Some(k) = unknown.into_iter().next() {
            return Err(ConfigError::UnknownKey(k));
        }
        let mut cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.generate.graph = cfg.graph;
        cfg.generate.nianzhi.detect = cfg.tokenizer;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if named_mode(&self.mode).is_none() {
            return Err(ConfigError::Invalid(format!("unknown mode `{}`", self.mode)));
        }
        self.model.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        let [lo, hi] = self.generate.ornament.density_range;
        if !(0.0..=hi).contains(&lo) || self.generate.density_sd < 0.0 {
            return Err(ConfigError::Invalid("density range and spread must be ordered and non-negative".into()));
        }
        if self.detector.epochs > 0 && self.detector_sequences == 0 {
            return Err(ConfigError::Invalid("detector_sequences must be positive".into()));
        }
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        named_mode(&self.mode).expect("validated mode name")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
