//! Run configuration: one TOML document plus `--set key.path=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::Variant;
use crate::error::{Error, Result};
use crate::finetune::{base_config, FinetuneMode};
use crate::forecaster::{ModelConfig, TrainConfig};

use super::dataset::DatasetSchema;
use super::synthetic::SyntheticSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// CSV path (for `source = "csv"`).
    pub path: Option<String>,
    /// Persisted vocabulary to encode categories against.
    pub vocabulary: Option<String>,
    pub schema: DatasetSchema,
    pub synthetic: SyntheticSpec,
    pub train_end: usize,
    pub val_end: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            path: None,
            vocabulary: None,
            schema: DatasetSchema::default(),
            synthetic: SyntheticSpec::default(),
            train_end: 140,
            val_end: 170,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub modes: Vec<FinetuneMode>,
    /// Variants tried for the `+QKCV` modes.
    pub variants: Vec<Variant>,
    pub grn_hidden: usize,
    /// Backbone of the pretrained stand-in.
    pub base: ModelConfig,
    pub pretrain_steps: usize,
    /// Category-free pretraining data.
    pub pretrain_data: SyntheticSpec,
    pub pretrain_train_end: usize,
    pub pretrain_val_end: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            modes: FinetuneMode::ALL.to_vec(),
            variants: Variant::QKCV.to_vec(),
            grn_hidden: 8,
            base: base_config(),
            pretrain_steps: 2000,
            pretrain_data: SyntheticSpec {
                n_categories: vec![16],
                n_entities: 48,
                seed: 1000,
                ..SyntheticSpec::default()
            },
            pretrain_train_end: 170,
            pretrain_val_end: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    /// Drives parameter initialization, shuffling and dropout.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    /// `train.seed` is replaced by the top-level `seed`.
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".into(),
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Apply `a.b.c=value`; `value` is read as a TOML literal, falling back to a string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}
