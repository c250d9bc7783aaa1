//! Run configuration: built-in presets, an optional TOML file, then flags.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dualfuse::model::{ModelConfig, Variant};
use dualfuse::text::TokenizerKind;
use dualfuse::train::{ScheduleMode, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size model on 30 s chunks.
    Full,
    /// Width 32, one layer, one head, 1 s chunks.
    Toy,
}

impl Preset {
    pub fn model(self) -> ModelConfig {
        match self {
            Preset::Full => ModelConfig::default(),
            Preset::Toy => ModelConfig::toy(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerChoice {
    Word,
    Hashed,
}

impl From<TokenizerChoice> for TokenizerKind {
    fn from(c: TokenizerChoice) -> Self {
        match c {
            TokenizerChoice::Word => TokenizerKind::Word,
            TokenizerChoice::Hashed => TokenizerKind::Hashed,
        }
    }
}

/// Contents of a `--config` file. `[model]` and `[train]` tables are
/// partial and overlay the preset and training defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<Preset>,
    pub variant: Option<String>,
    pub seed: Option<u64>,
    pub schedule: Option<String>,
    pub out: Option<PathBuf>,
    pub tokenizer: Option<TokenizerChoice>,
    pub vocab: Option<PathBuf>,
    pub model: Option<toml::Table>,
    pub train: Option<toml::Table>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::artifact(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn variant(&self) -> Result<Option<Variant>, CliError> {
        self.variant.as_deref().map(|v| v.parse().map_err(CliError::usage)).transpose()
    }

    pub fn schedule(&self) -> Result<Option<ScheduleMode>, CliError> {
        self.schedule.as_deref().map(|v| v.parse().map_err(CliError::usage)).transpose()
    }
}

/// Recursively replaces fields of `base` with those in `top`. Keys absent
/// from `base` are rejected so typos do not pass silently.
fn overlay(base: &mut Value, top: Value, path: &str) -> Result<(), String> {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v, &here)?,
                    None => return Err(format!("unknown key `{here}`")),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn apply_table<T: Serialize + DeserializeOwned>(base: T, table: Option<&toml::Table>, section: &str) -> Result<T, CliError> {
    let Some(table) = table else { return Ok(base) };
    let mut value = serde_json::to_value(&base).map_err(|e| CliError::usage(e.to_string()))?;
    let top = serde_json::to_value(table).map_err(|e| CliError::usage(e.to_string()))?;
    overlay(&mut value, top, section).map_err(|e| CliError::usage(format!("config: {e}")))?;
    serde_json::from_value(value).map_err(|e| CliError::usage(format!("config [{section}]: {e}")))
}

pub fn model_config(preset: Preset, file: &FileConfig) -> Result<ModelConfig, CliError> {
    apply_table(preset.model(), file.model.as_ref(), "model")
}

pub fn train_config(file: &FileConfig) -> Result<TrainConfig, CliError> {
    apply_table(TrainConfig::default(), file.train.as_ref(), "train")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_model_table_overlays_preset() {
        let file = FileConfig::parse("[model]\nlstm_units = 7\n[model.transformer]\nn_layers = 2\n").unwrap();
        let cfg = model_config(Preset::Toy, &file).unwrap();
        assert_eq!(cfg.lstm_units, 7);
        assert_eq!(cfg.transformer.n_layers, 2);
        assert_eq!(cfg.transformer.d_model, 32);
        assert_eq!(cfg.mel, ModelConfig::toy().mel);
    }

    #[test]
    fn unknown_keys_rejected() {
        let file = FileConfig::parse("[model]\nlstm_unit = 7\n").unwrap();
        let err = model_config(Preset::Full, &file).unwrap_err();
        assert!(err.message.contains("model.lstm_unit"), "{}", err.message);
        assert!(FileConfig::parse("bogus = 1\n").is_err());
    }

    #[test]
    fn train_table_reaches_nested_fields() {
        let file = FileConfig::parse("[train]\nepochs = 3\n[train.schedule]\nmode = \"noam\"\n").unwrap();
        let tc = train_config(&file).unwrap();
        assert_eq!(tc.epochs, 3);
        assert_eq!(tc.schedule.mode, ScheduleMode::Noam);
        assert_eq!(tc.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn wrong_value_type_is_a_usage_error() {
        let file = FileConfig::parse("[train]\nepochs = \"many\"\n").unwrap();
        assert_eq!(train_config(&file).unwrap_err().code, crate::EXIT_USAGE);
    }

    #[test]
    fn variant_string_validated() {
        let file = FileConfig::parse("variant = \"bogus\"\n").unwrap();
        assert!(file.variant().unwrap_err().message.contains("pipeline2"));
    }
}
