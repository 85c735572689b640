//! Resolved run configuration: presets, TOML config files and command-line overrides.
//!
//! Layers resolve as preset defaults, then the config file, then flags. The preset
//! and encoder kind are resolved first because they pick the defaults of every
//! other field (dropout, weight decay, dimensions).

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_RARE_THRESHOLD;
use crate::encoders::{EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synthgen::SynthConfig;
use crate::text::PretrainConfig;
use crate::trainer::TrainConfig;

/// Vocabulary size assumed for the public MIMIC benchmark when reporting parameter counts.
pub const BENCHMARK_VOCAB_SIZE: usize = 137_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small dimensions and corpus; every experiment finishes on one CPU core in minutes.
    #[default]
    Desk,
    /// Full-size hyperparameters.
    Paper,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(format!("unknown preset {other:?} (expected desk or paper)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub min_count: usize,
    pub rare_threshold: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk, None)
    }
}

impl RunConfig {
    /// Defaults of a preset; `encoder` overrides the preset's encoder family.
    pub fn preset(preset: Preset, encoder: Option<EncoderKind>) -> Self {
        match preset {
            Preset::Paper => {
                let kind = encoder.unwrap_or(EncoderKind::Rnn);
                let enc = match kind {
                    EncoderKind::Cnn => EncoderConfig::cnn(),
                    EncoderKind::Rnn => EncoderConfig::rnn(),
                };
                Self {
                    preset,
                    seed: 0,
                    min_count: 3,
                    rare_threshold: DEFAULT_RARE_THRESHOLD,
                    model: ModelConfig {
                        encoder: enc,
                        d_emb: 100,
                        heads: 8,
                        ..ModelConfig::default()
                    },
                    train: TrainConfig::for_encoder(kind),
                    pretrain: PretrainConfig::default(),
                    synth: SynthConfig::default(),
                }
            }
            Preset::Desk => {
                let kind = encoder.unwrap_or(EncoderKind::Cnn);
                let enc = match kind {
                    EncoderKind::Cnn => EncoderConfig {
                        cnn_filters: 64,
                        cnn_width: 3,
                        ..EncoderConfig::cnn()
                    },
                    EncoderKind::Rnn => EncoderConfig {
                        rnn_hidden: 32,
                        ..EncoderConfig::rnn()
                    },
                };
                // Small corpora need several heads and no dropout before the
                // model can fit its own training notes.
                let enc = EncoderConfig { dropout: 0.0, ..enc };
                Self {
                    preset,
                    seed: 0,
                    min_count: 1,
                    rare_threshold: DEFAULT_RARE_THRESHOLD,
                    model: ModelConfig {
                        encoder: enc,
                        d_emb: 32,
                        heads: 8,
                        ..ModelConfig::default()
                    },
                    train: TrainConfig {
                        lr: 7.5e-3,
                        batch_size: 8,
                        warmup_steps: 20,
                        label_space_size: 256,
                        epochs: 15,
                        ..TrainConfig::for_encoder(kind)
                    },
                    pretrain: PretrainConfig {
                        dim: 32,
                        epochs: 3,
                        ..PretrainConfig::default()
                    },
                    synth: SynthConfig {
                        n_docs_v1: 2400,
                        ..SynthConfig::default()
                    },
                }
            }
        }
    }

    /// Propagates the top-level seed into every sub-config.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.pretrain.seed = seed;
        self.synth.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.pretrain.dim != self.model.d_emb {
            return Err(Error::Config(format!(
                "pretrain.dim {} differs from model.d_emb {}",
                self.pretrain.dim, self.model.d_emb
            )));
        }
        Ok(())
    }

    /// Preset defaults overlaid with a TOML document. Tables merge key by key.
    pub fn from_toml_str(text: &str, preset: Option<Preset>, encoder: Option<EncoderKind>) -> Result<Self> {
        let file: toml::Table = text.parse().map_err(|e| Error::Config(format!("config file: {e}")))?;
        let preset = match (preset, file.get("preset")) {
            (Some(p), _) => p,
            (None, Some(v)) => v
                .as_str()
                .ok_or_else(|| Error::Config("preset must be a string".into()))?
                .parse()
                .map_err(Error::Config)?,
            (None, None) => Preset::Desk,
        };
        let encoder = match encoder {
            Some(k) => Some(k),
            None => file
                .get("model")
                .and_then(|m| m.get("encoder"))
                .and_then(|e| e.get("kind"))
                .and_then(|k| k.as_str())
                .map(|k| k.parse().map_err(Error::Config))
                .transpose()?,
        };
        let base = Self::preset(preset, encoder);
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, file);
        merged.insert("preset".into(), toml::Value::String(format!("{preset:?}").to_lowercase()));
        let mut out: Self = merged.try_into().map_err(|e| Error::Config(format!("config file: {e}")))?;
        if let Some(kind) = encoder {
            out.model.encoder.kind = kind;
        }
        Ok(out)
    }

    pub fn from_toml_file(path: &Path, preset: Option<Preset>, encoder: Option<EncoderKind>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, preset, encoder)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
