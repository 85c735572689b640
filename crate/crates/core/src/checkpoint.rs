//! Self-describing checkpoint container.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic "DLAATCKP"
//!        8   u32       format version
//!       12   u64       header length H
//!       20   H bytes   UTF-8 JSON header
//!     20+H   ...       f64 little-endian array data
//! ```
//!
//! The header holds the configuration snapshots, the vocabulary and its hash, the
//! optimizer counters, both generator states and an array directory of
//! `{name, dtype, shape, offset}` entries, offsets counted in bytes from the start
//! of the data section. Array names are prefixed `params/`, `best/`, `adam_m/` and
//! `adam_v/`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DualLaat, ModelConfig, ModelParams};
use crate::text::{EmbeddingTable, Vocabulary};
use crate::trainer::{AdamState, BestInfo, EpochRecord, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"DLAATCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model_config: ModelConfig,
    train_config: TrainConfig,
    run_config: serde_json::Value,
    vocab_hash: String,
    vocab_tokens: Vec<String>,
    parameter_count: usize,
    epoch: usize,
    step: usize,
    adam_t: u64,
    batch_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    best: Option<BestInfo>,
    history: Vec<EpochRecord>,
    arrays: Vec<ArrayEntry>,
}

/// A training state plus the context needed to use or resume it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub train_config: TrainConfig,
    /// Fully resolved run configuration, embedded for provenance.
    pub run_config: serde_json::Value,
    pub vocab: Vocabulary,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn new(train_config: TrainConfig, run_config: serde_json::Value, vocab: Vocabulary, state: TrainState) -> Self {
        Self {
            train_config,
            run_config,
            vocab,
            state,
        }
    }

    /// The model to use for inference: best-on-validation parameters when present.
    pub fn inference_model(&self) -> DualLaat {
        let (params, _) = self.state.selected();
        DualLaat {
            config: self.state.model.config.clone(),
            params: params.clone(),
        }
    }

    /// Decision threshold chosen during training, if validation ran.
    pub fn threshold(&self) -> Option<f64> {
        self.state.selected().1.map(|b| b.threshold)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let s = &self.state;
        let mut groups: Vec<(&str, &ModelParams)> = vec![("params", &s.model.params)];
        if let Some((_, best)) = &s.best {
            groups.push(("best", best));
        }
        groups.push(("adam_m", &s.adam.m));
        groups.push(("adam_v", &s.adam.v));

        let mut arrays = Vec::new();
        let mut offset = 0u64;
        for (prefix, params) in &groups {
            for (name, a) in params.named_params() {
                arrays.push(ArrayEntry {
                    name: format!("{prefix}/{name}"),
                    dtype: "f64".into(),
                    shape: a.shape().to_vec(),
                    offset,
                });
                offset += 8 * a.len() as u64;
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            model_config: s.model.config.clone(),
            train_config: self.train_config.clone(),
            run_config: self.run_config.clone(),
            vocab_hash: self.vocab.hash(),
            vocab_tokens: self.vocab.tokens()[2..].to_vec(),
            parameter_count: s.model.params.parameter_count(),
            epoch: s.epoch,
            step: s.step,
            adam_t: s.adam.t,
            batch_rng: s.batch_rng.clone(),
            dropout_rng: s.dropout_rng.clone(),
            best: s.best.as_ref().map(|(b, _)| b.clone()),
            history: s.history.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        // Written beside the target and renamed, so a crash never leaves a torn file.
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for (_, params) in &groups {
            for (_, a) in params.named_params() {
                for x in a.iter() {
                    w.write_all(&x.to_le_bytes()).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)?;
        drop(w);
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b).map_err(io)?;
        let version = u32::from_le_bytes(u32b);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b).map_err(io)?;
        let mut json = vec![0u8; u64::from_le_bytes(u64b) as usize];
        r.read_exact(&mut json).map_err(io)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut data = Vec::new();
        r.read_to_end(&mut data).map_err(io)?;

        let vocab = Vocabulary::from_tokens(header.vocab_tokens.iter().cloned())?;
        if vocab.hash() != header.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: header.vocab_hash,
                found: vocab.hash(),
            });
        }
        let template = template_params(&header.model_config, vocab.len())?;
        let fill = |prefix: &str| -> Result<ModelParams> {
            let mut params = template.clone();
            let names: Vec<String> = template.named_params().into_iter().map(|(n, _)| n).collect();
            for (name, mut view) in names.iter().zip(params.params_mut()) {
                let full = format!("{prefix}/{name}");
                let entry = header
                    .arrays
                    .iter()
                    .find(|a| a.name == full)
                    .ok_or_else(|| Error::Checkpoint(format!("array {full} missing")))?;
                if entry.dtype != "f64" || entry.shape != view.shape() {
                    return Err(Error::Checkpoint(format!(
                        "array {full}: stored {} {:?}, expected f64 {:?}",
                        entry.dtype,
                        entry.shape,
                        view.shape()
                    )));
                }
                let start = entry.offset as usize;
                let bytes = data
                    .get(start..start + 8 * view.len())
                    .ok_or_else(|| Error::Checkpoint(format!("array {full} truncated")))?;
                for (x, chunk) in view.iter_mut().zip(bytes.chunks_exact(8)) {
                    *x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
                }
            }
            Ok(params)
        };
        let params = fill("params")?;
        let best = match header.best {
            Some(info) => Some((info, fill("best")?)),
            None => None,
        };
        let adam = AdamState {
            m: fill("adam_m")?,
            v: fill("adam_v")?,
            t: header.adam_t,
        };
        let state = TrainState {
            model: DualLaat {
                config: header.model_config,
                params,
            },
            adam,
            batch_rng: header.batch_rng,
            dropout_rng: header.dropout_rng,
            epoch: header.epoch,
            step: header.step,
            best,
            history: header.history,
        };
        Ok(Self {
            train_config: header.train_config,
            run_config: header.run_config,
            vocab,
            state,
        })
    }
}

/// Zero-valued parameters with the shapes `config` implies.
fn template_params(config: &ModelConfig, vocab_size: usize) -> Result<ModelParams> {
    use rand::SeedableRng;
    let table = EmbeddingTable {
        matrix: ndarray::Array2::zeros((vocab_size, config.d_emb)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(ModelParams::new(config, table, &mut rng)?.zeros_like())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderConfig;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vocab = Vocabulary::from_tokens(["a", "b", "c"]).unwrap();
        let config = ModelConfig {
            encoder: EncoderConfig {
                rnn_hidden: 3,
                ..EncoderConfig::rnn()
            },
            d_emb: 4,
            heads: 2,
            ..Default::default()
        };
        let model = DualLaat::new(config, EmbeddingTable::random(vocab.len(), 4, &mut rng), &mut rng).unwrap();
        let mut state = TrainState::new(model, 9);
        state.epoch = 3;
        state.step = 17;
        state.adam.t = 17;
        state.adam.m.embedding.fill(0.125);
        state.best = Some((
            BestInfo {
                epoch: 2,
                val_micro_f1: 0.5,
                threshold: 0.3,
            },
            state.model.params.clone(),
        ));
        let ckpt = Checkpoint::new(TrainConfig::default(), serde_json::json!({"seed": 9}), vocab, state);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ckpt.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(Checkpoint::read(&path), Err(Error::Checkpoint(_))));
    }
}
