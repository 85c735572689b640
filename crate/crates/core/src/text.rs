//! Tokenization, the shared note/description vocabulary, and word embeddings.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CodeRegistry, Document, Split};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercased alphanumeric word tokens; everything else separates.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from non-special tokens in id order (ids start at 2).
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut ids = HashMap::new();
        ids.insert(PAD_TOKEN.to_string(), PAD);
        ids.insert(UNK_TOKEN.to_string(), UNK);
        for t in tokens {
            let t = t.into();
            if ids.contains_key(&t) {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
            ids.insert(t.clone(), all.len() as u32);
            all.push(t);
        }
        Ok(Self { tokens: all, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Maps tokens to ids, truncating to `max_len`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> Vec<u32> {
        tokens
            .iter()
            .take(max_len)
            .map(|t| self.id(t.as_ref()))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// Hex SHA-256 over the id-ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([b'\n']);
        }
        hex::encode(h.finalize())
    }
}

/// Counts tokens over training notes and every code description, keeping those seen at
/// least `min_count` times, ordered by (count desc, token asc).
pub fn build_vocab(documents: &[Document], registry: &CodeRegistry, min_count: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let notes = documents
        .iter()
        .filter(|d| d.split == Split::Train)
        .flat_map(|d| d.tokens.iter());
    let descriptions = registry
        .entries()
        .iter()
        .flat_map(|e| e.description_tokens.iter());
    for t in notes.chain(descriptions) {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, n)| n >= min_count.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t)).expect("counted tokens are unique")
}

/// Row `i` is the embedding of token id `i`; row 0 (padding) stays zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub matrix: Array2<f64>,
}

impl EmbeddingTable {
    /// Random table with N(0, 1/dim) rows, so every row has unit expected norm.
    pub fn random(vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let mut matrix = Array2::from_shape_simple_fn((vocab_size, dim), || {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        });
        matrix.row_mut(PAD as usize).fill(0.0);
        Self { matrix }
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Writes `<vocab_size> <dim>` then `token v1 ... vd` per row.
    pub fn write_text(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.vocab_size() {
            return Err(Error::Shape(format!(
                "vocabulary has {} tokens, table has {} rows",
                vocab.len(),
                self.vocab_size()
            )));
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "{} {}", self.vocab_size(), self.dim()).map_err(io)?;
        for (token, row) in vocab.tokens().iter().zip(self.matrix.outer_iter()) {
            write!(out, "{token}").map_err(io)?;
            for v in row {
                write!(out, " {v}").map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    /// Reads the text format. Missing `<pad>`/`<unk>` rows are inserted (zero and mean row).
    pub fn read_text(path: &Path) -> Result<(Vocabulary, EmbeddingTable)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let bad = |line: usize, msg: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message: msg,
        };
        let header = lines
            .next()
            .ok_or_else(|| bad(1, "empty embedding file".into()))?
            .map_err(|e| Error::io(path, e))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad(1, format!("bad header {header:?}"))))
            .collect::<Result<_>>()?;
        let [rows, dim] = dims[..] else {
            return Err(bad(1, format!("header must be `<vocab_size> <dim>`, got {header:?}")));
        };
        let mut tokens = Vec::with_capacity(rows);
        let mut values = Vec::with_capacity(rows * dim);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let token = parts.next().unwrap_or_default().to_string();
            let before = values.len();
            for p in parts.filter(|p| !p.is_empty()) {
                values.push(p.parse::<f64>().map_err(|_| bad(i + 2, format!("bad value {p:?}")))?);
            }
            if values.len() - before != dim {
                return Err(bad(i + 2, format!("expected {dim} values for {token:?}")));
            }
            tokens.push(token);
        }
        if tokens.len() != rows {
            return Err(bad(1, format!("header declares {rows} rows, found {}", tokens.len())));
        }
        let mut matrix = Array2::from_shape_vec((rows, dim), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite embedding in {}", path.display())));
        }

        let has_pad = tokens.first().map(String::as_str) == Some(PAD_TOKEN);
        let has_unk = tokens.get(1).map(String::as_str) == Some(UNK_TOKEN);
        let body_start = match (has_pad, has_unk) {
            (true, true) => 2,
            (false, false) => {
                let mean = matrix.mean_axis(Axis(0)).expect("non-empty table");
                let mut full = Array2::zeros((rows + 2, dim));
                full.row_mut(UNK as usize).assign(&mean);
                full.slice_mut(ndarray::s![2.., ..]).assign(&matrix);
                matrix = full;
                0
            }
            _ => return Err(bad(2, "special tokens must be the first two rows in order".into())),
        };
        matrix.row_mut(PAD as usize).fill(0.0);
        let vocab = Vocabulary::from_tokens(tokens.into_iter().skip(body_start))?;
        Ok((vocab, EmbeddingTable { matrix }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 1,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub table: EmbeddingTable,
    /// SGNS objective after each epoch, measured on a fixed probe sample of
    /// (context, target, negatives) triples so epochs are comparable.
    pub epoch_losses: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

struct ProbeTriple {
    context: usize,
    target: usize,
    negatives: Vec<usize>,
}

/// Fixed evaluation triples drawn from an rng independent of training.
fn probe_sample(sentences: &[Vec<u32>], config: &PretrainConfig, noise: &WeightedIndex<f64>) -> Vec<ProbeTriple> {
    const PROBE_SIZE: usize = 4096;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed);
    (0..PROBE_SIZE)
        .map(|_| {
            let s = &sentences[rng.random_range(0..sentences.len())];
            let pos = rng.random_range(0..s.len());
            let offset = rng.random_range(1..=config.window.min(s.len() - 1));
            let ctx = if pos + offset < s.len() { pos + offset } else { pos.saturating_sub(offset) };
            ProbeTriple {
                context: s[ctx] as usize,
                target: s[pos] as usize,
                negatives: (0..config.negatives).map(|_| noise.sample(&mut rng)).collect(),
            }
        })
        .collect()
}

fn probe_loss(probe: &[ProbeTriple], input: &Array2<f64>, output: &Array2<f64>) -> f64 {
    let total: f64 = probe
        .iter()
        .map(|p| {
            let v = input.row(p.context);
            let pos = -log_sigmoid(v.dot(&output.row(p.target)));
            let neg: f64 = p.negatives.iter().map(|&n| -log_sigmoid(-v.dot(&output.row(n)))).sum();
            pos + neg
        })
        .sum();
    total / probe.len() as f64
}

/// Skip-gram with negative sampling over the training notes.
///
/// Single-threaded so the table is a pure function of (corpus, vocabulary, config).
/// Tokens that never occur in the pretraining corpus keep an N(0, 1/dim) row.
pub fn pretrain_embeddings(
    documents: &[Document],
    vocab: &Vocabulary,
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    if config.dim == 0 || config.window == 0 {
        return Err(Error::Config("embedding dim and window must be positive".into()));
    }
    let sentences: Vec<Vec<u32>> = documents
        .iter()
        .filter(|d| d.split == Split::Train)
        .map(|d| vocab.encode(&d.tokens, usize::MAX))
        .filter(|s| s.len() > 1)
        .collect();
    if sentences.is_empty() {
        return Err(Error::Empty("no training text to pretrain embeddings on".into()));
    }

    let v = vocab.len();
    let dim = config.dim;
    let mut counts = vec![0usize; v];
    for s in &sentences {
        for &t in s {
            counts[t as usize] += 1;
        }
    }
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let noise = WeightedIndex::new(&weights).map_err(|e| Error::Numerical(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = 0.5 / dim as f64;
    let mut input = Array2::from_shape_simple_fn((v, dim), || rng.random_range(-init..init));
    let mut output = Array2::<f64>::zeros((v, dim));

    let total_tokens: usize = sentences.iter().map(Vec::len).sum::<usize>() * config.epochs.max(1);
    let mut processed = 0usize;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut grad = vec![0.0; dim];

    let probe = probe_sample(&sentences, config, &noise);
    for _ in 0..config.epochs {
        for s in &sentences {
            for (pos, &center) in s.iter().enumerate() {
                processed += 1;
                let lr = (config.learning_rate * (1.0 - processed as f64 / (total_tokens + 1) as f64))
                    .max(config.learning_rate * 1e-4);
                let shrink = rng.random_range(0..config.window);
                let reach = config.window - shrink;
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach + 1).min(s.len());
                for ctx_pos in lo..hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = s[ctx_pos] as usize;
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=config.negatives {
                        let (target, label) = if k == 0 {
                            (center as usize, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == center as usize {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let in_row = input.row(context);
                        let mut out_row = output.row_mut(target);
                        let score: f64 = in_row.dot(&out_row);
                        let g = lr * (label - sigmoid(score));
                        for ((acc, o), i) in grad.iter_mut().zip(out_row.iter_mut()).zip(in_row.iter()) {
                            *acc += g * *o;
                            *o += g * i;
                        }
                    }
                    let mut in_row = input.row_mut(context);
                    for (i, g) in in_row.iter_mut().zip(&grad) {
                        *i += g;
                    }
                }
            }
        }
        epoch_losses.push(probe_loss(&probe, &input, &output));
    }

    let scale = 1.0 / (dim as f64).sqrt();
    for (id, &count) in counts.iter().enumerate() {
        if count == 0 {
            for x in input.row_mut(id) {
                let z: f64 = rng.sample(StandardNormal);
                *x = z * scale;
            }
        }
    }
    input.row_mut(PAD as usize).fill(0.0);
    if input.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("embedding pretraining diverged".into()));
    }
    Ok(PretrainOutcome {
        table: EmbeddingTable { matrix: input },
        epoch_losses,
    })
}
