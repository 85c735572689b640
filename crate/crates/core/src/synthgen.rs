//! Seeded two-version synthetic corpora with long-tail code frequencies.
//!
//! Latent concepts carry two token sets: signal words that notes use and name
//! words that code descriptions use. A fraction of concepts is codable in both
//! versions; the version-1 description of such a concept rewords the version-2
//! one through synonyms, so anything learned across versions has to flow through
//! the text rather than through equal labels.
//!
//! Version 1 corpora are tagged `V9` and version 2 corpora `V10`.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{CodeEntry, CodeRegistry, Document, Split, Version};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_concepts: usize,
    /// Fraction of concepts with a code in both versions; the rest split evenly
    /// between version-1-only and version-2-only.
    pub overlap_fraction: f64,
    pub zipf_s: f64,
    pub n_docs_v1: usize,
    pub n_docs_v2: usize,
    pub mean_codes: f64,
    pub sd_codes: f64,
    pub max_codes: usize,
    pub signal_tokens: usize,
    pub name_tokens: usize,
    /// Chance that an emitted signal word is swapped for a filler word.
    pub noise_rate: f64,
    /// Chance that a concept mention is followed by one of its description words
    /// (in the form the note's version uses).
    pub mention_rate: f64,
    pub filler_vocab: usize,
    pub filler_min: usize,
    pub filler_max: usize,
    /// Chance that each name word of a shared concept is replaced by its synonym
    /// in the version-1 description.
    pub synonym_rate: f64,
    /// Give version 1 its own token namespace (notes and descriptions).
    pub disjoint_vocab: bool,
    /// Train/val/test fractions; test takes the remainder.
    pub split: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_concepts: 300,
            overlap_fraction: 0.25,
            zipf_s: 1.6,
            n_docs_v1: 1200,
            n_docs_v2: 600,
            mean_codes: 14.0,
            sd_codes: 6.0,
            max_codes: 40,
            signal_tokens: 3,
            name_tokens: 3,
            noise_rate: 0.1,
            mention_rate: 0.0,
            filler_vocab: 400,
            filler_min: 20,
            filler_max: 60,
            synonym_rate: 0.5,
            disjoint_vocab: false,
            split: (0.73, 0.11),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if [self.overlap_fraction, self.noise_rate, self.synonym_rate, self.mention_rate]
            .iter()
            .any(|&x| !frac(x))
        {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        if self.split.0 < 0.0 || self.split.1 < 0.0 || self.split.0 + self.split.1 > 1.0 {
            return Err(Error::Config(format!("invalid split fractions {:?}", self.split)));
        }
        if self.n_concepts == 0 || self.n_docs_v1 + self.n_docs_v2 == 0 {
            return Err(Error::Config("need at least one concept and one document".into()));
        }
        if self.signal_tokens == 0 || self.name_tokens == 0 || self.max_codes == 0 {
            return Err(Error::Config("token and code counts must be positive".into()));
        }
        if self.zipf_s < 0.0 || self.filler_min > self.filler_max || self.filler_vocab == 0 {
            return Err(Error::Config("invalid zipf exponent or filler settings".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub concept_id: usize,
    pub signal_tokens: Vec<String>,
    pub name_tokens: Vec<String>,
    pub v1_code: Option<CodeEntry>,
    pub v2_code: Option<CodeEntry>,
    pub prevalence: f64,
}

impl ConceptSpec {
    pub fn code(&self, version: &Version) -> Option<&CodeEntry> {
        match version {
            Version::V9 => self.v1_code.as_ref(),
            Version::V10 => self.v2_code.as_ref(),
            Version::Other(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub documents: Vec<Document>,
    pub registry: CodeRegistry,
    pub concepts: Vec<ConceptSpec>,
    /// Synonym of every name word, used for rewording.
    pub synonyms: std::collections::BTreeMap<String, String>,
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ne", "pu", "ra", "si", "to", "va", "ze", "bo", "di", "fe", "gu", "ha", "ji", "ku", "le", "mo",
    "na", "pe", "ri", "su", "te",
];

/// A pronounceable word, unique for each `(namespace, index)`.
fn word(namespace: char, mut index: usize) -> String {
    let mut w = String::from(namespace);
    loop {
        w.push_str(SYLLABLES[index % SYLLABLES.len()]);
        index /= SYLLABLES.len();
        if index == 0 {
            break;
        }
    }
    w
}

/// Normalized Zipf weights for ranks `1..=n`.
pub fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-s)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

const DESCRIPTION_WORDS: [&str; 6] = ["disorder", "of", "unspecified", "with", "acute", "chronic"];

fn v1_code_id(i: usize) -> String {
    format!("{:03}.{}", 100 + i / 10, i % 10)
}

fn v2_code_id(i: usize) -> String {
    let letter = (b'A' + (i / 100 % 26) as u8) as char;
    format!("{letter}{:02}.{}", i % 100, i / 2600)
}

/// Pure function of the configuration, including its seed.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_concepts;

    // Concept roles: shared, version-1 only, version-2 only.
    let n_shared = (config.overlap_fraction * n as f64).round() as usize;
    let n_v1_only = (n - n_shared) / 2;
    let mut roles: Vec<u8> = std::iter::repeat_n(0u8, n_shared)
        .chain(std::iter::repeat_n(1, n_v1_only))
        .chain(std::iter::repeat_n(2, n - n_shared - n_v1_only))
        .collect();
    roles.shuffle(&mut rng);
    let weights = zipf_weights(n, config.zipf_s);
    let mut rank_of: Vec<usize> = (0..n).collect();
    rank_of.shuffle(&mut rng);

    // Separate namespaces keep signal, name, synonym and filler words apart; the
    // version-1 namespaces are only used with `disjoint_vocab`.
    let separate = |w: String, v1: bool| if v1 && config.disjoint_vocab { format!("v{w}") } else { w };
    let mut synonyms = std::collections::BTreeMap::new();
    let mut concepts = Vec::with_capacity(n);
    let mut v1_ids = 0;
    let mut v2_ids = 0;
    for c in 0..n {
        let signal_tokens: Vec<String> = (0..config.signal_tokens)
            .map(|j| word('s', c * config.signal_tokens + j))
            .collect();
        let name_tokens: Vec<String> = (0..config.name_tokens)
            .map(|j| word('n', c * config.name_tokens + j))
            .collect();
        for (j, t) in name_tokens.iter().enumerate() {
            synonyms.insert(t.clone(), word('y', c * config.name_tokens + j));
        }
        let extra = DESCRIPTION_WORDS[rng.random_range(0..DESCRIPTION_WORDS.len())];
        let v2_code = (roles[c] != 1).then(|| {
            let desc = format!("{} {extra}", name_tokens.join(" "));
            v2_ids += 1;
            CodeEntry::new(Version::V10, v2_code_id(v2_ids - 1), desc)
        });
        let v1_code = (roles[c] != 2).then(|| {
            let mut words: Vec<String> = name_tokens.clone();
            if roles[c] == 0 {
                let swap: Vec<bool> = (0..words.len()).map(|_| rng.random_bool(config.synonym_rate)).collect();
                for (w, s) in words.iter_mut().zip(&swap) {
                    if *s {
                        *w = synonyms[w.as_str()].clone();
                    }
                }
            }
            let mut desc = words.join(" ");
            desc.push(' ');
            desc.push_str(extra);
            if config.disjoint_vocab {
                desc = desc.split(' ').map(|w| separate(w.to_string(), true)).collect::<Vec<_>>().join(" ");
            }
            v1_ids += 1;
            CodeEntry::new(Version::V9, v1_code_id(v1_ids - 1), desc)
        });
        concepts.push(ConceptSpec {
            concept_id: c,
            signal_tokens,
            name_tokens,
            v1_code,
            v2_code,
            prevalence: weights[rank_of[c]],
        });
    }
    let registry = CodeRegistry::new(
        concepts
            .iter()
            .flat_map(|c| c.v1_code.iter().chain(c.v2_code.iter()).cloned())
            .collect(),
    )?;

    let k_dist = Normal::new(config.mean_codes, config.sd_codes.max(1e-9))
        .map_err(|e| Error::Config(format!("codes-per-note distribution: {e}")))?;
    let prevalences: Vec<f64> = concepts.iter().map(|c| c.prevalence).collect();
    let mut documents = Vec::with_capacity(config.n_docs_v1 + config.n_docs_v2);
    let mut empty_draws = 0usize;
    for (version, count, tag) in [(Version::V9, config.n_docs_v1, 'a'), (Version::V10, config.n_docs_v2, 'b')] {
        let v1 = version == Version::V9;
        let mut splits: Vec<Split> = (0..count)
            .map(|i| {
                let f = i as f64 / count as f64;
                if f < config.split.0 {
                    Split::Train
                } else if f < config.split.0 + config.split.1 {
                    Split::Val
                } else {
                    Split::Test
                }
            })
            .collect();
        splits.shuffle(&mut rng);
        for (i, split) in splits.into_iter().enumerate() {
            let mut attempt = 0;
            let (chosen, codes) = loop {
                let k = (k_dist.sample(&mut rng).round().max(1.0) as usize).min(config.max_codes).min(n);
                let chosen: Vec<usize> = index::sample_weighted(&mut rng, n, |j| prevalences[j], k)
                    .map_err(|e| Error::Config(format!("concept sampling: {e}")))?
                    .into_vec();
                let codes: BTreeSet<String> = chosen
                    .iter()
                    .filter_map(|&c| concepts[c].code(&version).map(|e| e.code_id.clone()))
                    .collect();
                if !codes.is_empty() {
                    break (chosen, codes);
                }
                if attempt == 0 {
                    empty_draws += 1;
                }
                attempt += 1;
                if attempt > 1000 {
                    return Err(Error::Config("could not draw a non-empty code set".into()));
                }
            };
            let filler = |rng: &mut ChaCha8Rng| separate(word('f', rng.random_range(0..config.filler_vocab)), v1);
            // Each concept mention is a short contiguous phrase; phrases and filler
            // words are shuffled as units so local context survives.
            let mut units: Vec<Vec<String>> = Vec::new();
            for &c in &chosen {
                let mentions = 1 + rng.random_range(0..2);
                for _ in 0..mentions {
                    let s = &concepts[c].signal_tokens[rng.random_range(0..config.signal_tokens)];
                    let mut phrase = vec![if rng.random_bool(config.noise_rate) {
                        filler(&mut rng)
                    } else {
                        separate(s.clone(), v1)
                    }];
                    if rng.random_bool(config.mention_rate) {
                        if let Some(code) = concepts[c].code(&version) {
                            let words = &code.description_tokens[..config.name_tokens.min(code.description_tokens.len())];
                            phrase.push(words[rng.random_range(0..words.len())].clone());
                        }
                    }
                    units.push(phrase);
                }
            }
            let n_fill = rng.random_range(config.filler_min..=config.filler_max);
            for _ in 0..n_fill {
                units.push(vec![filler(&mut rng)]);
            }
            units.shuffle(&mut rng);
            let tokens: Vec<String> = units.into_iter().flatten().collect();
            documents.push(Document {
                doc_id: format!("{tag}{i:06}"),
                tokens,
                codes,
                version: version.clone(),
                split,
            });
        }
    }
    let total = documents.len();
    if empty_draws as f64 > 0.05 * total as f64 {
        return Err(Error::Config(format!(
            "{empty_draws} of {total} documents drew no codable concept; raise overlap_fraction or mean_codes"
        )));
    }
    documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(SynthCorpus {
        documents,
        registry,
        concepts,
        synonyms,
    })
}

impl SynthCorpus {
    /// Copies every `from` code under a new version tag, rewording each name word
    /// to its synonym with probability `rate`.
    pub fn reworded_registry(&self, from: &Version, to: Version, rate: f64, seed: u64) -> Result<CodeRegistry> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = self
            .registry
            .entries()
            .iter()
            .filter(|e| &e.version == from)
            .map(|e| {
                let desc: Vec<String> = e
                    .description_tokens
                    .iter()
                    .map(|w| match self.synonyms.get(w) {
                        Some(s) if rng.random_bool(rate) => s.clone(),
                        _ => w.clone(),
                    })
                    .collect();
                CodeEntry::new(to.clone(), e.code_id.clone(), desc.join(" "))
            })
            .collect();
        CodeRegistry::new(entries)
    }

    pub fn version_documents(&self, version: &Version) -> Vec<Document> {
        self.documents.iter().filter(|d| &d.version == version).cloned().collect()
    }
}
