//! Stratified evaluation of a trained model over frequent, rare and full code sets.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::batcher::LabelSpace;
use crate::data::{CodeKey, CodeRegistry, CodeStratum, Document, StratumKind, Version};
use crate::error::{Error, Result};
use crate::metrics::{auc_roc, f1_scores, ranking_metrics, tune_threshold};
use crate::model::DualLaat;
use crate::text::Vocabulary;

pub const RANKING_KS: [usize; 2] = [8, 15];

pub fn encode_notes(vocab: &Vocabulary, documents: &[&Document], max_len: usize) -> Vec<Vec<u32>> {
    documents.iter().map(|d| vocab.encode(&d.tokens, max_len)).collect()
}

/// Description token ids for each code, in the given order.
pub fn encode_descriptions(
    vocab: &Vocabulary,
    registry: &CodeRegistry,
    codes: &[CodeKey],
    max_len: usize,
) -> Result<Vec<Vec<u32>>> {
    let missing: Vec<String> = codes
        .iter()
        .filter(|k| !registry.contains(k))
        .map(ToString::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingDescriptions(missing));
    }
    Ok(codes
        .iter()
        .map(|k| {
            let entry = registry.get(k).expect("checked above");
            vocab.encode(&entry.description_tokens, max_len)
        })
        .collect())
}

/// Probabilities `(documents × codes)` with code slices of at most `chunk`.
pub fn predict_documents(
    model: &DualLaat,
    vocab: &Vocabulary,
    registry: &CodeRegistry,
    documents: &[&Document],
    codes: &[CodeKey],
    chunk: usize,
) -> Result<Array2<f64>> {
    let notes = encode_notes(vocab, documents, model.config.max_note_tokens);
    let descriptions = encode_descriptions(vocab, registry, codes, model.config.max_code_tokens)?;
    let notes: Vec<&[u32]> = notes.iter().map(Vec::as_slice).collect();
    let descriptions: Vec<&[u32]> = descriptions.iter().map(Vec::as_slice).collect();
    model.predict(&notes, &descriptions, chunk)
}

/// How F1 turns scores into decisions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Thresholds {
    Fixed(f64),
    PerStratum(BTreeMap<StratumKind, f64>),
}

impl Thresholds {
    pub fn get(&self, kind: StratumKind) -> f64 {
        match self {
            Thresholds::Fixed(t) => *t,
            Thresholds::PerStratum(m) => m.get(&kind).copied().unwrap_or(0.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub stratum: StratumKind,
    pub version: Version,
    pub notes: usize,
    pub codes: usize,
    pub threshold: f64,
    pub f1_micro: f64,
    pub f1_macro: Option<f64>,
    pub auc_roc_micro: Option<f64>,
    pub auc_roc_macro: Option<f64>,
    pub precision_at: BTreeMap<usize, f64>,
    pub r_precision: f64,
    pub map: f64,
    /// Notes with at least one gold code of this stratum; the ranking metrics average over these.
    pub ranking_notes: usize,
    pub ranking_notes_excluded: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strata: Vec<StratumReport>,
    /// Requested strata that had no codes.
    pub omitted: Vec<StratumKind>,
}

impl EvalReport {
    pub fn get(&self, kind: StratumKind) -> Option<&StratumReport> {
        self.strata.iter().find(|r| r.stratum == kind)
    }

    /// Plain-text table, one line per stratum.
    pub fn to_text(&self) -> String {
        let mut out = String::from(
            "stratum   version notes codes  thr    AUCmi  AUCma  F1mi   F1ma   P@8    P@15   R-P    MAP\n",
        );
        let opt = |x: Option<f64>| x.map_or("   -  ".to_string(), |v| format!("{v:.4}"));
        for r in &self.strata {
            out.push_str(&format!(
                "{:<9} {:<7} {:>5} {:>5}  {:.3}  {}  {}  {:.4}  {}  {:.4}  {:.4}  {:.4}  {:.4}\n",
                r.stratum.to_string(),
                r.version.to_string(),
                r.notes,
                r.codes,
                r.threshold,
                opt(r.auc_roc_micro),
                opt(r.auc_roc_macro),
                r.f1_micro,
                opt(r.f1_macro),
                r.precision_at.get(&8).copied().unwrap_or(0.0),
                r.precision_at.get(&15).copied().unwrap_or(0.0),
                r.r_precision,
                r.map,
            ));
        }
        for kind in &self.omitted {
            out.push_str(&format!("{kind:<9} omitted: no codes in stratum\n"));
        }
        out
    }
}

fn single_version(documents: &[&Document]) -> Result<Version> {
    let versions: BTreeSet<&Version> = documents.iter().map(|d| &d.version).collect();
    match versions.len() {
        0 => Err(Error::Empty("no documents to evaluate".into())),
        1 => Ok(versions.into_iter().next().expect("one version").clone()),
        _ => Err(Error::Config(format!(
            "evaluation documents mix versions {versions:?}; evaluate one version at a time"
        ))),
    }
}

/// Predictions over every stratum code plus the column indices of each requested stratum.
struct StratifiedScores {
    version: Version,
    codes: Vec<CodeKey>,
    scores: Array2<f64>,
    targets: Array2<bool>,
    columns: Vec<(StratumKind, Vec<usize>)>,
    omitted: Vec<StratumKind>,
}

fn stratified_scores(
    model: &DualLaat,
    vocab: &Vocabulary,
    registry: &CodeRegistry,
    documents: &[&Document],
    strata: &CodeStratum,
    kinds: &[StratumKind],
    chunk: usize,
) -> Result<StratifiedScores> {
    let version = single_version(documents)?;
    let full: Vec<CodeKey> = strata
        .full()
        .into_iter()
        .map(|c| CodeKey::new(version.clone(), c))
        .collect();
    let scores = predict_documents(model, vocab, registry, documents, &full, chunk)?;
    let targets = LabelSpace::fixed(full.clone()).targets(documents);
    let mut columns = Vec::new();
    let mut omitted = Vec::new();
    for &kind in kinds {
        let wanted = strata.select(kind);
        let cols: Vec<usize> = full
            .iter()
            .enumerate()
            .filter(|(_, k)| wanted.contains(&k.code_id))
            .map(|(j, _)| j)
            .collect();
        if cols.is_empty() {
            log::warn!("stratum {kind} has no codes; section omitted");
            omitted.push(kind);
        } else {
            columns.push((kind, cols));
        }
    }
    Ok(StratifiedScores {
        version,
        codes: full,
        scores,
        targets,
        columns,
        omitted,
    })
}

/// Per-stratum decision thresholds maximizing micro F1 on `documents` (normally validation).
pub fn tune_stratum_thresholds(
    model: &DualLaat,
    vocab: &Vocabulary,
    registry: &CodeRegistry,
    documents: &[&Document],
    strata: &CodeStratum,
    kinds: &[StratumKind],
    chunk: usize,
) -> Result<Thresholds> {
    let s = stratified_scores(model, vocab, registry, documents, strata, kinds, chunk)?;
    let mut out = BTreeMap::new();
    for (kind, cols) in &s.columns {
        let y = s.scores.select(Axis(1), cols);
        let t = s.targets.select(Axis(1), cols);
        out.insert(*kind, tune_threshold(y.view(), t.view())?);
    }
    Ok(Thresholds::PerStratum(out))
}

/// Scores every requested stratum of one version's test documents.
///
/// All notes enter the classification metrics with gold sets restricted to the
/// stratum; ranking metrics average over notes keeping at least one gold code.
pub fn evaluate(
    model: &DualLaat,
    vocab: &Vocabulary,
    registry: &CodeRegistry,
    documents: &[&Document],
    strata: &CodeStratum,
    kinds: &[StratumKind],
    thresholds: &Thresholds,
    chunk: usize,
) -> Result<EvalReport> {
    let s = stratified_scores(model, vocab, registry, documents, strata, kinds, chunk)?;
    let mut report = EvalReport {
        strata: Vec::new(),
        omitted: s.omitted.clone(),
    };
    for (kind, cols) in &s.columns {
        let y = s.scores.select(Axis(1), cols);
        let t = s.targets.select(Axis(1), cols);
        let keys: Vec<&str> = cols.iter().map(|&j| s.codes[j].code_id.as_str()).collect();
        let threshold = thresholds.get(*kind);
        let f1 = f1_scores(y.view(), t.view(), threshold)?;
        let auc = auc_roc(y.view(), t.view())?;
        let ranking = ranking_metrics(y.view(), t.view(), &RANKING_KS, &keys)?;
        report.strata.push(StratumReport {
            stratum: *kind,
            version: s.version.clone(),
            notes: y.nrows(),
            codes: y.ncols(),
            threshold,
            f1_micro: f1.micro,
            f1_macro: f1.macro_,
            auc_roc_micro: auc.micro,
            auc_roc_macro: auc.macro_,
            precision_at: ranking.precision_at,
            r_precision: ranking.r_precision,
            map: ranking.map,
            ranking_notes: ranking.notes_scored,
            ranking_notes_excluded: ranking.notes_excluded,
        });
    }
    Ok(report)
}
