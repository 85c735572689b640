//! End-to-end steps shared by the command line and the examples: vocabulary and
//! embeddings, training from a resolved [`RunConfig`], evaluation of a checkpoint,
//! and the cross-version mixing experiment.

use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{compute_strata, CodeRegistry, Document, Split, StratumKind, Version};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, tune_stratum_thresholds, EvalReport, StratumReport, Thresholds};
use crate::model::DualLaat;
use crate::synthgen::generate;
use crate::text::{build_vocab, pretrain_embeddings, EmbeddingTable, Vocabulary};
use crate::trainer::{EpochRecord, TrainState, Trainer};

/// Vocabulary over training notes and all descriptions, plus SGNS embeddings.
pub fn prepare_text(documents: &[Document], registry: &CodeRegistry, run: &RunConfig) -> Result<(Vocabulary, EmbeddingTable)> {
    let vocab = build_vocab(documents, registry, run.min_count);
    let outcome = pretrain_embeddings(documents, &vocab, &run.pretrain)?;
    Ok((vocab, outcome.table))
}

/// Initializes a model and trains it for `run.train.epochs`.
pub fn train_run(
    run: &RunConfig,
    documents: &[Document],
    registry: &CodeRegistry,
    vocab: &Vocabulary,
    table: EmbeddingTable,
    on_epoch: impl FnMut(&TrainState, &EpochRecord) -> Result<()>,
) -> Result<Checkpoint> {
    run.validate()?;
    if table.vocab_size() != vocab.len() {
        return Err(Error::Shape(format!(
            "embedding table has {} rows for a vocabulary of {}",
            table.vocab_size(),
            vocab.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(run.train.seed.wrapping_add(0x1a17));
    let model = DualLaat::new(run.model.clone(), table, &mut rng)?;
    let state = TrainState::new(model, run.train.seed);
    let mut trainer = Trainer::new(documents, registry, vocab, run.train.clone(), state)?;
    trainer.fit(on_epoch)?;
    Ok(Checkpoint::new(run.train.clone(), run.to_json(), vocab.clone(), trainer.state))
}

/// Decision rule for F1: tuned on validation notes, or a fixed threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ThresholdMode {
    Tuned,
    Fixed(f64),
}

impl FromStr for ThresholdMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "tuned" {
            return Ok(ThresholdMode::Tuned);
        }
        match s.parse::<f64>() {
            Ok(x) if (0.0..=1.0).contains(&x) => Ok(ThresholdMode::Fixed(x)),
            _ => Err(format!("threshold must be \"tuned\" or a number in [0, 1], got {s:?}")),
        }
    }
}

/// Evaluates the test notes of `version`. Strata come from every split of that
/// version; tuned thresholds come from its validation notes.
pub fn evaluate_version(
    model: &DualLaat,
    vocab: &Vocabulary,
    documents: &[Document],
    registry: &CodeRegistry,
    version: &Version,
    kinds: &[StratumKind],
    mode: ThresholdMode,
    rare_threshold: usize,
    chunk: usize,
) -> Result<EvalReport> {
    let all: Vec<&Document> = documents.iter().filter(|d| &d.version == version).collect();
    let strata = compute_strata(all.iter().copied(), rare_threshold)?;
    let test: Vec<&Document> = all.iter().copied().filter(|d| d.split == Split::Test).collect();
    let val: Vec<&Document> = all.iter().copied().filter(|d| d.split == Split::Val).collect();
    let thresholds = match mode {
        ThresholdMode::Fixed(t) => Thresholds::Fixed(t),
        ThresholdMode::Tuned if val.is_empty() => {
            log::warn!("no validation notes for {version}; using threshold 0.5");
            Thresholds::Fixed(0.5)
        }
        ThresholdMode::Tuned => tune_stratum_thresholds(model, vocab, registry, &val, &strata, kinds, chunk)?,
    };
    evaluate(model, vocab, registry, &test, &strata, kinds, &thresholds, chunk)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadlineMetrics {
    pub micro_f1: f64,
    pub p_at_8: f64,
    pub map: f64,
}

impl HeadlineMetrics {
    fn of(r: &StratumReport) -> Self {
        Self {
            micro_f1: r.f1_micro,
            p_at_8: r.precision_at.get(&8).copied().unwrap_or(0.0),
            map: r.map,
        }
    }

    fn minus(self, other: Self) -> Self {
        Self {
            micro_f1: self.micro_f1 - other.micro_f1,
            p_at_8: self.p_at_8 - other.p_at_8,
            map: self.map - other.map,
        }
    }

    fn mean(xs: &[Self]) -> Self {
        let n = xs.len().max(1) as f64;
        Self {
            micro_f1: xs.iter().map(|x| x.micro_f1).sum::<f64>() / n,
            p_at_8: xs.iter().map(|x| x.p_at_8).sum::<f64>() / n,
            map: xs.iter().map(|x| x.map).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub train_notes: usize,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub wall_time_s: f64,
    pub rare: HeadlineMetrics,
    pub frequent: HeadlineMetrics,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Trained on version-2 notes only.
    pub target_only: ArmResult,
    /// Trained on version-1 and version-2 notes.
    pub mixed: ArmResult,
    pub rare_delta: HeadlineMetrics,
    pub frequent_delta: HeadlineMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub config: serde_json::Value,
    pub seeds: Vec<SeedResult>,
    pub mean_rare_delta: HeadlineMetrics,
    pub mean_frequent_delta: HeadlineMetrics,
    /// Sample standard deviation of the per-seed rare micro-F1 deltas.
    pub rare_micro_f1_delta_sd: f64,
}

impl MixingReport {
    pub fn to_text(&self) -> String {
        let mut out = String::from("seed  rare F1 (tgt -> mix)   delta    rare P@8 delta  rare MAP delta  freq F1 delta\n");
        for s in &self.seeds {
            out.push_str(&format!(
                "{:>4}  {:.4} -> {:.4}      {:+.4}   {:+.4}         {:+.4}         {:+.4}\n",
                s.seed,
                s.target_only.rare.micro_f1,
                s.mixed.rare.micro_f1,
                s.rare_delta.micro_f1,
                s.rare_delta.p_at_8,
                s.rare_delta.map,
                s.frequent_delta.micro_f1,
            ));
        }
        out.push_str(&format!(
            "mean                         {:+.4}   {:+.4}         {:+.4}         {:+.4}   (sd of rare F1 delta {:.4})\n",
            self.mean_rare_delta.micro_f1,
            self.mean_rare_delta.p_at_8,
            self.mean_rare_delta.map,
            self.mean_frequent_delta.micro_f1,
            self.rare_micro_f1_delta_sd,
        ));
        out
    }
}

fn run_arm(
    run: &RunConfig,
    documents: &[Document],
    all: &[Document],
    registry: &CodeRegistry,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
) -> Result<ArmResult> {
    let started = Instant::now();
    let ckpt = train_run(run, documents, registry, vocab, table.clone(), |_, _| Ok(()))?;
    let wall_time_s = started.elapsed().as_secs_f64();
    let model = ckpt.inference_model();
    let kinds = [StratumKind::Rare, StratumKind::Frequent];
    let report = evaluate_version(
        &model,
        vocab,
        all,
        registry,
        &Version::V10,
        &kinds,
        ThresholdMode::Tuned,
        run.rare_threshold,
        run.train.label_space_size,
    )?;
    let pick = |k| report.get(k).map(HeadlineMetrics::of).unwrap_or_default();
    Ok(ArmResult {
        train_notes: documents.iter().filter(|d| d.split == Split::Train).count(),
        epochs_run: ckpt.state.epoch,
        best_epoch: ckpt.state.best.as_ref().map(|(b, _)| b.epoch),
        wall_time_s,
        rare: pick(StratumKind::Rare),
        frequent: pick(StratumKind::Frequent),
        report,
    })
}

/// For each seed: generates the corpus, trains a version-2-only model and a mixed
/// model on identical vocabulary, embeddings and initialization, and compares them
/// on the version-2 test notes. Model selection uses version-2 validation notes.
pub fn mixing_experiment(run: &RunConfig, seeds: &[u64]) -> Result<MixingReport> {
    let mut results = Vec::new();
    for &seed in seeds {
        let mut run = run.clone().with_seed(seed);
        run.train.select_versions = vec![Version::V10];
        let corpus = generate(&run.synth)?;
        let (vocab, table) = prepare_text(&corpus.documents, &corpus.registry, &run)?;
        let target: Vec<Document> = corpus.version_documents(&Version::V10);
        let a = run_arm(&run, &target, &corpus.documents, &corpus.registry, &vocab, &table)?;
        let b = run_arm(&run, &corpus.documents, &corpus.documents, &corpus.registry, &vocab, &table)?;
        log::info!(
            "seed {seed}: rare micro-F1 {:.4} (target only) vs {:.4} (mixed)",
            a.rare.micro_f1,
            b.rare.micro_f1
        );
        results.push(SeedResult {
            seed,
            rare_delta: b.rare.minus(a.rare),
            frequent_delta: b.frequent.minus(a.frequent),
            target_only: a,
            mixed: b,
        });
    }
    let rare: Vec<HeadlineMetrics> = results.iter().map(|r| r.rare_delta).collect();
    let frequent: Vec<HeadlineMetrics> = results.iter().map(|r| r.frequent_delta).collect();
    let mean_rare = HeadlineMetrics::mean(&rare);
    let sd = if rare.len() > 1 {
        let var = rare.iter().map(|d| (d.micro_f1 - mean_rare.micro_f1).powi(2)).sum::<f64>() / (rare.len() - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    Ok(MixingReport {
        config: run.to_json(),
        seeds: results,
        mean_rare_delta: mean_rare,
        mean_frequent_delta: HeadlineMetrics::mean(&frequent),
        rare_micro_f1_delta_sd: sd,
    })
}
