//! Command-line front end. Every subcommand resolves a [`RunConfig`] from the
//! preset, an optional TOML file and its flags (flags win), and writes that
//! configuration next to or inside each artifact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::{Preset, RunConfig, BENCHMARK_VOCAB_SIZE};
use crate::data::{load_sources, read_registry, write_corpus, write_registry, DatasetSchema, Document, Split, StratumKind, Version};
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::metrics::rank_columns;
use crate::pipeline::{evaluate_version, mixing_experiment, ThresholdMode};
use crate::synthgen::generate;
use crate::text::{build_vocab, pretrain_embeddings, tokenize, EmbeddingTable};
use crate::trainer::{TrainState, Trainer};

#[derive(Parser, Debug)]
#[command(name = "duallaat", version, about = "Version-agnostic ICD coding with dual encoders and label-wise attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// desk or paper
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    /// TOML file with any RunConfig field; flags override it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// cnn or rnn
    #[arg(long, global = true)]
    pub encoder: Option<EncoderKind>,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let run = match &self.config {
            Some(path) => RunConfig::from_toml_file(path, self.preset, self.encoder)?,
            None => RunConfig::preset(self.preset.unwrap_or_default(), self.encoder),
        };
        let seed = self.seed.unwrap_or(run.seed);
        Ok(run.with_seed(seed))
    }
}

#[derive(Args, Debug, Clone)]
pub struct CorpusArgs {
    /// Comma-separated corpus files (JSON lines); several files train one mixed model
    #[arg(long, value_delimiter = ',', required = true)]
    pub sources: Vec<PathBuf>,
    /// Code registry (version<TAB>code_id<TAB>description)
    #[arg(long)]
    pub registry: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic two-version corpus and its registry
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Fraction of concepts codable in both versions
        #[arg(long)]
        overlap: Option<f64>,
        #[arg(long)]
        concepts: Option<usize>,
        #[arg(long)]
        docs_v1: Option<usize>,
        #[arg(long)]
        docs_v2: Option<usize>,
        /// Separate token namespaces for the two versions
        #[arg(long)]
        disjoint_vocab: bool,
    },
    /// Build the vocabulary and pretrain word embeddings on the training notes
    PretrainEmbeddings {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train a model and write a checkpoint plus a JSON-lines metrics log
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        /// Embedding table in the text format; its vocabulary must match the corpus
        #[arg(long, conflicts_with = "pretrain_embeddings")]
        load_embeddings: Option<PathBuf>,
        /// Pretrain embeddings first (the default without --load-embeddings)
        #[arg(long)]
        pretrain_embeddings: bool,
        /// Continue from a checkpoint written by an earlier run
        #[arg(long, conflicts_with_all = ["load_embeddings", "pretrain_embeddings"])]
        resume: Option<PathBuf>,
        #[arg(long)]
        label_space_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        heads: Option<usize>,
        /// Metrics log path (default: <out>.metrics.jsonl)
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Stratified evaluation of a checkpoint on the test split
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated subset of frequent,rare,full
        #[arg(long, value_delimiter = ',', default_value = "frequent,rare,full")]
        strata: Vec<StratumKind>,
        /// tuned (on validation notes), 0.5, or any value in [0, 1]
        #[arg(long, default_value = "tuned")]
        threshold: ThresholdMode,
        /// Only this version (default: every version with test notes)
        #[arg(long)]
        version: Option<Version>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank the codes of any registry for each note
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Plain text, one note per line, or a corpus in JSON lines (*.jsonl)
        #[arg(long)]
        notes: PathBuf,
        #[arg(long)]
        registry: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Target-only versus mixed-version training on synthetic corpora
    Mixing {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Zero concept overlap and disjoint vocabularies
        #[arg(long)]
        control: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trainable-parameter count of a configuration
    ParamCount {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = BENCHMARK_VOCAB_SIZE)]
        vocab_size: usize,
        #[arg(long)]
        heads: Option<usize>,
    },
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn load(corpus: &CorpusArgs) -> Result<crate::data::Dataset> {
    let paths: Vec<&Path> = corpus.sources.iter().map(PathBuf::as_path).collect();
    load_sources(&paths, &corpus.registry, &DatasetSchema::default())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            common,
            out_dir,
            overlap,
            concepts,
            docs_v1,
            docs_v2,
            disjoint_vocab,
        } => {
            let mut run = common.resolve()?;
            if let Some(x) = overlap {
                run.synth.overlap_fraction = x;
            }
            if let Some(x) = concepts {
                run.synth.n_concepts = x;
            }
            if let Some(x) = docs_v1 {
                run.synth.n_docs_v1 = x;
            }
            if let Some(x) = docs_v2 {
                run.synth.n_docs_v2 = x;
            }
            run.synth.disjoint_vocab |= disjoint_vocab;
            let corpus = generate(&run.synth)?;
            fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            write_corpus(&out_dir.join("corpus.jsonl"), &corpus.documents)?;
            write_corpus(&out_dir.join("v1.jsonl"), &corpus.version_documents(&Version::V9))?;
            write_corpus(&out_dir.join("v2.jsonl"), &corpus.version_documents(&Version::V10))?;
            write_registry(&out_dir.join("codes.tsv"), &corpus.registry)?;
            let shared = corpus.concepts.iter().filter(|c| c.v1_code.is_some() && c.v2_code.is_some()).count();
            write_json(
                &out_dir.join("manifest.json"),
                &json!({"config": run.to_json(), "documents": corpus.documents.len(),
                        "codes": corpus.registry.len(), "shared_concepts": shared}),
            )?;
            log::info!(
                "wrote {} documents and {} codes ({shared} shared concepts) to {}",
                corpus.documents.len(),
                corpus.registry.len(),
                out_dir.display()
            );
        }
        Command::PretrainEmbeddings {
            common,
            corpus,
            out,
            epochs,
        } => {
            let mut run = common.resolve()?;
            if let Some(e) = epochs {
                run.pretrain.epochs = e;
            }
            let data = load(&corpus)?;
            let vocab = build_vocab(&data.documents, &data.registry, run.min_count);
            let outcome = pretrain_embeddings(&data.documents, &vocab, &run.pretrain)?;
            outcome.table.write_text(&out, &vocab)?;
            write_json(
                &sidecar(&out),
                &json!({"config": run.to_json(), "vocab_hash": vocab.hash(), "vocab_size": vocab.len(),
                        "epoch_losses": outcome.epoch_losses}),
            )?;
            log::info!("wrote {} x {} embeddings to {}", vocab.len(), run.pretrain.dim, out.display());
        }
        Command::Train {
            common,
            corpus,
            out,
            load_embeddings,
            pretrain_embeddings: _,
            resume,
            label_space_size,
            epochs,
            batch_size,
            lr,
            heads,
            log,
        } => {
            let data = load(&corpus)?;
            let (mut run, state, vocab) = match resume {
                Some(path) => {
                    let ckpt = Checkpoint::read(&path)?;
                    let mut run: RunConfig = serde_json::from_value(ckpt.run_config.clone())
                        .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
                    run.train = ckpt.train_config.clone();
                    (run, Some(ckpt.state), ckpt.vocab)
                }
                None => {
                    let run = common.resolve()?;
                    let vocab = build_vocab(&data.documents, &data.registry, run.min_count);
                    (run, None, vocab)
                }
            };
            if let Some(x) = label_space_size {
                run.train.label_space_size = x;
            }
            if let Some(x) = epochs {
                run.train.epochs = x;
            }
            if let Some(x) = batch_size {
                run.train.batch_size = x;
            }
            if let Some(x) = lr {
                run.train.lr = x;
            }
            if let Some(x) = heads {
                if state.is_some() && x != run.model.heads {
                    return Err(Error::Config("--heads cannot change when resuming".into()));
                }
                run.model.heads = x;
            }
            run.validate()?;
            let state = match state {
                Some(s) => s,
                None => {
                    let table = match load_embeddings {
                        Some(path) => {
                            let (emb_vocab, table) = EmbeddingTable::read_text(&path)?;
                            if emb_vocab.hash() != vocab.hash() {
                                return Err(Error::VocabMismatch {
                                    expected: vocab.hash(),
                                    found: emb_vocab.hash(),
                                });
                            }
                            table
                        }
                        None => pretrain_embeddings(&data.documents, &vocab, &run.pretrain)?.table,
                    };
                    use rand::SeedableRng;
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(run.train.seed.wrapping_add(0x1a17));
                    let model = crate::model::DualLaat::new(run.model.clone(), table, &mut rng)?;
                    TrainState::new(model, run.train.seed)
                }
            };
            let log_path = log.unwrap_or_else(|| {
                let mut s = out.as_os_str().to_owned();
                s.push(".metrics.jsonl");
                PathBuf::from(s)
            });
            let mut log_file = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log_path)
                .map_err(|e| Error::io(&log_path, e))?;
            let params = state.model.params.parameter_count();
            log::info!("{params} trainable parameters");
            let mut trainer = Trainer::new(&data.documents, &data.registry, &vocab, run.train.clone(), state)?;
            let run_json = run.to_json();
            let started = std::time::Instant::now();
            let fit = trainer.fit(|state, record| {
                let line = serde_json::to_string(record).map_err(|e| Error::Config(e.to_string()))?;
                writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
                // Written every epoch so a later failure leaves the last good state on disk.
                Checkpoint::new(run.train.clone(), run_json.clone(), vocab.clone(), state.clone()).write(&out)
            });
            if let Err(e) = fit {
                if matches!(e, Error::Numerical(_)) {
                    log::error!("training diverged; {} holds the last completed epoch", out.display());
                }
                return Err(e);
            }
            if trainer.state.epoch == 0 || trainer.state.history.is_empty() {
                Checkpoint::new(run.train.clone(), run_json, vocab.clone(), trainer.state.clone()).write(&out)?;
            }
            log::info!(
                "trained {} epochs ({} steps, {params} parameters) in {:.1}s",
                trainer.state.epoch,
                trainer.state.step,
                started.elapsed().as_secs_f64()
            );
        }
        Command::Evaluate {
            common,
            corpus,
            checkpoint,
            strata,
            threshold,
            version,
            out,
        } => {
            let run = common.resolve()?;
            let data = load(&corpus)?;
            let ckpt = Checkpoint::read(&checkpoint)?;
            let model = ckpt.inference_model();
            let versions: Vec<Version> = match version {
                Some(v) => vec![v],
                None => {
                    let set: std::collections::BTreeSet<Version> = data
                        .documents
                        .iter()
                        .filter(|d| d.split == Split::Test)
                        .map(|d| d.version.clone())
                        .collect();
                    set.into_iter().collect()
                }
            };
            if versions.is_empty() {
                return Err(Error::Empty("no test notes to evaluate".into()));
            }
            let mut reports = Vec::new();
            for v in &versions {
                let report = evaluate_version(
                    &model,
                    &ckpt.vocab,
                    &data.documents,
                    &data.registry,
                    v,
                    &strata,
                    threshold,
                    run.rare_threshold,
                    ckpt.train_config.label_space_size,
                )?;
                print!("{}", report.to_text());
                reports.push(json!({"version": v, "report": report}));
            }
            if let Some(out) = out {
                write_json(
                    &out,
                    &json!({"config": run.to_json(), "checkpoint_config": ckpt.run_config,
                            "threshold": threshold, "results": reports}),
                )?;
            }
        }
        Command::Predict {
            common,
            checkpoint,
            notes,
            registry,
            top_k,
            out,
        } => {
            let run = common.resolve()?;
            let ckpt = Checkpoint::read(&checkpoint)?;
            let registry = read_registry(&registry)?;
            let documents = read_notes(&notes)?;
            let ranked = predict_ranked(&ckpt, &documents, &registry, top_k)?;
            let mut text = String::new();
            for (doc, codes) in documents.iter().zip(&ranked) {
                let line = json!({"doc_id": doc.doc_id, "codes": codes});
                text.push_str(&line.to_string());
                text.push('\n');
            }
            match out {
                Some(path) => {
                    fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
                    write_json(&sidecar(&path), &json!({"config": run.to_json(), "checkpoint_config": ckpt.run_config}))?;
                }
                None => print!("{text}"),
            }
        }
        Command::Mixing {
            common,
            seeds,
            control,
            epochs,
            out,
        } => {
            let mut run = common.resolve()?;
            if control {
                run.synth.overlap_fraction = 0.0;
                run.synth.disjoint_vocab = true;
            }
            if let Some(e) = epochs {
                run.train.epochs = e;
            }
            let base = run.seed;
            let seeds: Vec<u64> = (base..base + seeds).collect();
            let report = mixing_experiment(&run, &seeds)?;
            print!("{}", report.to_text());
            if let Some(out) = out {
                write_json(&out, &serde_json::to_value(&report).map_err(|e| Error::Config(e.to_string()))?)?;
            }
        }
        Command::ParamCount {
            common,
            vocab_size,
            heads,
        } => {
            let mut run = common.resolve()?;
            if let Some(h) = heads {
                run.model.heads = h;
            }
            let m = &run.model;
            let non_emb = m.non_embedding_parameters();
            println!("encoder            {:?}", m.encoder.kind);
            println!("heads              {}", m.heads);
            println!("d_emb              {}", m.d_emb);
            println!("d_note             {}", m.d_note());
            println!("vocabulary         {vocab_size}");
            println!("embedding params   {}", vocab_size * m.d_emb);
            println!("other params       {non_emb}");
            println!("total              {} ({:.2}M)", m.parameter_count(vocab_size), m.parameter_count(vocab_size) as f64 / 1e6);
            println!("each 10k vocabulary words add {:.2}M parameters", (10_000 * m.d_emb) as f64 / 1e6);
        }
    }
    Ok(())
}

/// Reads notes to rank: a corpus in JSON lines, or plain text with one note per line.
pub fn read_notes(path: &Path) -> Result<Vec<Document>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        return crate::data::read_corpus(path, &DatasetSchema::default());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Document {
            doc_id: format!("line{}", i + 1),
            tokens: tokenize(l),
            codes: Default::default(),
            version: Version::Other("unknown".into()),
            split: Split::Test,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct RankedCode {
    pub version: Version,
    pub code_id: String,
    pub description: String,
    pub probability: f64,
}

/// Top-`k` codes of `registry` for each note, ties broken by (version, code id).
pub fn predict_ranked(
    ckpt: &Checkpoint,
    documents: &[Document],
    registry: &crate::data::CodeRegistry,
    top_k: usize,
) -> Result<Vec<Vec<RankedCode>>> {
    let model = ckpt.inference_model();
    let codes: Vec<_> = registry.entries().iter().map(|e| e.key()).collect();
    if codes.is_empty() {
        return Err(Error::Empty("registry has no codes".into()));
    }
    let refs: Vec<&Document> = documents.iter().collect();
    let probs = crate::evaluation::predict_documents(&model, &ckpt.vocab, registry, &refs, &codes, ckpt.train_config.label_space_size)?;
    Ok(probs
        .rows()
        .into_iter()
        .map(|row| {
            let scores = row.to_vec();
            rank_columns(&scores, &codes)
                .into_iter()
                .take(top_k)
                .map(|j| {
                    let e = registry.get(&codes[j]).expect("registry code");
                    RankedCode {
                        version: e.version.clone(),
                        code_id: e.code_id.clone(),
                        description: e.description.clone(),
                        probability: scores[j],
                    }
                })
                .collect()
        })
        .collect())
}

/// Parses arguments, runs, and returns the process exit code:
/// 0 success, 1 usage or configuration error, 2 data error, 3 numerical failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["duallaat", "train"]), 1);
        assert_eq!(main_with_args(["duallaat", "evaluate", "--threshold", "high"]), 1);
        assert_eq!(main_with_args(["duallaat", "no-such-command"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(main_with_args(["duallaat", "--help"]), 0);
    }

    #[test]
    fn missing_files_are_data_errors() {
        let code = main_with_args([
            "duallaat",
            "evaluate",
            "--sources",
            "/nonexistent/a.jsonl",
            "--registry",
            "/nonexistent/codes.tsv",
            "--checkpoint",
            "/nonexistent/m.ckpt",
        ]);
        assert_eq!(code, 2);
    }
}
