//! Training loop: BCE over dynamic label spaces, AdamW with decoupled weight decay,
//! linear warmup/decay, global-norm clipping and best-on-validation selection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batcher::{epoch_batches, CodePools, DEFAULT_BATCH_SIZE, DEFAULT_LABEL_SPACE_SIZE};
use crate::data::{CodeKey, CodeRegistry, Document, Split, Version};
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::evaluation::{encode_descriptions, predict_documents};
use crate::metrics::{f1_scores, tune_threshold};
use crate::model::{bce_with_logits, DualLaat, ModelParams};
use crate::text::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub label_space_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Versions whose validation notes drive model selection; empty means all.
    pub select_versions: Vec<Version>,
    /// Tune the decision threshold on validation instead of using 0.5.
    pub tune_threshold: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            warmup_steps: 2000,
            weight_decay: 1e-3,
            batch_size: DEFAULT_BATCH_SIZE,
            label_space_size: DEFAULT_LABEL_SPACE_SIZE,
            epochs: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: Some(5.0),
            select_versions: Vec::new(),
            tune_threshold: true,
        }
    }
}

impl TrainConfig {
    /// Defaults with the weight decay of the given encoder (0.001 recurrent, 0 convolutional).
    pub fn for_encoder(kind: EncoderKind) -> Self {
        Self {
            weight_decay: match kind {
                EncoderKind::Rnn => 1e-3,
                EncoderKind::Cnn => 0.0,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.label_space_size == 0 {
            return Err(Error::Config("batch size and label space size must be positive".into()));
        }
        if self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid optimizer hyperparameters".into()));
        }
        Ok(())
    }
}

/// `lr · min(step / warmup, (total − step) / (total − warmup))`, clamped at zero.
/// `step` counts updates already applied, so the first update uses `step = 0`.
pub fn scheduled_lr(base: f64, step: usize, warmup: usize, total: usize) -> f64 {
    let s = step as f64;
    let up = if warmup == 0 { 1.0 } else { s / warmup as f64 };
    let down = if total > warmup {
        (total as f64 - s) / (total - warmup) as f64
    } else {
        1.0
    };
    base * up.min(down).clamp(0.0, 1.0)
}

/// Mean binary cross-entropy of probabilities, evaluated through clamped logits.
pub fn bce_loss(y_hat: &Array2<f64>, targets: &Array2<bool>) -> Result<f64> {
    if y_hat.iter().any(|p| p.is_nan()) {
        return Err(Error::Numerical("NaN probability".into()));
    }
    const EPS: f64 = 1e-12;
    let logits = y_hat.mapv(|p| {
        let p = p.clamp(EPS, 1.0 - EPS);
        p.ln() - (1.0 - p).ln()
    });
    bce_with_logits(&logits, targets)
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// One AdamW update with decoupled weight decay.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64, config: &TrainConfig) {
        self.t += 1;
        let (b1, b2, eps, wd) = (config.beta1, config.beta2, config.adam_eps, config.weight_decay);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let g_views = grads.named_params();
        for (((p, (_, g)), m), v) in params
            .params_mut()
            .into_iter()
            .zip(g_views)
            .zip(self.m.params_mut())
            .zip(self.v.params_mut())
        {
            Zip::from(p).and(&g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                *p -= lr * (update + wd * *p);
            });
        }
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads
        .named_params()
        .iter()
        .map(|(_, a)| a.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for mut a in grads.params_mut() {
            a.mapv_inplace(|x| x * scale);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    pub notes: usize,
    pub micro_f1: f64,
    pub threshold: f64,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub val: Option<ValRecord>,
    pub clipped_steps: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestInfo {
    pub epoch: usize,
    pub val_micro_f1: f64,
    pub threshold: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: DualLaat,
    pub adam: AdamState,
    pub batch_rng: ChaCha8Rng,
    pub dropout_rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    /// Applied updates.
    pub step: usize,
    pub best: Option<(BestInfo, ModelParams)>,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(model: DualLaat, seed: u64) -> Self {
        let adam = AdamState::new(&model.params);
        Self {
            model,
            adam,
            batch_rng: ChaCha8Rng::seed_from_u64(seed),
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x0d20_9047),
            epoch: 0,
            step: 0,
            best: None,
            history: Vec::new(),
        }
    }

    /// The selected parameters: best on validation if any epoch was validated, else current.
    pub fn selected(&self) -> (&ModelParams, Option<&BestInfo>) {
        match &self.best {
            Some((info, params)) => (params, Some(info)),
            None => (&self.model.params, None),
        }
    }
}

/// Owns the encoded corpus and drives [`TrainState`] through epochs.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub state: TrainState,
    train: Vec<&'a Document>,
    val: Vec<&'a Document>,
    registry: &'a CodeRegistry,
    vocab: &'a Vocabulary,
    pools: CodePools,
    note_ids: HashMap<&'a str, Vec<u32>>,
    descriptions: HashMap<CodeKey, Vec<u32>>,
    total_steps: usize,
}

impl<'a> Trainer<'a> {
    /// `documents` may hold every split; train and val are picked by tag.
    pub fn new(
        documents: &'a [Document],
        registry: &'a CodeRegistry,
        vocab: &'a Vocabulary,
        config: TrainConfig,
        state: TrainState,
    ) -> Result<Self> {
        config.validate()?;
        if state.model.params.embedding.nrows() != vocab.len() {
            return Err(Error::Shape(format!(
                "embedding table has {} rows for a vocabulary of {}",
                state.model.params.embedding.nrows(),
                vocab.len()
            )));
        }
        let train: Vec<&Document> = documents.iter().filter(|d| d.split == Split::Train).collect();
        if train.is_empty() {
            return Err(Error::Empty("no training documents".into()));
        }
        let val: Vec<&Document> = documents
            .iter()
            .filter(|d| d.split == Split::Val)
            .filter(|d| config.select_versions.is_empty() || config.select_versions.contains(&d.version))
            .collect();
        if val.is_empty() {
            log::warn!("no validation documents; the last epoch will be kept");
        }
        let max_note = state.model.config.max_note_tokens;
        let note_ids = train
            .iter()
            .map(|d| (d.doc_id.as_str(), vocab.encode(&d.tokens, max_note)))
            .collect();
        let keys: Vec<CodeKey> = registry.entries().iter().map(|e| e.key()).collect();
        let encoded = encode_descriptions(vocab, registry, &keys, state.model.config.max_code_tokens)?;
        let descriptions = keys.into_iter().zip(encoded).collect();
        let total_steps = config.epochs * batches_per_epoch(&train, config.batch_size);
        let pools = CodePools::from_registry(registry);
        let versions: BTreeSet<&Version> = train.iter().map(|d| &d.version).collect();
        for v in versions {
            let n = pools.get(v).len();
            if n < config.label_space_size {
                log::warn!(
                    "code pool for {v} has {n} codes, fewer than |L| = {}; label spaces use the whole pool",
                    config.label_space_size
                );
            }
        }
        Ok(Self {
            pools,
            config,
            state,
            train,
            val,
            registry,
            vocab,
            note_ids,
            descriptions,
            total_steps,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// Runs one epoch and validation. On a numerical failure the state is left
    /// mid-epoch; the last state saved at an epoch boundary is the last good one.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let started = Instant::now();
        let Self {
            config,
            state,
            train,
            pools,
            note_ids,
            descriptions,
            total_steps,
            ..
        } = self;
        let TrainState {
            model,
            adam,
            batch_rng,
            dropout_rng,
            step,
            ..
        } = state;
        let (mut loss_sum, mut batches, mut clipped, mut lr) = (0.0, 0usize, 0usize, 0.0);
        for batch in epoch_batches(train, pools, config.batch_size, config.label_space_size, batch_rng) {
            let batch = batch?;
            let notes: Vec<&[u32]> = batch.documents.iter().map(|d| note_ids[d.doc_id.as_str()].as_slice()).collect();
            let descs: Vec<&[u32]> = batch.label_space.codes.iter().map(|k| descriptions[k].as_slice()).collect();
            let (loss, mut grads) = model.loss_and_grad(&notes, &descs, &batch.targets, Some(dropout_rng))?;
            if !grads.is_finite() {
                return Err(Error::Numerical(format!("non-finite gradient at step {step}")));
            }
            if let Some(max) = config.grad_clip {
                let norm = clip_global_norm(&mut grads, max);
                if norm > max {
                    clipped += 1;
                    log::debug!("step {step}: gradient norm {norm:.3} clipped to {max}");
                }
            }
            lr = scheduled_lr(config.lr, *step, config.warmup_steps, *total_steps);
            adam.step(&mut model.params, &grads, lr, config);
            *step += 1;
            loss_sum += loss;
            batches += 1;
        }
        state.epoch += 1;
        let val = self.validate()?;
        if let Some(v) = &val {
            let better = self.state.best.as_ref().is_none_or(|(b, _)| v.micro_f1 > b.val_micro_f1);
            if better {
                let info = BestInfo {
                    epoch: self.state.epoch,
                    val_micro_f1: v.micro_f1,
                    threshold: v.threshold,
                };
                self.state.best = Some((info, self.state.model.params.clone()));
            }
        }
        let record = EpochRecord {
            epoch: self.state.epoch,
            step: self.state.step,
            loss: loss_sum / batches.max(1) as f64,
            lr,
            val,
            clipped_steps: clipped,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} step {} loss {:.5} lr {:.2e}{}",
            record.epoch,
            record.step,
            record.loss,
            record.lr,
            record
                .val
                .as_ref()
                .map(|v| format!(" val micro-F1 {:.4} @ {:.3}", v.micro_f1, v.threshold))
                .unwrap_or_default()
        );
        self.state.history.push(record.clone());
        Ok(record)
    }

    /// Micro F1 on the validation notes, each version scored against its whole code set.
    pub fn validate(&self) -> Result<Option<ValRecord>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let mut by_version: BTreeMap<&Version, Vec<&Document>> = BTreeMap::new();
        for d in &self.val {
            by_version.entry(&d.version).or_default().push(*d);
        }
        let (mut scores, mut gold) = (Vec::new(), Vec::new());
        for (version, docs) in by_version {
            let codes = self.registry.codes_of(version);
            let y = predict_documents(
                &self.state.model,
                self.vocab,
                self.registry,
                &docs,
                &codes,
                self.config.label_space_size,
            )?;
            let t = crate::batcher::LabelSpace::fixed(codes).targets(&docs);
            scores.extend(y.iter().copied());
            gold.extend(t.iter().copied());
        }
        let y = Array2::from_shape_vec((1, scores.len()), scores).expect("flat row");
        let t = Array2::from_shape_vec((1, gold.len()), gold).expect("flat row");
        let threshold = if self.config.tune_threshold {
            tune_threshold(y.view(), t.view())?
        } else {
            0.5
        };
        Ok(Some(ValRecord {
            notes: self.val.len(),
            micro_f1: f1_scores(y.view(), t.view(), threshold)?.micro,
            threshold,
        }))
    }

    /// Runs epochs until `until` are complete (capped at the configured total),
    /// calling `on_epoch` after each.
    pub fn fit_until(
        &mut self,
        until: usize,
        mut on_epoch: impl FnMut(&TrainState, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        while self.state.epoch < until.min(self.config.epochs) {
            let record = self.run_epoch()?;
            on_epoch(&self.state, &record)?;
        }
        Ok(())
    }

    pub fn fit(&mut self, on_epoch: impl FnMut(&TrainState, &EpochRecord) -> Result<()>) -> Result<()> {
        self.fit_until(self.config.epochs, on_epoch)
    }

    /// Micro F1 on the training notes against each version's code set.
    pub fn train_micro_f1(&self, threshold: f64) -> Result<f64> {
        let versions: BTreeSet<&Version> = self.train.iter().map(|d| &d.version).collect();
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for version in versions {
            let docs: Vec<&Document> = self.train.iter().copied().filter(|d| &d.version == version).collect();
            let codes = self.registry.codes_of(version);
            let y = predict_documents(&self.state.model, self.vocab, self.registry, &docs, &codes, self.config.label_space_size)?;
            let t = crate::batcher::LabelSpace::fixed(codes).targets(&docs);
            Zip::from(&y).and(&t).for_each(|&s, &g| match (s >= threshold, g) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            });
        }
        let denom = 2.0 * tp + fp + fn_;
        Ok(if denom == 0.0 { 0.0 } else { 2.0 * tp / denom })
    }
}

/// Batches one epoch yields: per version, the ceiling of its notes over the batch size.
pub fn batches_per_epoch(train: &[&Document], batch_size: usize) -> usize {
    let mut counts: BTreeMap<&Version, usize> = BTreeMap::new();
    for d in train {
        *counts.entry(&d.version).or_default() += 1;
    }
    counts.values().map(|n| n.div_ceil(batch_size.max(1))).sum()
}
