//! The dual-encoder label-wise attention model: parameters, forward pass, and gradients.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{codes_backward, note_logits, note_logits_backward, AttentionGrads, AttentionHead, Classifier};
use crate::encoders::{mean_pool, Encoder, EncoderCache, EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::ops::sigmoid;
use crate::text::{EmbeddingTable, PAD};

pub const DEFAULT_MAX_NOTE_TOKENS: usize = 4000;
pub const DEFAULT_MAX_CODE_TOKENS: usize = 48;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub d_emb: usize,
    /// Number of attention heads `M`.
    pub heads: usize,
    /// Projection width; defaults to the encoder output width.
    pub d_shared: Option<usize>,
    pub max_note_tokens: usize,
    pub max_code_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::rnn(),
            d_emb: 100,
            heads: 1,
            d_shared: None,
            max_note_tokens: DEFAULT_MAX_NOTE_TOKENS,
            max_code_tokens: DEFAULT_MAX_CODE_TOKENS,
        }
    }
}

impl ModelConfig {
    pub fn d_note(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn d_shared(&self) -> usize {
        self.d_shared.unwrap_or_else(|| self.d_note())
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.d_emb == 0 || self.heads == 0 || self.d_shared() == 0 {
            return Err(Error::Config("d_emb, heads and d_shared must be positive".into()));
        }
        if self.max_note_tokens == 0 || self.max_code_tokens == 0 {
            return Err(Error::Config("token limits must be positive".into()));
        }
        Ok(())
    }

    /// Trainable parameters outside the embedding table.
    pub fn non_embedding_parameters(&self) -> usize {
        let enc = match self.encoder.kind {
            EncoderKind::Cnn => self.encoder.cnn_filters * (self.encoder.cnn_width * self.d_emb + 1),
            EncoderKind::Rnn => {
                let h = self.encoder.hidden_per_direction();
                let dirs = if self.encoder.bidirectional { 2 } else { 1 };
                let mut input = self.d_emb;
                let mut total = 0;
                for _ in 0..self.encoder.rnn_layers {
                    total += dirs * 3 * h * (input + h + 2);
                    input = h * dirs;
                }
                total
            }
        };
        let d = self.d_note();
        let s = self.d_shared();
        2 * enc + self.heads * 2 * s * d + self.heads * d + 1
    }

    pub fn parameter_count(&self, vocab_size: usize) -> usize {
        vocab_size * self.d_emb + self.non_embedding_parameters()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// All trainable arrays. Gradients use the same type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `(vocab × d_emb)`; row 0 is padding and stays zero.
    pub embedding: Array2<f64>,
    pub note_encoder: Encoder,
    pub code_encoder: Encoder,
    pub heads: Vec<AttentionHead>,
    pub classifier: Classifier,
}

impl ModelParams {
    pub fn new(config: &ModelConfig, embeddings: EmbeddingTable, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if embeddings.dim() != config.d_emb {
            return Err(Error::Shape(format!(
                "embedding table has dim {}, model expects {}",
                embeddings.dim(),
                config.d_emb
            )));
        }
        let d = config.d_note();
        let note_encoder = Encoder::new(&config.encoder, config.d_emb, rng);
        let code_encoder = Encoder::new(&config.encoder, config.d_emb, rng);
        let heads = (0..config.heads)
            .map(|_| AttentionHead::new(d, d, config.d_shared(), rng))
            .collect();
        let classifier = Classifier::new(config.heads * d, rng);
        let mut embedding = embeddings.matrix;
        embedding.row_mut(PAD as usize).fill(0.0);
        Ok(Self {
            embedding,
            note_encoder,
            code_encoder,
            heads,
            classifier,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: Array2::zeros(self.embedding.raw_dim()),
            note_encoder: self.note_encoder.zeros_like(),
            code_encoder: self.code_encoder.zeros_like(),
            heads: self.heads.iter().map(AttentionHead::zeros_like).collect(),
            classifier: self.classifier.zeros_like(),
        }
    }

    pub fn named_params(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![("embedding".to_string(), self.embedding.view().into_dyn())];
        out.extend(self.note_encoder.named_params("note_encoder"));
        out.extend(self.code_encoder.named_params("code_encoder"));
        for (m, h) in self.heads.iter().enumerate() {
            out.push((format!("head{m}.w_note"), h.w_note.view().into_dyn()));
            out.push((format!("head{m}.w_code"), h.w_code.view().into_dyn()));
        }
        out.push(("classifier.weight".into(), self.classifier.weight.view().into_dyn()));
        out.push(("classifier.bias".into(), self.classifier.bias.view().into_dyn()));
        out
    }

    /// Mutable views in the same order as [`ModelParams::named_params`].
    pub fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = vec![self.embedding.view_mut().into_dyn()];
        out.extend(self.note_encoder.params_mut());
        out.extend(self.code_encoder.params_mut());
        for h in &mut self.heads {
            out.push(h.w_note.view_mut().into_dyn());
            out.push(h.w_code.view_mut().into_dyn());
        }
        out.push(self.classifier.weight.view_mut().into_dyn());
        out.push(self.classifier.bias.view_mut().into_dyn());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_params().iter().all(|(_, a)| a.iter().all(|x| x.is_finite()))
    }
}

/// Token-level note representation, `(d_note × t)`; columns past `valid_len` are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct NoteEncoding {
    pub h_note: Array2<f64>,
    pub valid_len: usize,
}

/// Pooled code representations, one row per code in label-space order.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeEncoding {
    pub h_code: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualLaat {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Mean binary cross-entropy over every (note, code) cell, computed from logits.
pub fn bce_with_logits(logits: &Array2<f64>, targets: &Array2<bool>) -> Result<f64> {
    if logits.dim() != targets.dim() {
        return Err(Error::Shape(format!("logits {:?} vs targets {:?}", logits.dim(), targets.dim())));
    }
    if logits.iter().any(|x| x.is_nan()) {
        return Err(Error::Numerical("NaN logit".into()));
    }
    let total: f64 = logits
        .iter()
        .zip(targets.iter())
        .map(|(&x, &y)| x.max(0.0) - if y { x } else { 0.0 } + (-x.abs()).exp().ln_1p())
        .sum();
    Ok(total / logits.len().max(1) as f64)
}

impl DualLaat {
    pub fn new(config: ModelConfig, embeddings: EmbeddingTable, rng: &mut impl Rng) -> Result<Self> {
        let params = ModelParams::new(&config, embeddings, rng)?;
        Ok(Self { config, params })
    }

    fn embed(&self, ids: &[u32], limit: usize) -> Array2<f64> {
        let ids: Vec<usize> = ids.iter().take(limit).map(|&i| i as usize).collect();
        self.params.embedding.select(Axis(0), &ids).reversed_axes()
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        let v = self.params.embedding.nrows() as u32;
        match ids.iter().find(|&&i| i >= v) {
            Some(bad) => Err(Error::Shape(format!("token id {bad} outside vocabulary of {v}"))),
            None => Ok(()),
        }
    }

    /// Number of leading non-padding tokens after truncation.
    fn valid_len(ids: &[u32], limit: usize) -> usize {
        ids.iter().take(limit).take_while(|&&i| i != PAD).count()
    }

    fn embed_valid(&self, ids: &[u32], limit: usize) -> Result<Array2<f64>> {
        self.check_ids(ids)?;
        let n = Self::valid_len(ids, limit);
        if n == 0 {
            return Err(Error::Empty("sequence has no non-padding tokens".into()));
        }
        Ok(self.embed(&ids[..n], n))
    }

    /// Encodes one note in eval mode. Trailing padding is masked out.
    pub fn encode_note(&self, ids: &[u32]) -> Result<NoteEncoding> {
        let limit = self.config.max_note_tokens;
        let total = ids.len().min(limit);
        let x = self.embed_valid(ids, limit)?;
        let valid_len = x.ncols();
        let (mut out, _) = self.params.note_encoder.forward::<ChaCha8Rng>(&[x.view()], 0.0, None)?;
        let mut h_note = Array2::zeros((self.config.d_note(), total));
        h_note.slice_mut(ndarray::s![.., ..valid_len]).assign(&out.pop().expect("one output"));
        Ok(NoteEncoding { h_note, valid_len })
    }

    /// Encodes and mean-pools code descriptions in eval mode.
    pub fn encode_codes(&self, descriptions: &[&[u32]]) -> Result<CodeEncoding> {
        let limit = self.config.max_code_tokens;
        let xs = descriptions
            .iter()
            .map(|d| self.embed_valid(d, limit))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
        let (out, _) = self.params.code_encoder.forward::<ChaCha8Rng>(&views, 0.0, None)?;
        Ok(CodeEncoding {
            h_code: stack_pooled(&out, self.config.d_note()),
        })
    }

    /// Probability matrix `(notes × codes)` in eval mode.
    ///
    /// Codes are processed in slices of at most `chunk` so memory stays bounded for
    /// large code sets; the result does not depend on `chunk`.
    pub fn predict(&self, notes: &[&[u32]], descriptions: &[&[u32]], chunk: usize) -> Result<Array2<f64>> {
        let chunk = chunk.max(1);
        let mut h_codes = Vec::new();
        for part in descriptions.chunks(chunk) {
            h_codes.push(self.encode_codes(part)?.h_code);
        }
        let projections: Vec<Vec<Array2<f64>>> = h_codes
            .iter()
            .map(|h| self.params.heads.iter().map(|head| head.project_codes(h)).collect())
            .collect();
        let mut out = Array2::zeros((notes.len(), descriptions.len()));
        for (i, ids) in notes.iter().enumerate() {
            let enc = self.encode_note(ids)?;
            let mut col = 0;
            for proj in &projections {
                let (logits, _) = note_logits(
                    enc.h_note.view(),
                    enc.valid_len,
                    proj,
                    &self.params.heads,
                    &self.params.classifier,
                );
                for (j, x) in logits.iter().enumerate() {
                    out[[i, col + j]] = sigmoid(*x);
                }
                col += logits.len();
            }
        }
        Ok(out)
    }

    /// Mean BCE loss of a batch and its gradient with respect to every parameter.
    ///
    /// `rng` enables dropout (train mode); `None` evaluates deterministically.
    pub fn loss_and_grad(
        &self,
        notes: &[&[u32]],
        descriptions: &[&[u32]],
        targets: &Array2<bool>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, ModelParams)> {
        let (n_notes, n_codes) = targets.dim();
        if notes.len() != n_notes || descriptions.len() != n_codes {
            return Err(Error::Shape(format!(
                "{} notes × {} codes against targets {:?}",
                notes.len(),
                descriptions.len(),
                targets.dim()
            )));
        }
        let p = &self.params;
        let rate = self.config.encoder.dropout;
        let d = self.config.d_note();
        let mut rng = rng;

        let code_x = descriptions
            .iter()
            .map(|ids| self.embed_valid(ids, self.config.max_code_tokens))
            .collect::<Result<Vec<_>>>()?;
        let code_views: Vec<_> = code_x.iter().map(|x| x.view()).collect();
        let (code_out, code_cache) = p.code_encoder.forward(&code_views, rate, rng.as_deref_mut())?;
        let h_code = stack_pooled(&code_out, d);
        let projections: Vec<Array2<f64>> = p.heads.iter().map(|h| h.project_codes(&h_code)).collect();

        let note_ids: Vec<&[u32]> = notes
            .iter()
            .map(|ids| {
                self.check_ids(ids)?;
                let n = Self::valid_len(ids, self.config.max_note_tokens);
                Ok(&ids[..n])
            })
            .collect::<Result<_>>()?;
        let note_x = note_ids
            .iter()
            .map(|ids| self.embed_valid(ids, usize::MAX))
            .collect::<Result<Vec<_>>>()?;
        let note_views: Vec<_> = note_x.iter().map(|x| x.view()).collect();
        let (h_notes, note_cache) = p.note_encoder.forward(&note_views, rate, rng.as_deref_mut())?;

        let mut logits = Array2::zeros((n_notes, n_codes));
        let mut attn_caches = Vec::with_capacity(n_notes);
        for (i, h) in h_notes.iter().enumerate() {
            let (l, cache) = note_logits(h.view(), h.ncols(), &projections, &p.heads, &p.classifier);
            logits.row_mut(i).assign(&l);
            attn_caches.push(cache);
        }
        let loss = bce_with_logits(&logits, targets)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss is {loss}")));
        }

        let scale = 1.0 / (n_notes * n_codes) as f64;
        let mut d_logits = logits.mapv(sigmoid);
        d_logits.zip_mut_with(targets, |g, &y| *g = (*g - if y { 1.0 } else { 0.0 }) * scale);

        let mut grads = p.zeros_like();
        let mut d_proj: Vec<Array2<f64>> = projections.iter().map(|x| Array2::zeros(x.raw_dim())).collect();
        let mut d_h_notes = Vec::with_capacity(n_notes);
        {
            let mut ag = AttentionGrads {
                heads: &mut grads.heads,
                classifier: &mut grads.classifier,
                codes_proj: &mut d_proj,
            };
            for (i, h) in h_notes.iter().enumerate() {
                d_h_notes.push(note_logits_backward(
                    h.view(),
                    &attn_caches[i],
                    d_logits.row(i),
                    &projections,
                    &p.heads,
                    &p.classifier,
                    &mut ag,
                ));
            }
        }
        let d_note_x = p.note_encoder.backward(&note_cache, d_h_notes, &mut grads.note_encoder);
        for (ids, dx) in note_ids.iter().zip(&d_note_x) {
            scatter_rows(&mut grads.embedding, ids, dx.view());
        }

        let d_h_code = codes_backward(&h_code, &projections, d_proj, &p.heads, &mut grads.heads);
        self.pool_backward(&code_cache, &code_out, &d_h_code, descriptions, &mut grads)?;
        grads.embedding.row_mut(PAD as usize).fill(0.0);
        Ok((loss, grads))
    }

    fn pool_backward(
        &self,
        cache: &EncoderCache,
        outputs: &[Array2<f64>],
        d_h_code: &Array2<f64>,
        descriptions: &[&[u32]],
        grads: &mut ModelParams,
    ) -> Result<()> {
        let d_out: Vec<Array2<f64>> = outputs
            .iter()
            .zip(d_h_code.axis_iter(Axis(0)))
            .map(|(o, g)| {
                let n = o.ncols() as f64;
                let col = (&g / n).insert_axis(Axis(1));
                col.broadcast(o.raw_dim()).expect("column broadcast").to_owned()
            })
            .collect();
        let d_x = self.params.code_encoder.backward(cache, d_out, &mut grads.code_encoder);
        for (ids, dx) in descriptions.iter().zip(&d_x) {
            let n = Self::valid_len(ids, self.config.max_code_tokens);
            scatter_rows(&mut grads.embedding, &ids[..n], dx.view());
        }
        Ok(())
    }

    /// Mean BCE loss only, in eval mode.
    pub fn loss(&self, notes: &[&[u32]], descriptions: &[&[u32]], targets: &Array2<bool>) -> Result<f64> {
        let probs = self.predict(notes, descriptions, usize::MAX)?;
        let logits = probs.mapv(|p: f64| (p / (1.0 - p)).ln());
        if logits.iter().any(|x| !x.is_finite()) {
            return self.loss_and_grad(notes, descriptions, targets, None).map(|(l, _)| l);
        }
        bce_with_logits(&logits, targets)
    }
}

fn stack_pooled(encoded: &[Array2<f64>], d: usize) -> Array2<f64> {
    let mut h = Array2::zeros((encoded.len(), d));
    for (mut row, e) in h.axis_iter_mut(Axis(0)).zip(encoded) {
        row.assign(&mean_pool(e));
    }
    h
}

fn scatter_rows(table_grad: &mut Array2<f64>, ids: &[u32], d_x: ArrayView2<'_, f64>) {
    for (t, &id) in ids.iter().enumerate() {
        if id != PAD {
            let mut row = table_grad.row_mut(id as usize);
            row += &d_x.column(t);
        }
    }
}

/// Probabilities from a loss-free forward, exposed for callers holding logits.
pub fn probabilities(logits: &Array1<f64>) -> Array1<f64> {
    logits.mapv(sigmoid)
}
