//! Dual label-wise attention between code and note representations.
//!
//! For each head, codes attend over note tokens:
//!
//! ```text
//! A = softmax_t( tanh(H_code · W_code) · tanh(W_note · H_note) )     (|L| × t)
//! J = H_note · Aᵀ                                                    (d_note × |L|)
//! ```
//!
//! Heads are concatenated along the feature axis and a single affine map shared
//! by every code turns each code's column into a logit.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{masked_softmax_rows, outer, sigmoid, softmax_rows_backward, tanh_backward_inplace, xavier, xavier_vec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    /// `(d_shared × d_note)`
    pub w_note: Array2<f64>,
    /// `(d_code × d_shared)`
    pub w_code: Array2<f64>,
}

impl AttentionHead {
    pub fn new(d_note: usize, d_code: usize, d_shared: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_note: xavier(d_shared, d_note, rng),
            w_code: xavier(d_code, d_shared, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_note: Array2::zeros(self.w_note.raw_dim()),
            w_code: Array2::zeros(self.w_code.raw_dim()),
        }
    }

    /// `tanh(H_code · W_code)`, shared by every note scored against the same codes.
    pub fn project_codes(&self, h_code: &Array2<f64>) -> Array2<f64> {
        h_code.dot(&self.w_code).mapv_into(f64::tanh)
    }
}

/// Shared affine map from a code's multi-head note summary to its logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub weight: Array1<f64>,
    pub bias: Array1<f64>,
}

impl Classifier {
    pub fn new(input: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: xavier_vec(input, 1, rng),
            bias: Array1::zeros(1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array1::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(1),
        }
    }
}

/// Attention for one note against one label space.
#[derive(Clone, Debug, PartialEq)]
pub struct DualAttentionOutput {
    /// Per head, `(|L| × t)`; masked token positions hold exactly 0.
    pub attention: Vec<Array2<f64>>,
    /// `(M·d_note × |L|)`
    pub j_mha: Array2<f64>,
}

fn check_shapes(h_note: &ArrayView2<f64>, valid_len: usize, h_code: &Array2<f64>, heads: &[AttentionHead]) -> Result<()> {
    if valid_len == 0 {
        return Err(Error::Empty("note has no valid token positions".into()));
    }
    if valid_len > h_note.ncols() {
        return Err(Error::Shape(format!("valid length {valid_len} exceeds {} columns", h_note.ncols())));
    }
    if heads.is_empty() {
        return Err(Error::Config("at least one attention head is required".into()));
    }
    for head in heads {
        if head.w_note.ncols() != h_note.nrows() || head.w_code.nrows() != h_code.ncols() || head.w_note.nrows() != head.w_code.ncols() {
            return Err(Error::Shape(format!(
                "head W_note {:?} / W_code {:?} incompatible with H_note {:?} and H_code {:?}",
                head.w_note.dim(),
                head.w_code.dim(),
                h_note.dim(),
                h_code.dim()
            )));
        }
    }
    Ok(())
}

/// Computes every head's attention and the concatenated note summaries.
///
/// `h_note` is `(d_note × t)` with the first `valid_len` columns real tokens;
/// `h_code` is `(|L| × d_code)`.
pub fn attend(
    h_note: ArrayView2<'_, f64>,
    valid_len: usize,
    h_code: &Array2<f64>,
    heads: &[AttentionHead],
) -> Result<DualAttentionOutput> {
    check_shapes(&h_note, valid_len, h_code, heads)?;
    let mut attention = Vec::with_capacity(heads.len());
    let mut summaries = Vec::with_capacity(heads.len());
    for head in heads {
        let codes = head.project_codes(h_code);
        let notes = head.w_note.dot(&h_note).mapv_into(f64::tanh);
        let mut a = codes.dot(&notes);
        masked_softmax_rows(&mut a, valid_len);
        summaries.push(h_note.dot(&a.t()));
        attention.push(a);
    }
    let views: Vec<_> = summaries.iter().map(|j| j.view()).collect();
    let j_mha = concatenate(Axis(0), &views).expect("equal column counts");
    Ok(DualAttentionOutput { attention, j_mha })
}

/// `sigmoid(w · J[:, l] + b)` for every code column `l`; returns (logits, probabilities).
pub fn classify(j_mha: &Array2<f64>, classifier: &Classifier) -> Result<(Array1<f64>, Array1<f64>)> {
    if classifier.weight.len() != j_mha.nrows() {
        return Err(Error::Shape(format!(
            "classifier expects {} features, got {}",
            classifier.weight.len(),
            j_mha.nrows()
        )));
    }
    let logits = j_mha.t().dot(&classifier.weight) + classifier.bias[0];
    let probs = logits.mapv(sigmoid);
    Ok((logits, probs))
}

/// Saved activations of one note's pass through all heads.
pub(crate) struct NoteAttentionCache {
    heads: Vec<HeadCache>,
}

struct HeadCache {
    notes_proj: Array2<f64>,
    attention: Array2<f64>,
    /// `H_noteᵀ · w_m`, the classifier weight slice of this head pulled back to tokens.
    token_scores: Array1<f64>,
}

/// Logits of one note for all codes, without materializing `J`.
///
/// Uses `w · J_m = (w_mᵀ H_note) · A_mᵀ`. `codes_proj[m]` is head `m`'s
/// `tanh(H_code · W_code)`.
pub(crate) fn note_logits(
    h_note: ArrayView2<'_, f64>,
    valid_len: usize,
    codes_proj: &[Array2<f64>],
    heads: &[AttentionHead],
    classifier: &Classifier,
) -> (Array1<f64>, NoteAttentionCache) {
    let d_note = h_note.nrows();
    let n_codes = codes_proj[0].nrows();
    let mut logits = Array1::from_elem(n_codes, classifier.bias[0]);
    let mut caches = Vec::with_capacity(heads.len());
    for (m, (head, codes)) in heads.iter().zip(codes_proj).enumerate() {
        let notes_proj = head.w_note.dot(&h_note).mapv_into(f64::tanh);
        let mut a = codes.dot(&notes_proj);
        masked_softmax_rows(&mut a, valid_len);
        let w_m = classifier.weight.slice(s![m * d_note..(m + 1) * d_note]);
        let token_scores = h_note.t().dot(&w_m);
        logits += &a.dot(&token_scores);
        caches.push(HeadCache {
            notes_proj,
            attention: a,
            token_scores,
        });
    }
    (logits, NoteAttentionCache { heads: caches })
}

/// Gradients accumulated across the notes of a batch.
pub(crate) struct AttentionGrads<'a> {
    pub heads: &'a mut [AttentionHead],
    pub classifier: &'a mut Classifier,
    /// Per head, gradient w.r.t. `tanh(H_code · W_code)`.
    pub codes_proj: &'a mut [Array2<f64>],
}

/// Backward of [`note_logits`]; returns the gradient w.r.t. `h_note`.
pub(crate) fn note_logits_backward(
    h_note: ArrayView2<'_, f64>,
    cache: &NoteAttentionCache,
    d_logits: ArrayView1<'_, f64>,
    codes_proj: &[Array2<f64>],
    heads: &[AttentionHead],
    classifier: &Classifier,
    grads: &mut AttentionGrads<'_>,
) -> Array2<f64> {
    let d_note = h_note.nrows();
    let mut d_h = Array2::<f64>::zeros(h_note.raw_dim());
    grads.classifier.bias[0] += d_logits.sum();
    for (m, (hc, head)) in cache.heads.iter().zip(heads).enumerate() {
        let w_m = classifier.weight.slice(s![m * d_note..(m + 1) * d_note]);
        // logits_m = A · u,  u = H_noteᵀ w_m
        let d_u = hc.attention.t().dot(&d_logits);
        {
            let mut gw = grads.classifier.weight.slice_mut(s![m * d_note..(m + 1) * d_note]);
            gw += &h_note.dot(&d_u);
        }
        d_h += &outer(w_m, d_u.view());
        let d_a = outer(d_logits, hc.token_scores.view());
        let d_scores = softmax_rows_backward(&hc.attention, &d_a);
        ndarray::linalg::general_mat_mul(1.0, &d_scores, &hc.notes_proj.t(), 1.0, &mut grads.codes_proj[m]);
        let mut d_notes_proj = codes_proj[m].t().dot(&d_scores);
        tanh_backward_inplace(&mut d_notes_proj, &hc.notes_proj);
        ndarray::linalg::general_mat_mul(1.0, &d_notes_proj, &h_note.t(), 1.0, &mut grads.heads[m].w_note);
        ndarray::linalg::general_mat_mul(1.0, &head.w_note.t(), &d_notes_proj, 1.0, &mut d_h);
    }
    d_h
}

/// Backward through `tanh(H_code · W_code)` once all notes have contributed.
/// Returns the gradient w.r.t. `H_code`.
pub(crate) fn codes_backward(
    h_code: &Array2<f64>,
    codes_proj: &[Array2<f64>],
    mut d_codes_proj: Vec<Array2<f64>>,
    heads: &[AttentionHead],
    grad_heads: &mut [AttentionHead],
) -> Array2<f64> {
    let mut d_h_code = Array2::<f64>::zeros(h_code.raw_dim());
    for (m, d_proj) in d_codes_proj.iter_mut().enumerate() {
        tanh_backward_inplace(d_proj, &codes_proj[m]);
        ndarray::linalg::general_mat_mul(1.0, &h_code.t(), d_proj, 1.0, &mut grad_heads[m].w_code);
        ndarray::linalg::general_mat_mul(1.0, d_proj, &heads[m].w_code.t(), 1.0, &mut d_h_code);
    }
    d_h_code
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_token_attention_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let heads = vec![AttentionHead::new(3, 3, 3, &mut rng)];
        let out = attend(random(3, 1, &mut rng).view(), 1, &random(4, 3, &mut rng), &heads).unwrap();
        assert!(out.attention[0].iter().all(|&a| a == 1.0));
    }

    #[test]
    fn identical_columns_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let heads = vec![AttentionHead::new(2, 2, 2, &mut rng)];
        let h_note = array![[0.3, 0.3], [-0.7, -0.7]];
        let out = attend(h_note.view(), 2, &random(3, 2, &mut rng), &heads).unwrap();
        for a in out.attention[0].iter() {
            assert!((a - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn explicit_loop_oracle() {
        // 2 codes × 3 tokens, one head, d = 2.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = AttentionHead::new(2, 2, 2, &mut rng);
        let h_note = random(2, 3, &mut rng);
        let h_code = random(2, 2, &mut rng);
        let out = attend(h_note.view(), 3, &h_code, std::slice::from_ref(&head)).unwrap();
        for l in 0..2 {
            let mut scores = [0.0f64; 3];
            for (t, score) in scores.iter_mut().enumerate() {
                for k in 0..2 {
                    let mut c = 0.0;
                    let mut n = 0.0;
                    for i in 0..2 {
                        c += h_code[[l, i]] * head.w_code[[i, k]];
                        n += head.w_note[[k, i]] * h_note[[i, t]];
                    }
                    *score += c.tanh() * n.tanh();
                }
            }
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for t in 0..3 {
                assert!((out.attention[0][[l, t]] - scores[t].exp() / z).abs() < 1e-12);
            }
            for i in 0..2 {
                let j: f64 = (0..3).map(|t| h_note[[i, t]] * scores[t].exp() / z).sum();
                assert!((out.j_mha[[i, l]] - j).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_positions_get_zero_and_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let heads: Vec<_> = (0..2).map(|_| AttentionHead::new(4, 3, 5, &mut rng)).collect();
        let out = attend(random(4, 6, &mut rng).view(), 4, &random(7, 3, &mut rng), &heads).unwrap();
        assert_eq!(out.j_mha.dim(), (8, 7));
        for a in &out.attention {
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&x| x >= 0.0));
                assert_eq!(row[4], 0.0);
                assert_eq!(row[5], 0.0);
            }
        }
    }

    #[test]
    fn zero_valid_positions_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let heads = vec![AttentionHead::new(2, 2, 2, &mut rng)];
        assert!(attend(random(2, 3, &mut rng).view(), 0, &random(1, 2, &mut rng), &heads).is_err());
    }

    #[test]
    fn zero_classifier_gives_one_half() {
        let j = array![[1.0, -2.0], [0.5, 3.0]];
        let c = Classifier {
            weight: Array1::zeros(2),
            bias: Array1::zeros(1),
        };
        let (_, p) = classify(&j, &c).unwrap();
        assert_eq!(p, array![0.5, 0.5]);
    }

    #[test]
    fn classifier_hand_computation() {
        let j = array![[1.0, -2.0], [0.5, 3.0]];
        let c = Classifier {
            weight: array![0.4, -0.2],
            bias: array![0.1],
        };
        let (logits, p) = classify(&j, &c).unwrap();
        let expect = [0.4 - 0.1 + 0.1, -0.8 - 0.6 + 0.1];
        for l in 0..2 {
            assert!((logits[l] - expect[l]).abs() < 1e-15);
            assert!((p[l] - 1.0 / (1.0 + (-expect[l]).exp())).abs() < 1e-15);
        }
    }

    #[test]
    fn growing_bias_drives_outputs_to_one() {
        let j = array![[1.0], [-1.0]];
        let mut prev = 0.0;
        for b in [0.0, 1.0, 5.0, 20.0, 40.0] {
            let c = Classifier {
                weight: array![0.3, 0.3],
                bias: array![b],
            };
            let p = classify(&j, &c).unwrap().1[0];
            assert!(p >= prev);
            prev = p;
        }
        assert!(prev > 1.0 - 1e-12);
    }

    #[test]
    fn classifier_dimension_mismatch() {
        let c = Classifier {
            weight: Array1::zeros(3),
            bias: Array1::zeros(1),
        };
        assert!(classify(&Array2::zeros((2, 4)), &c).is_err());
    }

    #[test]
    fn fast_logits_match_attend_then_classify() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let heads: Vec<_> = (0..3).map(|_| AttentionHead::new(4, 4, 4, &mut rng)).collect();
        let classifier = Classifier::new(12, &mut rng);
        let h_note = random(4, 5, &mut rng);
        let h_code = random(6, 4, &mut rng);
        let out = attend(h_note.view(), 5, &h_code, &heads).unwrap();
        let (slow, _) = classify(&out.j_mha, &classifier).unwrap();
        let proj: Vec<_> = heads.iter().map(|h| h.project_codes(&h_code)).collect();
        let (fast, _) = note_logits(h_note.view(), 5, &proj, &heads, &classifier);
        for (a, b) in slow.iter().zip(fast.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
