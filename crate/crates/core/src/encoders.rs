//! Sequence encoders for notes and code descriptions.
//!
//! Both map an embedded sequence `(d_emb × t)` to one output column per token
//! `(d_out × t)`. The convolutional encoder is a single same-length 1-D
//! convolution with tanh; the recurrent encoder is a stack of (bi)directional
//! GRU layers. Every layer has a hand-written backward pass.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{dropout_mask, sigmoid, tanh_backward_inplace, xavier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Cnn,
    Rnn,
}

impl std::str::FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(EncoderKind::Cnn),
            "rnn" | "gru" => Ok(EncoderKind::Rnn),
            other => Err(format!("unknown encoder {other:?} (expected cnn or rnn)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub cnn_filters: usize,
    pub cnn_width: usize,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    pub bidirectional: bool,
    /// Read `rnn_hidden` as the size after direction concatenation instead of per direction.
    pub rnn_hidden_is_total: bool,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::rnn()
    }
}

impl EncoderConfig {
    /// 256 filters of width 10, dropout 0.2.
    pub fn cnn() -> Self {
        Self {
            kind: EncoderKind::Cnn,
            cnn_filters: 256,
            cnn_width: 10,
            rnn_hidden: 512,
            rnn_layers: 1,
            bidirectional: true,
            rnn_hidden_is_total: false,
            dropout: 0.2,
        }
    }

    /// One bidirectional GRU layer with 512 units per direction, dropout 0.3.
    pub fn rnn() -> Self {
        Self {
            kind: EncoderKind::Rnn,
            dropout: 0.3,
            ..Self::cnn()
        }
    }

    fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn hidden_per_direction(&self) -> usize {
        if self.rnn_hidden_is_total {
            self.rnn_hidden / self.directions()
        } else {
            self.rnn_hidden
        }
    }

    /// Width of each output column.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            EncoderKind::Cnn => self.cnn_filters,
            EncoderKind::Rnn => self.hidden_per_direction() * self.directions(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let ok = match self.kind {
            EncoderKind::Cnn => self.cnn_filters > 0 && self.cnn_width > 0,
            EncoderKind::Rnn => self.hidden_per_direction() > 0 && self.rnn_layers > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("encoder dimensions must be positive".into()))
        }
    }
}

/// One GRU direction, gates stacked as `[reset; update; candidate]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_input: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub b_input: Array1<f64>,
    pub b_hidden: Array1<f64>,
}

impl GruCell {
    fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_input: xavier(3 * hidden, input, rng),
            w_hidden: xavier(3 * hidden, hidden, rng),
            b_input: Array1::zeros(3 * hidden),
            b_hidden: Array1::zeros(3 * hidden),
        }
    }

    fn hidden(&self) -> usize {
        self.w_hidden.ncols()
    }

    fn zeros_like(&self) -> Self {
        Self {
            w_input: Array2::zeros(self.w_input.raw_dim()),
            w_hidden: Array2::zeros(self.w_hidden.raw_dim()),
            b_input: Array1::zeros(self.b_input.raw_dim()),
            b_hidden: Array1::zeros(self.b_hidden.raw_dim()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruLayer {
    pub forward: GruCell,
    pub backward: Option<GruCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvEncoder {
    /// `(filters × width·d_in)`; column `j·d_in + i` weighs input channel `i` at tap `j`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Encoder {
    Cnn(ConvEncoder),
    Rnn(Vec<GruLayer>),
}

/// Everything the backward pass needs from one batched forward call.
pub struct EncoderCache {
    lens: Vec<usize>,
    inner: CacheInner,
}

enum CacheInner {
    Cnn {
        cols: Array2<f64>,
        out: Array2<f64>,
        input_masks: Option<Vec<Array2<f64>>>,
    },
    Rnn {
        sequences: Vec<Vec<LayerCache>>,
        output_masks: Option<Vec<Array2<f64>>>,
    },
}

struct LayerCache {
    forward: DirectionCache,
    backward: Option<DirectionCache>,
}

struct DirectionCache {
    input: Array2<f64>,
    reset: Array2<f64>,
    update: Array2<f64>,
    candidate: Array2<f64>,
    hidden_candidate: Array2<f64>,
    prev: Array2<f64>,
}

impl Encoder {
    pub fn new(config: &EncoderConfig, d_in: usize, rng: &mut impl Rng) -> Self {
        match config.kind {
            EncoderKind::Cnn => Encoder::Cnn(ConvEncoder {
                weight: xavier(config.cnn_filters, config.cnn_width * d_in, rng),
                bias: Array1::zeros(config.cnn_filters),
                width: config.cnn_width,
            }),
            EncoderKind::Rnn => {
                let hidden = config.hidden_per_direction();
                let mut input = d_in;
                let layers = (0..config.rnn_layers)
                    .map(|_| {
                        let layer = GruLayer {
                            forward: GruCell::new(input, hidden, rng),
                            backward: config.bidirectional.then(|| GruCell::new(input, hidden, rng)),
                        };
                        input = hidden * config.directions();
                        layer
                    })
                    .collect();
                Encoder::Rnn(layers)
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Encoder::Cnn(c) => Encoder::Cnn(ConvEncoder {
                weight: Array2::zeros(c.weight.raw_dim()),
                bias: Array1::zeros(c.bias.raw_dim()),
                width: c.width,
            }),
            Encoder::Rnn(layers) => Encoder::Rnn(
                layers
                    .iter()
                    .map(|l| GruLayer {
                        forward: l.forward.zeros_like(),
                        backward: l.backward.as_ref().map(GruCell::zeros_like),
                    })
                    .collect(),
            ),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Cnn(c) => c.weight.nrows(),
            Encoder::Rnn(layers) => {
                let last = layers.last().expect("at least one layer");
                last.forward.hidden() * if last.backward.is_some() { 2 } else { 1 }
            }
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, ArrayViewD<'_, f64>)> {
        match self {
            Encoder::Cnn(c) => vec![
                (format!("{prefix}.conv.weight"), c.weight.view().into_dyn()),
                (format!("{prefix}.conv.bias"), c.bias.view().into_dyn()),
            ],
            Encoder::Rnn(layers) => {
                let mut out = Vec::new();
                for (i, l) in layers.iter().enumerate() {
                    let dirs = std::iter::once(("fwd", &l.forward)).chain(l.backward.as_ref().map(|b| ("bwd", b)));
                    for (d, cell) in dirs {
                        let p = format!("{prefix}.gru{i}.{d}");
                        out.push((format!("{p}.w_input"), cell.w_input.view().into_dyn()));
                        out.push((format!("{p}.w_hidden"), cell.w_hidden.view().into_dyn()));
                        out.push((format!("{p}.b_input"), cell.b_input.view().into_dyn()));
                        out.push((format!("{p}.b_hidden"), cell.b_hidden.view().into_dyn()));
                    }
                }
                out
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        match self {
            Encoder::Cnn(c) => vec![c.weight.view_mut().into_dyn(), c.bias.view_mut().into_dyn()],
            Encoder::Rnn(layers) => {
                let mut out = Vec::new();
                for l in layers.iter_mut() {
                    let dirs = std::iter::once(&mut l.forward).chain(l.backward.as_mut());
                    for cell in dirs {
                        out.push(cell.w_input.view_mut().into_dyn());
                        out.push(cell.w_hidden.view_mut().into_dyn());
                        out.push(cell.b_input.view_mut().into_dyn());
                        out.push(cell.b_hidden.view_mut().into_dyn());
                    }
                }
                out
            }
        }
    }

    /// Encodes a batch of sequences, each `(d_in × t_i)` with `t_i ≥ 1`.
    ///
    /// With `rng` set, dropout at `rate` is applied: on the input embeddings for the
    /// convolutional encoder, on the output columns for the recurrent one.
    pub fn forward<R: Rng>(
        &self,
        inputs: &[ArrayView2<'_, f64>],
        rate: f64,
        rng: Option<&mut R>,
    ) -> Result<(Vec<Array2<f64>>, EncoderCache)> {
        if let Some(i) = inputs.iter().position(|x| x.ncols() == 0) {
            return Err(Error::Empty(format!("sequence {i} has no valid tokens")));
        }
        let lens: Vec<usize> = inputs.iter().map(|x| x.ncols()).collect();
        let rng = rng.filter(|_| rate > 0.0);
        match self {
            Encoder::Cnn(conv) => {
                let (input_masks, dropped): (Option<Vec<Array2<f64>>>, Option<Vec<Array2<f64>>>) = match rng {
                    Some(rng) => {
                        let masks: Vec<_> = inputs.iter().map(|x| dropout_mask(x.dim(), rate, rng)).collect();
                        let dropped = inputs.iter().zip(&masks).map(|(x, m)| x * m).collect();
                        (Some(masks), Some(dropped))
                    }
                    None => (None, None),
                };
                let views: Vec<ArrayView2<f64>> = match &dropped {
                    Some(d) => d.iter().map(|a| a.view()).collect(),
                    None => inputs.to_vec(),
                };
                let cols = im2col(&views, conv.width);
                let mut out = conv.weight.dot(&cols);
                out += &conv.bias.view().insert_axis(Axis(1));
                out.mapv_inplace(f64::tanh);
                let outputs = split_columns(&out, &lens);
                Ok((
                    outputs,
                    EncoderCache {
                        lens,
                        inner: CacheInner::Cnn {
                            cols,
                            out,
                            input_masks,
                        },
                    },
                ))
            }
            Encoder::Rnn(layers) => {
                let mut outputs = Vec::with_capacity(inputs.len());
                let mut sequences = Vec::with_capacity(inputs.len());
                for x in inputs {
                    let mut current = x.to_owned();
                    let mut caches = Vec::with_capacity(layers.len());
                    for layer in layers {
                        let (fwd, fwd_cache) = gru_direction(&layer.forward, current.view(), false);
                        let (out, bwd_cache) = match &layer.backward {
                            Some(cell) => {
                                let (bwd, c) = gru_direction(cell, current.view(), true);
                                (concatenate![Axis(0), fwd, bwd], Some(c))
                            }
                            None => (fwd, None),
                        };
                        caches.push(LayerCache {
                            forward: fwd_cache,
                            backward: bwd_cache,
                        });
                        current = out;
                    }
                    outputs.push(current);
                    sequences.push(caches);
                }
                let output_masks = rng.map(|rng| {
                    outputs
                        .iter_mut()
                        .map(|o| {
                            let m = dropout_mask(o.dim(), rate, rng);
                            *o *= &m;
                            m
                        })
                        .collect()
                });
                Ok((
                    outputs,
                    EncoderCache {
                        lens,
                        inner: CacheInner::Rnn {
                            sequences,
                            output_masks,
                        },
                    },
                ))
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradients.
    pub fn backward(&self, cache: &EncoderCache, d_outputs: Vec<Array2<f64>>, grads: &mut Encoder) -> Vec<Array2<f64>> {
        match (self, &cache.inner, grads) {
            (
                Encoder::Cnn(conv),
                CacheInner::Cnn {
                    cols,
                    out,
                    input_masks,
                },
                Encoder::Cnn(g),
            ) => {
                let views: Vec<ArrayView2<f64>> = d_outputs.iter().map(|d| d.view()).collect();
                let mut d_pre = concatenate(Axis(1), &views).expect("matching rows");
                tanh_backward_inplace(&mut d_pre, out);
                ndarray::linalg::general_mat_mul(1.0, &d_pre, &cols.t(), 1.0, &mut g.weight);
                g.bias += &d_pre.sum_axis(Axis(1));
                let d_cols = conv.weight.t().dot(&d_pre);
                let d_in = conv.weight.ncols() / conv.width;
                let mut d_inputs = col2im(&d_cols, &cache.lens, d_in, conv.width);
                if let Some(masks) = input_masks {
                    for (d, m) in d_inputs.iter_mut().zip(masks) {
                        *d *= m;
                    }
                }
                d_inputs
            }
            (
                Encoder::Rnn(layers),
                CacheInner::Rnn {
                    sequences,
                    output_masks,
                },
                Encoder::Rnn(g_layers),
            ) => {
                let mut d_inputs = Vec::with_capacity(d_outputs.len());
                for (i, mut d_out) in d_outputs.into_iter().enumerate() {
                    if let Some(masks) = output_masks {
                        d_out *= &masks[i];
                    }
                    for ((layer, lc), gl) in layers.iter().zip(&sequences[i]).zip(g_layers.iter_mut()).rev() {
                        let h = layer.forward.hidden();
                        let mut d_x = gru_direction_backward(
                            &layer.forward,
                            &lc.forward,
                            d_out.slice(s![..h, ..]),
                            false,
                            &mut gl.forward,
                        );
                        if let (Some(cell), Some(c), Some(gc)) = (&layer.backward, &lc.backward, gl.backward.as_mut()) {
                            d_x += &gru_direction_backward(cell, c, d_out.slice(s![h.., ..]), true, gc);
                        }
                        d_out = d_x;
                    }
                    d_inputs.push(d_out);
                }
                d_inputs
            }
            _ => panic!("encoder, cache and gradient variants disagree"),
        }
    }
}

/// Same-length zero padding: `(width-1)/2` taps before the token, the rest after.
fn left_pad(width: usize) -> usize {
    (width - 1) / 2
}

fn im2col(inputs: &[ArrayView2<'_, f64>], width: usize) -> Array2<f64> {
    let d = inputs[0].nrows();
    let total: usize = inputs.iter().map(|x| x.ncols()).sum();
    let mut cols = Array2::zeros((width * d, total));
    let left = left_pad(width) as isize;
    let mut offset = 0;
    for x in inputs {
        let t_len = x.ncols() as isize;
        for t in 0..t_len {
            for j in 0..width as isize {
                let src = t + j - left;
                if (0..t_len).contains(&src) {
                    cols.slice_mut(s![j as usize * d..(j as usize + 1) * d, offset + t as usize])
                        .assign(&x.column(src as usize));
                }
            }
        }
        offset += x.ncols();
    }
    cols
}

fn col2im(d_cols: &Array2<f64>, lens: &[usize], d: usize, width: usize) -> Vec<Array2<f64>> {
    let left = left_pad(width) as isize;
    let mut offset = 0;
    lens.iter()
        .map(|&len| {
            let mut dx = Array2::zeros((d, len));
            let t_len = len as isize;
            for t in 0..t_len {
                for j in 0..width as isize {
                    let src = t + j - left;
                    if (0..t_len).contains(&src) {
                        let block = d_cols.slice(s![j as usize * d..(j as usize + 1) * d, offset + t as usize]);
                        let mut col = dx.column_mut(src as usize);
                        col += &block;
                    }
                }
            }
            offset += len;
            dx
        })
        .collect()
}

fn split_columns(all: &Array2<f64>, lens: &[usize]) -> Vec<Array2<f64>> {
    let mut offset = 0;
    lens.iter()
        .map(|&len| {
            let part = all.slice(s![.., offset..offset + len]).to_owned();
            offset += len;
            part
        })
        .collect()
}

/// Runs one GRU direction; output column `t` is the state after reading token `t`.
fn gru_direction(cell: &GruCell, x: ArrayView2<'_, f64>, reverse: bool) -> (Array2<f64>, DirectionCache) {
    let h = cell.hidden();
    let t_len = x.ncols();
    let mut gates_in = cell.w_input.dot(&x);
    gates_in += &cell.b_input.view().insert_axis(Axis(1));

    let mut cache = DirectionCache {
        input: x.to_owned(),
        reset: Array2::zeros((h, t_len)),
        update: Array2::zeros((h, t_len)),
        candidate: Array2::zeros((h, t_len)),
        hidden_candidate: Array2::zeros((h, t_len)),
        prev: Array2::zeros((h, t_len)),
    };
    let mut out = Array2::zeros((h, t_len));
    let mut state = Array1::<f64>::zeros(h);
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    };
    for t in order {
        let mut gh = cell.w_hidden.dot(&state);
        gh += &cell.b_hidden;
        let gi = gates_in.column(t);
        cache.prev.column_mut(t).assign(&state);
        for k in 0..h {
            let r = sigmoid(gi[k] + gh[k]);
            let z = sigmoid(gi[h + k] + gh[h + k]);
            let n = (gi[2 * h + k] + r * gh[2 * h + k]).tanh();
            cache.reset[[k, t]] = r;
            cache.update[[k, t]] = z;
            cache.candidate[[k, t]] = n;
            cache.hidden_candidate[[k, t]] = gh[2 * h + k];
            state[k] = (1.0 - z) * n + z * state[k];
        }
        out.column_mut(t).assign(&state);
    }
    (out, cache)
}

fn gru_direction_backward(
    cell: &GruCell,
    cache: &DirectionCache,
    d_out: ArrayView2<'_, f64>,
    reverse: bool,
    grads: &mut GruCell,
) -> Array2<f64> {
    let h = cell.hidden();
    let t_len = d_out.ncols();
    let mut d_gates_in = Array2::<f64>::zeros((3 * h, t_len));
    let mut d_gates_hidden = Array2::<f64>::zeros((3 * h, t_len));
    let mut carry = Array1::<f64>::zeros(h);
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new(0..t_len)
    } else {
        Box::new((0..t_len).rev())
    };
    let mut d_gh = Array1::<f64>::zeros(3 * h);
    for t in order {
        let mut d_prev = Array1::<f64>::zeros(h);
        for k in 0..h {
            let dh = d_out[[k, t]] + carry[k];
            let r = cache.reset[[k, t]];
            let z = cache.update[[k, t]];
            let n = cache.candidate[[k, t]];
            let hp = cache.prev[[k, t]];
            let dn = dh * (1.0 - z);
            let dz = dh * (hp - n);
            d_prev[k] = dh * z;
            let dn_pre = dn * (1.0 - n * n);
            let dr_pre = dn_pre * cache.hidden_candidate[[k, t]] * r * (1.0 - r);
            let dz_pre = dz * z * (1.0 - z);
            d_gates_in[[k, t]] = dr_pre;
            d_gates_in[[h + k, t]] = dz_pre;
            d_gates_in[[2 * h + k, t]] = dn_pre;
            d_gh[k] = dr_pre;
            d_gh[h + k] = dz_pre;
            d_gh[2 * h + k] = dn_pre * r;
        }
        d_gates_hidden.column_mut(t).assign(&d_gh);
        d_prev += &cell.w_hidden.t().dot(&d_gh);
        carry = d_prev;
    }
    ndarray::linalg::general_mat_mul(1.0, &d_gates_in, &cache.input.t(), 1.0, &mut grads.w_input);
    ndarray::linalg::general_mat_mul(1.0, &d_gates_hidden, &cache.prev.t(), 1.0, &mut grads.w_hidden);
    grads.b_input += &d_gates_in.sum_axis(Axis(1));
    grads.b_hidden += &d_gates_hidden.sum_axis(Axis(1));
    cell.w_input.t().dot(&d_gates_in)
}

/// Column mean over all positions of an encoded description.
pub fn mean_pool(encoded: &Array2<f64>) -> Array1<f64> {
    encoded.mean_axis(Axis(1)).expect("non-empty sequence")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eval(enc: &Encoder, xs: &[ArrayView2<f64>]) -> Vec<Array2<f64>> {
        enc.forward::<ChaCha8Rng>(xs, 0.0, None).unwrap().0
    }

    #[test]
    fn width_one_conv_matches_hand_computation() {
        // 3 input channels, 3 tokens, 2 filters of width 1.
        let conv = Encoder::Cnn(ConvEncoder {
            weight: array![[0.1, -0.2, 0.3], [0.0, 0.5, -0.5]],
            bias: array![0.05, -0.1],
            width: 1,
        });
        let x = array![[1.0, 0.0, 2.0], [0.5, -1.0, 0.0], [0.0, 1.0, 1.0]];
        let out = &eval(&conv, &[x.view()])[0];
        let expected = array![
            [(0.1f64 - 0.1 + 0.05).tanh(), (0.2f64 + 0.3 + 0.05).tanh(), (0.2f64 + 0.3 + 0.05).tanh()],
            [(0.25f64 - 0.1).tanh(), (-0.5f64 - 0.5 - 0.1).tanh(), (-0.5f64 - 0.1).tanh()],
        ];
        for (a, b) in out.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12, "{out:?} vs {expected:?}");
        }
    }

    #[test]
    fn single_token_gives_single_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for config in [EncoderConfig::cnn(), EncoderConfig::rnn()] {
            let config = EncoderConfig {
                cnn_filters: 4,
                rnn_hidden: 3,
                ..config
            };
            let enc = Encoder::new(&config, 5, &mut rng);
            let x = Array2::from_elem((5, 1), 0.3);
            let out = &eval(&enc, &[x.view()])[0];
            assert_eq!(out.dim(), (config.output_dim(), 1));
        }
    }

    #[test]
    fn full_size_cnn_has_256_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::new(&EncoderConfig::cnn(), 100, &mut rng);
        assert_eq!(enc.output_dim(), 256);
        assert_eq!(EncoderConfig::rnn().output_dim(), 1024);
        let total = EncoderConfig {
            rnn_hidden_is_total: true,
            ..EncoderConfig::rnn()
        };
        assert_eq!(total.output_dim(), 512);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::new(&EncoderConfig::cnn(), 4, &mut rng);
        let x = Array2::<f64>::zeros((4, 0));
        assert!(enc.forward::<ChaCha8Rng>(&[x.view()], 0.0, None).is_err());
    }

    #[test]
    fn batch_matches_single_encoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [EncoderKind::Cnn, EncoderKind::Rnn] {
            let config = EncoderConfig {
                kind,
                cnn_filters: 6,
                cnn_width: 3,
                rnn_hidden: 4,
                ..EncoderConfig::default()
            };
            let enc = Encoder::new(&config, 5, &mut rng);
            let a = Array2::from_shape_simple_fn((5, 7), || rng.random_range(-1.0..1.0));
            let b = Array2::from_shape_simple_fn((5, 2), || rng.random_range(-1.0..1.0));
            let alone = eval(&enc, &[a.view()]);
            let together = eval(&enc, &[b.view(), a.view()]);
            for (x, y) in alone[0].iter().zip(together[1].iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let config = EncoderConfig {
            cnn_filters: 4,
            cnn_width: 3,
            dropout: 0.5,
            ..EncoderConfig::cnn()
        };
        let enc = Encoder::new(&config, 6, &mut rng);
        let x = Array2::from_elem((6, 5), 0.4);
        let a = eval(&enc, &[x.view()]);
        let b = eval(&enc, &[x.view()]);
        assert_eq!(a, b);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(9);
        let (c, _) = enc.forward(&[x.view()], 0.5, Some(&mut drop_rng)).unwrap();
        assert_ne!(a, c);
    }
}
