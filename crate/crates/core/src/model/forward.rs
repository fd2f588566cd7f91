//! Traced forward pass of the encoder-decoder.
//!
//! Every sub-layer follows the post-norm order: module, residual addition,
//! layer norm. Each decoder sub-layer records what the decompositions need:
//! its input, the module output before the residual, the pre-norm sum, the
//! layer-norm statistics, the attention weights or feed-forward
//! pre-activations, and its output.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::config::{Activation, ModelConfig, SublayerKind};
use super::weights::{AttentionWeights, FeedForwardWeights, LayerNormWeights, Model, Sublayer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Record of one sub-layer over a whole sequence (rows are positions).
#[derive(Debug, Clone, PartialEq)]
pub struct SublayerTrace<T> {
    pub kind: SublayerKind,
    /// x: sub-layer input.
    pub input: Array2<T>,
    /// ė: module output before the residual connection.
    pub pre_residual: Array2<T>,
    /// ë = ė + x.
    pub pre_norm: Array2<T>,
    /// m: per-position mean of ë.
    pub mean: Array1<T>,
    /// s: per-position standard deviation of ë (population, with ε).
    pub std: Array1<T>,
    /// e: sub-layer output.
    pub output: Array2<T>,
    /// One (queries × keys) weight matrix per head; empty for feed-forward sub-layers.
    pub attention: Vec<Array2<T>>,
    /// ê: feed-forward pre-activations (positions × ffn_dim).
    pub ff_pre_activation: Option<Array2<T>>,
}

/// Decoder trace for one target sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    /// Decoder input ids: the start token followed by the target prefix.
    pub tokens: Vec<u32>,
    /// X_enc.
    pub memory: Array2<T>,
    /// X_0: token embeddings plus positional encodings.
    pub target_input: Array2<T>,
    /// One record per decoder sub-layer λ = 1..Λ (index λ - 1).
    pub sublayers: Vec<SublayerTrace<T>>,
    /// Output logits per position (positions × vocab).
    pub logits: Array2<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn len(&self) -> usize {
        self.target_input.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record of sub-layer λ (1-based).
    pub fn sublayer(&self, sublayer: usize) -> Result<&SublayerTrace<T>> {
        let max = self.sublayers.len();
        if sublayer == 0 || sublayer > max {
            return Err(Error::IndexOutOfRange { index: sublayer, max });
        }
        Ok(&self.sublayers[sublayer - 1])
    }

    /// e_Λ: final decoder embeddings.
    pub fn final_output(&self) -> ArrayView2<'_, T> {
        match self.sublayers.last() {
            Some(sl) => sl.output.view(),
            None => self.target_input.view(),
        }
    }

    /// Output of sub-layer λ; λ = 0 is the target-side input.
    pub fn output_at(&self, sublayer: usize) -> ArrayView2<'_, T> {
        if sublayer == 0 {
            self.target_input.view()
        } else {
            self.sublayers[sublayer - 1].output.view()
        }
    }

    /// Log-probabilities of the next token at `position`.
    pub fn log_probs(&self, position: usize) -> Array1<T> {
        log_softmax(self.logits.row(position))
    }

    /// Converts every recorded value to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ForwardTrace<U> {
        let m = |a: &Array2<T>| a.mapv(|x| U::of(x.to_f64_lossless()));
        let v = |a: &Array1<T>| a.mapv(|x| U::of(x.to_f64_lossless()));
        ForwardTrace {
            tokens: self.tokens.clone(),
            memory: m(&self.memory),
            target_input: m(&self.target_input),
            sublayers: self
                .sublayers
                .iter()
                .map(|sl| SublayerTrace {
                    kind: sl.kind,
                    input: m(&sl.input),
                    pre_residual: m(&sl.pre_residual),
                    pre_norm: m(&sl.pre_norm),
                    mean: v(&sl.mean),
                    std: v(&sl.std),
                    output: m(&sl.output),
                    attention: sl.attention.iter().map(&m).collect(),
                    ff_pre_activation: sl.ff_pre_activation.as_ref().map(&m),
                })
                .collect(),
            logits: m(&self.logits),
        }
    }
}

/// Encoder trace for one source sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTrace<T> {
    pub source_input: Array2<T>,
    pub sublayers: Vec<SublayerTrace<T>>,
}

impl<T: Scalar> EncoderTrace<T> {
    pub fn memory(&self) -> Array2<T> {
        self.sublayers
            .last()
            .map(|sl| sl.output.clone())
            .unwrap_or_else(|| self.source_input.clone())
    }
}

pub fn log_softmax<T: Scalar>(row: ArrayView1<'_, T>) -> Array1<T> {
    let max = row.fold(T::neg_infinity(), |a, &b| a.max(b));
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
    row.mapv(|x| x - lse)
}

/// Fixed sinusoidal position encodings (rows are positions from 0).
pub fn positional_encoding<T: Scalar>(len: usize, dim: usize) -> Array2<T> {
    Array2::from_shape_fn((len, dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

fn check_ids(config: &ModelConfig, ids: &[u32]) -> Result<()> {
    if ids.len() > config.max_positions {
        return Err(Error::SequenceTooLong {
            len: ids.len(),
            max: config.max_positions,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: config.vocab_size,
        });
    }
    Ok(())
}

/// Token embeddings plus positional encodings.
pub fn embed<T: Scalar>(model: &Model<T>, ids: &[u32]) -> Result<Array2<T>> {
    check_ids(&model.config, ids)?;
    let d = model.config.model_dim;
    let mut x = positional_encoding::<T>(ids.len(), d);
    for (mut row, &id) in x.rows_mut().into_iter().zip(ids) {
        row += &model.weights.embedding.row(id as usize);
    }
    Ok(x)
}

/// Feed-forward module: returns (ė, ê) with ê = W_in x + b_in and
/// ė = W_out φ(ê) + b_out.
pub fn sublayer_feed_forward<T: Scalar>(
    weights: &FeedForwardWeights<T>,
    activation: Activation,
    x: ArrayView1<'_, T>,
) -> Result<(Array1<T>, Array1<T>)> {
    if x.len() != weights.w_in.ncols() || weights.w_out.ncols() != weights.w_in.nrows() {
        return Err(Error::ShapeMismatch {
            name: "ff.W_in".into(),
            expected: vec![weights.w_in.nrows(), x.len()],
            found: weights.w_in.shape().to_vec(),
        });
    }
    let pre = weights.w_in.dot(&x) + &weights.b_in;
    let hidden = pre.mapv(|v| activation.apply(v));
    let out = weights.w_out.dot(&hidden) + &weights.b_out;
    Ok((out, pre))
}

/// Row-wise softmax of `scores`; entries with `col > row` are excluded when
/// `causal` and come out exactly zero.
pub(crate) fn softmax_rows<T: Scalar>(mut scores: Array2<T>, causal: bool) -> Array2<T> {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let limit = if causal { i + 1 } else { row.len() };
        let max = row
            .iter()
            .take(limit)
            .fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut total = T::zero();
        for (j, v) in row.iter_mut().enumerate() {
            if j < limit {
                *v = (*v - max).exp();
                total += *v;
            } else {
                *v = T::zero();
            }
        }
        row.mapv_inplace(|v| v / total);
    }
    scores
}

/// Multi-head attention: returns (Ė, A per head).
///
/// `queries` supplies X_λ (one row per query position); `attended` supplies
/// the rows attended over. With `causal`, query i only sees attended rows
/// 0..=i.
pub fn sublayer_attention<T: Scalar>(
    weights: &AttentionWeights<T>,
    queries: ArrayView2<'_, T>,
    attended: ArrayView2<'_, T>,
    causal: bool,
) -> Result<(Array2<T>, Vec<Array2<T>>)> {
    let d = weights.w_o.nrows();
    for (name, m) in [("queries", &queries), ("attended", &attended)] {
        if m.ncols() != d {
            return Err(Error::ShapeMismatch {
                name: format!("attention {name}"),
                expected: vec![m.nrows(), d],
                found: m.shape().to_vec(),
            });
        }
    }
    if causal && queries.nrows() > attended.nrows() {
        return Err(Error::ShapeMismatch {
            name: "causal attention keys".into(),
            expected: vec![queries.nrows(), d],
            found: attended.shape().to_vec(),
        });
    }
    if attended.nrows() == 0 {
        return Err(Error::EmptySequence("attention over zero positions".into()));
    }
    let mut weights_per_head = Vec::with_capacity(weights.heads.len());
    let mut head_outputs = Vec::with_capacity(weights.heads.len());
    for head in &weights.heads {
        let dh = head.w_q.nrows();
        let scale = T::of((dh as f64).sqrt());
        let q = queries.dot(&head.w_q.t()) + &head.b_q;
        let k = attended.dot(&head.w_k.t()) + &head.b_k;
        let v = attended.dot(&head.w_v.t()) + &head.b_v;
        let scores = q.dot(&k.t()).mapv(|x| x / scale);
        let a = softmax_rows(scores, causal);
        head_outputs.push(a.dot(&v));
        weights_per_head.push(a);
    }
    let views: Vec<_> = head_outputs.iter().map(|h| h.view()).collect();
    let concat = concatenate(Axis(1), &views).expect("heads share a row count");
    let out = concat.dot(&weights.w_o.t()) + &weights.b_o;
    Ok((out, weights_per_head))
}

/// Layer norm of one row: returns (e, m, s).
pub(crate) fn layer_norm_row<T: Scalar>(
    pre_norm: ArrayView1<'_, T>,
    norm: &LayerNormWeights<T>,
    epsilon: T,
) -> (Array1<T>, T, T) {
    let n = T::of(pre_norm.len() as f64);
    let mean = pre_norm.sum() / n;
    let var = pre_norm.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let std = (var + epsilon).sqrt();
    let mut out = Array1::zeros(pre_norm.len());
    Zip::from(&mut out)
        .and(&pre_norm)
        .and(&norm.gain)
        .and(&norm.bias)
        .for_each(|o, &x, &g, &b| *o = g * ((x - mean) / std) + b);
    (out, mean, std)
}

fn run_sublayer<T: Scalar>(
    config: &ModelConfig,
    sublayer: &Sublayer<T>,
    index: usize,
    input: Array2<T>,
    memory: Option<ArrayView2<'_, T>>,
    causal_self: bool,
) -> Result<SublayerTrace<T>> {
    let (pre_residual, attention, ff_pre_activation) = match sublayer.kind {
        SublayerKind::SelfAttention => {
            let att = sublayer.attention().expect("attention weights");
            let (out, a) = sublayer_attention(att, input.view(), input.view(), causal_self)?;
            (out, a, None)
        }
        SublayerKind::CrossAttention => {
            let att = sublayer.attention().expect("attention weights");
            let memory = memory.expect("cross-attention needs encoder memory");
            let (out, a) = sublayer_attention(att, input.view(), memory, false)?;
            (out, a, None)
        }
        SublayerKind::FeedForward => {
            let ff = sublayer.feed_forward().expect("feed-forward weights");
            let mut out = Array2::zeros(input.raw_dim());
            let mut pre = Array2::zeros((input.nrows(), config.ffn_dim));
            for (t, x) in input.rows().into_iter().enumerate() {
                let (o, p) = sublayer_feed_forward(ff, config.activation, x)?;
                out.row_mut(t).assign(&o);
                pre.row_mut(t).assign(&p);
            }
            (out, Vec::new(), Some(pre))
        }
    };
    let pre_norm = &pre_residual + &input;
    let eps = T::of(config.ln_epsilon);
    let rows = pre_norm.nrows();
    let mut output = Array2::zeros(pre_norm.raw_dim());
    let mut mean = Array1::zeros(rows);
    let mut std = Array1::zeros(rows);
    for t in 0..rows {
        let (e, m, s) = layer_norm_row(pre_norm.row(t), &sublayer.norm, eps);
        if !(s > T::zero()) {
            return Err(Error::DegenerateStd {
                sublayer: index,
                position: t,
            });
        }
        output.row_mut(t).assign(&e);
        mean[t] = m;
        std[t] = s;
    }
    Ok(SublayerTrace {
        kind: sublayer.kind,
        input,
        pre_residual,
        pre_norm,
        mean,
        std,
        output,
        attention,
        ff_pre_activation,
    })
}

/// Runs the encoder, recording every sub-layer.
pub fn encode_traced<T: Scalar>(model: &Model<T>, src_ids: &[u32]) -> Result<EncoderTrace<T>> {
    if src_ids.is_empty() {
        return Err(Error::EmptySequence("source sequence".into()));
    }
    let source_input = embed(model, src_ids)?;
    let mut x = source_input.clone();
    let mut sublayers = Vec::with_capacity(model.weights.encoder.len());
    for (i, sl) in model.weights.encoder.iter().enumerate() {
        let trace = run_sublayer(&model.config, sl, i + 1, x, None, false)?;
        x = trace.output.clone();
        sublayers.push(trace);
    }
    Ok(EncoderTrace {
        source_input,
        sublayers,
    })
}

/// X_enc for a source sequence.
pub fn encode<T: Scalar>(model: &Model<T>, src_ids: &[u32]) -> Result<Array2<T>> {
    Ok(encode_traced(model, src_ids)?.memory())
}

/// Runs the decoder over `[bos] ++ tgt_ids` against `memory`.
///
/// Position t of the trace predicts `tgt_ids[t]`; the last position predicts
/// the token after the target (end of sequence for a gold target).
pub fn decode_forced<T: Scalar>(
    model: &Model<T>,
    memory: ArrayView2<'_, T>,
    tgt_ids: &[u32],
) -> Result<ForwardTrace<T>> {
    let config = &model.config;
    if memory.ncols() != config.model_dim || memory.nrows() == 0 {
        return Err(Error::ShapeMismatch {
            name: "encoder memory".into(),
            expected: vec![memory.nrows().max(1), config.model_dim],
            found: memory.shape().to_vec(),
        });
    }
    let mut tokens = Vec::with_capacity(tgt_ids.len() + 1);
    tokens.push(config.bos_id);
    tokens.extend_from_slice(tgt_ids);
    let target_input = embed(model, &tokens)?;
    let mut x = target_input.clone();
    let mut sublayers = Vec::with_capacity(model.weights.decoder.len());
    for (i, sl) in model.weights.decoder.iter().enumerate() {
        let trace = run_sublayer(config, sl, i + 1, x, Some(memory), true)?;
        x = trace.output.clone();
        sublayers.push(trace);
    }
    let logits = x.dot(&model.weights.embedding.t());
    Ok(ForwardTrace {
        tokens,
        memory: memory.to_owned(),
        target_input,
        sublayers,
        logits,
    })
}

/// Log-probabilities of the next token after `[bos] ++ prefix`.
pub fn next_token_log_probs<T: Scalar>(
    model: &Model<T>,
    memory: ArrayView2<'_, T>,
    prefix: &[u32],
) -> Result<Array1<T>> {
    let trace = decode_forced(model, memory, prefix)?;
    Ok(trace.log_probs(trace.len() - 1))
}
