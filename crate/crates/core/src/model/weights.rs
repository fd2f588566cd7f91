use ndarray::{Array1, Array2};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, SublayerKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-head projections of a multi-head attention module.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights<T> {
    pub w_q: Array2<T>,
    pub b_q: Array1<T>,
    pub w_k: Array2<T>,
    pub b_k: Array1<T>,
    pub w_v: Array2<T>,
    pub b_v: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    pub heads: Vec<HeadWeights<T>>,
    pub w_o: Array2<T>,
    pub b_o: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardWeights<T> {
    pub w_in: Array2<T>,
    pub b_in: Array1<T>,
    pub w_out: Array2<T>,
    pub b_out: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormWeights<T> {
    pub gain: Array1<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Module<T> {
    Attention(AttentionWeights<T>),
    FeedForward(FeedForwardWeights<T>),
}

/// One sub-layer: its module followed by residual addition and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Sublayer<T> {
    pub kind: SublayerKind,
    pub module: Module<T>,
    pub norm: LayerNormWeights<T>,
}

impl<T> Sublayer<T> {
    pub fn attention(&self) -> Option<&AttentionWeights<T>> {
        match &self.module {
            Module::Attention(a) => Some(a),
            Module::FeedForward(_) => None,
        }
    }

    pub fn feed_forward(&self) -> Option<&FeedForwardWeights<T>> {
        match &self.module {
            Module::FeedForward(f) => Some(f),
            Module::Attention(_) => None,
        }
    }

    pub fn attention_mut(&mut self) -> Option<&mut AttentionWeights<T>> {
        match &mut self.module {
            Module::Attention(a) => Some(a),
            Module::FeedForward(_) => None,
        }
    }

    pub fn feed_forward_mut(&mut self) -> Option<&mut FeedForwardWeights<T>> {
        match &mut self.module {
            Module::FeedForward(f) => Some(f),
            Module::Attention(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    /// Token embeddings, tied with the output projection (vocab_size × d).
    pub embedding: Array2<T>,
    pub encoder: Vec<Sublayer<T>>,
    pub decoder: Vec<Sublayer<T>>,
}

/// Configuration plus weights of an encoder-decoder Transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub weights: ModelWeights<T>,
}

/// Shape of a tensor in the model: vector or matrix.
pub(crate) enum TensorRef<'a, T> {
    Vector(&'a Array1<T>),
    Matrix(&'a Array2<T>),
}

impl<T> TensorRef<'_, T> {
    pub(crate) fn shape(&self) -> Vec<usize> {
        match self {
            TensorRef::Vector(v) => vec![v.len()],
            TensorRef::Matrix(m) => vec![m.nrows(), m.ncols()],
        }
    }
}

pub(crate) enum TensorMut<'a, T> {
    Vector(&'a mut Array1<T>),
    Matrix(&'a mut Array2<T>),
}

impl<T> TensorMut<'_, T> {
    pub(crate) fn as_mut_slice(&mut self) -> &mut [T] {
        match self {
            TensorMut::Vector(v) => v.as_slice_mut().expect("contiguous vector"),
            TensorMut::Matrix(m) => m.as_slice_mut().expect("standard-layout matrix"),
        }
    }
}

fn sublayer_prefix(stack: &str, index: usize) -> String {
    format!("{stack}.sl{index}")
}

impl<T: Scalar> Model<T> {
    /// A model of the given shape with every tensor zero and every gain one.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let dh = config.head_dim();
        let build = |kind: SublayerKind| -> Sublayer<T> {
            let module = if kind.is_attention() {
                Module::Attention(AttentionWeights {
                    heads: (0..config.num_heads)
                        .map(|_| HeadWeights {
                            w_q: Array2::zeros((dh, d)),
                            b_q: Array1::zeros(dh),
                            w_k: Array2::zeros((dh, d)),
                            b_k: Array1::zeros(dh),
                            w_v: Array2::zeros((dh, d)),
                            b_v: Array1::zeros(dh),
                        })
                        .collect(),
                    w_o: Array2::zeros((d, d)),
                    b_o: Array1::zeros(d),
                })
            } else {
                Module::FeedForward(FeedForwardWeights {
                    w_in: Array2::zeros((config.ffn_dim, d)),
                    b_in: Array1::zeros(config.ffn_dim),
                    w_out: Array2::zeros((d, config.ffn_dim)),
                    b_out: Array1::zeros(d),
                })
            };
            Sublayer {
                kind,
                module,
                norm: LayerNormWeights {
                    gain: Array1::ones(d),
                    bias: Array1::zeros(d),
                },
            }
        };
        let encoder = (1..=config.encoder_sublayers())
            .map(|i| build(SublayerKind::of_encoder(i)))
            .collect();
        let decoder = (1..=config.num_sublayers())
            .map(|i| build(SublayerKind::of_decoder(i)))
            .collect();
        Ok(Self {
            weights: ModelWeights {
                embedding: Array2::zeros((config.vocab_size, d)),
                encoder,
                decoder,
            },
            config,
        })
    }

    /// Random initialization: every weight matrix and the embedding table are
    /// drawn uniformly from [-1/√d, 1/√d]; gains are 1 and biases 0.
    pub fn init_random(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let bound = 1.0 / (model.config.model_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, mut tensor) in model.tensors_mut() {
            if matches!(tensor, TensorMut::Matrix(_)) {
                debug_assert!(name.contains('W') || name == "embed.tokens");
                for v in tensor.as_mut_slice() {
                    *v = T::of(dist.sample(&mut rng));
                }
            }
        }
        Ok(model)
    }

    /// Draws every bias uniformly from [-scale, scale] and every layer-norm gain
    /// from [1 - scale, 1 + scale]. Leaves weight matrices untouched.
    pub fn randomize_affine(&mut self, seed: u64, scale: f64) {
        if scale == 0.0 {
            return;
        }
        let dist = Uniform::new_inclusive(-scale, scale).expect("finite scale");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // A separate stream keeps these draws independent of `init_random` under the same seed.
        rng.set_stream(1);
        for (name, mut tensor) in self.tensors_mut() {
            if let TensorMut::Vector(_) = tensor {
                let offset = if name.ends_with(".ln.g") { 1.0 } else { 0.0 };
                for v in tensor.as_mut_slice() {
                    *v = T::of(offset + dist.sample(&mut rng));
                }
            }
        }
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let conv = |x: &T| U::of(x.to_f64_lossless());
        let vec = |v: &Array1<T>| v.map(conv);
        let mat = |m: &Array2<T>| m.map(conv);
        let sublayer = |s: &Sublayer<T>| Sublayer {
            kind: s.kind,
            module: match &s.module {
                Module::Attention(a) => Module::Attention(AttentionWeights {
                    heads: a
                        .heads
                        .iter()
                        .map(|h| HeadWeights {
                            w_q: mat(&h.w_q),
                            b_q: vec(&h.b_q),
                            w_k: mat(&h.w_k),
                            b_k: vec(&h.b_k),
                            w_v: mat(&h.w_v),
                            b_v: vec(&h.b_v),
                        })
                        .collect(),
                    w_o: mat(&a.w_o),
                    b_o: vec(&a.b_o),
                }),
                Module::FeedForward(f) => Module::FeedForward(FeedForwardWeights {
                    w_in: mat(&f.w_in),
                    b_in: vec(&f.b_in),
                    w_out: mat(&f.w_out),
                    b_out: vec(&f.b_out),
                }),
            },
            norm: LayerNormWeights {
                gain: vec(&s.norm.gain),
                bias: vec(&s.norm.bias),
            },
        };
        Model {
            config: self.config.clone(),
            weights: ModelWeights {
                embedding: mat(&self.weights.embedding),
                encoder: self.weights.encoder.iter().map(sublayer).collect(),
                decoder: self.weights.decoder.iter().map(sublayer).collect(),
            },
        }
    }

    /// Decoder sub-layer λ (1-based).
    pub fn decoder_sublayer(&self, sublayer: usize) -> Result<&Sublayer<T>> {
        let max = self.weights.decoder.len();
        if sublayer == 0 || sublayer > max {
            return Err(Error::IndexOutOfRange { index: sublayer, max });
        }
        Ok(&self.weights.decoder[sublayer - 1])
    }

    /// All tensors in canonical order with their container names.
    pub(crate) fn tensors(&self) -> Vec<(String, TensorRef<'_, T>)> {
        let mut out = vec![(
            "embed.tokens".to_string(),
            TensorRef::Matrix(&self.weights.embedding),
        )];
        for (stack, layers) in [("enc", &self.weights.encoder), ("dec", &self.weights.decoder)] {
            for (i, sl) in layers.iter().enumerate() {
                let prefix = sublayer_prefix(stack, i + 1);
                match &sl.module {
                    Module::Attention(a) => {
                        for (h, head) in a.heads.iter().enumerate() {
                            let hp = format!("{prefix}.ma.h{}", h + 1);
                            out.push((format!("{hp}.W_Q"), TensorRef::Matrix(&head.w_q)));
                            out.push((format!("{hp}.b_Q"), TensorRef::Vector(&head.b_q)));
                            out.push((format!("{hp}.W_K"), TensorRef::Matrix(&head.w_k)));
                            out.push((format!("{hp}.b_K"), TensorRef::Vector(&head.b_k)));
                            out.push((format!("{hp}.W_V"), TensorRef::Matrix(&head.w_v)));
                            out.push((format!("{hp}.b_V"), TensorRef::Vector(&head.b_v)));
                        }
                        out.push((format!("{prefix}.ma.W_O"), TensorRef::Matrix(&a.w_o)));
                        out.push((format!("{prefix}.ma.b_O"), TensorRef::Vector(&a.b_o)));
                    }
                    Module::FeedForward(f) => {
                        out.push((format!("{prefix}.ff.W_in"), TensorRef::Matrix(&f.w_in)));
                        out.push((format!("{prefix}.ff.b_in"), TensorRef::Vector(&f.b_in)));
                        out.push((format!("{prefix}.ff.W_out"), TensorRef::Matrix(&f.w_out)));
                        out.push((format!("{prefix}.ff.b_out"), TensorRef::Vector(&f.b_out)));
                    }
                }
                out.push((format!("{prefix}.ln.g"), TensorRef::Vector(&sl.norm.gain)));
                out.push((format!("{prefix}.ln.b"), TensorRef::Vector(&sl.norm.bias)));
            }
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(String, TensorMut<'_, T>)> {
        let ModelWeights {
            embedding,
            encoder,
            decoder,
        } = &mut self.weights;
        let mut out = vec![("embed.tokens".to_string(), TensorMut::Matrix(embedding))];
        for (stack, layers) in [("enc", encoder), ("dec", decoder)] {
            for (i, sl) in layers.iter_mut().enumerate() {
                let prefix = sublayer_prefix(stack, i + 1);
                match &mut sl.module {
                    Module::Attention(a) => {
                        for (h, head) in a.heads.iter_mut().enumerate() {
                            let hp = format!("{prefix}.ma.h{}", h + 1);
                            out.push((format!("{hp}.W_Q"), TensorMut::Matrix(&mut head.w_q)));
                            out.push((format!("{hp}.b_Q"), TensorMut::Vector(&mut head.b_q)));
                            out.push((format!("{hp}.W_K"), TensorMut::Matrix(&mut head.w_k)));
                            out.push((format!("{hp}.b_K"), TensorMut::Vector(&mut head.b_k)));
                            out.push((format!("{hp}.W_V"), TensorMut::Matrix(&mut head.w_v)));
                            out.push((format!("{hp}.b_V"), TensorMut::Vector(&mut head.b_v)));
                        }
                        out.push((format!("{prefix}.ma.W_O"), TensorMut::Matrix(&mut a.w_o)));
                        out.push((format!("{prefix}.ma.b_O"), TensorMut::Vector(&mut a.b_o)));
                    }
                    Module::FeedForward(f) => {
                        out.push((format!("{prefix}.ff.W_in"), TensorMut::Matrix(&mut f.w_in)));
                        out.push((format!("{prefix}.ff.b_in"), TensorMut::Vector(&mut f.b_in)));
                        out.push((format!("{prefix}.ff.W_out"), TensorMut::Matrix(&mut f.w_out)));
                        out.push((format!("{prefix}.ff.b_out"), TensorMut::Vector(&mut f.b_out)));
                    }
                }
                out.push((format!("{prefix}.ln.g"), TensorMut::Vector(&mut sl.norm.gain)));
                out.push((format!("{prefix}.ln.b"), TensorMut::Vector(&mut sl.norm.bias)));
            }
        }
        out
    }

    /// Names of every tensor, in canonical order.
    pub fn tensor_names(&self) -> Vec<String> {
        self.tensors().into_iter().map(|(n, _)| n).collect()
    }

    /// Flat row-major view of the named tensor.
    pub fn tensor_data(&self, name: &str) -> Option<&[T]> {
        self.tensors().into_iter().find(|(n, _)| n == name).map(|(_, t)| match t {
            TensorRef::Vector(v) => v.as_slice().expect("contiguous"),
            TensorRef::Matrix(m) => m.as_slice().expect("standard layout"),
        })
    }

    /// Mutable flat view of the named tensor.
    pub fn tensor_data_mut(&mut self, name: &str) -> Option<&mut [T]> {
        self.tensors_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| match t {
                TensorMut::Vector(v) => v.as_slice_mut().expect("contiguous"),
                TensorMut::Matrix(m) => m.as_slice_mut().expect("standard layout"),
            })
    }

    /// Applies `f` to every scalar of every tensor.
    pub fn map_in_place(&mut self, mut f: impl FnMut(&str, T) -> T) {
        for (name, mut t) in self.tensors_mut() {
            for v in t.as_mut_slice() {
                *v = f(&name, *v);
            }
        }
    }

    /// True when every tensor is finite.
    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| match t {
            TensorRef::Vector(v) => v.iter().all(|x| x.is_finite()),
            TensorRef::Matrix(m) => m.iter().all(|x| x.is_finite()),
        })
    }
}

/// `n` models on the straight line from `model_a` to `model_b`:
/// model k has every tensor `(1 - k/(n-1))·A + (k/(n-1))·B`, endpoints exact.
pub fn interpolate_checkpoints<T: Scalar>(
    model_a: &Model<T>,
    model_b: &Model<T>,
    n: usize,
) -> Result<Vec<Model<T>>> {
    if model_a.config != model_b.config {
        return Err(Error::ConfigMismatch(
            "interpolated models must share a configuration".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("checkpoint count must be positive".into()));
    }
    if n == 1 {
        return Ok(vec![model_a.clone()]);
    }
    let b_tensors = model_b.tensors();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k == 0 {
            out.push(model_a.clone());
            continue;
        }
        if k == n - 1 {
            out.push(model_b.clone());
            continue;
        }
        let alpha = T::of(k as f64 / (n - 1) as f64);
        let mut model = model_a.clone();
        for ((_, mut dst), (_, src)) in model.tensors_mut().into_iter().zip(b_tensors.iter()) {
            let src = match src {
                TensorRef::Vector(v) => v.as_slice().expect("contiguous"),
                TensorRef::Matrix(m) => m.as_slice().expect("standard layout"),
            };
            for (a, &b) in dst.as_mut_slice().iter_mut().zip(src) {
                *a = (T::one() - alpha) * *a + alpha * b;
            }
        }
        out.push(model);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Activation;

    fn cfg() -> ModelConfig {
        ModelConfig::toy(2, 16, 4, Activation::Swish)
    }

    #[test]
    fn init_is_deterministic() {
        let a = Model::<f64>::init_random(cfg(), 7).unwrap();
        let b = Model::<f64>::init_random(cfg(), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = Model::<f64>::init_random(cfg(), 1).unwrap();
        let b = Model::<f64>::init_random(cfg(), 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn init_gains_one_biases_zero_weights_bounded() {
        let m = Model::<f64>::init_random(cfg(), 3).unwrap();
        let bound = 1.0 / 4.0;
        for name in m.tensor_names() {
            let data = m.tensor_data(&name).unwrap();
            if name.ends_with(".ln.g") {
                assert!(data.iter().all(|&g| g == 1.0), "{name}");
            } else if name.contains(".b_") || name.ends_with(".ln.b") {
                assert!(data.iter().all(|&b| b == 0.0), "{name}");
            } else {
                assert!(data.iter().all(|&w| w.abs() <= bound), "{name}");
                assert!(data.iter().any(|&w| w != 0.0), "{name}");
            }
        }
    }

    #[test]
    fn init_rejects_bad_config() {
        let mut c = cfg();
        c.num_heads = 3;
        assert!(matches!(
            Model::<f64>::init_random(c, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn tensor_names_follow_convention() {
        let m = Model::<f64>::init_random(cfg(), 0).unwrap();
        let names = m.tensor_names();
        for expected in ["dec.sl3.ff.W_in", "dec.sl1.ma.h2.W_V", "dec.sl1.ln.g", "enc.sl2.ff.b_out"] {
            assert!(names.iter().any(|n| n == expected), "{expected}");
        }
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = Model::<f64>::init_random(cfg(), 1).unwrap();
        let b = Model::<f64>::init_random(cfg(), 2).unwrap();
        let two = interpolate_checkpoints(&a, &b, 2).unwrap();
        assert_eq!(two, vec![a.clone(), b.clone()]);

        let mut zeros = a.clone();
        zeros.map_in_place(|_, _| 0.0);
        let mut ones = a.clone();
        ones.map_in_place(|_, _| 1.0);
        let three = interpolate_checkpoints(&zeros, &ones, 3).unwrap();
        for name in three[1].tensor_names() {
            assert!(three[1].tensor_data(&name).unwrap().iter().all(|&v| v == 0.5));
        }

        let same = interpolate_checkpoints(&a, &a, 5).unwrap();
        assert!(same.iter().all(|m| *m == a));
    }

    #[test]
    fn interpolation_rejects_mismatched_configs() {
        let a = Model::<f64>::init_random(cfg(), 1).unwrap();
        let mut c = cfg();
        c.vocab_size = 20;
        let b = Model::<f64>::init_random(c, 1).unwrap();
        assert!(matches!(
            interpolate_checkpoints(&a, &b, 3),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn cast_round_trip_through_f64_is_exact_for_f32() {
        let m = Model::<f32>::init_random(cfg(), 9).unwrap();
        let back: Model<f32> = m.cast::<f64>().cast();
        assert_eq!(m, back);
    }
}
