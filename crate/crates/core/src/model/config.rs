use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Feed-forward activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Swish,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            "swish" => Ok(Activation::Swish),
            other => Err(Error::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Gelu => {
                let half = T::of(0.5);
                half * x * (T::one() + (x * T::FRAC_1_SQRT_2()).erf())
            }
            Activation::Swish => x * sigmoid(x),
        }
    }

    /// Analytic derivative; `relu'(0)` is taken to be 0.
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Gelu => {
                let half = T::of(0.5);
                let cdf = half * (T::one() + (x * T::FRAC_1_SQRT_2()).erf());
                let pdf = (-half * x * x).exp() / (T::of(2.0) * T::PI()).sqrt();
                cdf + x * pdf
            }
            Activation::Swish => {
                let sg = sigmoid(x);
                sg + x * sg * (T::one() - sg)
            }
        }
    }

    /// Whether the derivative is undefined at `x` (only relu at exactly 0).
    pub fn is_kink<T: Scalar>(self, x: T) -> bool {
        matches!(self, Activation::Relu) && x == T::zero()
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
            Activation::Swish => "swish",
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn default_bos() -> u32 {
    0
}

fn default_eos() -> u32 {
    1
}

/// Shape and hyper-parameters of an encoder-decoder Transformer.
///
/// `num_layers` counts decoder layers (three sub-layers each: self-attention,
/// cross-attention, feed-forward). The encoder has `encoder_layers` layers of
/// two sub-layers each (self-attention, feed-forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub encoder_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub activation: Activation,
    #[serde(default)]
    pub ln_epsilon: f64,
    pub max_positions: usize,
    #[serde(default = "default_bos")]
    pub bos_id: u32,
    #[serde(default = "default_eos")]
    pub eos_id: u32,
}

impl Default for ModelConfig {
    /// Six layers, eight heads, swish activation.
    fn default() -> Self {
        Self {
            num_layers: 6,
            encoder_layers: 6,
            model_dim: 512,
            num_heads: 8,
            ffn_dim: 2048,
            vocab_size: 32000,
            activation: Activation::Swish,
            ln_epsilon: 0.0,
            max_positions: 256,
            bos_id: default_bos(),
            eos_id: default_eos(),
        }
    }
}

impl ModelConfig {
    /// A small configuration convenient for tests and desk-scale runs.
    pub fn toy(num_layers: usize, model_dim: usize, num_heads: usize, activation: Activation) -> Self {
        Self {
            num_layers,
            encoder_layers: num_layers,
            model_dim,
            num_heads,
            ffn_dim: 2 * model_dim,
            vocab_size: 16,
            activation,
            ln_epsilon: 0.0,
            max_positions: 64,
            bos_id: 0,
            eos_id: 1,
        }
    }

    /// Λ: number of decoder sub-layers.
    pub fn num_sublayers(&self) -> usize {
        3 * self.num_layers
    }

    pub fn encoder_sublayers(&self) -> usize {
        2 * self.encoder_layers
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("encoder_layers", self.encoder_layers),
            ("model_dim", self.model_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if !(self.ln_epsilon.is_finite() && self.ln_epsilon >= 0.0) {
            return Err(Error::InvalidConfig("ln_epsilon must be finite and >= 0".into()));
        }
        for (name, id) in [("bos_id", self.bos_id), ("eos_id", self.eos_id)] {
            if id as usize >= self.vocab_size {
                return Err(Error::InvalidConfig(format!(
                    "{name} {id} is outside the vocabulary"
                )));
            }
        }
        Ok(())
    }
}

/// Role of a sub-layer in the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SublayerKind {
    SelfAttention,
    CrossAttention,
    FeedForward,
}

impl SublayerKind {
    /// Kind of decoder sub-layer λ (1-based): λ ≡ 1, 2, 0 (mod 3).
    pub fn of_decoder(sublayer: usize) -> Self {
        match sublayer % 3 {
            1 => SublayerKind::SelfAttention,
            2 => SublayerKind::CrossAttention,
            _ => SublayerKind::FeedForward,
        }
    }

    /// Kind of encoder sub-layer (1-based): odd sub-layers attend, even ones are feed-forward.
    pub fn of_encoder(sublayer: usize) -> Self {
        if sublayer % 2 == 1 {
            SublayerKind::SelfAttention
        } else {
            SublayerKind::FeedForward
        }
    }

    pub fn is_attention(self) -> bool {
        !matches!(self, SublayerKind::FeedForward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indivisible_heads() {
        let mut cfg = ModelConfig::toy(1, 10, 4, Activation::Relu);
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        cfg.model_dim = 12;
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_zero_dims() {
        let mut cfg = ModelConfig::toy(1, 8, 2, Activation::Relu);
        cfg.ffn_dim = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sublayer_kinds_cycle() {
        let kinds: Vec<_> = (1..=6).map(SublayerKind::of_decoder).collect();
        assert_eq!(
            kinds,
            vec![
                SublayerKind::SelfAttention,
                SublayerKind::CrossAttention,
                SublayerKind::FeedForward,
                SublayerKind::SelfAttention,
                SublayerKind::CrossAttention,
                SublayerKind::FeedForward,
            ]
        );
    }

    #[test]
    fn relu_derivative_convention_at_zero() {
        assert_eq!(Activation::Relu.derivative(0.0_f64), 0.0);
        assert!(Activation::Relu.is_kink(0.0_f64));
        assert!(!Activation::Gelu.is_kink(0.0_f64));
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for act in [Activation::Gelu, Activation::Swish] {
            for &x in &[-3.0_f64, -0.7, 0.0, 0.4, 2.5] {
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn swish_is_stable_for_large_inputs() {
        assert_eq!(Activation::Swish.apply(-1000.0_f64), 0.0);
        assert_eq!(Activation::Swish.apply(1000.0_f64), 1000.0);
    }
}
