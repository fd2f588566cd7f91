//! Encoder-decoder Transformer: configuration, weights, persistence, and
//! traced forward passes under forced and beam-search decoding.

mod beam;
mod config;
mod container;
mod forward;
mod weights;

pub use beam::{decode_beam, decode_greedy, normalized_score, BeamOptions, Hypothesis};
pub use config::{Activation, ModelConfig, SublayerKind};
pub use container::{
    from_bytes, load_model, read_header, save_model, to_bytes, ContainerHeader, TensorEntry,
    MAGIC, VERSION,
};
pub use forward::{
    decode_forced, embed, encode, encode_traced, log_softmax, next_token_log_probs,
    positional_encoding, sublayer_attention, sublayer_feed_forward, EncoderTrace, ForwardTrace,
    SublayerTrace,
};
pub use weights::{
    interpolate_checkpoints, AttentionWeights, FeedForwardWeights, HeadWeights,
    LayerNormWeights, Model, ModelWeights, Module, Sublayer,
};
