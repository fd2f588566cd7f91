//! Exact decompositions of Transformer decoder embeddings and tools for
//! tracking them across training checkpoints.
//!
//! The numerical core is generic over [`Scalar`] (`f64` and `f32`); the
//! `*64` aliases are the default precision.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod decomp;
pub mod error;
pub mod indicators;
pub mod model;
pub mod scalar;
pub mod scoring;
pub mod stats;

pub use corpus::{Corpus, Sentence};
pub use decomp::{
    decompose_sl, decompose_tok, verify_reconstruction, Decomposition, DecompositionKind,
    SlDecomposition, Term, TermSource, TokDecomposition, Tolerance, VerificationReport,
};
pub use error::{Error, Result};
pub use indicators::{build_series, corpus_mean_indicator, Decoding, Indicator, IndicatorSeries};
pub use model::{
    decode_beam, decode_forced, encode, load_model, save_model, Activation, BeamOptions,
    ForwardTrace, Hypothesis, Model, ModelConfig,
};
pub use scalar::Scalar;
pub use scoring::{bleu_corpus, chrf_sentence, load_scores, ScoreTable};
pub use stats::{dtw_distance, pearson, pitman_test, spearman, z_normalize, PairedSeries};

pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type ForwardTrace64 = ForwardTrace<f64>;
pub type ForwardTrace32 = ForwardTrace<f32>;
pub type SlDecomposition64 = SlDecomposition<f64>;
pub type TokDecomposition64 = TokDecomposition<f64>;
