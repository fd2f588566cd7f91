//! Correlations, dynamic time warping, permutation tests, and the
//! checkpoint-sampling correlation protocols.

mod correlation;
mod dtw;
mod permutation;
mod protocol;

pub use correlation::{average_ranks, pearson, spearman, PairedSeries};
pub use dtw::{dtw_distance, dtw_heatmap, z_normalize, z_normalize_slice, DtwResult, HeatmapCell};
pub use permutation::{pitman_test, pitman_test_with_cap, PermutationMode, PermutationTestResult, DEFAULT_ENUMERATION_CAP};
pub use protocol::{
    corpus_correlation_protocol, sentence_correlation_protocol, Pairing, SentenceRun,
};
