//! Quality scores: external score tables and built-in BLEU and chrF on
//! token ids. The metrics exist to drive the correlation protocols and are
//! not comparable to scores computed on detokenized text.

mod bleu;
mod chrf;
mod table;

pub use bleu::bleu_corpus;
pub use chrf::{chrf_corpus_ids, chrf_ids, chrf_sentence, render_ids, CHRF_BETA, CHRF_ORDER};
pub use table::{load_scores, Granularity, ScoreTable, CORPUS_KEY, SCORE_HEADER};
