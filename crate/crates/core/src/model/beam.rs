use std::cmp::Ordering;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::forward::{decode_forced, next_token_log_probs, ForwardTrace};
use super::weights::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Beam search settings. Defaults: beam 12, normalization exponent 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamOptions {
    pub beam: usize,
    /// Maximum number of generated tokens, end-of-sequence included.
    pub max_len: usize,
    /// Exponent α of the length penalty: score = Σ log p / len^α.
    pub length_norm: f64,
    /// Restrict the last step to end-of-sequence so every hypothesis completes.
    pub force_eos: bool,
}

impl Default for BeamOptions {
    fn default() -> Self {
        Self {
            beam: 12,
            max_len: 32,
            length_norm: 1.0,
            force_eos: false,
        }
    }
}

/// Result of a search: the winning tokens (end-of-sequence included when
/// `finished`), its raw and normalized scores, and the trace of a forced pass
/// over it.
#[derive(Debug, Clone)]
pub struct Hypothesis<T> {
    pub tokens: Vec<u32>,
    pub log_prob: T,
    pub score: T,
    pub finished: bool,
    pub trace: ForwardTrace<T>,
}

impl<T> Hypothesis<T> {
    /// Turns an unfinished result into [`Error::EmptyHypothesis`].
    pub fn require_finished(self) -> Result<Self> {
        if self.finished {
            Ok(self)
        } else {
            Err(Error::EmptyHypothesis {
                max_len: self.tokens.len(),
            })
        }
    }

    /// Tokens with the trailing end-of-sequence removed.
    pub fn content(&self) -> &[u32] {
        if self.finished {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

/// Length-normalized score `log_prob / len^alpha`.
pub fn normalized_score<T: Scalar>(log_prob: T, len: usize, length_norm: f64) -> T {
    if length_norm == 0.0 {
        log_prob
    } else {
        log_prob / T::of((len as f64).powf(length_norm))
    }
}

#[derive(Debug, Clone)]
struct Candidate<T> {
    tokens: Vec<u32>,
    log_prob: T,
}

/// Higher score first; ties go to the lexicographically smaller sequence.
fn rank<T: Scalar>(a_score: T, a: &[u32], b_score: T, b: &[u32]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.cmp(b))
}

fn best_by_normalized<T: Scalar>(pool: Vec<Candidate<T>>, length_norm: f64) -> Option<(Candidate<T>, T)> {
    pool.into_iter()
        .map(|c| {
            let s = normalized_score(c.log_prob, c.tokens.len(), length_norm);
            (c, s)
        })
        .min_by(|(a, sa), (b, sb)| rank(*sa, &a.tokens, *sb, &b.tokens))
}

fn finish<T: Scalar>(
    model: &Model<T>,
    memory: ArrayView2<'_, T>,
    winner: Candidate<T>,
    score: T,
    finished: bool,
) -> Result<Hypothesis<T>> {
    let content_len = if finished {
        winner.tokens.len() - 1
    } else {
        winner.tokens.len()
    };
    let trace = decode_forced(model, memory, &winner.tokens[..content_len])?;
    Ok(Hypothesis {
        tokens: winner.tokens,
        log_prob: winner.log_prob,
        score,
        finished,
        trace,
    })
}

fn check_budget<T: Scalar>(model: &Model<T>, options: &BeamOptions) -> Result<()> {
    if options.beam == 0 {
        return Err(Error::InvalidConfig("beam size must be at least 1".into()));
    }
    if options.max_len == 0 {
        return Err(Error::InvalidConfig("max_len must be at least 1".into()));
    }
    // The forced pass over an unfinished hypothesis feeds max_len tokens after the start token.
    if options.max_len + 1 > model.config.max_positions {
        return Err(Error::SequenceTooLong {
            len: options.max_len + 1,
            max: model.config.max_positions,
        });
    }
    Ok(())
}

/// Beam search over the decoder.
///
/// At each step every live hypothesis is extended by every token; the `beam`
/// best extensions by cumulative log-probability survive (ties broken
/// lexicographically). Survivors ending in end-of-sequence are set aside as
/// finished, the rest stay live. The search stops when nothing is live or the
/// length budget is spent. The winner is the finished hypothesis with the best
/// length-normalized score; if none finished, the best unfinished one is
/// returned with `finished = false`.
pub fn decode_beam<T: Scalar>(
    model: &Model<T>,
    memory: ArrayView2<'_, T>,
    options: &BeamOptions,
) -> Result<Hypothesis<T>> {
    check_budget(model, options)?;
    let eos = model.config.eos_id;
    let mut live = vec![Candidate {
        tokens: Vec::new(),
        log_prob: T::zero(),
    }];
    let mut finished: Vec<Candidate<T>> = Vec::new();

    for step in 1..=options.max_len {
        let last_step = step == options.max_len;
        let mut candidates = Vec::new();
        for hyp in &live {
            let lp = next_token_log_probs(model, memory, &hyp.tokens)?;
            for (token, &l) in lp.iter().enumerate() {
                let token = token as u32;
                if last_step && options.force_eos && token != eos {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(token);
                candidates.push(Candidate {
                    tokens,
                    log_prob: hyp.log_prob + l,
                });
            }
        }
        candidates.sort_by(|a, b| rank(a.log_prob, &a.tokens, b.log_prob, &b.tokens));
        candidates.truncate(options.beam);

        let mut next = Vec::with_capacity(candidates.len());
        for c in candidates {
            if c.tokens.last() == Some(&eos) {
                finished.push(c);
            } else {
                next.push(c);
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }

    match best_by_normalized(finished, options.length_norm) {
        Some((winner, score)) => finish(model, memory, winner, score, true),
        None => {
            let (winner, score) =
                best_by_normalized(live, options.length_norm).expect("live hypotheses remain");
            finish(model, memory, winner, score, false)
        }
    }
}

/// Greedy decoding: the arg-max token at every step (smallest id on ties),
/// stopping at end-of-sequence or after `max_len` tokens.
pub fn decode_greedy<T: Scalar>(
    model: &Model<T>,
    memory: ArrayView2<'_, T>,
    options: &BeamOptions,
) -> Result<Hypothesis<T>> {
    check_budget(model, options)?;
    let eos = model.config.eos_id;
    let mut tokens = Vec::new();
    let mut log_prob = T::zero();
    for step in 1..=options.max_len {
        let lp = next_token_log_probs(model, memory, &tokens)?;
        let pick = if step == options.max_len && options.force_eos {
            eos as usize
        } else {
            let mut best = 0;
            for (i, &l) in lp.iter().enumerate() {
                if l > lp[best] {
                    best = i;
                }
            }
            best
        };
        tokens.push(pick as u32);
        log_prob += lp[pick];
        if pick as u32 == eos {
            break;
        }
    }
    let finished = tokens.last() == Some(&eos);
    let score = normalized_score(log_prob, tokens.len(), options.length_norm);
    finish(model, memory, Candidate { tokens, log_prob }, score, finished)
}
