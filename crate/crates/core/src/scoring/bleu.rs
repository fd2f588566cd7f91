use std::collections::HashMap;

use crate::error::{Error, Result};

fn ngram_counts(tokens: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Corpus BLEU-4 on token ids, in percent.
///
/// Clipped n-gram matches and hypothesis n-gram totals are pooled over the
/// corpus. Orders for which the hypotheses contain no n-grams at all are left
/// out of the geometric mean, so short corpora can still score. Without
/// smoothing any zero precision gives 0; `smoothing` adds one to matches and
/// totals for orders 2 to 4.
pub fn bleu_corpus<H: AsRef<[u32]>, R: AsRef<[u32]>>(hypotheses: &[H], references: &[R], smoothing: bool) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::LengthMismatch(hypotheses.len(), references.len()));
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            matches[n - 1] += hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..4 {
        if totals[n] == 0 {
            continue;
        }
        let (m, t) = if smoothing && n > 0 {
            (matches[n] + 1, totals[n] + 1)
        } else {
            (matches[n], totals[n])
        };
        if m == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
        orders += 1;
    }
    let brevity = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * (log_sum / orders as f64).exp())
}
