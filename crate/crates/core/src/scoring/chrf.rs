use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const CHRF_ORDER: usize = 6;
pub const CHRF_BETA: f64 = 2.0;

fn counts<S: Eq + Hash>(symbols: &[S], n: usize) -> HashMap<&[S], usize> {
    let mut out = HashMap::new();
    for gram in symbols.windows(n) {
        *out.entry(gram).or_insert(0) += 1;
    }
    out
}

/// Sentence chrF in percent over symbol n-grams of orders 1..=`order`.
///
/// Precision and recall are averaged over the orders both sequences are long
/// enough to have, then combined as F_beta. An empty hypothesis or reference
/// (but not both) scores 0.
pub fn chrf_sentence<S: Eq + Hash>(hypothesis: &[S], reference: &[S], order: usize, beta: f64) -> Result<f64> {
    if order == 0 || !(beta > 0.0) {
        return Err(Error::InvalidConfig(format!("chrF needs order ≥ 1 and beta > 0, got {order} and {beta}")));
    }
    if hypothesis.is_empty() && reference.is_empty() {
        return Err(Error::EmptyInput("chrF of two empty sequences".into()));
    }
    let (mut precision, mut recall, mut used) = (0.0, 0.0, 0usize);
    for n in 1..=order {
        if hypothesis.len() < n || reference.len() < n {
            continue;
        }
        let hc = counts(hypothesis, n);
        let rc = counts(reference, n);
        let matched: usize = hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum();
        precision += matched as f64 / (hypothesis.len() + 1 - n) as f64;
        recall += matched as f64 / (reference.len() + 1 - n) as f64;
        used += 1;
    }
    if used == 0 {
        return Ok(0.0);
    }
    let (p, r) = (precision / used as f64, recall / used as f64);
    if p + r == 0.0 {
        return Ok(0.0);
    }
    let b2 = beta * beta;
    Ok(100.0 * (1.0 + b2) * p * r / (b2 * p + r))
}

/// Decimal rendering of token ids with the separating whitespace dropped.
pub fn render_ids(ids: &[u32]) -> Vec<char> {
    ids.iter().flat_map(|id| id.to_string().chars().collect::<Vec<_>>()).collect()
}

/// Sentence chrF of token ids, with default order and beta.
pub fn chrf_ids(hypothesis: &[u32], reference: &[u32]) -> Result<f64> {
    chrf_sentence(&render_ids(hypothesis), &render_ids(reference), CHRF_ORDER, CHRF_BETA)
}

/// Corpus chrF as the mean of sentence scores.
pub fn chrf_corpus_ids<H: AsRef<[u32]>, R: AsRef<[u32]>>(hypotheses: &[H], references: &[R]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::LengthMismatch(hypotheses.len(), references.len()));
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = 0.0;
    for (h, r) in hypotheses.iter().zip(references) {
        total += chrf_ids(h.as_ref(), r.as_ref())?;
    }
    Ok(total / hypotheses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_and_disjoint() {
        let x: Vec<char> = "abcab".chars().collect();
        assert_abs_diff_eq!(chrf_sentence(&x, &x, 6, 2.0).unwrap(), 100.0, epsilon = 1e-12);
        let y: Vec<char> = "xyz".chars().collect();
        assert_eq!(chrf_sentence(&x, &y, 6, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn hand_enumerated_example() {
        // hyp "abc", ref "abd", order 2.
        // Unigrams: a, b match -> P = 2/3, R = 2/3. Bigrams: ab matches -> P = 1/2, R = 1/2.
        // Averages: P = R = 7/12, so F_beta = 7/12 for any beta.
        let h: Vec<char> = "abc".chars().collect();
        let r: Vec<char> = "abd".chars().collect();
        assert_abs_diff_eq!(chrf_sentence(&h, &r, 2, 2.0).unwrap(), 100.0 * 7.0 / 12.0, epsilon = 1e-12);
        // hyp "ab", ref "abab", order 1: matches 2, P = 1, R = 1/2; F_2 = 5·0.5 / (4 + 0.5).
        let h: Vec<char> = "ab".chars().collect();
        let r: Vec<char> = "abab".chars().collect();
        assert_abs_diff_eq!(chrf_sentence(&h, &r, 1, 2.0).unwrap(), 100.0 * 2.5 / 4.5, epsilon = 1e-12);
    }

    #[test]
    fn errors_and_empty_sides() {
        let e: Vec<char> = vec![];
        let x: Vec<char> = "ab".chars().collect();
        assert!(matches!(chrf_sentence(&e, &e, 6, 2.0), Err(Error::EmptyInput(_))));
        assert_eq!(chrf_sentence(&e, &x, 6, 2.0).unwrap(), 0.0);
        assert!(chrf_sentence(&x, &x, 0, 2.0).is_err());
        assert!(chrf_sentence(&x, &x, 2, 0.0).is_err());
    }

    #[test]
    fn id_rendering() {
        assert_eq!(render_ids(&[1, 23, 4]), vec!['1', '2', '3', '4']);
        assert_abs_diff_eq!(chrf_ids(&[5, 12], &[5, 12]).unwrap(), 100.0, epsilon = 1e-12);
        let c = chrf_corpus_ids(&[vec![5u32, 12], vec![3]], &[vec![5u32, 12], vec![4]]).unwrap();
        assert_abs_diff_eq!(c, 50.0, epsilon = 1e-12);
    }
}
