use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::correlation::{spearman, PairedSeries};
use crate::error::{Error, Result};
use crate::indicators::IndicatorSeries;
use crate::scoring::{Granularity, ScoreTable};

/// How checkpoints are paired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Corpus protocol: consecutive checkpoints of one run. Sentence
    /// protocol: indicator and score differences from the same sentence.
    #[default]
    Paired,
    /// Corpus protocol: any two checkpoints. Sentence protocol: the score
    /// difference comes from an independently drawn sentence.
    Random,
}

/// Correlation between indicator and score changes across checkpoint pairs.
///
/// Pairs are drawn without replacement from the available ones (consecutive
/// or arbitrary, per `pairing`); `num_pairs = None` uses all of them. Returns
/// the magnitude of Spearman's ρ between the signed differences.
pub fn corpus_correlation_protocol(
    series: &IndicatorSeries,
    scores: &ScoreTable,
    seed: u64,
    num_pairs: Option<usize>,
    pairing: Pairing,
) -> Result<f64> {
    if scores.granularity() != Granularity::Corpus {
        return Err(Error::MisalignedCheckpoints("corpus protocol needs corpus-level scores".into()));
    }
    let mut points = Vec::with_capacity(series.values.len());
    for &(checkpoint, value) in &series.values {
        let score = scores.corpus_score(checkpoint).ok_or_else(|| {
            Error::MisalignedCheckpoints(format!("no score for checkpoint {checkpoint}"))
        })?;
        points.push((value, score));
    }
    let candidates: Vec<(usize, usize)> = match pairing {
        Pairing::Paired => (1..points.len()).map(|i| (i - 1, i)).collect(),
        Pairing::Random => (0..points.len())
            .flat_map(|i| (i + 1..points.len()).map(move |j| (i, j)))
            .collect(),
    };
    let wanted = num_pairs.unwrap_or(candidates.len());
    if wanted > candidates.len() {
        return Err(Error::InsufficientPairs {
            needed: wanted,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut dx, mut dy) = (Vec::with_capacity(wanted), Vec::with_capacity(wanted));
    for k in index::sample(&mut rng, candidates.len(), wanted) {
        let (i, j) = candidates[k];
        dx.push(points[j].0 - points[i].0);
        dy.push(points[j].1 - points[i].1);
    }
    Ok(spearman(&PairedSeries::new(dx, dy)?)?.abs())
}

/// Per-sentence indicator values and scores of one training run, both keyed
/// by (checkpoint, sentence id).
#[derive(Debug, Clone, Copy)]
pub struct SentenceRun<'a> {
    pub indicators: &'a ScoreTable,
    pub scores: &'a ScoreTable,
}

/// Sentence-level protocol: for each run, draw `k` sentences without
/// replacement and, for each, two distinct checkpoints; pool the signed
/// differences of indicator and score over all runs and return |ρ|.
pub fn sentence_correlation_protocol(runs: &[SentenceRun<'_>], k: usize, seed: u64, pairing: Pairing) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::InsufficientSentences { needed: k, available: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut dx, mut dy) = (Vec::new(), Vec::new());
    for (r, run) in runs.iter().enumerate() {
        if run.indicators.granularity() != Granularity::Sentence || run.scores.granularity() != Granularity::Sentence {
            return Err(Error::MisalignedCheckpoints(format!("run {r}: sentence protocol needs sentence-level tables")));
        }
        if !run.indicators.same_keys(run.scores) {
            return Err(Error::MisalignedCheckpoints(format!(
                "run {r}: indicator and score tables cover different (checkpoint, sentence) pairs"
            )));
        }
        let checkpoints = run.indicators.checkpoints();
        let sentences = run.indicators.sentence_ids();
        if checkpoints.len() < 2 {
            return Err(Error::MisalignedCheckpoints(format!("run {r}: needs at least 2 checkpoints")));
        }
        if run.indicators.len() != checkpoints.len() * sentences.len() {
            return Err(Error::MisalignedCheckpoints(format!(
                "run {r}: not every sentence is present at every checkpoint"
            )));
        }
        if sentences.len() < k {
            return Err(Error::InsufficientSentences {
                needed: k,
                available: sentences.len(),
            });
        }
        for s in index::sample(&mut rng, sentences.len(), k) {
            let pair = index::sample(&mut rng, checkpoints.len(), 2);
            let (a, b) = (checkpoints[pair.index(0)], checkpoints[pair.index(1)]);
            let id = &sentences[s];
            let score_id = match pairing {
                Pairing::Paired => id,
                Pairing::Random => &sentences[rand::Rng::random_range(&mut rng, 0..sentences.len())],
            };
            let value = |t: &ScoreTable, c: u32, sid: &str| t.get(c, sid).expect("completeness checked above");
            dx.push(value(run.indicators, b, id) - value(run.indicators, a, id));
            dy.push(value(run.scores, b, score_id) - value(run.scores, a, score_id));
        }
    }
    Ok(spearman(&PairedSeries::new(dx, dy)?)?.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::{DecompositionKind, Term};
    use crate::indicators::Indicator;

    fn series(values: &[f64]) -> IndicatorSeries {
        IndicatorSeries {
            model: "m".into(),
            decomposition: DecompositionKind::Sl,
            term: Term::Source,
            indicator: Indicator::NormRatio,
            values: values.iter().enumerate().map(|(i, v)| (i as u32 + 1, *v)).collect(),
        }
    }

    fn corpus_scores(values: &[f64]) -> ScoreTable {
        let mut t = ScoreTable::new(Granularity::Corpus);
        for (i, v) in values.iter().enumerate() {
            t.insert(i as u32 + 1, "*", *v).unwrap();
        }
        t
    }

    #[test]
    fn identical_or_negated_differences_give_one() {
        let v = [0.1, 0.5, 0.2, 0.9, 0.3, 0.35, 1.2];
        let s = series(&v);
        assert_eq!(corpus_correlation_protocol(&s, &corpus_scores(&v), 1, None, Pairing::Paired).unwrap(), 1.0);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(corpus_correlation_protocol(&s, &corpus_scores(&neg), 1, None, Pairing::Paired).unwrap(), 1.0);
        assert_eq!(corpus_correlation_protocol(&s, &corpus_scores(&v), 3, Some(10), Pairing::Random).unwrap(), 1.0);
    }

    #[test]
    fn monotone_series_correlate_strongly() {
        // Accelerating indicator and decelerating score, both increasing:
        // consecutive differences are oppositely ordered, so |ρ| = 1.
        let ind: Vec<f64> = (0..10).map(|i| (i as f64).powi(2)).collect();
        let score: Vec<f64> = (0..10).map(|i| (1.0 + i as f64).ln()).collect();
        let rho = corpus_correlation_protocol(&series(&ind), &corpus_scores(&score), 7, None, Pairing::Paired).unwrap();
        assert!((0.9..=1.0).contains(&rho), "{rho}");
    }

    #[test]
    fn misaligned_and_insufficient() {
        let s = series(&[0.1, 0.2, 0.4]);
        assert!(matches!(
            corpus_correlation_protocol(&s, &corpus_scores(&[1.0, 2.0]), 0, None, Pairing::Paired),
            Err(Error::MisalignedCheckpoints(_))
        ));
        assert!(matches!(
            corpus_correlation_protocol(&s, &corpus_scores(&[1.0, 2.0, 4.0]), 0, Some(5), Pairing::Paired),
            Err(Error::InsufficientPairs { needed: 5, available: 2 })
        ));
        assert!(matches!(
            corpus_correlation_protocol(&s, &corpus_scores(&[1.0, 2.0, 4.0]), 0, Some(1), Pairing::Paired),
            Err(Error::DegenerateSeries(_))
        ));
    }

    fn sentence_table(f: impl Fn(u32, usize) -> f64, checkpoints: u32, sentences: usize) -> ScoreTable {
        let mut t = ScoreTable::new(Granularity::Sentence);
        for c in 1..=checkpoints {
            for s in 0..sentences {
                t.insert(c, &format!("s{s:03}"), f(c, s)).unwrap();
            }
        }
        t
    }

    #[test]
    fn sentence_protocol_examples() {
        let ind = sentence_table(|c, s| (c as f64 * 0.37 + s as f64 * 1.3).sin(), 5, 40);
        let same = sentence_correlation_protocol(&[SentenceRun { indicators: &ind, scores: &ind }], 30, 3, Pairing::Paired);
        assert_eq!(same.unwrap(), 1.0);
        let flat = sentence_table(|_, _| 2.0, 5, 40);
        assert!(matches!(
            sentence_correlation_protocol(&[SentenceRun { indicators: &ind, scores: &flat }], 30, 3, Pairing::Paired),
            Err(Error::DegenerateSeries(_))
        ));
        let two = sentence_table(|c, s| c as f64 + s as f64, 2, 4);
        assert!(matches!(
            sentence_correlation_protocol(&[SentenceRun { indicators: &two, scores: &two }], 1, 3, Pairing::Paired),
            Err(Error::DegenerateSeries(_))
        ));
        assert!(matches!(
            sentence_correlation_protocol(&[SentenceRun { indicators: &two, scores: &two }], 5, 3, Pairing::Paired),
            Err(Error::InsufficientSentences { needed: 5, available: 4 })
        ));
    }

    #[test]
    fn sentence_protocol_is_deterministic_and_bounded() {
        let ind = sentence_table(|c, s| (c as f64 * 0.37 + s as f64 * 1.3).sin(), 6, 50);
        let sc = sentence_table(|c, s| (c as f64 * 0.11 + s as f64 * 0.7).cos(), 6, 50);
        let runs = [SentenceRun { indicators: &ind, scores: &sc }, SentenceRun { indicators: &sc, scores: &ind }];
        for pairing in [Pairing::Paired, Pairing::Random] {
            let a = sentence_correlation_protocol(&runs, 20, 11, pairing).unwrap();
            let b = sentence_correlation_protocol(&runs, 20, 11, pairing).unwrap();
            assert_eq!(a, b);
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn sentence_protocol_rejects_mismatched_tables() {
        let ind = sentence_table(|c, s| c as f64 + s as f64, 3, 5);
        let sc = sentence_table(|c, s| c as f64 + s as f64, 3, 4);
        assert!(matches!(
            sentence_correlation_protocol(&[SentenceRun { indicators: &ind, scores: &sc }], 2, 0, Pairing::Paired),
            Err(Error::MisalignedCheckpoints(_))
        ));
    }
}
