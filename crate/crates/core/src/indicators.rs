//! Scalar indicators of how a decomposition term relates to the embedding it
//! belongs to, and their aggregation into corpus means and checkpoint series.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence};
use crate::decomp::{Decomposition, DecompositionKind, Term, TermSource};
use crate::error::{Error, Result};
use crate::model::{decode_beam, decode_forced, encode, BeamOptions, ForwardTrace, Model};
use crate::scalar::{CompensatedSum, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Indicator {
    #[serde(rename = "nr")]
    NormRatio,
    #[serde(rename = "cos")]
    Cosine,
    #[serde(rename = "mu")]
    Importance,
}

impl Indicator {
    pub const ALL: [Indicator; 3] = [Indicator::NormRatio, Indicator::Cosine, Indicator::Importance];

    pub fn name(self) -> &'static str {
        match self {
            Indicator::NormRatio => "nr",
            Indicator::Cosine => "cos",
            Indicator::Importance => "mu",
        }
    }

    pub fn evaluate<T: Scalar>(self, z: ArrayView1<'_, T>, e: ArrayView1<'_, T>) -> Result<T> {
        match self {
            Indicator::NormRatio => norm_ratio(z, e),
            Indicator::Cosine => cosine(z, e),
            Indicator::Importance => importance_mu(z, e),
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Indicator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nr" => Ok(Indicator::NormRatio),
            "cos" => Ok(Indicator::Cosine),
            "mu" => Ok(Indicator::Importance),
            other => Err(Error::InvalidConfig(format!("unknown indicator `{other}`"))),
        }
    }
}

/// One indicator value of one term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorValue {
    pub term: Term,
    pub indicator: Indicator,
    pub value: f64,
}

fn norm<T: Scalar>(v: ArrayView1<'_, T>) -> T {
    v.dot(&v).sqrt()
}

fn zero_norm() -> Error {
    Error::ZeroNorm {
        sentence_id: None,
        position: None,
    }
}

/// ‖z‖ / ‖e‖.
pub fn norm_ratio<T: Scalar>(z: ArrayView1<'_, T>, e: ArrayView1<'_, T>) -> Result<T> {
    let ne = norm(e);
    if ne == T::zero() {
        return Err(zero_norm());
    }
    Ok(norm(z) / ne)
}

/// z·e / (‖z‖‖e‖), clamped to [-1, 1].
pub fn cosine<T: Scalar>(z: ArrayView1<'_, T>, e: ArrayView1<'_, T>) -> Result<T> {
    let (nz, ne) = (norm(z), norm(e));
    if nz == T::zero() || ne == T::zero() {
        return Err(zero_norm());
    }
    Ok((z.dot(&e) / (nz * ne)).max(-T::one()).min(T::one()))
}

/// z·e / ‖e‖².
pub fn importance_mu<T: Scalar>(z: ArrayView1<'_, T>, e: ArrayView1<'_, T>) -> Result<T> {
    let ee = e.dot(&e);
    if ee == T::zero() {
        return Err(zero_norm());
    }
    Ok(z.dot(&e) / ee)
}

fn locate(err: Error, sentence_id: &str, position: usize) -> Error {
    match err {
        Error::ZeroNorm { .. } => Error::ZeroNorm {
            sentence_id: Some(sentence_id.to_string()),
            position: Some(position),
        },
        other => other,
    }
}

/// Token-level mean of one indicator of one term over every position of
/// every sentence.
pub fn corpus_mean_indicator<T, D, S>(decompositions: &[(S, D)], term: Term, indicator: Indicator) -> Result<f64>
where
    T: Scalar,
    D: TermSource<T>,
    S: AsRef<str>,
{
    let mut acc = CompensatedSum::<f64>::new();
    let mut count = 0usize;
    for (id, d) in decompositions {
        for t in 0..d.num_positions() {
            let z = d
                .term(term, t)
                .ok_or_else(|| Error::InvalidConfig(format!("term `{term}` is not part of this decomposition")))?;
            let v = indicator
                .evaluate(z, d.embedding(t))
                .map_err(|e| locate(e, id.as_ref(), t))?;
            acc.add(v.to_f64_lossless());
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(acc.total() / count as f64)
}

/// How decoder embeddings are obtained for a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Decoding {
    /// Teacher forcing on the gold target.
    Forced,
    /// The model's own beam-search output.
    Beam(BeamOptions),
}

impl Decoding {
    pub fn name(&self) -> &'static str {
        match self {
            Decoding::Forced => "forced",
            Decoding::Beam(_) => "beam",
        }
    }
}

/// Decoder trace of one sentence. Under beam search the trace covers the
/// winning hypothesis (without its end-of-sequence token), whether or not it
/// finished.
pub fn sentence_trace<T: Scalar>(model: &Model<T>, sentence: &Sentence, decoding: &Decoding) -> Result<ForwardTrace<T>> {
    let memory = encode(model, &sentence.src_ids)?;
    match decoding {
        Decoding::Forced => decode_forced(model, memory.view(), &sentence.tgt_ids),
        Decoding::Beam(options) => Ok(decode_beam(model, memory.view(), options)?.trace),
    }
}

/// Indicator values of one sentence, one entry per position.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceIndicators {
    pub sentence_id: String,
    pub num_positions: usize,
    pub values: BTreeMap<(Term, Indicator), Vec<f64>>,
}

impl SentenceIndicators {
    pub fn compute<T: Scalar, D: TermSource<T>>(
        sentence_id: &str,
        decomposition: &D,
        indicators: &[Indicator],
    ) -> Result<Self> {
        let mut values = BTreeMap::new();
        for &term in decomposition.term_names() {
            for &indicator in indicators {
                let mut row = Vec::with_capacity(decomposition.num_positions());
                for t in 0..decomposition.num_positions() {
                    let z = decomposition.term(term, t).expect("term listed by the decomposition");
                    let v = indicator
                        .evaluate(z, decomposition.embedding(t))
                        .map_err(|e| locate(e, sentence_id, t))?;
                    row.push(v.to_f64_lossless());
                }
                values.insert((term, indicator), row);
            }
        }
        Ok(Self {
            sentence_id: sentence_id.to_string(),
            num_positions: decomposition.num_positions(),
            values,
        })
    }

    /// Mean over the positions of this sentence.
    pub fn mean(&self, term: Term, indicator: Indicator) -> Option<f64> {
        let row = self.values.get(&(term, indicator))?;
        if row.is_empty() {
            return None;
        }
        let mut acc = CompensatedSum::<f64>::new();
        acc.extend(row.iter().copied());
        Some(acc.total() / row.len() as f64)
    }
}

/// Decomposes every sentence of a corpus and evaluates indicators on every
/// term. Sentences run in parallel; results keep corpus order.
pub fn evaluate_corpus<T: Scalar>(
    model: &Model<T>,
    corpus: &Corpus,
    kind: DecompositionKind,
    decoding: &Decoding,
    indicators: &[Indicator],
) -> Result<Vec<SentenceIndicators>> {
    corpus
        .sentences
        .par_iter()
        .map(|s| {
            let trace = sentence_trace(model, s, decoding)?;
            let d = Decomposition::compute(kind, model, &trace)?;
            SentenceIndicators::compute(&s.id, &d, indicators)
        })
        .collect()
}

/// Token-level corpus means from per-sentence values, accumulated in corpus order.
pub fn corpus_means(rows: &[SentenceIndicators]) -> Result<BTreeMap<(Term, Indicator), f64>> {
    let mut sums: BTreeMap<(Term, Indicator), (CompensatedSum<f64>, usize)> = BTreeMap::new();
    for row in rows {
        for (key, values) in &row.values {
            let entry = sums.entry(*key).or_default();
            entry.0.extend(values.iter().copied());
            entry.1 += values.len();
        }
    }
    if sums.values().all(|(_, n)| *n == 0) {
        return Err(Error::EmptyCorpus);
    }
    Ok(sums
        .into_iter()
        .map(|(k, (acc, n))| (k, acc.total() / n as f64))
        .collect())
}

/// Corpus means of one term and indicator across the checkpoints of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSeries {
    pub model: String,
    pub decomposition: DecompositionKind,
    pub term: Term,
    pub indicator: Indicator,
    /// (checkpoint, value), checkpoints strictly increasing.
    pub values: Vec<(u32, f64)>,
}

impl IndicatorSeries {
    pub fn checkpoints(&self) -> Vec<u32> {
        self.values.iter().map(|(c, _)| *c).collect()
    }

    pub fn values_only(&self) -> Vec<f64> {
        self.values.iter().map(|(_, v)| *v).collect()
    }

    fn check_order(&self) -> Result<()> {
        if self.values.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::MisalignedCheckpoints(format!(
                "checkpoints of `{}` are not strictly increasing",
                self.model
            )));
        }
        Ok(())
    }
}

/// Series for one term and indicator over checkpoints numbered 1, 2, ...
pub fn build_series<T: Scalar>(
    model_id: &str,
    checkpoints: &[Model<T>],
    corpus: &Corpus,
    kind: DecompositionKind,
    term: Term,
    indicator: Indicator,
    decoding: &Decoding,
) -> Result<IndicatorSeries> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidConfig("no checkpoints given".into()));
    }
    if !kind.terms().contains(&term) {
        return Err(Error::InvalidConfig(format!("term `{term}` is not part of `{kind}`")));
    }
    let mut values = Vec::with_capacity(checkpoints.len());
    for (i, model) in checkpoints.iter().enumerate() {
        let rows = evaluate_corpus(model, corpus, kind, decoding, &[indicator])?;
        let means = corpus_means(&rows)?;
        values.push((i as u32 + 1, means[&(term, indicator)]));
    }
    Ok(IndicatorSeries {
        model: model_id.to_string(),
        decomposition: kind,
        term,
        indicator,
        values,
    })
}

/// Formats a float with 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub const SERIES_HEADER: [&str; 6] = ["model", "checkpoint", "decomposition", "term", "indicator", "value"];

pub fn write_series_csv<W: Write>(writer: W, series: &[IndicatorSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::InvalidConfig(format!("writing series: {e}"));
    w.write_record(SERIES_HEADER).map_err(io)?;
    for s in series {
        for (checkpoint, value) in &s.values {
            w.write_record([
                s.model.as_str(),
                &checkpoint.to_string(),
                s.decomposition.name(),
                s.term.symbol(),
                s.indicator.name(),
                &format_float(*value),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::InvalidConfig(format!("writing series: {e}")))?;
    Ok(())
}

/// Reads series written by [`write_series_csv`], grouped by
/// (model, decomposition, term, indicator) in order of first appearance.
pub fn read_series_csv<R: Read>(reader: R) -> Result<Vec<IndicatorSeries>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(|e| Error::MalformedRow {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().ne(SERIES_HEADER) {
        return Err(Error::MalformedRow {
            line: 1,
            message: format!("expected header `{}`", SERIES_HEADER.join(",")),
        });
    }
    let mut out: Vec<IndicatorSeries> = Vec::new();
    for (i, record) in r.records().enumerate() {
        let line = i + 2;
        let bad = |message: String| Error::MalformedRow { line, message };
        let record = record.map_err(|e| bad(e.to_string()))?;
        let field = |j: usize| record.get(j).ok_or_else(|| bad(format!("missing field {}", j + 1)));
        let model = field(0)?.to_string();
        let checkpoint: u32 = field(1)?.parse().map_err(|e| bad(format!("checkpoint: {e}")))?;
        let decomposition: DecompositionKind = field(2)?.parse().map_err(|e: Error| bad(e.to_string()))?;
        let term: Term = field(3)?.parse().map_err(|e: Error| bad(e.to_string()))?;
        let indicator: Indicator = field(4)?.parse().map_err(|e: Error| bad(e.to_string()))?;
        let value: f64 = field(5)?.parse().map_err(|e| bad(format!("value: {e}")))?;
        match out.iter_mut().find(|s| {
            s.model == model && s.decomposition == decomposition && s.term == term && s.indicator == indicator
        }) {
            Some(s) => s.values.push((checkpoint, value)),
            None => out.push(IndicatorSeries {
                model,
                decomposition,
                term,
                indicator,
                values: vec![(checkpoint, value)],
            }),
        }
    }
    for s in &out {
        s.check_order()?;
    }
    Ok(out)
}
