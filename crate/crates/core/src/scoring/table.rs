use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::format_float;

/// Sentence id used by corpus-level rows.
pub const CORPUS_KEY: &str = "*";
pub const SCORE_HEADER: [&str; 3] = ["checkpoint", "sentence_id", "score"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Corpus,
    Sentence,
}

/// Scores keyed by (checkpoint, sentence id); corpus tables use the id `*`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    granularity: Granularity,
    entries: BTreeMap<(u32, String), f64>,
}

impl ScoreTable {
    pub fn new(granularity: Granularity) -> Self {
        Self {
            granularity,
            entries: BTreeMap::new(),
        }
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn insert(&mut self, checkpoint: u32, sentence_id: &str, score: f64) -> Result<()> {
        let corpus_row = sentence_id == CORPUS_KEY;
        if corpus_row != (self.granularity == Granularity::Corpus) {
            return Err(Error::InvalidConfig(format!(
                "sentence id `{sentence_id}` does not fit a {:?} table",
                self.granularity
            )));
        }
        if !score.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite score for checkpoint {checkpoint}")));
        }
        let key = (checkpoint, sentence_id.to_string());
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateKey {
                checkpoint,
                sentence_id: key.1,
            });
        }
        self.entries.insert(key, score);
        Ok(())
    }

    pub fn get(&self, checkpoint: u32, sentence_id: &str) -> Option<f64> {
        self.entries.get(&(checkpoint, sentence_id.to_string())).copied()
    }

    pub fn corpus_score(&self, checkpoint: u32) -> Option<f64> {
        self.get(checkpoint, CORPUS_KEY)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn checkpoints(&self) -> Vec<u32> {
        self.entries.keys().map(|(c, _)| *c).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn sentence_ids(&self) -> Vec<String> {
        self.entries
            .keys()
            .map(|(_, s)| s.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str, f64)> {
        self.entries.iter().map(|((c, s), v)| (*c, s.as_str(), *v))
    }

    pub fn same_keys(&self, other: &ScoreTable) -> bool {
        self.entries.len() == other.entries.len() && self.entries.keys().eq(other.entries.keys())
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = r.headers().map_err(|e| Error::MalformedRow {
            line: 1,
            message: e.to_string(),
        })?;
        if headers.iter().ne(SCORE_HEADER) {
            return Err(Error::MalformedRow {
                line: 1,
                message: format!("expected header `{}`", SCORE_HEADER.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (i, record) in r.records().enumerate() {
            let line = i + 2;
            let bad = |message: String| Error::MalformedRow { line, message };
            let record = record.map_err(|e| bad(e.to_string()))?;
            if record.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", record.len())));
            }
            let checkpoint: u32 = record[0].parse().map_err(|e| bad(format!("checkpoint: {e}")))?;
            let score: f64 = record[2].parse().map_err(|e| bad(format!("score: {e}")))?;
            if !score.is_finite() {
                return Err(bad("score is not finite".into()));
            }
            if record[1].is_empty() {
                return Err(bad("empty sentence id".into()));
            }
            rows.push((line, checkpoint, record[1].to_string(), score));
        }
        let Some(first) = rows.first() else {
            return Err(Error::MalformedRow {
                line: 1,
                message: "no score rows".into(),
            });
        };
        let granularity = if first.2 == CORPUS_KEY {
            Granularity::Corpus
        } else {
            Granularity::Sentence
        };
        let mut table = Self::new(granularity);
        for (line, checkpoint, id, score) in rows {
            if (id == CORPUS_KEY) != (granularity == Granularity::Corpus) {
                return Err(Error::MalformedRow {
                    line,
                    message: "corpus and sentence rows are mixed".into(),
                });
            }
            table.insert(checkpoint, &id, score)?;
        }
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let err = |e: csv::Error| Error::InvalidConfig(format!("writing scores: {e}"));
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(SCORE_HEADER).map_err(err)?;
        for ((c, s), v) in &self.entries {
            w.write_record([c.to_string().as_str(), s, &format_float(*v)]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::InvalidConfig(format!("writing scores: {e}")))?;
        Ok(())
    }
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ScoreTable::from_csv(file)
}
