//! Pre-tokenized parallel corpora, stored as JSON lines:
//! `{"id": "...", "src_ids": [...], "tgt_ids": [...]}`.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub src_ids: Vec<u32>,
    pub tgt_ids: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Result<Self> {
        let corpus = Self { sentences };
        corpus.check_unique_ids()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.sentences {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidCorpus(format!("duplicate sentence id `{}`", s.id)));
            }
        }
        Ok(())
    }

    /// Checks token ranges and lengths against a model configuration. The
    /// decoder input carries one extra start token, so targets may hold at
    /// most `max_positions - 1` tokens.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        self.check_unique_ids()?;
        for s in &self.sentences {
            if s.src_ids.is_empty() {
                return Err(Error::EmptySequence(format!("source of sentence `{}`", s.id)));
            }
            if s.src_ids.len() > config.max_positions {
                return Err(Error::SequenceTooLong {
                    len: s.src_ids.len(),
                    max: config.max_positions,
                });
            }
            if s.tgt_ids.len() + 1 > config.max_positions {
                return Err(Error::SequenceTooLong {
                    len: s.tgt_ids.len() + 1,
                    max: config.max_positions,
                });
            }
            if let Some(&id) = s
                .src_ids
                .iter()
                .chain(&s.tgt_ids)
                .find(|&&id| id as usize >= config.vocab_size)
            {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab_size: config.vocab_size,
                });
            }
        }
        Ok(())
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut sentences = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let s: Sentence = serde_json::from_str(line).map_err(|e| Error::MalformedRow {
                line: i + 1,
                message: e.to_string(),
            })?;
            sentences.push(s);
        }
        Self::new(sentences)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    #[test]
    fn parses_jsonl() {
        let c = Corpus::from_jsonl(
            "{\"id\":\"a\",\"src_ids\":[2,3],\"tgt_ids\":[4]}\n\n{\"id\":\"b\",\"src_ids\":[5],\"tgt_ids\":[]}\n",
        )
        .unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[1].id, "b");
        assert_eq!(Corpus::from_jsonl(&c.to_jsonl().unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_duplicate_ids() {
        let r = Corpus::from_jsonl(
            "{\"id\":\"a\",\"src_ids\":[2],\"tgt_ids\":[]}\n{\"id\":\"a\",\"src_ids\":[3],\"tgt_ids\":[]}",
        );
        assert!(matches!(r, Err(Error::InvalidCorpus(_))));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let r = Corpus::from_jsonl("{\"id\":\"a\",\"src_ids\":[2],\"tgt_ids\":[]}\nnot json");
        assert!(matches!(r, Err(Error::MalformedRow { line: 2, .. })));
    }

    #[test]
    fn validates_against_config() {
        let cfg = ModelConfig::toy(1, 8, 2, Activation::Relu);
        let ok = Corpus::new(vec![Sentence {
            id: "a".into(),
            src_ids: vec![3, 4],
            tgt_ids: vec![5],
        }])
        .unwrap();
        ok.validate(&cfg).unwrap();
        let bad = Corpus::new(vec![Sentence {
            id: "a".into(),
            src_ids: vec![99],
            tgt_ids: vec![],
        }])
        .unwrap();
        assert!(matches!(bad.validate(&cfg), Err(Error::TokenOutOfRange { id: 99, .. })));
        let long = Corpus::new(vec![Sentence {
            id: "a".into(),
            src_ids: vec![2],
            tgt_ids: vec![2; 64],
        }])
        .unwrap();
        assert!(matches!(long.validate(&cfg), Err(Error::SequenceTooLong { .. })));
    }
}
