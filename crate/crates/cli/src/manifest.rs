use std::path::{Path, PathBuf};

use dcpl::decomp::{DecompositionKind, Tolerance};
use dcpl::indicators::Indicator;
use dcpl::model::BeamOptions;
use serde::Serialize;

use crate::output::{to_json_pretty, write_atomic, CliResult, Failure};

#[derive(Debug, Clone, Serialize)]
pub struct RunModels {
    pub id: String,
    pub checkpoints: Vec<PathBuf>,
}

/// Everything a run depends on. Serialized next to directory outputs; the
/// output location itself is left out so that runs into different
/// directories stay byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub models: Vec<RunModels>,
    pub corpus: PathBuf,
    pub decompositions: Vec<DecompositionKind>,
    pub decodings: Vec<&'static str>,
    pub beam: BeamOptions,
    pub indicators: Vec<Indicator>,
    pub tolerance: Tolerance,
    pub seed: u64,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl RunManifest {
    pub fn new(models: Vec<RunModels>, corpus: PathBuf) -> Self {
        Self {
            models,
            corpus,
            decompositions: Vec::new(),
            decodings: vec!["forced"],
            beam: BeamOptions::default(),
            indicators: Indicator::ALL.to_vec(),
            tolerance: Tolerance::default(),
            seed: 0,
            out: None,
        }
    }

    pub fn single(model: &Path, corpus: &Path) -> Self {
        Self::new(
            vec![RunModels {
                id: model.display().to_string(),
                checkpoints: vec![model.to_path_buf()],
            }],
            corpus.to_path_buf(),
        )
    }

    pub fn validate(&self) -> CliResult {
        let invalid = |m: String| Failure::validation("InvalidManifest", m);
        if self.models.is_empty() || self.models.iter().any(|m| m.checkpoints.is_empty()) {
            return Err(invalid("every run needs at least one checkpoint".into()));
        }
        let paths = self.models.iter().flat_map(|m| m.checkpoints.iter()).chain([&self.corpus]);
        for path in paths {
            if !path.exists() {
                return Err(invalid(format!("{} does not exist", path.display())));
            }
        }
        let tol = self.tolerance;
        if !(tol.abs > 0.0 && tol.abs.is_finite() && tol.rel > 0.0 && tol.rel.is_finite()) {
            return Err(invalid(format!(
                "tolerances must be positive, got tol_a = {}, tol_r = {}",
                tol.abs, tol.rel
            )));
        }
        if self.decodings.contains(&"beam") && self.beam.beam == 0 {
            return Err(invalid("beam size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn write_into(&self, dir: &Path) -> CliResult {
        write_atomic(&dir.join("manifest.json"), to_json_pretty(self)?.as_bytes())
    }
}

/// Splits a comma list of checkpoint paths.
pub fn checkpoint_list(list: &str) -> CliResult<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .collect();
    if paths.is_empty() {
        return Err(Failure::validation("InvalidManifest", "empty --models list"));
    }
    Ok(paths)
}
