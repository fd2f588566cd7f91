use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use dcpl::decomp::{DecompositionKind, Term};
use dcpl::indicators::{format_float, read_series_csv, Indicator, IndicatorSeries};
use dcpl::scoring::{load_scores, Granularity, ScoreTable};
use dcpl::stats::{
    corpus_correlation_protocol, dtw_distance, dtw_heatmap, pitman_test_with_cap, sentence_correlation_protocol,
    SentenceRun,
};
use serde_json::json;

use crate::analysis::SENTENCE_HEADER;
use crate::args::{CorrelateCorpusArgs, CorrelateSentenceArgs, DtwArgs, PermtestArgs};
use crate::output::{emit, write_atomic, CliResult, Failure};

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Failure::validation("InvalidManifest", format!("{} does not exist", path.display()))
        } else {
            Failure::io(path, e)
        }
    })
}

/// Series from every file, in file order, with model names made unique
/// across files by suffixing `#k` on repeats.
fn load_series(paths: &[PathBuf]) -> CliResult<Vec<IndicatorSeries>> {
    let mut out: Vec<IndicatorSeries> = Vec::new();
    let mut owner: BTreeMap<String, usize> = BTreeMap::new();
    for (file, path) in paths.iter().enumerate() {
        for mut s in read_series_csv(open(path)?)? {
            let mut name = s.model.clone();
            let mut k = 1;
            while owner.get(&name).is_some_and(|&f| f != file) {
                k += 1;
                name = format!("{}#{k}", s.model);
            }
            owner.insert(name.clone(), file);
            s.model = name;
            out.push(s);
        }
    }
    Ok(out)
}

fn keep<T: PartialEq>(wanted: &[T], x: &T) -> bool {
    wanted.is_empty() || wanted.contains(x)
}

type SeriesKey = (DecompositionKind, Term, Indicator);

fn group(series: Vec<IndicatorSeries>) -> BTreeMap<(String, Term, Indicator), Vec<IndicatorSeries>> {
    let mut groups: BTreeMap<(String, Term, Indicator), Vec<IndicatorSeries>> = BTreeMap::new();
    for s in series {
        groups
            .entry((s.decomposition.name().to_string(), s.term, s.indicator))
            .or_default()
            .push(s);
    }
    groups
}

pub fn dtw(a: DtwArgs) -> CliResult {
    let series: Vec<IndicatorSeries> = load_series(&a.series)?
        .into_iter()
        .filter(|s| a.decomp.is_none_or(|d| d == s.decomposition))
        .filter(|s| keep(&a.term, &s.term) && keep(&a.indicator, &s.indicator))
        .collect();
    if series.is_empty() {
        return Err(Failure::validation("EmptySeries", "no series match the filters"));
    }
    let decomps: std::collections::BTreeSet<_> = series.iter().map(|s| s.decomposition.name()).collect();

    let mut dtw_rows = csv::Writer::from_writer(Vec::new());
    let mut heat_rows = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure::validation("Io", e.to_string());
    dtw_rows
        .write_record(["decomposition", "term", "indicator", "model_a", "model_b", "distance", "path_length"])
        .map_err(io)?;
    heat_rows
        .write_record(["term", "indicator", "model_row", "model_col", "z_distance"])
        .map_err(io)?;
    let mut pairs = Vec::new();
    let mut heatmaps = 0usize;
    for ((decomp, term, indicator), members) in group(series) {
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                let r = dtw_distance(&members[i].values_only(), &members[j].values_only())?;
                dtw_rows
                    .write_record([
                        decomp.as_str(),
                        term.symbol(),
                        indicator.name(),
                        &members[i].model,
                        &members[j].model,
                        &format_float(r.distance),
                        &r.path_length.to_string(),
                    ])
                    .map_err(io)?;
                pairs.push(json!({
                    "decomposition": decomp,
                    "term": term,
                    "indicator": indicator,
                    "model_a": members[i].model,
                    "model_b": members[j].model,
                    "distance": r.distance,
                    "path_length": r.path_length,
                }));
            }
        }
        // z-normalizing needs at least two distances, so at least three models.
        if members.len() >= 3 && decomps.len() == 1 {
            let input: Vec<(String, Vec<f64>)> = members.iter().map(|s| (s.model.clone(), s.values_only())).collect();
            for cell in dtw_heatmap(&input)? {
                heat_rows
                    .write_record([
                        term.symbol(),
                        indicator.name(),
                        &cell.model_row,
                        &cell.model_col,
                        &format_float(cell.z_distance),
                    ])
                    .map_err(io)?;
            }
            heatmaps += 1;
        }
    }
    if let Some(dir) = &a.out {
        write_atomic(&dir.join("dtw.csv"), &dtw_rows.into_inner().map_err(|e| Failure::validation("Io", e.to_string()))?)?;
        if heatmaps > 0 {
            let bytes = heat_rows.into_inner().map_err(|e| Failure::validation("Io", e.to_string()))?;
            write_atomic(&dir.join("heatmap.csv"), &bytes)?;
        }
    }
    emit(&json!({ "pairs": pairs, "heatmaps": heatmaps }), None)
}

fn parse_group(raw: &str, flag: &str) -> CliResult<Vec<f64>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Failure::validation("InvalidArguments", format!("{flag}: `{s}` is not a finite number")))
        })
        .collect()
}

pub fn permtest(a: PermtestArgs) -> CliResult {
    let ga = parse_group(&a.group_a, "--group-a")?;
    let gb = parse_group(&a.group_b, "--group-b")?;
    let result = pitman_test_with_cap(&ga, &gb, a.mode.into(), a.seed, a.draws, a.cap)?;
    emit(&result, a.out.as_deref())
}

fn load_table(path: &Path, granularity: Granularity) -> CliResult<ScoreTable> {
    open(path)?;
    let table = load_scores(path)?;
    if table.granularity() != granularity {
        return Err(Failure::validation(
            "MisalignedCheckpoints",
            format!("{} does not hold {granularity:?}-level scores", path.display()),
        ));
    }
    Ok(table)
}

fn run_count_check(runs: usize, scores: usize) -> CliResult {
    if runs != scores {
        return Err(Failure::validation(
            "InvalidManifest",
            format!("{runs} runs found but {scores} --scores files given"),
        ));
    }
    if runs == 0 {
        return Err(Failure::validation("EmptySeries", "no series match the filters"));
    }
    Ok(())
}

pub fn correlate_corpus(a: CorrelateCorpusArgs) -> CliResult {
    let key: SeriesKey = (a.decomp, a.term, a.indicator);
    let series: Vec<IndicatorSeries> = load_series(&a.series)?
        .into_iter()
        .filter(|s| (s.decomposition, s.term, s.indicator) == key)
        .collect();
    run_count_check(series.len(), a.scores.len())?;
    let mut runs = Vec::with_capacity(series.len());
    for (s, path) in series.iter().zip(&a.scores) {
        let table = load_table(path, Granularity::Corpus)?;
        let rho = corpus_correlation_protocol(s, &table, a.seed, a.pairs, a.pairing.into())?;
        runs.push(json!({ "model": s.model, "scores": path, "abs_spearman": rho }));
    }
    emit(
        &json!({
            "decomposition": a.decomp,
            "term": a.term,
            "indicator": a.indicator,
            "seed": a.seed,
            "runs": runs,
        }),
        a.out.as_deref(),
    )
}

/// Per-sentence indicator tables, one per model, in order of first appearance.
fn load_sentence_tables(paths: &[PathBuf], key: SeriesKey) -> CliResult<Vec<(String, ScoreTable)>> {
    let mut out: Vec<(String, ScoreTable)> = Vec::new();
    for path in paths {
        let mut r = csv::Reader::from_reader(open(path)?);
        let bad = |line: usize, message: String| Failure::from(dcpl::Error::MalformedRow { line, message });
        let headers = r.headers().map_err(|e| bad(1, e.to_string()))?;
        if headers.iter().ne(SENTENCE_HEADER) {
            return Err(bad(1, format!("expected header `{}`", SENTENCE_HEADER.join(","))));
        }
        let first_new = out.len();
        for (i, record) in r.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| bad(line, e.to_string()))?;
            if record.len() != SENTENCE_HEADER.len() {
                return Err(bad(line, format!("expected {} fields", SENTENCE_HEADER.len())));
            }
            let kind: DecompositionKind = record[3].parse().map_err(|e: dcpl::Error| bad(line, e.to_string()))?;
            let term: Term = record[4].parse().map_err(|e: dcpl::Error| bad(line, e.to_string()))?;
            let indicator: Indicator = record[5].parse().map_err(|e: dcpl::Error| bad(line, e.to_string()))?;
            if (kind, term, indicator) != key {
                continue;
            }
            let checkpoint: u32 = record[1].parse().map_err(|e| bad(line, format!("checkpoint: {e}")))?;
            let value: f64 = record[6].parse().map_err(|e| bad(line, format!("value: {e}")))?;
            let model = &record[0];
            let idx = match out[first_new..].iter().position(|(m, _)| m == model) {
                Some(p) => first_new + p,
                None => {
                    out.push((model.to_string(), ScoreTable::new(Granularity::Sentence)));
                    out.len() - 1
                }
            };
            out[idx].1.insert(checkpoint, &record[2], value)?;
        }
    }
    Ok(out)
}

pub fn correlate_sentence(a: CorrelateSentenceArgs) -> CliResult {
    let key: SeriesKey = (a.decomp, a.term, a.indicator);
    let indicators = load_sentence_tables(&a.indicators, key)?;
    run_count_check(indicators.len(), a.scores.len())?;
    let scores = a
        .scores
        .iter()
        .map(|p| load_table(p, Granularity::Sentence))
        .collect::<CliResult<Vec<_>>>()?;
    let runs: Vec<SentenceRun<'_>> = indicators
        .iter()
        .zip(&scores)
        .map(|((_, ind), sc)| SentenceRun {
            indicators: ind,
            scores: sc,
        })
        .collect();
    let rho = sentence_correlation_protocol(&runs, a.k, a.seed, a.pairing.into())?;
    let models: Vec<&str> = indicators.iter().map(|(m, _)| m.as_str()).collect();
    emit(
        &json!({
            "decomposition": a.decomp,
            "term": a.term,
            "indicator": a.indicator,
            "k": a.k,
            "seed": a.seed,
            "models": models,
            "abs_spearman": rho,
        }),
        a.out.as_deref(),
    )
}
