use std::collections::BTreeMap;
use std::path::Path;

use dcpl::decomp::{Decomposition, DecompositionKind, Term, TermSource, Tolerance, VerificationReport};
use dcpl::indicators::{
    corpus_means, evaluate_corpus, format_float, sentence_trace, write_series_csv, Decoding, Indicator,
    IndicatorSeries, SentenceIndicators,
};
use dcpl::model::{decode_beam, encode};
use dcpl::scoring::{bleu_corpus, chrf_corpus_ids, chrf_ids, Granularity, ScoreTable, CORPUS_KEY};
use dcpl::stats::{pearson, spearman, PairedSeries};
use dcpl::{Corpus, Model64};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::{
    DecomposeArgs, GranularityArg, IndicatorsArgs, Metric, ScoreArgs, SeriesArgs, VerifyArgs,
};
use crate::manifest::{checkpoint_list, RunManifest, RunModels};
use crate::models::{load_corpus, load_model};
use crate::output::{emit, to_json_line, write_atomic, CliResult, Failure};

fn tolerance(abs: f64, rel: f64) -> Tolerance {
    Tolerance { abs, rel }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn csv_bytes(w: csv::Writer<Vec<u8>>) -> CliResult<Vec<u8>> {
    w.into_inner()
        .map_err(|e| Failure::validation("Io", e.to_string()))
}

fn csv_row<I, S>(w: &mut csv::Writer<Vec<u8>>, row: I) -> CliResult
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row)
        .map_err(|e| Failure::validation("Io", e.to_string()))
}

fn selected<T: Copy + PartialEq>(all: &[T], wanted: &[T]) -> Vec<T> {
    all.iter()
        .copied()
        .filter(|x| wanted.is_empty() || wanted.contains(x))
        .collect()
}

fn check_terms(kind: DecompositionKind, terms: &[Term]) -> CliResult {
    if let Some(t) = terms.iter().find(|t| !kind.terms().contains(t)) {
        return Err(Failure::validation(
            "InvalidConfig",
            format!("term `{t}` is not part of the `{kind}` decomposition"),
        ));
    }
    Ok(())
}

fn reconstruction_failed(kind: &str, report: &VerificationReport) -> Failure {
    Failure::numerical(
        "ReconstructionFailed",
        format!(
            "{kind}: {} of {} vectors exceed the tolerance (max abs residual {:e})",
            report.failures, report.vectors_checked, report.max_abs_residual
        ),
    )
}

#[derive(Serialize)]
struct TermRecord<'a> {
    sentence_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    sublayer: Option<usize>,
    position: usize,
    term: Term,
    vector: Vec<f64>,
}

fn term_lines<D: TermSource<f64>>(out: &mut Vec<String>, id: &str, sublayer: Option<usize>, d: &D) -> CliResult {
    for position in 0..d.num_positions() {
        for &term in d.term_names() {
            let z = d.term(term, position).expect("term listed by the decomposition");
            out.push(to_json_line(&TermRecord {
                sentence_id: id,
                sublayer,
                position,
                term,
                vector: z.to_vec(),
            })?);
        }
    }
    Ok(())
}

pub fn decompose(a: DecomposeArgs) -> CliResult {
    let mut manifest = RunManifest::single(&a.model, &a.corpus);
    manifest.decompositions = vec![a.decomp];
    manifest.decodings = vec![a.beam.decoding(a.mode).name()];
    manifest.beam = a.beam.options();
    manifest.tolerance = tolerance(a.tol_a, a.tol_r);
    manifest.validate()?;

    let model = load_model(&a.model)?;
    let corpus = load_corpus(&a.corpus, &model.config)?;
    let decoding = a.beam.decoding(a.mode);
    let tol = manifest.tolerance;
    let per_sentence: Vec<(Vec<String>, VerificationReport)> = corpus
        .sentences
        .par_iter()
        .map(|s| -> CliResult<_> {
            let trace = sentence_trace(&model, s, &decoding)?;
            let d = Decomposition::compute(a.decomp, &model, &trace)?;
            let report = d.verify(tol);
            let mut lines = Vec::new();
            match &d {
                Decomposition::Sl(sl) => term_lines(&mut lines, &s.id, None, sl)?,
                Decomposition::Tok(tok) => {
                    for layer in &tok.layers[1..] {
                        term_lines(&mut lines, &s.id, Some(layer.sublayer), layer)?;
                    }
                }
            }
            lines.push(to_json_line(&json!({ "sentence_id": s.id, "verification": report }))?);
            Ok((lines, report))
        })
        .collect::<CliResult<_>>()?;

    let mut total = VerificationReport::default();
    let mut text = String::new();
    for (lines, report) in &per_sentence {
        total.merge(report);
        for line in lines {
            text.push_str(line);
            text.push('\n');
        }
    }
    write_atomic(&a.out, text.as_bytes())?;
    emit(&json!({ "out": a.out, "decomposition": a.decomp, "verification": total }), None)?;
    if total.passed {
        Ok(())
    } else {
        Err(reconstruction_failed(a.decomp.name(), &total))
    }
}

pub fn verify(a: VerifyArgs) -> CliResult {
    let kinds = a.decomp.kinds();
    let mut manifest = RunManifest::single(&a.model, &a.corpus);
    manifest.decompositions = kinds.clone();
    manifest.decodings = vec![a.beam.decoding(a.mode).name()];
    manifest.beam = a.beam.options();
    manifest.tolerance = tolerance(a.tol_a, a.tol_r);
    manifest.validate()?;

    let model = load_model(&a.model)?;
    let corpus = load_corpus(&a.corpus, &model.config)?;
    let decoding = a.beam.decoding(a.mode);
    let tol = manifest.tolerance;
    let per_sentence: Vec<Vec<VerificationReport>> = corpus
        .sentences
        .par_iter()
        .map(|s| -> CliResult<_> {
            let trace = sentence_trace(&model, s, &decoding)?;
            kinds
                .iter()
                .map(|&k| Ok(Decomposition::compute(k, &model, &trace)?.verify(tol)))
                .collect()
        })
        .collect::<CliResult<_>>()?;

    let mut reports = BTreeMap::new();
    for (i, &kind) in kinds.iter().enumerate() {
        let mut total = VerificationReport::default();
        for r in &per_sentence {
            total.merge(&r[i]);
        }
        reports.insert(kind.name(), total);
    }
    let passed = reports.values().all(|r| r.passed);
    emit(
        &json!({
            "sentences": corpus.len(),
            "tolerance": tol,
            "reports": reports,
            "passed": passed,
        }),
        a.out.as_deref(),
    )?;
    match reports.iter().find(|(_, r)| !r.passed) {
        Some((name, r)) => Err(reconstruction_failed(name, r)),
        None => Ok(()),
    }
}

pub fn indicators(a: IndicatorsArgs) -> CliResult {
    check_terms(a.decomp, &a.term)?;
    let indicators = selected(&Indicator::ALL, &a.indicator);
    let mut manifest = RunManifest::single(&a.model, &a.corpus);
    manifest.decompositions = vec![a.decomp];
    manifest.decodings = vec![a.beam.decoding(a.mode).name()];
    manifest.beam = a.beam.options();
    manifest.indicators = indicators.clone();
    manifest.validate()?;

    let model = load_model(&a.model)?;
    let corpus = load_corpus(&a.corpus, &model.config)?;
    let rows = evaluate_corpus(&model, &corpus, a.decomp, &a.beam.decoding(a.mode), &indicators)?;
    let terms = selected(a.decomp.terms(), &a.term);

    let mut w = csv_writer();
    csv_row(&mut w, ["sentence_id", "position", "term", "indicator", "value"])?;
    for row in &rows {
        for t in 0..row.num_positions {
            for &term in &terms {
                for &ind in &indicators {
                    let v = row.values[&(term, ind)][t];
                    let pos = t.to_string();
                    csv_row(&mut w, [&row.sentence_id, &pos, term.symbol(), ind.name(), &format_float(v)])?;
                }
            }
        }
    }
    write_atomic(&a.out, &csv_bytes(w)?)?;

    let means = corpus_means(&rows)?;
    let summary: Vec<_> = means
        .iter()
        .filter(|((term, _), _)| terms.contains(term))
        .map(|((term, ind), v)| json!({ "term": term, "indicator": ind, "mean": v }))
        .collect();
    emit(&json!({ "out": a.out, "decomposition": a.decomp, "means": summary }), None)
}

pub const SENTENCE_HEADER: [&str; 7] = [
    "model",
    "checkpoint",
    "sentence_id",
    "decomposition",
    "term",
    "indicator",
    "value",
];

fn run_names(a: &SeriesArgs) -> CliResult<Vec<String>> {
    if a.name.is_empty() {
        return Ok((1..=a.models.len()).map(|i| format!("run-{i}")).collect());
    }
    if a.name.len() != a.models.len() {
        return Err(Failure::validation(
            "InvalidManifest",
            format!("{} --name values for {} --models lists", a.name.len(), a.models.len()),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = a.name.iter().find(|n| !seen.insert(n.as_str())) {
        return Err(Failure::validation("InvalidManifest", format!("duplicate run name `{dup}`")));
    }
    Ok(a.name.clone())
}

/// Per-checkpoint sentence rows for one decoding mode of one run.
fn evaluate_run(
    checkpoints: &[std::path::PathBuf],
    corpus_path: &Path,
    kind: DecompositionKind,
    decoding: &Decoding,
    indicators: &[Indicator],
) -> CliResult<Vec<Vec<SentenceIndicators>>> {
    let mut corpus: Option<Corpus> = None;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut config = None;
    for path in checkpoints {
        let model: Model64 = load_model(path)?;
        match &config {
            None => config = Some(model.config.clone()),
            Some(c) if *c != model.config => {
                return Err(Failure::validation(
                    "ConfigMismatch",
                    format!("{} differs in configuration from the first checkpoint", path.display()),
                ))
            }
            Some(_) => {}
        }
        if corpus.is_none() {
            corpus = Some(load_corpus(corpus_path, &model.config)?);
        }
        let corpus = corpus.as_ref().expect("loaded above");
        out.push(evaluate_corpus(&model, corpus, kind, decoding, indicators)?);
    }
    Ok(out)
}

pub fn series(a: SeriesArgs) -> CliResult {
    check_terms(a.decomp, &a.term)?;
    let names = run_names(&a)?;
    let indicators = selected(&Indicator::ALL, &a.indicator);
    let terms = selected(a.decomp.terms(), &a.term);
    let modes = a.mode.modes();
    let runs: Vec<RunModels> = names
        .iter()
        .zip(&a.models)
        .map(|(id, list)| {
            Ok(RunModels {
                id: id.clone(),
                checkpoints: checkpoint_list(list)?,
            })
        })
        .collect::<CliResult<_>>()?;
    let mut manifest = RunManifest::new(runs, a.corpus.clone());
    manifest.decompositions = vec![a.decomp];
    manifest.decodings = modes.iter().map(|&m| a.beam.decoding(m).name()).collect();
    manifest.beam = a.beam.options();
    manifest.indicators = indicators.clone();
    manifest.out = Some(a.out.clone());
    manifest.validate()?;

    let mut all_series: BTreeMap<&'static str, Vec<IndicatorSeries>> = BTreeMap::new();
    let mut files = Vec::new();
    for &mode in &modes {
        let decoding = a.beam.decoding(mode);
        let mut series_list = Vec::new();
        let mut sentences = csv_writer();
        csv_row(&mut sentences, SENTENCE_HEADER)?;
        for run in &manifest.models {
            let per_ckpt = evaluate_run(&run.checkpoints, &a.corpus, a.decomp, &decoding, &indicators)?;
            let mut run_series: Vec<IndicatorSeries> = Vec::new();
            for &term in &terms {
                for &ind in &indicators {
                    run_series.push(IndicatorSeries {
                        model: run.id.clone(),
                        decomposition: a.decomp,
                        term,
                        indicator: ind,
                        values: Vec::with_capacity(per_ckpt.len()),
                    });
                }
            }
            for (i, rows) in per_ckpt.iter().enumerate() {
                let checkpoint = i as u32 + 1;
                let means = corpus_means(rows)?;
                for s in run_series.iter_mut() {
                    s.values.push((checkpoint, means[&(s.term, s.indicator)]));
                }
                let ckpt = checkpoint.to_string();
                for row in rows {
                    for &term in &terms {
                        for &ind in &indicators {
                            let v = row.mean(term, ind).ok_or(dcpl::Error::EmptyCorpus)?;
                            csv_row(
                                &mut sentences,
                                [
                                    run.id.as_str(),
                                    &ckpt,
                                    &row.sentence_id,
                                    a.decomp.name(),
                                    term.symbol(),
                                    ind.name(),
                                    &format_float(v),
                                ],
                            )?;
                        }
                    }
                }
            }
            series_list.extend(run_series);
        }
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &series_list)?;
        let series_path = a.out.join(format!("series_{}.csv", decoding.name()));
        let sentences_path = a.out.join(format!("sentences_{}.csv", decoding.name()));
        write_atomic(&series_path, &buf)?;
        write_atomic(&sentences_path, &csv_bytes(sentences)?)?;
        files.push(series_path);
        files.push(sentences_path);
        all_series.insert(decoding.name(), series_list);
    }

    if let (Some(forced), Some(beam)) = (all_series.get("forced"), all_series.get("beam")) {
        let mut text = String::new();
        for (f, b) in forced.iter().zip(beam) {
            text.push_str(&to_json_line(&compare(f, b))?);
            text.push('\n');
        }
        let path = a.out.join("comparison.jsonl");
        write_atomic(&path, text.as_bytes())?;
        files.push(path);
    }
    manifest.write_into(&a.out)?;
    emit(&json!({ "out": a.out, "files": files }), None)
}

/// Agreement between the forced and beam series of one run, term and indicator.
fn compare(forced: &IndicatorSeries, beam: &IndicatorSeries) -> serde_json::Value {
    let stats = PairedSeries::new(forced.values_only(), beam.values_only()).and_then(|p| {
        let rho = spearman(&p)?;
        let r = pearson(&p)?;
        Ok((rho, r))
    });
    let mut record = json!({
        "model": forced.model,
        "decomposition": forced.decomposition,
        "term": forced.term,
        "indicator": forced.indicator,
        "checkpoints": forced.values.len(),
    });
    match stats {
        Ok((rho, r)) => {
            record["spearman"] = json!(rho);
            record["pearson"] = json!(r);
        }
        Err(e) => {
            record["spearman"] = serde_json::Value::Null;
            record["pearson"] = serde_json::Value::Null;
            record["error"] = json!(e.kind());
        }
    }
    record
}

pub fn score(a: ScoreArgs) -> CliResult {
    let checkpoints = checkpoint_list(&a.models)?;
    let mut manifest = RunManifest::new(
        vec![RunModels {
            id: "scores".into(),
            checkpoints: checkpoints.clone(),
        }],
        a.corpus.clone(),
    );
    manifest.decodings = vec!["beam"];
    manifest.beam = a.beam.options();
    manifest.indicators = Vec::new();
    manifest.validate()?;

    let granularity = match a.granularity {
        GranularityArg::Corpus => Granularity::Corpus,
        GranularityArg::Sentence => Granularity::Sentence,
    };
    let options = a.beam.options();
    let mut table = ScoreTable::new(granularity);
    let mut corpus: Option<Corpus> = None;
    for (i, path) in checkpoints.iter().enumerate() {
        let checkpoint = i as u32 + 1;
        let model = load_model(path)?;
        if corpus.is_none() {
            corpus = Some(load_corpus(&a.corpus, &model.config)?);
        }
        let corpus = corpus.as_ref().expect("loaded above");
        let hyps: Vec<Vec<u32>> = corpus
            .sentences
            .par_iter()
            .map(|s| -> CliResult<Vec<u32>> {
                let memory = encode(&model, &s.src_ids)?;
                Ok(decode_beam(&model, memory.view(), &options)?.content().to_vec())
            })
            .collect::<CliResult<_>>()?;
        let refs: Vec<&[u32]> = corpus.sentences.iter().map(|s| s.tgt_ids.as_slice()).collect();
        match granularity {
            Granularity::Corpus => {
                let v = match a.metric {
                    Metric::Chrf => chrf_corpus_ids(&hyps, &refs)?,
                    Metric::Bleu => bleu_corpus(&hyps, &refs, a.smoothing)?,
                };
                table.insert(checkpoint, CORPUS_KEY, v)?;
            }
            Granularity::Sentence => {
                for ((s, h), r) in corpus.sentences.iter().zip(&hyps).zip(&refs) {
                    let v = match a.metric {
                        Metric::Chrf => chrf_ids(h, r)?,
                        Metric::Bleu => bleu_corpus(&[h], &[r], a.smoothing)?,
                    };
                    table.insert(checkpoint, &s.id, v)?;
                }
            }
        }
    }
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_atomic(&a.out, &buf)?;
    emit(&json!({ "out": a.out, "checkpoints": checkpoints.len(), "rows": table.len() }), None)
}
