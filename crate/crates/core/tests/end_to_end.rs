use dcpl::decomp::{Decomposition, DecompositionKind, Term, TermSource, Tolerance};
use dcpl::indicators::{
    build_series, corpus_mean_indicator, read_series_csv, sentence_trace, write_series_csv, Decoding, Indicator,
};
use dcpl::model::{from_bytes, interpolate_checkpoints, to_bytes, Activation, BeamOptions, ModelConfig};
use dcpl::scoring::{Granularity, ScoreTable, CORPUS_KEY};
use dcpl::stats::{corpus_correlation_protocol, sentence_correlation_protocol, Pairing, SentenceRun};
use dcpl::{Corpus, Model32, Model64, Sentence};

fn model(seed: u64, activation: Activation) -> Model64 {
    let mut m = Model64::init_random(ModelConfig::toy(2, 16, 4, activation), seed).unwrap();
    m.randomize_affine(seed, 0.2);
    m
}

fn corpus() -> Corpus {
    let sentences = (0..6u32)
        .map(|i| Sentence {
            id: format!("s{i}"),
            src_ids: (0..=i % 4).map(|k| 2 + (i + k) % 14).collect(),
            tgt_ids: (0..=i % 5).map(|k| 2 + (3 * i + k) % 14).collect(),
        })
        .collect();
    Corpus::new(sentences).unwrap()
}

#[test]
fn container_round_trip_is_bit_exact() {
    let m = model(1, Activation::Gelu);
    let back = from_bytes(&to_bytes(&m).unwrap()).unwrap();
    assert_eq!(back.config, m.config);
    for name in m.tensor_names() {
        let (a, b) = (m.tensor_data(&name).unwrap(), back.tensor_data(&name).unwrap());
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "{name}");
    }
}

#[test]
fn both_decompositions_reconstruct_under_both_decodings() {
    let m = model(2, Activation::Swish);
    let beam = Decoding::Beam(BeamOptions {
        beam: 4,
        max_len: 6,
        ..BeamOptions::default()
    });
    for decoding in [Decoding::Forced, beam] {
        for s in &corpus().sentences {
            let trace = sentence_trace(&m, s, &decoding).unwrap();
            for kind in [DecompositionKind::Sl, DecompositionKind::Tok] {
                let d = Decomposition::compute(kind, &m, &trace).unwrap();
                let report = d.verify(Tolerance::default());
                assert!(report.passed, "{kind} {} {report:?}", decoding.name());
            }
        }
    }
}

#[test]
fn shared_terms_agree_between_decompositions_only_in_total() {
    // Both decompositions sum to the same embedding even though their terms differ.
    let m = model(3, Activation::Relu);
    let s = &corpus().sentences[4];
    let trace = sentence_trace(&m, s, &Decoding::Forced).unwrap();
    let sl = Decomposition::compute(DecompositionKind::Sl, &m, &trace).unwrap();
    let tok = Decomposition::compute(DecompositionKind::Tok, &m, &trace).unwrap();
    assert_eq!(sl.num_positions(), tok.num_positions());
    for t in 0..sl.num_positions() {
        let total = |d: &Decomposition<f64>| {
            d.term_names()
                .iter()
                .map(|&k| d.term(k, t).unwrap().to_owned())
                .reduce(|a, b| a + b)
                .unwrap()
        };
        let diff = (total(&sl) - total(&tok)).mapv(f64::abs);
        assert!(diff.iter().all(|&x| x < 1e-10));
        assert_eq!(sl.embedding(t), tok.embedding(t));
    }
}

#[test]
fn single_precision_path_runs_end_to_end() {
    let m: Model32 = model(4, Activation::Gelu).cast();
    let loose = Tolerance { abs: 1e-4, rel: 1e-3 };
    for s in &corpus().sentences {
        let trace = sentence_trace(&m, s, &Decoding::Forced).unwrap();
        let d = Decomposition::compute(DecompositionKind::Tok, &m, &trace).unwrap();
        assert!(d.verify(loose).passed);
    }
}

#[test]
fn corpus_mean_matches_series_at_endpoints() {
    let (a, b) = (model(5, Activation::Swish), model(6, Activation::Swish));
    let ckpts = interpolate_checkpoints(&a, &b, 4).unwrap();
    let c = corpus();
    let series = build_series("run", &ckpts, &c, DecompositionKind::Sl, Term::Source, Indicator::NormRatio, &Decoding::Forced)
        .unwrap();
    assert_eq!(series.checkpoints(), vec![1, 2, 3, 4]);
    for (k, m) in [(0usize, &a), (3, &b)] {
        let decomps: Vec<(String, Decomposition<f64>)> = c
            .sentences
            .iter()
            .map(|s| {
                let trace = sentence_trace(m, s, &Decoding::Forced).unwrap();
                (s.id.clone(), Decomposition::compute(DecompositionKind::Sl, m, &trace).unwrap())
            })
            .collect();
        let mean = corpus_mean_indicator(&decomps, Term::Source, Indicator::NormRatio).unwrap();
        assert_eq!(series.values[k].1, mean);
    }

    let mut buf = Vec::new();
    write_series_csv(&mut buf, std::slice::from_ref(&series)).unwrap();
    let back = read_series_csv(buf.as_slice()).unwrap();
    assert_eq!(back, vec![series]);
}

#[test]
fn protocols_recover_a_score_that_tracks_the_indicator() {
    let (a, b) = (model(7, Activation::Gelu), model(8, Activation::Gelu));
    let ckpts = interpolate_checkpoints(&a, &b, 8).unwrap();
    let c = corpus();
    let series = build_series("run", &ckpts, &c, DecompositionKind::Tok, Term::Target, Indicator::Cosine, &Decoding::Forced)
        .unwrap();
    let mut scores = ScoreTable::new(Granularity::Corpus);
    for &(ckpt, v) in &series.values {
        scores.insert(ckpt, CORPUS_KEY, 50.0 - 10.0 * v).unwrap();
    }
    for pairing in [Pairing::Paired, Pairing::Random] {
        let rho = corpus_correlation_protocol(&series, &scores, 1, None, pairing).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
    }

    let mut indicators = ScoreTable::new(Granularity::Sentence);
    let mut sentence_scores = ScoreTable::new(Granularity::Sentence);
    for ckpt in 1..=4u32 {
        for (i, s) in c.sentences.iter().enumerate() {
            let v = (10 * ckpt * ckpt) as f64 + i as f64;
            indicators.insert(ckpt, &s.id, v).unwrap();
            sentence_scores.insert(ckpt, &s.id, 3.0 * v + 1.0).unwrap();
        }
    }
    let runs = [SentenceRun {
        indicators: &indicators,
        scores: &sentence_scores,
    }];
    let rho = sentence_correlation_protocol(&runs, 5, 2, Pairing::Paired).unwrap();
    assert!((rho - 1.0).abs() < 1e-12);
}
