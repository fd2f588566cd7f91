use std::path::Path;

use dcpl::model::{
    decode_beam, decode_forced, encode, interpolate_checkpoints, normalized_score, to_bytes, ModelConfig,
};
use dcpl::{Corpus, Model64};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::{InitModelArgs, InterpolateArgs, Mode, TranslateArgs};
use crate::manifest::RunManifest;
use crate::output::{emit, to_json_line, write_atomic, CliResult, Failure};

pub fn load_model(path: &Path) -> CliResult<Model64> {
    if !path.exists() {
        return Err(Failure::validation(
            "InvalidManifest",
            format!("{} does not exist", path.display()),
        ));
    }
    Ok(dcpl::load_model(path)?)
}

/// Loads a corpus and checks it against the model's vocabulary and lengths.
pub fn load_corpus(path: &Path, config: &ModelConfig) -> CliResult<Corpus> {
    let corpus = Corpus::load(path)?;
    corpus.validate(config)?;
    Ok(corpus)
}

pub fn init_model(a: InitModelArgs) -> CliResult {
    let config = ModelConfig {
        num_layers: a.layers,
        encoder_layers: a.encoder_layers.unwrap_or(a.layers),
        model_dim: a.dim,
        num_heads: a.heads,
        ffn_dim: a.ffn.unwrap_or(2 * a.dim),
        vocab_size: a.vocab,
        activation: a.activation,
        max_positions: a.max_positions,
        ..ModelConfig::toy(a.layers, a.dim, a.heads, a.activation)
    };
    if !(a.affine_scale >= 0.0 && a.affine_scale.is_finite()) {
        return Err(Failure::validation(
            "InvalidConfig",
            format!("affine scale must be finite and non-negative, got {}", a.affine_scale),
        ));
    }
    let mut model = Model64::init_random(config, a.seed)?;
    model.randomize_affine(a.seed, a.affine_scale);
    write_atomic(&a.out, &to_bytes(&model)?)?;
    emit(
        &json!({
            "out": a.out,
            "seed": a.seed,
            "tensors": model.tensor_names().len(),
            "config": model.config,
        }),
        None,
    )
}

pub fn interpolate(a: InterpolateArgs) -> CliResult {
    let from = load_model(&a.from)?;
    let to = load_model(&a.to)?;
    let models = interpolate_checkpoints(&from, &to, a.steps)?;
    let width = a.steps.to_string().len().max(3);
    let mut written = Vec::with_capacity(models.len());
    for (i, model) in models.iter().enumerate() {
        let path = a.out.join(format!("ckpt-{:0width$}.dcpl", i + 1));
        write_atomic(&path, &to_bytes(model)?)?;
        written.push(path);
    }
    emit(&json!({ "checkpoints": written }), None)
}

#[derive(Serialize)]
struct Translation<'a> {
    sentence_id: &'a str,
    mode: &'static str,
    tokens: Vec<u32>,
    log_prob: f64,
    score: f64,
    finished: bool,
}

pub fn translate(a: TranslateArgs) -> CliResult {
    let mut manifest = RunManifest::single(&a.model, &a.corpus);
    manifest.decodings = vec![a.beam.decoding(a.mode).name()];
    manifest.beam = a.beam.options();
    manifest.validate()?;

    let model = load_model(&a.model)?;
    let corpus = load_corpus(&a.corpus, &model.config)?;
    let options = a.beam.options();
    let lines: Vec<String> = corpus
        .sentences
        .par_iter()
        .map(|s| -> CliResult<String> {
            let memory = encode(&model, &s.src_ids)?;
            let record = match a.mode {
                Mode::Forced => {
                    let trace = decode_forced(&model, memory.view(), &s.tgt_ids)?;
                    // Gold continuation: the target followed by end of sequence.
                    let gold = s.tgt_ids.iter().copied().chain([model.config.eos_id]);
                    let log_prob: f64 = gold.enumerate().map(|(t, tok)| trace.log_probs(t)[tok as usize]).sum();
                    Translation {
                        sentence_id: &s.id,
                        mode: "forced",
                        tokens: s.tgt_ids.clone(),
                        log_prob,
                        score: normalized_score(log_prob, s.tgt_ids.len() + 1, options.length_norm),
                        finished: true,
                    }
                }
                Mode::Beam => {
                    let hyp = decode_beam(&model, memory.view(), &options)?;
                    Translation {
                        sentence_id: &s.id,
                        mode: "beam",
                        tokens: hyp.content().to_vec(),
                        log_prob: hyp.log_prob,
                        score: hyp.score,
                        finished: hyp.finished,
                    }
                }
            };
            to_json_line(&record)
        })
        .collect::<CliResult<_>>()?;
    let mut text = lines.join("\n");
    text.push('\n');
    write_atomic(&a.out, text.as_bytes())?;
    emit(&json!({ "out": a.out, "sentences": corpus.len() }), None)
}
