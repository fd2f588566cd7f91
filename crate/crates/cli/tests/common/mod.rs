#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcpl::model::{save_model, Activation, ModelConfig};
use dcpl::{Corpus, Model64, Sentence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dcpl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcpl"))
        .args(args)
        .env_remove("DCPL_THREADS")
        .output()
        .expect("binary runs")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

pub fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("a diagnostic line");
    serde_json::from_str(line).expect("stderr carries a JSON error line")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn assert_ok(out: &Output) {
    assert_eq!(
        code(out),
        0,
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Random sentences over token ids 2..vocab (0 and 1 are start and end).
pub fn random_corpus(n: usize, vocab: u32, max_len: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        let len = rng.random_range(1..=max_len);
        (0..len).map(|_| rng.random_range(2..vocab)).collect()
    };
    let sentences = (0..n)
        .map(|i| Sentence {
            id: format!("s{i:03}"),
            src_ids: seq(&mut rng),
            tgt_ids: seq(&mut rng),
        })
        .collect();
    Corpus::new(sentences).expect("unique ids")
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    corpus.save(&path).expect("corpus written");
    path
}

pub fn toy_model(layers: usize, dim: usize, heads: usize, activation: Activation, seed: u64) -> Model64 {
    let mut model = Model64::init_random(ModelConfig::toy(layers, dim, heads, activation), seed).expect("valid config");
    model.randomize_affine(seed, 0.1);
    model
}

pub fn write_model(dir: &Path, name: &str, model: &Model64) -> PathBuf {
    let path = dir.join(name);
    save_model(model, &path).expect("model written");
    path
}
