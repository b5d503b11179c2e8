#![allow(dead_code)]

use std::path::{Path, PathBuf};

use segnet::config::ModelConfig;
use segnet::corpus::{corpus_vocab, preprocess, read_jsonl, Document, RawExample, RuleTagger, Vocab};
use segnet::extgen::{ExtGenModel, TrainExample};
use segnet::synthetic::toy_corpus;

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn load(name: &str) -> Vec<Document> {
    let raws: Vec<RawExample> = read_jsonl(&data(name)).unwrap();
    raws.iter().map(|r| preprocess(r, &RuleTagger).unwrap()).collect()
}

pub fn sample_doc() -> Document {
    load("sample.jsonl").remove(0)
}

pub fn toy_docs(n: usize, seed: u64) -> Vec<Document> {
    toy_corpus(n, seed).iter().map(|r| preprocess(r, &RuleTagger).unwrap()).collect()
}

pub fn kv(k: &str, v: &str) -> (String, String) {
    (k.to_string(), v.to_string())
}

pub fn tiny(pairs: &[(&str, &str)]) -> ModelConfig {
    let pairs: Vec<_> = pairs.iter().map(|(k, v)| kv(k, v)).collect();
    ModelConfig::tiny().with_assignments(&pairs).unwrap()
}

/// Tiny model over toy documents with a vocabulary of `vocab_words` entries
/// beyond the specials, so some source words are out of vocabulary.
pub fn tiny_extgen(seed: u64, vocab_words: usize) -> (ExtGenModel, Vec<TrainExample>) {
    let cfg = tiny(&[("seed", &seed.to_string())]);
    let docs = toy_docs(6, seed);
    let vocab = corpus_vocab(&docs, vocab_words);
    let exs = docs.iter().map(|d| TrainExample::build(d, &vocab, &cfg).unwrap()).collect();
    (ExtGenModel::new(&cfg, vocab).unwrap(), exs)
}

pub fn vocab_for(docs: &[Document], size: usize) -> Vocab {
    corpus_vocab(docs, size)
}
