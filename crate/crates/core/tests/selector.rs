mod common;

use proptest::prelude::*;

use segnet::arraycore::Graph;
use segnet::error::Error;
use segnet::neural::SourceInput;
use segnet::objective::{selector_validation, train_selector};
use segnet::selector::{select_sentences, SelectorModel};

use common::{sample_doc, kv, tiny, toy_docs, vocab_for};

fn model(seed: u64) -> (SelectorModel, Vec<segnet::corpus::Document>) {
    let docs = toy_docs(8, seed);
    let cfg = tiny(&[("seed", &seed.to_string())]);
    let vocab = vocab_for(&docs, cfg.vocab_size);
    (SelectorModel::new(&cfg, vocab).unwrap(), docs)
}

#[test]
fn untrained_scores_are_probabilities_and_repeatable() {
    let (m, docs) = model(1);
    for d in &docs {
        let a = m.score_document(d).unwrap();
        let b = m.score_document(d).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn single_token_pooling_degenerates() {
    let (m, docs) = model(2);
    let mut input = m.sentence_input(&docs[0], 0);
    for v in [&mut input.words, &mut input.tags, &mut input.positions, &mut input.segments] {
        v.truncate(1);
    }
    input.chars.truncate(1);
    let mut g = Graph::new(&m.store);
    let pooled = m.net.pool(&mut g, &input).unwrap();
    let row = g.value(pooled).row_slice(0);
    let d = m.cfg.d_model;
    assert_eq!(&row[..d], &row[d..]);
}

#[test]
fn empty_sentence_is_rejected() {
    let (m, _) = model(3);
    let empty = SourceInput {
        words: vec![],
        tags: vec![],
        positions: vec![],
        segments: vec![],
        chars: vec![],
    };
    assert!(matches!(m.score_sentence(&empty), Err(Error::Contract(_))));
}

#[test]
fn sample_document_oracle_selection() {
    let doc = sample_doc();
    let lengths: Vec<usize> = (0..doc.sentences.len()).map(|s| doc.sentence_len(s)).collect();
    let bits: Vec<f64> = doc.salience_labels.iter().map(|&b| f64::from(b)).collect();
    let sel = select_sentences(&lengths, &bits, 200, 0.5);
    assert_eq!(sel, vec![0, 1, 2, 3, 5, 7, 10]);
    assert!(sel.iter().map(|&s| lengths[s]).sum::<usize>() <= 200);
}

#[test]
fn trained_selector_separates_toy_sentences() {
    let train = toy_docs(30, 11);
    let held_out = toy_docs(10, 12);
    let cfg = tiny(&[]).with_assignments(&[kv("lr", "0.01"), kv("max_epochs", "15"), kv("batch_size", "16")]).unwrap();
    let mut m = SelectorModel::new(&cfg, vocab_for(&train, 200)).unwrap();
    let report = train_selector(&mut m, &train, &[]).unwrap();
    assert!(report.best_val >= 0.95, "{}", report.csv());
    for d in &train[..5] {
        let probs = m.score_document(d).unwrap();
        for (p, &y) in probs.iter().zip(&d.salience_labels) {
            assert_eq!(*p >= 0.5, y == 1, "{}: {probs:?}", d.id);
        }
    }
    assert!(selector_validation(&m, &held_out).unwrap() >= 0.9);
}

proptest! {
    #[test]
    fn selection_respects_budget_order_and_threshold(
        lengths in prop::collection::vec(1usize..120, 1..20),
        seed in any::<u64>(),
        lo in 0.0f64..1.0,
        hi in 0.0f64..1.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let probs: Vec<f64> = lengths.iter().map(|_| r.gen()).collect();
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let a = select_sentences(&lengths, &probs, 200, lo);
        let b = select_sentences(&lengths, &probs, 200, hi);
        prop_assert!(a.iter().map(|&i| lengths[i]).sum::<usize>() <= 200);
        prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
        if probs.iter().any(|&p| p >= hi) {
            prop_assert!(b.iter().all(|i| a.contains(i)), "{a:?} {b:?}");
        }
    }
}
