mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segnet::corpus::vocab::{BOS_ID, EOS_ID, PAD_ID, SEP_ID, UNK_ID};
use segnet::corpus::{build_decoder_target, Upos, Vocab};
use segnet::decode::{greedy_decode, predict, split_decoded, PredictOptions, StepModel};
use segnet::error::Result;
use segnet::evalkit::stem_tokens;
use segnet::extgen::ExtGenModel;
use segnet::selector::SelectorModel;

use common::{sample_doc, tiny, toy_docs, vocab_for};

/// Random logits per step, biased towards a small alphabet so repeats are likely.
struct Noisy {
    rng: ChaCha8Rng,
    width: usize,
}

impl StepModel for Noisy {
    fn step(&mut self, _prev: usize) -> Result<Vec<f64>> {
        Ok((0..self.width)
            .map(|i| {
                let base = if i < 9 { 1.0 } else { 0.1 };
                base * self.rng.gen::<f64>()
            })
            .collect())
    }
}

fn has_repeated_trigram(ids: &[usize]) -> bool {
    let mut seen = HashSet::new();
    ids.windows(3)
        .filter(|w| w.iter().all(|&t| t != SEP_ID && t != EOS_ID))
        .any(|w| !seen.insert(w.to_vec()))
}

#[test]
fn random_decodes_never_repeat_a_trigram() {
    for seed in 0..1000 {
        let mut m = Noisy {
            rng: ChaCha8Rng::seed_from_u64(seed),
            width: 12,
        };
        let out = greedy_decode(&mut m, 40).unwrap();
        assert!(!has_repeated_trigram(&out), "seed {seed}: {out:?}");
        assert!(out.iter().all(|t| ![PAD_ID, UNK_ID, BOS_ID].contains(t)));
        assert!(out.len() <= 40);
    }
}

#[test]
fn ties_go_to_the_lower_id() {
    struct Flat;
    impl StepModel for Flat {
        fn step(&mut self, _: usize) -> Result<Vec<f64>> {
            Ok(vec![0.1; 10])
        }
    }
    assert_eq!(greedy_decode(&mut Flat, 1).unwrap(), vec![EOS_ID]);
}

#[test]
fn step_without_allowed_candidates_emits_eos() {
    struct Banned;
    impl StepModel for Banned {
        fn step(&mut self, _: usize) -> Result<Vec<f64>> {
            Ok(vec![0.5, 0.3, 0.2])
        }
    }
    assert_eq!(greedy_decode(&mut Banned, 10).unwrap(), vec![EOS_ID]);
}

#[test]
fn blocked_best_token_yields_to_the_runner_up() {
    // alternates 6 and 7; the fifth token would repeat "6 7 6"
    struct Two;
    impl StepModel for Two {
        fn step(&mut self, prev: usize) -> Result<Vec<f64>> {
            let mut d = vec![0.0; 10];
            d[if prev == 6 { 7 } else { 6 }] = 0.6;
            d[8] = 0.3;
            Ok(d)
        }
    }
    let out = greedy_decode(&mut Two, 6).unwrap();
    assert_eq!(out, vec![6, 7, 6, 7, 8, 6]);
}

#[test]
fn split_drops_specials_and_keeps_tags_aligned() {
    let ids = [BOS_ID, 10, 11, SEP_ID, SEP_ID, 12, EOS_ID, 13];
    let tags = [1, 5, 6, 1, 1, 7, 1, 9];
    let out = split_decoded(&ids, &tags);
    assert_eq!(out, vec![(vec![10, 11], vec![5, 6]), (vec![12], vec![7])]);
}

proptest! {
    #[test]
    fn split_inverts_target_construction(phrases in prop::collection::vec(prop::collection::vec(0usize..30, 1..4), 0..5)) {
        let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
        let vocab = Vocab::build(words.iter().map(String::as_str), 100);
        let phrases: Vec<Vec<String>> = phrases.iter().map(|p| p.iter().map(|&i| words[i].clone()).collect()).collect();
        let target = build_decoder_target(&vocab, &phrases, &[] as &[Vec<Upos>]);
        let back: Vec<Vec<String>> = split_decoded(&target.word_ids, &target.tag_ids)
            .into_iter()
            .map(|(ids, _)| ids.iter().map(|&i| vocab.word(i).unwrap().to_string()).collect())
            .collect();
        prop_assert_eq!(back, phrases);
    }
}

fn models(seed: u64) -> (SelectorModel, ExtGenModel) {
    let docs = toy_docs(10, seed);
    let mut all = docs.clone();
    all.push(sample_doc());
    let cfg = tiny(&[("seed", &seed.to_string()), ("max_src_len", "200"), ("max_sentences", "16")]);
    let vocab = vocab_for(&all, cfg.vocab_size);
    (SelectorModel::new(&cfg, vocab.clone()).unwrap(), ExtGenModel::new(&cfg, vocab).unwrap())
}

#[test]
fn prediction_sets_are_clean_and_deterministic() {
    let (sel, eg) = models(4);
    let mut opts = PredictOptions::from_config(&eg.cfg);
    opts.extract_threshold = 0.45;
    for doc in toy_docs(5, 40).iter().chain([&sample_doc()]) {
        let a = predict(doc, &sel, &eg, &opts).unwrap();
        let b = predict(doc, &sel, &eg, &opts).unwrap();
        assert_eq!(a, b);
        let present: HashSet<Vec<String>> = a.present.iter().map(|p| stem_tokens(&words(p))).collect();
        let absent: Vec<Vec<String>> = a.absent.iter().map(|p| stem_tokens(&words(p))).collect();
        assert_eq!(present.len(), a.present.len());
        assert_eq!(absent.iter().collect::<HashSet<_>>().len(), absent.len());
        assert!(absent.iter().all(|p| !present.contains(p)));
        for p in a.present.iter().chain(&a.absent) {
            assert!(!p.is_empty());
            assert!(!["<sep>", "<bos>", "<eos>"].iter().any(|s| p.contains(s)), "{p}");
        }
        for p in &a.present {
            let w = words(p);
            assert!(doc.tokens.windows(w.len()).any(|win| win == w.as_slice()), "{p}");
        }
        assert_eq!(a.absent_tags.len(), a.absent.len());
    }
}

#[test]
fn threshold_above_every_score_falls_back_to_leading_sentences() {
    let (sel, eg) = models(5);
    let mut opts = PredictOptions::from_config(&eg.cfg);
    opts.select_threshold = 1.1;
    let doc = &toy_docs(1, 50)[0];
    let set = predict(doc, &sel, &eg, &opts).unwrap();
    assert_eq!(set.id, doc.id);
    assert!(!set.trace.is_empty());
}

fn words(p: &str) -> Vec<String> {
    p.split_whitespace().map(String::from).collect()
}
