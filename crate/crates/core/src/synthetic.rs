//! Small generated corpora for overfitting and separability checks.
//!
//! Every document has a title holding the first present phrase, a sentence
//! holding the second, and filler sentences with no keyphrase material. The
//! absent phrase pairs the second phrase's modifier with a head word that never
//! appears in the text, chosen by the first phrase's head.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::RawExample;

const MODIFIERS: [&str; 16] = [
    "neural", "graph", "vector", "kernel", "signal", "tensor", "sparse", "spectral", "latent", "robust",
    "adaptive", "convex", "markov", "bayesian", "semantic", "quantum",
];

const HEADS: [&str; 8] = [
    "network", "model", "search", "parser", "cluster", "inference", "embedding", "retrieval",
];

const ABSENT_HEADS: [&str; 8] = [
    "theory", "analysis", "optimization", "estimation", "recognition", "design", "systems", "mining",
];

const FILLER: [&str; 16] = [
    "we", "study", "problem", "paper", "presents", "new", "approach", "results", "show", "our", "method",
    "effective", "experiments", "data", "proposed", "work",
];

fn filler(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<&'static str> {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| *FILLER.choose(rng).expect("non-empty")).collect()
}

/// `n` documents of at most 30 tokens with two present phrases and one absent
/// phrase each.
pub fn toy_corpus(n: usize, seed: u64) -> Vec<RawExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mods: Vec<&str> = MODIFIERS.choose_multiple(&mut rng, 2).copied().collect();
            let heads: Vec<&str> = HEADS.choose_multiple(&mut rng, 2).copied().collect();
            let first = format!("{} {}", mods[0], heads[0]);
            let second = format!("{} {}", mods[1], heads[1]);
            let absent_head = ABSENT_HEADS[HEADS.iter().position(|h| *h == heads[0]).expect("pool word")];
            let absent = format!("{} {}", mods[1], absent_head);

            let lead = filler(&mut rng, 2, 2).join(" ");
            let title = format!("{lead} {first}");
            let before = filler(&mut rng, 1, 3).join(" ");
            let after = filler(&mut rng, 1, 2).join(" ");
            let mut body = format!("{before} {second} {after} .");
            for _ in 0..rng.gen_range(1..=2) {
                body.push(' ');
                body.push_str(&filler(&mut rng, 3, 5).join(" "));
                body.push_str(" .");
            }
            RawExample {
                id: format!("toy-{i:02}"),
                title,
                body,
                keyphrases: vec![first, second, absent],
                tokens: None,
                pos_tags: None,
            }
        })
        .collect()
}
