mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segnet::arraycore::{analytic_grads, Graph};
use segnet::error::Error;
use segnet::extgen::{ExtGenInput, ExtGenModel, TrainExample};
use segnet::objective::LossWeights;

use common::{tiny_extgen, toy_docs, vocab_for};

fn randomize(m: &mut ExtGenModel, seed: u64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        if m.store.get(id).trainable {
            for v in m.store.value_mut(id).data_mut() {
                *v += r.gen_range(-0.3..0.3);
            }
        }
    }
}

fn zero(m: &mut ExtGenModel, name: &str) {
    let id = m.store.id(name).unwrap();
    m.store.value_mut(id).fill(0.0);
}

#[test]
fn encoder_yields_every_layer_for_one_token() {
    let (m, exs) = tiny_extgen(1, 40);
    let mut src = exs[0].input.source.clone();
    for v in [&mut src.words, &mut src.tags, &mut src.positions, &mut src.segments] {
        v.truncate(1);
    }
    src.chars.truncate(1);
    let mut g = Graph::new(&m.store);
    let outs = m.net.encode(&mut g, &src).unwrap();
    assert_eq!(outs.len(), m.cfg.layers);
    assert!(outs.iter().all(|&o| g.shape(o) == [1, m.cfg.d_model]));
}

#[test]
fn zero_extractor_gives_one_half_and_bias_saturates() {
    let (mut m, exs) = tiny_extgen(2, 40);
    for p in ["w1", "b1", "w2", "b2"] {
        zero(&mut m, &format!("extgen.extractor.{p}"));
    }
    assert!(m.extract_probs(&exs[0].input).unwrap().iter().all(|&p| p == 0.5));
    let b2 = m.store.id("extgen.extractor.b2").unwrap();
    m.store.value_mut(b2).fill(50.0);
    assert!(m.extract_probs(&exs[0].input).unwrap().iter().all(|&p| p > 1.0 - 1e-12));
}

#[test]
fn identical_documents_give_identical_rows() {
    let (m, exs) = tiny_extgen(3, 40);
    let run = || {
        let mut g = Graph::new(&m.store);
        let pass = m.forced(&mut g, &exs[0]).unwrap();
        g.value(pass.heads.dist).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn segment_table_receives_gradient() {
    let (m, exs) = tiny_extgen(4, 40);
    let w = LossWeights::default();
    let (_, grads) = analytic_grads(&m.store, &|g: &mut Graph| Ok(m.losses(g, &exs[0], &w)?.l_eg)).unwrap();
    let seg = m.store.id("extgen.embed.segment").unwrap();
    assert!(grads.get(seg).sum_squares() > 0.0);
}

#[test]
fn input_extends_vocabulary_with_source_words() {
    let (m, exs) = tiny_extgen(5, 10);
    let input = &exs[0].input;
    assert!(!input.oov.is_empty());
    for (tok, &id) in input.tokens.iter().zip(&input.copy_ids) {
        assert_eq!(input.word(id, &m.vocab), tok);
        assert_eq!(input.ext_id(tok, &m.vocab), id);
    }
    assert_eq!(input.width(), m.vocab.len() + input.oov.len());
    let doc = &toy_docs(1, 5)[0];
    assert!(matches!(ExtGenInput::build(doc, &[], &m.vocab, &m.cfg), Err(Error::Contract(_))));
}

#[test]
fn fully_blocked_copy_returns_generation_softmax() {
    let (mut m, exs) = tiny_extgen(6, 10);
    randomize(&mut m, 60);
    let mut ex = exs[0].clone();
    ex.block = vec![true; ex.input.len()];
    let mut g = Graph::new(&m.store);
    let pass = m.forced(&mut g, &ex).unwrap();
    assert!(pass.heads.gate.is_none());
    let x = m.net.embed.embed_target(&mut g, &ex.dec_words, &ex.dec_chars).unwrap();
    let dec = m.net.decoder.forward(&mut g, x, &pass.encoder).unwrap();
    let logits = g.linear(*dec.last().unwrap(), m.net.vocab_w, Some(m.net.vocab_b)).unwrap();
    let p_gen = g.softmax_rows(logits, None).unwrap();
    let (dist, gen) = (g.value(pass.heads.dist), g.value(p_gen));
    let v = m.vocab.len();
    for r in 0..dist.rows() {
        assert_eq!(&dist.row_slice(r)[..v], gen.row_slice(r));
        assert!(dist.row_slice(r)[v..].iter().all(|&p| p == 0.0));
    }
}

#[test]
fn saturated_gate_with_one_open_position_copies_it() {
    let (mut m, exs) = tiny_extgen(7, 10);
    let gate_b = m.store.id("extgen.copy.gate_b").unwrap();
    m.store.value_mut(gate_b).fill(1e3);
    let mut ex = exs[0].clone();
    let open = ex.input.len() - 2;
    ex.block = (0..ex.input.len()).map(|i| i != open).collect();
    let mut g = Graph::new(&m.store);
    let pass = m.forced(&mut g, &ex).unwrap();
    let dist = g.value(pass.heads.dist);
    let w = ex.input.copy_ids[open];
    for r in 0..dist.rows() {
        assert_eq!(dist.get(r, w), 1.0);
    }
}

#[test]
fn distributions_normalised_under_random_blocking() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    for case in 0..20 {
        let (mut m, exs) = tiny_extgen(100 + case, 12);
        randomize(&mut m, case);
        let mut ex = exs[case as usize % exs.len()].clone();
        ex.block = (0..ex.input.len()).map(|_| r.gen_bool(0.5)).collect();
        let mut g = Graph::new(&m.store);
        let pass = m.forced(&mut g, &ex).unwrap();
        let dist = g.value(pass.heads.dist);
        for row in 0..dist.rows() {
            let s: f64 = dist.row_slice(row).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(dist.row_slice(row).iter().all(|&p| p >= 0.0));
        }
        if let Some(a) = pass.heads.copy {
            let a = g.value(a);
            for row in 0..a.rows() {
                for (j, &b) in ex.block.iter().enumerate() {
                    if b {
                        assert_eq!(a.get(row, j), 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn uniform_scores_copy_by_frequency() {
    let (mut m, exs) = tiny_extgen(9, 40);
    zero(&mut m, "extgen.copy.att");
    let mut ex = exs[0].clone();
    ex.block = vec![false; ex.input.len()];
    let mut g = Graph::new(&m.store);
    let pass = m.forced(&mut g, &ex).unwrap();
    let a = g.value(pass.heads.copy.unwrap());
    let n = ex.input.len() as f64;
    assert!(a.data().iter().all(|&w| (w - 1.0 / n).abs() < 1e-15));
    // the copy mass on a word is its source count over n
    let counts = ex.input.copy_ids.iter().fold(std::collections::HashMap::new(), |mut acc, &id| {
        *acc.entry(id).or_insert(0usize) += 1;
        acc
    });
    let width = ex.input.width();
    let p_copy = g.scatter_cols(pass.heads.copy.unwrap(), &ex.input.copy_ids, width).unwrap();
    for (&id, &c) in &counts {
        assert!((g.value(p_copy).get(0, id) - c as f64 / n).abs() < 1e-12);
    }
}

#[test]
fn sequential_steps_match_forced_pass() {
    for seed in 0..5 {
        let (mut m, exs) = tiny_extgen(20 + seed, 12);
        randomize(&mut m, seed);
        for ex in &exs {
            let mut g = Graph::new(&m.store);
            let pass = m.forced(&mut g, ex).unwrap();
            let (dist, tags) = (g.value(pass.heads.dist).clone(), g.value(pass.heads.tags).clone());
            let mut s = m.session(&ex.input, ex.block.clone()).unwrap();
            for t in 0..ex.targets.len() {
                let out = s.step_word(ex.dec_words[t], &ex.target_tokens[t]).unwrap();
                let d = out.dist.iter().zip(dist.row_slice(t)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let dt = out.tags.iter().zip(tags.row_slice(t)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(d < 1e-6 && dt < 1e-6, "step {t}: {d} {dt}");
            }
        }
    }
}

#[test]
fn changing_a_later_target_leaves_earlier_steps() {
    let (mut m, exs) = tiny_extgen(30, 40);
    randomize(&mut m, 30);
    let ex = &exs[0];
    let rows = |e: &TrainExample| {
        let mut g = Graph::new(&m.store);
        let pass = m.forced(&mut g, e).unwrap();
        g.value(pass.heads.dist).clone()
    };
    let base = rows(ex);
    let mut alt = ex.clone();
    alt.dec_words[2] = 7;
    alt.dec_chars[2] = segnet::neural::char_ids("zzz", m.cfg.max_word_len);
    let changed = rows(&alt);
    for t in 0..2 {
        assert_eq!(base.row_slice(t), changed.row_slice(t));
    }
    assert_ne!(base.row_slice(2), changed.row_slice(2));
}

#[test]
fn tag_head_reads_its_own_layer() {
    let (mut m, exs) = tiny_extgen(31, 40);
    randomize(&mut m, 31);
    assert_eq!(m.cfg.pos_tag_layer, 1);
    let heads = |m: &ExtGenModel| {
        let mut g = Graph::new(&m.store);
        let pass = m.forced(&mut g, &exs[0]).unwrap();
        (g.value(pass.heads.dist).clone(), g.value(pass.heads.tags).clone())
    };
    let (d0, t0) = heads(&m);
    let names: Vec<String> = m
        .store
        .iter()
        .filter(|(_, p)| p.name.starts_with("extgen.decoder.layer1.ff"))
        .map(|(_, p)| p.name.clone())
        .collect();
    assert!(!names.is_empty());
    for n in &names {
        zero(&mut m, n);
    }
    let (d1, t1) = heads(&m);
    assert_eq!(t0, t1);
    assert!(d0.max_abs_diff(&d1) > 1e-9);
}

#[test]
fn overlong_target_is_rejected() {
    let (m, exs) = tiny_extgen(32, 40);
    let mut ex = exs[0].clone();
    while ex.targets.len() <= m.cfg.max_decode_len {
        ex.targets.push(segnet::corpus::vocab::SEP_ID);
        ex.tag_targets.push(1);
        ex.dec_words.push(segnet::corpus::vocab::SEP_ID);
        ex.dec_chars.push(vec![0]);
    }
    let mut g = Graph::new(&m.store);
    assert!(matches!(m.forced(&mut g, &ex), Err(Error::Contract(_))));
}

#[test]
fn training_targets_use_gold_blocks_and_extended_ids() {
    let docs = toy_docs(4, 33);
    let cfg = common::tiny(&[]);
    let vocab = vocab_for(&docs, 8);
    for doc in &docs {
        let ex = TrainExample::build(doc, &vocab, &cfg).unwrap();
        assert_eq!(ex.block.len(), ex.input.len());
        assert_eq!(ex.extract_labels.iter().filter(|&&l| l == 1).count(), 4);
        assert_eq!(ex.targets.len(), ex.dec_words.len());
        assert_eq!(ex.targets.last(), Some(&segnet::corpus::vocab::EOS_ID));
        assert!(ex.targets.iter().all(|&t| t < ex.input.width()));
    }
}
