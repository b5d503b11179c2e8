//! Greedy decoding with trigram blocking and the end-to-end prediction pipeline.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{BOS_ID, EOS_ID, PAD_ID, SEP_ID, UNK_ID};
use crate::corpus::{Document, Vocab};
use crate::error::Result;
use crate::evalkit::stem_tokens;
use crate::extgen::{extract_spans, DecodeSession, ExtGenInput, ExtGenModel};
use crate::selector::{select_sentences, SelectorModel};

/// Ids never emitted by the decoder.
pub const BANNED_IDS: [usize; 3] = [PAD_ID, UNK_ID, BOS_ID];

/// Anything that maps the previous token to a next-token distribution.
pub trait StepModel {
    fn step(&mut self, prev: usize) -> Result<Vec<f64>>;
}

impl StepModel for DecodeSession<'_> {
    fn step(&mut self, prev: usize) -> Result<Vec<f64>> {
        Ok(self.step_full(prev)?.dist)
    }
}

fn is_delimiter(id: usize) -> bool {
    id == SEP_ID || id == EOS_ID
}

/// Highest-probability token at each step, skipping any that would repeat a
/// delimiter-free trigram already in the output. Ties go to the lower id. The
/// output ends with `<eos>` unless `max_len` tokens were emitted first.
pub fn greedy_decode<M: StepModel + ?Sized>(model: &mut M, max_len: usize) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = Vec::new();
    let mut seen: HashSet<[usize; 3]> = HashSet::new();
    let mut prev = BOS_ID;
    while out.len() < max_len {
        let dist = model.step(prev)?;
        let tail = match out.as_slice() {
            [.., a, b] if !is_delimiter(*a) && !is_delimiter(*b) => Some([*a, *b]),
            _ => None,
        };
        let mut best: Option<usize> = None;
        for (id, &p) in dist.iter().enumerate() {
            if BANNED_IDS.contains(&id) || best.is_some_and(|b| p <= dist[b]) {
                continue;
            }
            if let Some([a, b]) = tail {
                if !is_delimiter(id) && seen.contains(&[a, b, id]) {
                    continue;
                }
            }
            best = Some(id);
        }
        let next = best.unwrap_or(EOS_ID);
        if let Some([a, b]) = tail {
            if !is_delimiter(next) {
                seen.insert([a, b, next]);
            }
        }
        out.push(next);
        if next == EOS_ID {
            break;
        }
        prev = next;
    }
    Ok(out)
}

/// Splits on `<sep>`, stops at `<eos>`, drops `<bos>` and empty segments.
/// `tags` is sliced alongside when it has the same length as `ids`.
pub fn split_decoded(ids: &[usize], tags: &[usize]) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut out = Vec::new();
    let mut cur = (Vec::new(), Vec::new());
    for (i, &id) in ids.iter().enumerate() {
        match id {
            BOS_ID => continue,
            SEP_ID | EOS_ID => {
                if !cur.0.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                if id == EOS_ID {
                    return out;
                }
            }
            _ => {
                cur.0.push(id);
                if let Some(&t) = tags.get(i) {
                    cur.1.push(t);
                }
            }
        }
    }
    if !cur.0.is_empty() {
        out.push(cur);
    }
    out
}

/// Final predictions for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub id: String,
    pub present: Vec<String>,
    pub absent: Vec<String>,
    pub absent_tags: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gate_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PredictOptions {
    pub budget: usize,
    pub select_threshold: f64,
    pub extract_threshold: f64,
    pub max_len: usize,
    /// Drop absent phrases whose stems equal an extracted present phrase.
    pub cross_dedup: bool,
    pub gate_trace: bool,
}

impl PredictOptions {
    pub fn from_config(cfg: &crate::config::ModelConfig) -> Self {
        PredictOptions {
            budget: cfg.max_src_len,
            select_threshold: cfg.select_threshold,
            extract_threshold: cfg.extract_threshold,
            max_len: cfg.max_decode_len,
            cross_dedup: true,
            gate_trace: false,
        }
    }
}

/// Sentences for the extractor-generator: the selector's choice, or the
/// first sentence (truncated later) when nothing fits the budget.
pub fn choose_sentences(doc: &Document, probs: &[f64], opts: &PredictOptions) -> Vec<usize> {
    let lengths: Vec<usize> = (0..doc.sentences.len()).map(|s| doc.sentence_len(s)).collect();
    let mut sel = select_sentences(&lengths, probs, opts.budget, opts.select_threshold);
    if sel.is_empty() && !doc.sentences.is_empty() {
        sel.push(0);
    }
    sel
}

/// Selection, extraction, copy blocking, decoding and deduplication.
pub fn predict(doc: &Document, selector: &SelectorModel, extgen: &ExtGenModel, opts: &PredictOptions) -> Result<PredictionSet> {
    let mut set = PredictionSet {
        id: doc.id.clone(),
        present: Vec::new(),
        absent: Vec::new(),
        absent_tags: Vec::new(),
        trace: Vec::new(),
        gate_trace: Vec::new(),
    };
    if doc.tokens.is_empty() {
        log::warn!("document {} is empty", doc.id);
        return Ok(set);
    }
    let probs = selector.score_document(doc)?;
    let selected = choose_sentences(doc, &probs, opts);
    let input = ExtGenInput::build(doc, &selected, &extgen.vocab, &extgen.cfg)?;
    predict_input(&input, extgen, opts, &mut set)?;
    Ok(set)
}

/// Extraction and generation over an already built input.
pub fn predict_input(input: &ExtGenInput, extgen: &ExtGenModel, opts: &PredictOptions, set: &mut PredictionSet) -> Result<()> {
    let probs = extgen.extract_probs(input)?;
    let present = extract_spans(&probs, &input.tokens, &input.sentences, opts.extract_threshold);
    let block = probs.iter().map(|&p| p >= opts.extract_threshold).collect();
    let mut session = extgen.session(input, block)?;
    let ids = greedy_decode(&mut session, opts.max_len)?;
    let tags = session.tag_trace().to_vec();

    let seen: HashSet<Vec<String>> = present.iter().map(|p| stem_tokens(p)).collect();
    let mut absent_seen: HashSet<Vec<String>> = HashSet::new();
    for (phrase, ptags) in split_decoded(&ids, &tags) {
        let words: Vec<String> = phrase.iter().map(|&id| input.word(id, &extgen.vocab).to_string()).collect();
        let stems = stem_tokens(&words);
        if (opts.cross_dedup && seen.contains(&stems)) || !absent_seen.insert(stems) {
            continue;
        }
        set.absent.push(words.join(" "));
        set.absent_tags.push(ptags.iter().map(|&t| Vocab::tag_name(t).to_string()).collect());
    }
    set.present = present.into_iter().map(|p| p.join(" ")).collect();
    set.trace = ids.iter().map(|&id| input.word(id, &extgen.vocab).to_string()).collect();
    if opts.gate_trace {
        set.gate_trace = session.gate_trace().to_vec();
    }
    Ok(())
}
