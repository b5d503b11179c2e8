use std::collections::HashSet;

use super::tagger::Upos;
use super::vocab::{Vocab, BOS, BOS_ID, EOS, EOS_ID, SEP, SEP_ID, TAG_SPECIAL_ID};
use crate::evalkit::porter_stem;

/// Decoder target sequence with aligned tags. `tokens` keeps surface forms so
/// OOV words can later be resolved through the copy path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderTarget {
    pub tokens: Vec<String>,
    pub word_ids: Vec<usize>,
    pub tag_ids: Vec<usize>,
}

/// Orders absent phrases for the decoder: phrases sharing a stemmed token with
/// the source come first by first-overlap position, the rest by length then
/// alphabetically.
pub fn order_absent(
    source: &[String],
    phrases: &[Vec<String>],
    tags: &[Vec<Upos>],
) -> (Vec<Vec<String>>, Vec<Vec<Upos>>) {
    let stops = super::stopwords();
    let src_stems: Vec<String> = source.iter().map(|t| porter_stem(t)).collect();
    let first_overlap = |p: &[String]| {
        let stems: HashSet<String> = p
            .iter()
            .filter(|t| !stops.contains(t.as_str()))
            .map(|t| porter_stem(t))
            .collect();
        src_stems.iter().position(|s| stems.contains(s))
    };
    let mut keyed: Vec<(Option<usize>, usize)> = phrases
        .iter()
        .enumerate()
        .map(|(i, p)| (first_overlap(p), i))
        .collect();
    keyed.sort_by(|&(oa, a), &(ob, b)| match (oa, ob) {
        (Some(x), Some(y)) => x.cmp(&y).then(a.cmp(&b)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => phrases[a]
            .len()
            .cmp(&phrases[b].len())
            .then_with(|| phrases[a].join(" ").cmp(&phrases[b].join(" "))),
    });
    keyed
        .into_iter()
        .map(|(_, i)| (phrases[i].clone(), tags.get(i).cloned().unwrap_or_default()))
        .unzip()
}

/// `<bos> p1 <sep> p2 ... <eos>` with one tag per token; specials share one tag.
/// Phrases are used in the order given; see [`order_absent`].
pub fn build_decoder_target(vocab: &Vocab, phrases: &[Vec<String>], tags: &[Vec<Upos>]) -> DecoderTarget {
    let mut out = DecoderTarget {
        tokens: vec![BOS.to_string()],
        word_ids: vec![BOS_ID],
        tag_ids: vec![TAG_SPECIAL_ID],
    };
    for (i, phrase) in phrases.iter().enumerate() {
        if i > 0 {
            out.tokens.push(SEP.to_string());
            out.word_ids.push(SEP_ID);
            out.tag_ids.push(TAG_SPECIAL_ID);
        }
        for (j, w) in phrase.iter().enumerate() {
            out.tokens.push(w.clone());
            out.word_ids.push(vocab.id(w));
            let tag = tags.get(i).and_then(|t| t.get(j)).copied().unwrap_or(Upos::X);
            out.tag_ids.push(Vocab::tag_id(tag));
        }
    }
    out.tokens.push(EOS.to_string());
    out.word_ids.push(EOS_ID);
    out.tag_ids.push(TAG_SPECIAL_ID);
    out
}
