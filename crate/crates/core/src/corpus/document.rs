//! Raw examples, processed documents and their derived labels.

use std::collections::HashSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::tagger::{PosTagger, Upos};
use super::text::{split_sentences, tokenize};
use crate::error::{Error, Result};
use crate::evalkit::{porter_stem, stem_tokens};

const STOPWORD_DATA: &str = include_str!("stopwords.txt");

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORD_DATA.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
}

/// One input record as read from JSON lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawExample {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default, alias = "abstract")]
    pub body: String,
    #[serde(default)]
    pub keyphrases: Vec<String>,
    /// Pre-tokenized text; replaces tokenization of title and body when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    /// One tag per token of the final token stream.
    #[serde(default, alias = "pos", skip_serializing_if = "Option::is_none")]
    pub pos_tags: Option<Vec<String>>,
}

/// A gold keyphrase found in the document, with every matching span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentPhrase {
    pub tokens: Vec<String>,
    pub spans: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub sentences: Vec<(usize, usize)>,
    pub pos_tags: Vec<Upos>,
    pub segment_ids: Vec<usize>,
    /// Gold keyphrases after tokenization and stemmed deduplication.
    pub keyphrases: Vec<Vec<String>>,
    pub present_phrases: Vec<PresentPhrase>,
    pub absent_phrases: Vec<Vec<String>>,
    pub absent_tags: Vec<Vec<Upos>>,
    pub salience_labels: Vec<u8>,
    pub extract_labels: Vec<u8>,
}

impl Document {
    pub fn sentence_tokens(&self, s: usize) -> &[String] {
        let (a, b) = self.sentences[s];
        &self.tokens[a..b]
    }

    pub fn sentence_len(&self, s: usize) -> usize {
        let (a, b) = self.sentences[s];
        b - a
    }

    pub fn salience_string(&self) -> String {
        self.salience_labels
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Tokenizes a phrase with the document pipeline.
pub fn tokenize_phrase(phrase: &str) -> Vec<String> {
    tokenize(phrase)
}

/// Removes empty phrases and later duplicates by stemmed identity.
pub fn dedup_phrases(phrases: Vec<Vec<String>>) -> Vec<Vec<String>> {
    let mut seen = HashSet::new();
    phrases
        .into_iter()
        .filter(|p| !p.is_empty() && seen.insert(stem_tokens(p)))
        .collect()
}

/// Tokenizes, tags and labels a raw example.
pub fn preprocess(raw: &RawExample, tagger: &dyn PosTagger) -> Result<Document> {
    let (tokens, sentences) = match &raw.tokens {
        Some(toks) => {
            let tokens: Vec<String> = toks
                .iter()
                .flat_map(|t| tokenize(t))
                .collect();
            if tokens.len() != toks.len() && raw.pos_tags.is_some() {
                return Err(Error::Data(format!(
                    "{}: supplied tokens do not survive normalisation one-to-one",
                    raw.id
                )));
            }
            let sentences = split_sentences(&tokens);
            (tokens, sentences)
        }
        None => {
            if raw.body.trim().is_empty() {
                return Err(Error::Data(format!("{}: empty body", raw.id)));
            }
            let mut tokens = tokenize(&raw.title);
            let mut sentences = Vec::new();
            if !tokens.is_empty() {
                sentences.push((0, tokens.len()));
            }
            let offset = tokens.len();
            let body = tokenize(&raw.body);
            sentences.extend(
                split_sentences(&body)
                    .into_iter()
                    .map(|(a, b)| (a + offset, b + offset)),
            );
            tokens.extend(body);
            (tokens, sentences)
        }
    };
    if tokens.is_empty() {
        return Err(Error::Data(format!("{}: empty body", raw.id)));
    }
    let pos_tags = match &raw.pos_tags {
        Some(tags) => {
            if tags.len() != tokens.len() {
                return Err(Error::Data(format!(
                    "{}: {} POS tags for {} tokens",
                    raw.id,
                    tags.len(),
                    tokens.len()
                )));
            }
            tags.iter().map(|t| t.parse()).collect::<Result<Vec<Upos>>>()?
        }
        None => tagger.tag(&tokens),
    };
    let mut segment_ids = vec![0; tokens.len()];
    for (s, &(a, b)) in sentences.iter().enumerate() {
        segment_ids[a..b].iter_mut().for_each(|x| *x = s);
    }
    let keyphrases = dedup_phrases(raw.keyphrases.iter().map(|k| tokenize_phrase(k)).collect());
    let (present_phrases, absent_phrases) = split_phrases(&tokens, &keyphrases);
    let absent_tags = absent_phrases.iter().map(|p| tagger.tag(p)).collect();
    let salience_labels = label_salience(&tokens, &sentences, &present_phrases, &absent_phrases);
    let extract_labels = extract_labels(tokens.len(), &present_phrases);
    Ok(Document {
        id: raw.id.clone(),
        tokens,
        sentences,
        pos_tags,
        segment_ids,
        keyphrases,
        present_phrases,
        absent_phrases,
        absent_tags,
        salience_labels,
        extract_labels,
    })
}

/// All start positions where `needle` occurs contiguously in `hay`.
fn occurrences(hay: &[String], needle: &[String]) -> Vec<(usize, usize)> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - needle.len())
        .filter(|&i| hay[i..i + needle.len()] == *needle)
        .map(|i| (i, i + needle.len()))
        .collect()
}

/// Separates phrases occurring contiguously (after stemming) in `tokens` from the rest.
pub fn split_phrases(
    tokens: &[String],
    keyphrases: &[Vec<String>],
) -> (Vec<PresentPhrase>, Vec<Vec<String>>) {
    let stemmed = stem_tokens(tokens);
    let mut present = Vec::new();
    let mut absent = Vec::new();
    for phrase in keyphrases {
        let spans = occurrences(&stemmed, &stem_tokens(phrase));
        if spans.is_empty() {
            absent.push(phrase.clone());
        } else {
            present.push(PresentPhrase {
                tokens: phrase.clone(),
                spans,
            });
        }
    }
    (present, absent)
}

/// Salient iff the sentence fully contains a present span or shares a stemmed
/// non-stopword token with an absent phrase.
pub fn label_salience(
    tokens: &[String],
    sentences: &[(usize, usize)],
    present: &[PresentPhrase],
    absent: &[Vec<String>],
) -> Vec<u8> {
    let stops = stopwords();
    let absent_stems: HashSet<String> = absent
        .iter()
        .flatten()
        .filter(|t| !stops.contains(t.as_str()))
        .map(|t| porter_stem(t))
        .collect();
    sentences
        .iter()
        .map(|&(a, b)| {
            let contains_present = present
                .iter()
                .flat_map(|p| &p.spans)
                .any(|&(s, e)| s >= a && e <= b);
            let overlaps_absent = tokens[a..b]
                .iter()
                .filter(|t| !stops.contains(t.as_str()))
                .any(|t| absent_stems.contains(&porter_stem(t)));
            u8::from(contains_present || overlaps_absent)
        })
        .collect()
}

pub fn extract_labels(n: usize, present: &[PresentPhrase]) -> Vec<u8> {
    let mut labels = vec![0u8; n];
    for &(s, e) in present.iter().flat_map(|p| &p.spans) {
        labels[s..e].iter_mut().for_each(|l| *l = 1);
    }
    labels
}
