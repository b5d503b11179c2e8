use std::collections::HashMap;

use super::tagger::Upos;
use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
pub const SEP_ID: usize = 4;
pub const DIGIT_ID: usize = 5;

pub const SPECIALS: [&str; 6] = [PAD, UNK, BOS, EOS, SEP, super::text::DIGIT];

pub const TAG_PAD_ID: usize = 0;
/// Tag shared by `<bos>`, `<sep>` and `<eos>` in decoder tag sequences.
pub const TAG_SPECIAL_ID: usize = 1;
pub const TAG_SPECIAL: &str = "<special>";

pub const CHAR_PAD_ID: usize = 0;
pub const CHAR_UNK_ID: usize = 1;
/// Printable ASCII follows the two reserved character ids.
pub const CHAR_VOCAB_SIZE: usize = 2 + 95;

/// Word, character and tag id maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Keeps the `size` most frequent words (ties broken alphabetically) after the specials.
    pub fn build<'a, I>(tokens: I, size: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !SPECIALS.contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(size).map(|(w, _)| w.to_string()))
            .collect();
        Self::from_words(words).expect("specials are unique and first")
    }

    /// Rebuilds from an ordered word list, which must start with the specials.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < SPECIALS.len() || words.iter().zip(SPECIALS).any(|(w, s)| w != s) {
            return Err(Error::Data("vocab must start with the special tokens".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocab entry `{w}`")));
            }
        }
        Ok(Vocab { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// One word per line, in id order.
    pub fn to_text(&self) -> String {
        let mut s = self.words.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_words(text.lines().map(str::to_string).collect())
    }

    pub fn num_tags() -> usize {
        2 + Upos::ALL.len()
    }

    pub fn tag_id(tag: Upos) -> usize {
        2 + Upos::ALL.iter().position(|&t| t == tag).expect("all tags listed")
    }

    /// Inverse of [`Vocab::tag_id`]; specials map to their reserved names.
    pub fn tag_name(id: usize) -> &'static str {
        match id {
            TAG_PAD_ID => PAD,
            TAG_SPECIAL_ID => TAG_SPECIAL,
            i => Upos::ALL.get(i - 2).map_or("X", |t| t.as_str()),
        }
    }

    pub fn char_id(c: char) -> usize {
        if (' '..='~').contains(&c) {
            2 + (c as usize - ' ' as usize)
        } else {
            CHAR_UNK_ID
        }
    }

    pub fn is_special(id: usize) -> bool {
        matches!(id, PAD_ID | UNK_ID | BOS_ID | EOS_ID | SEP_ID)
    }
}
