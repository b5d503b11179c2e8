//! Universal part-of-speech tags and a small rule-based fallback tagger.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::text::DIGIT;
use crate::error::Error;

/// The 17 universal POS tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Upos {
    #[serde(rename = "ADJ")]
    Adj,
    #[serde(rename = "ADP")]
    Adp,
    #[serde(rename = "ADV")]
    Adv,
    #[serde(rename = "AUX")]
    Aux,
    #[serde(rename = "CCONJ")]
    Cconj,
    #[serde(rename = "DET")]
    Det,
    #[serde(rename = "INTJ")]
    Intj,
    #[serde(rename = "NOUN")]
    Noun,
    #[serde(rename = "NUM")]
    Num,
    #[serde(rename = "PART")]
    Part,
    #[serde(rename = "PRON")]
    Pron,
    #[serde(rename = "PROPN")]
    Propn,
    #[serde(rename = "PUNCT")]
    Punct,
    #[serde(rename = "SCONJ")]
    Sconj,
    #[serde(rename = "SYM")]
    Sym,
    #[serde(rename = "VERB")]
    Verb,
    #[serde(rename = "X")]
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::Adj,
        Upos::Adp,
        Upos::Adv,
        Upos::Aux,
        Upos::Cconj,
        Upos::Det,
        Upos::Intj,
        Upos::Noun,
        Upos::Num,
        Upos::Part,
        Upos::Pron,
        Upos::Propn,
        Upos::Punct,
        Upos::Sconj,
        Upos::Sym,
        Upos::Verb,
        Upos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::Adj => "ADJ",
            Upos::Adp => "ADP",
            Upos::Adv => "ADV",
            Upos::Aux => "AUX",
            Upos::Cconj => "CCONJ",
            Upos::Det => "DET",
            Upos::Intj => "INTJ",
            Upos::Noun => "NOUN",
            Upos::Num => "NUM",
            Upos::Part => "PART",
            Upos::Pron => "PRON",
            Upos::Propn => "PROPN",
            Upos::Punct => "PUNCT",
            Upos::Sconj => "SCONJ",
            Upos::Sym => "SYM",
            Upos::Verb => "VERB",
            Upos::X => "X",
        }
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Upos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Upos::ALL
            .iter()
            .copied()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Data(format!("unknown POS tag `{s}`")))
    }
}

pub trait PosTagger: Send + Sync {
    fn tag(&self, tokens: &[String]) -> Vec<Upos>;
}

/// Lexicon plus suffix heuristics; defaults to NOUN.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleTagger;

const DET: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "each", "every", "some", "any", "no",
    "another", "all", "both", "either", "neither", "such",
];
const PRON: &[&str] = &[
    "i", "you", "he", "she", "it", "we", "they", "me", "him", "her", "us", "them", "my", "your",
    "his", "its", "our", "their", "mine", "yours", "theirs", "ours", "myself", "itself",
    "themselves", "which", "who", "whom", "whose", "what", "one",
];
const ADP: &[&str] = &[
    "of", "in", "on", "at", "by", "for", "with", "from", "to", "into", "onto", "over", "under",
    "about", "above", "below", "between", "among", "through", "during", "without", "within",
    "across", "against", "along", "around", "after", "before", "behind", "beyond", "via", "upon",
    "towards", "toward", "than", "as", "per",
];
const CCONJ: &[&str] = &["and", "or", "but", "nor", "yet"];
const SCONJ: &[&str] = &[
    "if", "because", "although", "though", "while", "whereas", "since", "unless", "until",
    "whether", "where", "when",
];
const AUX: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "do", "does",
    "did", "will", "would", "shall", "should", "can", "could", "may", "might", "must",
];
const PART: &[&str] = &["not", "n't", "'s"];
const ADV: &[&str] = &[
    "very", "also", "so", "too", "then", "there", "here", "however", "thus", "therefore",
    "moreover", "furthermore", "only", "just", "even", "still", "already", "often", "always",
    "never", "far", "well", "much", "more", "most",
];
const NUM: &[&str] = &[
    "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "hundred",
    "thousand", "million",
];
const INTJ: &[&str] = &["oh", "hey", "wow", "yes"];

const ADJ_SUFFIXES: &[&str] = &[
    "ous", "ful", "ive", "able", "ible", "al", "ic", "less", "ary", "ical", "ular",
];
const VERB_SUFFIXES: &[&str] = &["ing", "ed", "ize", "ise", "ify"];

impl RuleTagger {
    pub fn tag_word(&self, w: &str) -> Upos {
        if w.contains(DIGIT) && !w.replace(DIGIT, "").chars().any(char::is_alphabetic) {
            return Upos::Num;
        }
        let table: [(&[&str], Upos); 10] = [
            (DET, Upos::Det),
            (PRON, Upos::Pron),
            (ADP, Upos::Adp),
            (CCONJ, Upos::Cconj),
            (SCONJ, Upos::Sconj),
            (AUX, Upos::Aux),
            (PART, Upos::Part),
            (ADV, Upos::Adv),
            (NUM, Upos::Num),
            (INTJ, Upos::Intj),
        ];
        for (words, tag) in table {
            if words.contains(&w) {
                return tag;
            }
        }
        let mut chars = w.chars();
        match (chars.next(), chars.next()) {
            (None, _) => return Upos::X,
            (Some(c), None) if !c.is_alphanumeric() => {
                return if "$%&+=<>#@*/\\^~|".contains(c) {
                    Upos::Sym
                } else {
                    Upos::Punct
                };
            }
            _ => {}
        }
        if !w.chars().any(char::is_alphabetic) {
            return Upos::X;
        }
        if w.len() > 4 && w.ends_with("ly") {
            return Upos::Adv;
        }
        if w.len() > 4 && VERB_SUFFIXES.iter().any(|s| w.ends_with(s)) {
            return Upos::Verb;
        }
        if w.len() > 4 && ADJ_SUFFIXES.iter().any(|s| w.ends_with(s)) {
            return Upos::Adj;
        }
        Upos::Noun
    }
}

impl PosTagger for RuleTagger {
    fn tag(&self, tokens: &[String]) -> Vec<Upos> {
        tokens.iter().map(|t| self.tag_word(t)).collect()
    }
}
