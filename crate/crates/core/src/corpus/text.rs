//! Lowercasing, digit normalisation, tokenization and sentence splitting.

use std::sync::OnceLock;

use regex::Regex;

pub const DIGIT: &str = "<digit>";

fn digit_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+(?:[.,]\d+)*").expect("valid regex"))
}

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // words may embed `<digit>` and inner apostrophes; hyphens and dashes are
    // separators; every other non-space symbol is its own token.
    RE.get_or_init(|| {
        Regex::new(
            r"(?:<digit>|[\p{L}\p{N}])(?:<digit>|[\p{L}\p{M}\p{N}]|'[\p{L}\p{N}])*|[^\s\p{L}\p{M}\p{N}\-\u{2010}-\u{2015}]",
        )
        .expect("valid regex")
    })
}

/// Lowercases and replaces every maximal digit run (with inner `.`/`,` groups) by `<digit>`.
pub fn normalize(text: &str) -> String {
    let lower = text.to_lowercase();
    digit_re().replace_all(&lower, DIGIT).into_owned()
}

/// Normalises then splits into tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let norm = normalize(text);
    token_re()
        .find_iter(&norm)
        .map(|m| m.as_str().to_string())
        .collect()
}

pub fn is_terminator(token: &str) -> bool {
    matches!(token, "." | "?" | "!")
}

/// Splits a token stream into `[start, end)` sentence ranges. A sentence ends
/// after a run of terminators; trailing unterminated tokens form a final sentence.
pub fn split_sentences(tokens: &[String]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < tokens.len() {
        if is_terminator(&tokens[i]) {
            while i + 1 < tokens.len() && is_terminator(&tokens[i + 1]) {
                i += 1;
            }
            out.push((start, i + 1));
            start = i + 1;
        }
        i += 1;
    }
    if start < tokens.len() {
        out.push((start, tokens.len()));
    }
    out
}
