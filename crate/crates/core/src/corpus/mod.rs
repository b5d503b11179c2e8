//! Ingestion, preprocessing and label derivation.

mod document;
mod tagger;
mod target;
mod text;
pub mod vocab;

use std::io::{BufRead, Write};
use std::path::Path;

pub use document::{
    dedup_phrases, extract_labels, label_salience, preprocess, split_phrases, stopwords,
    tokenize_phrase, Document, PresentPhrase, RawExample,
};
pub use tagger::{PosTagger, RuleTagger, Upos};
pub use target::{build_decoder_target, order_absent, DecoderTarget};
pub use text::{is_terminator, normalize, split_sentences, tokenize, DIGIT};
pub use vocab::Vocab;

use crate::error::{Error, Result};

/// Reads JSON lines, skipping blank lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Vocabulary over document tokens and gold keyphrase tokens, so absent
/// phrase words are generable.
pub fn corpus_vocab(docs: &[Document], size: usize) -> Vocab {
    let tokens = docs
        .iter()
        .flat_map(|d| d.tokens.iter().chain(d.keyphrases.iter().flatten()))
        .map(String::as_str);
    Vocab::build(tokens, size)
}
