use std::path::Path;

use segnet::corpus::{preprocess, read_jsonl, Document, RawExample, RuleTagger};

fn sample() -> Document {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/sample.jsonl");
    let raws: Vec<RawExample> = read_jsonl(&path).unwrap();
    preprocess(&raws[0], &RuleTagger).unwrap()
}

fn joined(phrases: impl IntoIterator<Item = Vec<String>>) -> Vec<String> {
    phrases.into_iter().map(|p| p.join(" ")).collect()
}

#[test]
fn sample_document_has_eleven_sentences() {
    assert_eq!(sample().sentences.len(), 11);
}

#[test]
fn sample_document_salience_labels() {
    assert_eq!(sample().salience_string(), "1 1 1 1 0 1 0 1 0 0 1");
}

#[test]
fn sample_document_present_absent_split() {
    let doc = sample();
    assert_eq!(
        joined(doc.present_phrases.iter().map(|p| p.tokens.clone())),
        vec![
            "natural language processing",
            "computer assisted language learning",
            "integrated e learning"
        ]
    );
    assert_eq!(
        joined(doc.absent_phrases.clone()),
        vec!["semantic web technologies", "learning of foreign languages"]
    );
}

#[test]
fn extract_labels_cover_present_spans() {
    let doc = sample();
    let ones = doc.extract_labels.iter().filter(|&&b| b == 1).count();
    let mut covered = vec![false; doc.tokens.len()];
    for p in &doc.present_phrases {
        for &(s, e) in &p.spans {
            covered[s..e].iter_mut().for_each(|c| *c = true);
        }
    }
    assert_eq!(ones, covered.iter().filter(|&&c| c).count());
}

#[test]
fn preprocessing_is_idempotent_on_the_sample() {
    let doc = sample();
    let again = RawExample {
        id: "again".into(),
        title: String::new(),
        body: String::new(),
        keyphrases: Vec::new(),
        tokens: Some(doc.tokens.clone()),
        pos_tags: None,
    };
    assert_eq!(preprocess(&again, &RuleTagger).unwrap().tokens, doc.tokens);
}
