//! Stemmed keyphrase matching and corpus-level scoring.

mod metrics;
mod porter;

pub use metrics::{
    count_mae, evaluate, f1_at_k, match_sets, phrase_stems, Cutoff, DocScore, EvalOptions,
    EvalDoc, EvalReport, Prf, Split, SplitReport,
};
pub use porter::{porter_stem, stem_tokens};
