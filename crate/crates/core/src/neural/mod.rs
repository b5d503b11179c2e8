//! Transformer building blocks shared by the selector and the extractor-generator.

mod attention;
mod embedding;
mod layers;

pub use attention::{causal_mask, AttentionHead, CoverageState, HeadCoverage, MultiHeadAttention, RelTables};
pub use embedding::{char_ids, EmbeddingLayer, SourceInput};
pub use layers::{Decoder, DecoderCache, DecoderLayer, Encoder, EncoderLayer, FeedForward, LayerNorm};
