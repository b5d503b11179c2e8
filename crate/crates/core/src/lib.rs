//! Keyphrase extraction and generation: salient sentence selection, a joint
//! extractor-generator with layer-wise coverage and informed copy attention,
//! and the evaluation harness around them.

pub mod arraycore;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod evalkit;
pub mod extgen;
pub mod neural;
pub mod objective;
pub mod selector;
pub mod synthetic;

pub use error::{Error, Result};
