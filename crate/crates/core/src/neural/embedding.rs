use rand_chacha::ChaCha8Rng;

use crate::arraycore::{Graph, Init, ParamId, ParamStore, Var};
use crate::config::ModelConfig;
use crate::corpus::vocab::{Vocab, CHAR_PAD_ID, CHAR_VOCAB_SIZE};
use crate::error::{Error, Result};

const EMBED_SIGMA: f64 = 0.02;

/// Character ids of a word, truncated to `max_len` characters.
pub fn char_ids(word: &str, max_len: usize) -> Vec<usize> {
    let ids: Vec<usize> = word.chars().take(max_len).map(Vocab::char_id).collect();
    if ids.is_empty() {
        vec![CHAR_PAD_ID]
    } else {
        ids
    }
}

/// Five aligned id sequences describing a source span.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceInput {
    pub words: Vec<usize>,
    pub tags: Vec<usize>,
    pub positions: Vec<usize>,
    pub segments: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
}

impl SourceInput {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.words.len();
        if n == 0 {
            return Err(Error::Contract("empty source input".into()));
        }
        for (name, len) in [
            ("tags", self.tags.len()),
            ("positions", self.positions.len()),
            ("segments", self.segments.len()),
            ("chars", self.chars.len()),
        ] {
            if len != n {
                return Err(Error::Contract(format!("{name} has {len} entries for {n} words")));
            }
        }
        Ok(())
    }
}

/// Word, tag, position, segment and character-CNN embeddings, summed.
#[derive(Debug, Clone)]
pub struct EmbeddingLayer {
    pub word: ParamId,
    pub tag: ParamId,
    pub position: ParamId,
    pub segment: ParamId,
    pub char_table: ParamId,
    pub char_filters: ParamId,
    pub char_bias: ParamId,
    pub char_width: usize,
    pub d_model: usize,
}

impl EmbeddingLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        vocab_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let name = |s: &str| format!("{prefix}.{s}");
        let emb = Init::Normal(EMBED_SIGMA);
        Ok(EmbeddingLayer {
            word: store.init(&name("word"), vocab_len, d, emb, rng)?,
            tag: store.init(&name("tag"), Vocab::num_tags(), d, emb, rng)?,
            position: store.init(&name("position"), cfg.max_src_len, d, emb, rng)?,
            segment: store.init(&name("segment"), cfg.max_sentences, d, emb, rng)?,
            char_table: store.init(&name("char"), CHAR_VOCAB_SIZE, cfg.char_dim, emb, rng)?,
            char_filters: store.init(
                &name("char_cnn.w"),
                cfg.char_width * cfg.char_dim,
                cfg.char_filters,
                Init::XavierUniform,
                rng,
            )?,
            char_bias: store.init(&name("char_cnn.b"), 1, cfg.char_filters, Init::Zeros, rng)?,
            char_width: cfg.char_width,
            d_model: d,
        })
    }

    /// Convolution over each word's characters, max-pooled, then `tanh`: `[n x d_model]`.
    pub fn char_cnn(&self, g: &mut Graph, chars: &[Vec<usize>]) -> Result<Var> {
        let mut flat = Vec::new();
        let mut segments = Vec::with_capacity(chars.len());
        for word in chars {
            let start = flat.len();
            flat.extend_from_slice(word);
            while flat.len() - start < self.char_width {
                flat.push(CHAR_PAD_ID);
            }
            segments.push((start, flat.len()));
        }
        let table = g.param(self.char_table);
        let x = g.gather_rows(table, &flat, "char")?;
        let (conv, out_segments) = g.conv1d(x, &segments, self.char_width, self.char_filters, self.char_bias)?;
        let pooled = g.segment_max(conv, &out_segments)?;
        Ok(g.tanh(pooled))
    }

    /// Sum of all five embeddings, followed by dropout.
    pub fn embed_source(&self, g: &mut Graph, input: &SourceInput) -> Result<Var> {
        input.check()?;
        let mut acc = self.lookup(g, self.word, &input.words, "word")?;
        for (table, ids, name) in [
            (self.tag, &input.tags, "tag"),
            (self.position, &input.positions, "position"),
            (self.segment, &input.segments, "segment"),
        ] {
            let e = self.lookup(g, table, ids, name)?;
            acc = g.add(acc, e)?;
        }
        let c = self.char_cnn(g, &input.chars)?;
        let sum = g.add(acc, c)?;
        g.dropout(sum)
    }

    /// Word plus character embedding only, as used for decoder inputs.
    pub fn embed_target(&self, g: &mut Graph, words: &[usize], chars: &[Vec<usize>]) -> Result<Var> {
        if words.len() != chars.len() {
            return Err(Error::Contract("target words and chars differ in length".into()));
        }
        let w = self.lookup(g, self.word, words, "word")?;
        let c = self.char_cnn(g, chars)?;
        let sum = g.add(w, c)?;
        g.dropout(sum)
    }

    fn lookup(&self, g: &mut Graph, table: ParamId, ids: &[usize], name: &str) -> Result<Var> {
        let t = g.param(table);
        g.gather_rows(t, ids, name)
    }
}
