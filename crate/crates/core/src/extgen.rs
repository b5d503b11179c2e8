//! Joint extractor-generator: a token-level extractor on the encoder output and
//! a coverage decoder whose vocabulary softmax is mixed with a copy
//! distribution that skips source words already extracted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arraycore::{Checkpoint, Graph, Init, ParamId, ParamStore, Tensor, Var};
use crate::config::ModelConfig;
use crate::corpus::vocab::{EOS, EOS_ID, SEP, SEP_ID, UNK, UNK_ID};
use crate::corpus::{build_decoder_target, dedup_phrases, order_absent, Document, Vocab};
use crate::error::{Error, Result};
use crate::neural::{char_ids, CoverageState, Decoder, DecoderCache, EmbeddingLayer, Encoder, SourceInput};
use crate::objective::{combine_graph, nll_sequence, weighted_bce, LossWeights};
use crate::selector::{checkpoint_parts, model_checkpoint, restore, select_sentences};

/// Encoder input built from selected sentences, with the copy vocabulary
/// extension for source words missing from the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtGenInput {
    pub source: SourceInput,
    pub tokens: Vec<String>,
    /// Sentence bounds relative to `tokens`.
    pub sentences: Vec<(usize, usize)>,
    /// Per-position id in the extended vocabulary.
    pub copy_ids: Vec<usize>,
    /// Out-of-vocabulary source words; word `k` has extended id `|V| + k`.
    pub oov: Vec<String>,
    pub vocab_len: usize,
}

impl ExtGenInput {
    /// Concatenates `selected` sentences of `doc`, truncated to `max_src_len`.
    /// Segment ids keep the original sentence index.
    pub fn build(doc: &Document, selected: &[usize], vocab: &Vocab, cfg: &ModelConfig) -> Result<Self> {
        if selected.is_empty() {
            return Err(Error::Contract(format!("document {}: no sentences selected", doc.id)));
        }
        let mut input = ExtGenInput {
            source: SourceInput {
                words: Vec::new(),
                tags: Vec::new(),
                positions: Vec::new(),
                segments: Vec::new(),
                chars: Vec::new(),
            },
            tokens: Vec::new(),
            sentences: Vec::new(),
            copy_ids: Vec::new(),
            oov: Vec::new(),
            vocab_len: vocab.len(),
        };
        for &s in selected {
            let (a, b) = doc.sentences[s];
            let room = cfg.max_src_len - input.tokens.len();
            let b = b.min(a + room);
            if b <= a {
                break;
            }
            let start = input.tokens.len();
            for i in a..b {
                let w = &doc.tokens[i];
                input.source.words.push(vocab.id(w));
                input.source.tags.push(Vocab::tag_id(doc.pos_tags[i]));
                input.source.positions.push(input.tokens.len());
                input.source.segments.push(s.min(cfg.max_sentences - 1));
                input.source.chars.push(char_ids(w, cfg.max_word_len));
                let id = match vocab.get(w) {
                    Some(id) => id,
                    None => input.oov_id(w),
                };
                input.copy_ids.push(id);
                input.tokens.push(w.clone());
            }
            input.sentences.push((start, input.tokens.len()));
        }
        Ok(input)
    }

    fn oov_id(&mut self, w: &str) -> usize {
        let k = match self.oov.iter().position(|o| o == w) {
            Some(k) => k,
            None => {
                self.oov.push(w.to_string());
                self.oov.len() - 1
            }
        };
        self.vocab_len + k
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Width of the output distribution.
    pub fn width(&self) -> usize {
        self.vocab_len + self.oov.len()
    }

    /// Extended id of `word`: vocabulary first, then source OOVs, else unknown.
    pub fn ext_id(&self, word: &str, vocab: &Vocab) -> usize {
        vocab
            .get(word)
            .or_else(|| self.oov.iter().position(|o| o == word).map(|k| self.vocab_len + k))
            .unwrap_or(UNK_ID)
    }

    pub fn word<'a>(&'a self, id: usize, vocab: &'a Vocab) -> &'a str {
        if id >= self.vocab_len {
            &self.oov[id - self.vocab_len]
        } else {
            vocab.word(id).unwrap_or(UNK)
        }
    }
}

/// One teacher-forced training example.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: String,
    pub input: ExtGenInput,
    pub extract_labels: Vec<u8>,
    /// Source positions the copy path may not use.
    pub block: Vec<bool>,
    /// Decoder input: `<bos>` and every target token except the last.
    pub dec_words: Vec<usize>,
    pub dec_chars: Vec<Vec<usize>>,
    /// Next-token targets in the extended vocabulary.
    pub targets: Vec<usize>,
    pub tag_targets: Vec<usize>,
    pub target_tokens: Vec<String>,
}

impl TrainExample {
    /// Gold salient sentences under the word budget, gold extraction labels
    /// as the copy block, absent phrases ordered and cut to the decode limit.
    pub fn build(doc: &Document, vocab: &Vocab, cfg: &ModelConfig) -> Result<Self> {
        let lengths: Vec<usize> = (0..doc.sentences.len()).map(|s| doc.sentence_len(s)).collect();
        let bits: Vec<f64> = doc.salience_labels.iter().map(|&b| f64::from(b)).collect();
        let mut selected = select_sentences(&lengths, &bits, cfg.max_src_len, 0.5);
        if selected.is_empty() {
            selected.push(0);
        }
        let input = ExtGenInput::build(doc, &selected, vocab, cfg)?;
        let mut extract_labels = Vec::with_capacity(input.len());
        for &s in &selected {
            let (a, b) = doc.sentences[s];
            extract_labels.extend_from_slice(&doc.extract_labels[a..b]);
        }
        extract_labels.truncate(input.len());
        let block = extract_labels.iter().map(|&l| l == 1).collect();

        let (mut phrases, mut tags) = order_absent(&input.tokens, &doc.absent_phrases, &doc.absent_tags);
        let mut target = build_decoder_target(vocab, &phrases, &tags);
        while target.tokens.len() - 1 > cfg.max_decode_len && !phrases.is_empty() {
            phrases.pop();
            tags.truncate(phrases.len());
            target = build_decoder_target(vocab, &phrases, &tags);
        }
        if phrases.len() < doc.absent_phrases.len() {
            log::info!(
                "document {}: kept {} of {} absent phrases within {} decode steps",
                doc.id,
                phrases.len(),
                doc.absent_phrases.len(),
                cfg.max_decode_len
            );
        }
        let m = target.tokens.len() - 1;
        let targets = target.tokens[1..]
            .iter()
            .map(|w| match w.as_str() {
                SEP => SEP_ID,
                EOS => EOS_ID,
                _ => input.ext_id(w, vocab),
            })
            .collect();
        Ok(TrainExample {
            id: doc.id.clone(),
            extract_labels,
            block,
            dec_words: target.word_ids[..m].to_vec(),
            dec_chars: target.tokens[..m].iter().map(|w| char_ids(w, cfg.max_word_len)).collect(),
            targets,
            tag_targets: target.tag_ids[1..].to_vec(),
            target_tokens: target.tokens,
            input,
        })
    }
}

/// Output heads for a block of decoder rows.
#[derive(Debug, Clone, Copy)]
pub struct Heads {
    /// Final distribution over the extended vocabulary, `[m x width]`.
    pub dist: Var,
    /// Tag distribution, `[m x tags]`.
    pub tags: Var,
    /// Copy gate `p(u=1)`, absent when every source position is blocked.
    pub gate: Option<Var>,
    /// Copy weights over source positions.
    pub copy: Option<Var>,
}

/// Parameter ids of the extractor-generator.
#[derive(Debug, Clone)]
pub struct ExtGenNet {
    pub embed: EmbeddingLayer,
    pub encoder: Encoder,
    pub ext_w1: ParamId,
    pub ext_b1: ParamId,
    pub ext_w2: ParamId,
    pub ext_b2: ParamId,
    pub decoder: Decoder,
    pub vocab_w: ParamId,
    pub vocab_b: ParamId,
    pub tag_w: ParamId,
    pub tag_b: ParamId,
    pub att_w: ParamId,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    pub tag_layer: usize,
}

impl ExtGenNet {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, vocab_len: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.d_model;
        let tags = Vocab::num_tags();
        let x = Init::XavierUniform;
        let z = Init::Zeros;
        Ok(ExtGenNet {
            embed: EmbeddingLayer::new(store, "extgen.embed", cfg, vocab_len, rng)?,
            encoder: Encoder::new(store, "extgen.encoder", cfg.layers, cfg, rng)?,
            ext_w1: store.init("extgen.extractor.w1", d, d, x, rng)?,
            ext_b1: store.init("extgen.extractor.b1", 1, d, z, rng)?,
            ext_w2: store.init("extgen.extractor.w2", d, 1, x, rng)?,
            ext_b2: store.init("extgen.extractor.b2", 1, 1, z, rng)?,
            decoder: Decoder::new(store, "extgen.decoder", cfg, rng)?,
            vocab_w: store.init("extgen.vocab.w", d, vocab_len, x, rng)?,
            vocab_b: store.init("extgen.vocab.b", 1, vocab_len, z, rng)?,
            tag_w: store.init("extgen.tag.w", d, tags, x, rng)?,
            tag_b: store.init("extgen.tag.b", 1, tags, z, rng)?,
            att_w: store.init("extgen.copy.att", d, d, x, rng)?,
            gate_w: store.init("extgen.copy.gate_w", 2 * d, 1, x, rng)?,
            gate_b: store.init("extgen.copy.gate_b", 1, 1, z, rng)?,
            tag_layer: cfg.pos_tag_layer,
        })
    }

    pub fn encode(&self, g: &mut Graph, input: &SourceInput) -> Result<Vec<Var>> {
        let x = self.embed.embed_source(g, input)?;
        self.encoder.forward(g, x)
    }

    /// Per-token extraction probabilities `[n x 1]` from the top encoder layer.
    pub fn extract(&self, g: &mut Graph, top: Var) -> Result<Var> {
        let h = g.linear(top, self.ext_w1, Some(self.ext_b1))?;
        let h = g.tanh(h);
        let logit = g.linear(h, self.ext_w2, Some(self.ext_b2))?;
        Ok(g.sigmoid(logit))
    }

    /// Vocabulary, copy and tag heads over decoder outputs `dec` (one entry per
    /// layer) against the top encoder layer `top`.
    pub fn heads(&self, g: &mut Graph, dec: &[Var], top: Var, copy_ids: &[usize], block: &[bool], width: usize) -> Result<Heads> {
        let n = g.shape(top)[0];
        if block.len() != n || copy_ids.len() != n {
            return Err(Error::shape("copy context", &[n], &[block.len(), copy_ids.len()]));
        }
        let h = *dec.last().expect("decoder output");
        let m = g.shape(h)[0];
        let v = g.params().value(self.vocab_b).cols();
        let logits = g.linear(h, self.vocab_w, Some(self.vocab_b))?;
        let p_gen = g.softmax_rows(logits, None)?;
        let identity: Vec<usize> = (0..v).collect();
        let p_gen = g.scatter_cols(p_gen, &identity, width)?;

        let tag_logits = g.linear(dec[self.tag_layer - 1], self.tag_w, Some(self.tag_b))?;
        let tags = g.softmax_rows(tag_logits, None)?;

        if block.iter().all(|&b| b) {
            return Ok(Heads {
                dist: p_gen,
                tags,
                gate: None,
                copy: None,
            });
        }
        let q = g.linear(h, self.att_w, None)?;
        let scores = g.matmul_nt(q, top)?;
        let mask: Vec<bool> = (0..m).flat_map(|_| block.iter().map(|&b| !b)).collect();
        let a = g.softmax_rows(scores, Some(&mask))?;
        let c = g.matmul(a, top)?;
        let hc = g.concat_cols(&[h, c])?;
        let gate_logit = g.linear(hc, self.gate_w, Some(self.gate_b))?;
        let gate = g.sigmoid(gate_logit);
        let keep = g.one_minus(gate);
        let p_copy = g.scatter_cols(a, copy_ids, width)?;
        let gen_part = g.mul_col(p_gen, keep)?;
        let copy_part = g.mul_col(p_copy, gate)?;
        Ok(Heads {
            dist: g.add(gen_part, copy_part)?,
            tags,
            gate: Some(gate),
            copy: Some(a),
        })
    }
}

/// Graph nodes of a teacher-forced pass.
#[derive(Debug, Clone)]
pub struct ForcedPass {
    pub encoder: Vec<Var>,
    pub extract: Var,
    pub heads: Heads,
}

/// Per-example losses as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct ExampleLoss {
    pub l_e: Var,
    pub l_w: Var,
    pub l_tag: Var,
    pub l_g: Var,
    pub l_eg: Var,
    pub clamped: usize,
}

/// An extractor-generator with its parameters, configuration and vocabulary.
#[derive(Debug, Clone)]
pub struct ExtGenModel {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub net: ExtGenNet,
}

impl ExtGenModel {
    pub fn new(cfg: &ModelConfig, vocab: Vocab) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let net = ExtGenNet::new(&mut store, cfg, vocab.len(), &mut rng)?;
        Ok(ExtGenModel {
            cfg: cfg.clone(),
            vocab,
            store,
            net,
        })
    }

    /// Parameters with the configuration text and a `vocab` attachment.
    pub fn to_checkpoint(&self) -> Checkpoint {
        model_checkpoint(&self.cfg, &self.vocab, &self.store)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let (cfg, vocab) = checkpoint_parts(ckpt)?;
        let mut m = Self::new(&cfg, vocab)?;
        restore(ckpt, &mut m.store)?;
        Ok(m)
    }

    /// Parallel pass with causal masking over a gold decoder input.
    pub fn forced(&self, g: &mut Graph, ex: &TrainExample) -> Result<ForcedPass> {
        if ex.targets.len() > self.cfg.max_decode_len {
            return Err(Error::Contract(format!(
                "target of {} steps exceeds the decode limit {}",
                ex.targets.len(),
                self.cfg.max_decode_len
            )));
        }
        let encoder = self.net.encode(g, &ex.input.source)?;
        let top = *encoder.last().expect("encoder output");
        let extract = self.net.extract(g, top)?;
        let x = self.net.embed.embed_target(g, &ex.dec_words, &ex.dec_chars)?;
        let dec = self.net.decoder.forward(g, x, &encoder)?;
        let heads = self
            .net
            .heads(g, &dec, top, &ex.input.copy_ids, &ex.block, ex.input.width())?;
        Ok(ForcedPass {
            encoder,
            extract,
            heads,
        })
    }

    pub fn losses(&self, g: &mut Graph, ex: &TrainExample, w: &LossWeights) -> Result<ExampleLoss> {
        let pass = self.forced(g, ex)?;
        let l_e = weighted_bce(g, pass.extract, &ex.extract_labels, w.omega_extractor)?;
        let (l_w, c1) = nll_sequence(g, pass.heads.dist, &ex.targets)?;
        let (l_tag, c2) = nll_sequence(g, pass.heads.tags, &ex.tag_targets)?;
        let (l_g, l_eg) = combine_graph(g, l_e, l_w, l_tag, w)?;
        Ok(ExampleLoss {
            l_e,
            l_w,
            l_tag,
            l_g,
            l_eg,
            clamped: c1 + c2,
        })
    }

    /// Evaluation-mode extraction probabilities for an input.
    pub fn extract_probs(&self, input: &ExtGenInput) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let enc = self.net.encode(&mut g, &input.source)?;
        let p = self.net.extract(&mut g, *enc.last().expect("encoder output"))?;
        Ok(g.value(p).data().to_vec())
    }

    /// Starts an incremental decode. `block` marks source positions the copy
    /// path may not use.
    pub fn session<'m>(&'m self, input: &'m ExtGenInput, block: Vec<bool>) -> Result<DecodeSession<'m>> {
        if block.len() != input.len() {
            return Err(Error::shape("copy block", &[input.len()], &[block.len()]));
        }
        let mut g = Graph::new(&self.store);
        let enc = self.net.encode(&mut g, &input.source)?;
        let top = *enc.last().expect("encoder output");
        let p = self.net.extract(&mut g, top)?;
        let extract = g.value(p).data().to_vec();
        let encoder = enc.iter().map(|&v| g.value(v).clone()).collect();
        let layers = self.net.decoder.layers.len();
        Ok(DecodeSession {
            model: self,
            input,
            block,
            encoder,
            extract,
            cache: DecoderCache::new(layers),
            coverage: CoverageState::new(layers, self.net.decoder.heads()),
            tags: Vec::new(),
            gates: Vec::new(),
        })
    }
}

/// Everything produced by one decoder step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub dist: Vec<f64>,
    pub tags: Vec<f64>,
    pub gate: Option<f64>,
    pub copy: Option<Vec<f64>>,
}

/// Incremental decoding state for one document.
#[derive(Debug)]
pub struct DecodeSession<'m> {
    model: &'m ExtGenModel,
    input: &'m ExtGenInput,
    block: Vec<bool>,
    encoder: Vec<Tensor>,
    extract: Vec<f64>,
    cache: DecoderCache,
    coverage: CoverageState,
    tags: Vec<usize>,
    gates: Vec<f64>,
}

impl DecodeSession<'_> {
    pub fn extract_probs(&self) -> &[f64] {
        &self.extract
    }

    pub fn steps(&self) -> usize {
        self.cache.steps()
    }

    pub fn input(&self) -> &ExtGenInput {
        self.input
    }

    /// Most probable tag id at each step so far.
    pub fn tag_trace(&self) -> &[usize] {
        &self.tags
    }

    pub fn gate_trace(&self) -> &[f64] {
        &self.gates
    }

    pub fn coverage_mut(&mut self) -> &mut CoverageState {
        &mut self.coverage
    }

    /// Feeds the previous token (extended id) and returns the next-step outputs.
    pub fn step_full(&mut self, prev: usize) -> Result<StepOutput> {
        let word = self.input.word(prev, &self.model.vocab).to_string();
        let vocab_id = if prev >= self.input.vocab_len { UNK_ID } else { prev };
        self.step_word(vocab_id, &word)
    }

    /// Feeds a previous token given by vocabulary id and surface form, as in
    /// the teacher-forced decoder input.
    pub fn step_word(&mut self, vocab_id: usize, word: &str) -> Result<StepOutput> {
        let m = self.model;
        let chars = vec![char_ids(word, m.cfg.max_word_len)];
        let mut g = Graph::new(&m.store);
        let enc: Vec<Var> = self.encoder.iter().map(|t| g.constant(t.clone())).collect();
        let x = m.net.embed.embed_target(&mut g, &[vocab_id], &chars)?;
        let dec = m.net.decoder.step(&mut g, x, &enc, &mut self.cache, &mut self.coverage)?;
        let top = *enc.last().expect("encoder output");
        let heads = m
            .net
            .heads(&mut g, &dec, top, &self.input.copy_ids, &self.block, self.input.width())?;
        let out = StepOutput {
            dist: g.value(heads.dist).data().to_vec(),
            tags: g.value(heads.tags).data().to_vec(),
            gate: heads.gate.map(|v| g.value(v).item()),
            copy: heads.copy.map(|v| g.value(v).data().to_vec()),
        };
        self.tags.push(argmax(&out.tags));
        self.gates.push(out.gate.unwrap_or(0.0));
        Ok(out)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Maximal runs with `p >= threshold`, split at sentence bounds, deduplicated
/// by stems in order of first occurrence.
pub fn extract_spans(probs: &[f64], tokens: &[String], sentences: &[(usize, usize)], threshold: f64) -> Vec<Vec<String>> {
    let mut phrases = Vec::new();
    for &(a, b) in sentences {
        let mut start = None;
        for i in a..=b {
            let on = i < b && probs.get(i).is_some_and(|&p| p >= threshold);
            match (on, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    phrases.push(tokens[s..i].to_vec());
                    start = None;
                }
                _ => {}
            }
        }
    }
    dedup_phrases(phrases)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn spans_from_runs() {
        let t = toks("a b c d");
        assert_eq!(
            extract_spans(&[0.9, 0.9, 0.1, 0.8], &t, &[(0, 4)], 0.5),
            vec![toks("a b"), toks("d")]
        );
        assert!(extract_spans(&[0.1, 0.2, 0.3, 0.4], &t, &[(0, 4)], 0.5).is_empty());
        assert_eq!(
            extract_spans(&[0.9; 4], &t, &[(0, 2), (2, 4)], 0.5),
            vec![toks("a b"), toks("c d")]
        );
    }

    #[test]
    fn spans_deduplicate_by_stem() {
        let t = toks("network x networks");
        assert_eq!(extract_spans(&[0.9, 0.1, 0.9], &t, &[(0, 3)], 0.5), vec![toks("network")]);
    }
}
