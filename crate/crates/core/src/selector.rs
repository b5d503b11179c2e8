//! Sentence salience classifier and budgeted sentence selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arraycore::{BatchStats, Checkpoint, Graph, Init, ParamId, ParamStore, Tensor, Var};
use crate::config::ModelConfig;
use crate::corpus::{Document, Vocab};
use crate::error::{Error, Result};
use crate::evalkit::Prf;
use crate::neural::{char_ids, EmbeddingLayer, Encoder, SourceInput};

/// Two linear pieces combined by an elementwise max.
#[derive(Debug, Clone, Copy)]
pub struct Maxout {
    pub pieces: [(ParamId, ParamId); 2],
}

impl Maxout {
    fn new(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut piece = |k: usize| -> Result<(ParamId, ParamId)> {
            Ok((
                store.init(&format!("{prefix}.piece{k}.w"), d_in, d_out, Init::XavierUniform, rng)?,
                store.init(&format!("{prefix}.piece{k}.b"), 1, d_out, Init::Zeros, rng)?,
            ))
        };
        Ok(Maxout {
            pieces: [piece(0)?, piece(1)?],
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let a = g.linear(x, self.pieces[0].0, Some(self.pieces[0].1))?;
        let b = g.linear(x, self.pieces[1].0, Some(self.pieces[1].1))?;
        g.maximum(a, b)
    }
}

/// Batch normalisation with running statistics kept as frozen parameters so
/// they travel with checkpoints.
#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    fn new(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(BatchNorm {
            gamma: store.init(&format!("{prefix}.gamma"), 1, d, Init::Ones, rng)?,
            beta: store.init(&format!("{prefix}.beta"), 1, d, Init::Zeros, rng)?,
            running_mean: store.add(&format!("{prefix}.running_mean"), Tensor::zeros(&[1, d]), false)?,
            running_var: store.add(&format!("{prefix}.running_var"), Tensor::filled(&[1, d], 1.0), false)?,
        })
    }

    fn forward(&self, g: &mut Graph, x: Var, eps: f64, stats: &mut Vec<BatchStats>) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        if g.bn_training() {
            let (y, s) = g.batch_norm_train(x, gamma, beta, eps)?;
            stats.push(s);
            Ok(y)
        } else {
            let params = g.params();
            let mean = params.value(self.running_mean).data().to_vec();
            let var = params.value(self.running_var).data().to_vec();
            g.batch_norm_eval(x, gamma, beta, &mean, &var, eps)
        }
    }

    fn update(&self, store: &mut ParamStore, stats: &BatchStats, momentum: f64) {
        let blend = |t: &mut Tensor, obs: &[f64]| {
            for (r, &o) in t.data_mut().iter_mut().zip(obs) {
                *r = (1.0 - momentum) * *r + momentum * o;
            }
        };
        blend(store.value_mut(self.running_mean), &stats.mean);
        blend(store.value_mut(self.running_var), &stats.var_unbiased);
    }
}

/// Parameter ids of the selector network.
#[derive(Debug, Clone)]
pub struct SelectorNet {
    pub embed: EmbeddingLayer,
    pub encoder: Encoder,
    pub layers: [Maxout; 3],
    pub norms: [BatchNorm; 2],
    pub bn_eps: f64,
}

impl SelectorNet {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, vocab_len: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.d_model;
        let embed = EmbeddingLayer::new(store, "selector.embed", cfg, vocab_len, rng)?;
        let encoder = Encoder::new(store, "selector.encoder", cfg.selector_layers, cfg, rng)?;
        let layers = [
            Maxout::new(store, "selector.cls0", 2 * d, d, rng)?,
            Maxout::new(store, "selector.cls1", d, d / 2, rng)?,
            Maxout::new(store, "selector.cls2", d / 2, 1, rng)?,
        ];
        let norms = [
            BatchNorm::new(store, "selector.bn0", d, rng)?,
            BatchNorm::new(store, "selector.bn1", d / 2, rng)?,
        ];
        Ok(SelectorNet {
            embed,
            encoder,
            layers,
            norms,
            bn_eps: cfg.bn_eps,
        })
    }

    /// Max and mean pooled top-layer states of one sentence: `[1 x 2d]`.
    pub fn pool(&self, g: &mut Graph, input: &SourceInput) -> Result<Var> {
        let x = self.embed.embed_source(g, input)?;
        let top = *self.encoder.forward(g, x)?.last().expect("non-empty encoder");
        let s_max = g.max_rows(top)?;
        let s_mean = g.mean_rows(top);
        g.concat_cols(&[s_max, s_mean])
    }

    /// Salience probabilities `[B x 1]` for a batch of sentences, plus the
    /// batch statistics observed in training mode.
    pub fn forward(&self, g: &mut Graph, batch: &[SourceInput]) -> Result<(Var, Vec<BatchStats>)> {
        if batch.is_empty() {
            return Err(Error::Contract("empty sentence batch".into()));
        }
        let pooled = batch.iter().map(|s| self.pool(g, s)).collect::<Result<Vec<_>>>()?;
        let mut h = if pooled.len() == 1 { pooled[0] } else { g.concat_rows(&pooled)? };
        let mut stats = Vec::new();
        for (layer, norm) in self.layers[..2].iter().zip(&self.norms) {
            h = layer.forward(g, h)?;
            h = norm.forward(g, h, self.bn_eps, &mut stats)?;
        }
        let logit = self.layers[2].forward(g, h)?;
        Ok((g.sigmoid(logit), stats))
    }

    pub fn update_running_stats(&self, store: &mut ParamStore, stats: &[BatchStats], momentum: f64) {
        for (norm, s) in self.norms.iter().zip(stats) {
            norm.update(store, s, momentum);
        }
    }
}

/// A selector with its parameters, configuration and vocabulary.
#[derive(Debug, Clone)]
pub struct SelectorModel {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub net: SelectorNet,
}

impl SelectorModel {
    pub fn new(cfg: &ModelConfig, vocab: Vocab) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = SelectorNet::new(&mut store, cfg, vocab.len(), &mut rng)?;
        Ok(SelectorModel {
            cfg: cfg.clone(),
            vocab,
            store,
            net,
        })
    }

    pub fn sentence_input(&self, doc: &Document, s: usize) -> SourceInput {
        sentence_input(doc, s, &self.vocab, &self.cfg)
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

    /// Evaluation-mode probability for one sentence.
    pub fn score_sentence(&self, input: &SourceInput) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let (p, _) = self.net.forward(&mut g, std::slice::from_ref(input))?;
        Ok(g.value(p).item())
    }

    /// Evaluation-mode probabilities for every sentence of a document.
    pub fn score_document(&self, doc: &Document) -> Result<Vec<f64>> {
        (0..doc.sentences.len())
            .map(|s| self.score_sentence(&self.sentence_input(doc, s)))
            .collect()
    }
}

pub(crate) fn model_checkpoint(cfg: &ModelConfig, vocab: &Vocab, store: &ParamStore) -> Checkpoint {
    let mut ckpt = Checkpoint::from_params(cfg.to_text(), store);
    ckpt.attach("vocab", vocab.to_text().into_bytes());
    ckpt
}

pub(crate) fn checkpoint_parts(ckpt: &Checkpoint) -> Result<(ModelConfig, Vocab)> {
    let cfg = ModelConfig::from_text(&ckpt.config)?;
    let bytes = ckpt
        .attachment("vocab")
        .ok_or_else(|| Error::Checkpoint("no vocabulary attached".into()))?;
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Checkpoint(format!("vocabulary: {e}")))?;
    Ok((cfg, Vocab::from_text(text)?))
}

/// Restores into a freshly built store; a shape mismatch means the checkpoint
/// belongs to another architecture.
pub(crate) fn restore(ckpt: &Checkpoint, store: &mut ParamStore) -> Result<()> {
    ckpt.restore_into(store).map_err(|e| match e {
        Error::Shape { .. } => Error::Checkpoint(e.to_string()),
        e => e,
    })
}

/// Model input for sentence `s`: positions restart at 0, the segment is the
/// sentence index (clamped to the table), long sentences are truncated.
pub fn sentence_input(doc: &Document, s: usize, vocab: &Vocab, cfg: &ModelConfig) -> SourceInput {
    let (a, b) = doc.sentences[s];
    let b = b.min(a + cfg.max_src_len);
    let seg = s.min(cfg.max_sentences - 1);
    SourceInput {
        words: doc.tokens[a..b].iter().map(|w| vocab.id(w)).collect(),
        tags: doc.pos_tags[a..b].iter().map(|&t| Vocab::tag_id(t)).collect(),
        positions: (0..b - a).collect(),
        segments: vec![seg; b - a],
        chars: doc.tokens[a..b].iter().map(|w| char_ids(w, cfg.max_word_len)).collect(),
    }
}

/// Sentences with `p >= threshold`, packed by decreasing probability (ties in
/// document order) and skipping any that would overflow `budget` words; the
/// result is in document order. Packing by probability keeps the selection
/// monotone in the threshold. When none qualify, leading sentences are taken
/// until the next one would overflow.
pub fn select_sentences(lengths: &[usize], probs: &[f64], budget: usize, threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lengths.len().min(probs.len()))
        .filter(|&i| probs[i] >= threshold)
        .collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut used = 0;
    let mut out = Vec::new();
    for i in order {
        if used + lengths[i] <= budget {
            used += lengths[i];
            out.push(i);
        }
    }
    out.sort_unstable();
    if out.is_empty() && !probs.iter().any(|&p| p >= threshold) {
        for (i, &len) in lengths.iter().enumerate() {
            if used + len > budget {
                break;
            }
            used += len;
            out.push(i);
        }
    }
    out
}

/// Micro-averaged precision, recall and F1 of selections against gold bits.
pub fn selection_metrics<'a, I>(docs: I) -> Prf
where
    I: IntoIterator<Item = (&'a [usize], &'a [u8])>,
{
    let (mut hits, mut selected, mut gold) = (0, 0, 0);
    for (sel, bits) in docs {
        selected += sel.len();
        gold += bits.iter().filter(|&&b| b == 1).count();
        hits += sel.iter().filter(|&&i| bits.get(i) == Some(&1)).count();
    }
    Prf::from_counts(hits, selected, gold)
}
