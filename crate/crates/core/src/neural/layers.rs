use rand_chacha::ChaCha8Rng;

use super::attention::{causal_mask, CoverageState, MultiHeadAttention};
use crate::arraycore::{Graph, Init, ParamId, ParamStore, Tensor, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.init(&format!("{prefix}.gamma"), 1, d, Init::Ones, rng)?,
            beta: store.init(&format!("{prefix}.beta"), 1, d, Init::Zeros, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Two linear maps with a rectifier between them.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let name = |s: &str| format!("{prefix}.{s}");
        Ok(FeedForward {
            w1: store.init(&name("w1"), d, d_ff, Init::XavierUniform, rng)?,
            b1: store.init(&name("b1"), 1, d_ff, Init::Zeros, rng)?,
            w2: store.init(&name("w2"), d_ff, d, Init::XavierUniform, rng)?,
            b2: store.init(&name("b2"), 1, d, Init::Zeros, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = g.linear(x, self.w1, Some(self.b1))?;
        let h = g.relu(h);
        g.linear(h, self.w2, Some(self.b2))
    }
}

/// `layernorm(x + dropout(sub))`.
fn residual(g: &mut Graph, ln: &LayerNorm, x: Var, sub: Var) -> Result<Var> {
    let d = g.dropout(sub)?;
    let s = g.add(x, d)?;
    ln.forward(g, s)
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff: FeedForward,
    pub ln2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.d_model;
        Ok(EncoderLayer {
            attn: MultiHeadAttention::new(store, &format!("{prefix}.attn"), d, cfg.heads, cfg.d_k, cfg.d_v, None, rng)?,
            ln1: LayerNorm::new(store, &format!("{prefix}.ln1"), d, rng)?,
            ff: FeedForward::new(store, &format!("{prefix}.ff"), d, cfg.d_ff, rng)?,
            ln2: LayerNorm::new(store, &format!("{prefix}.ln2"), d, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (a, _) = self.attn.forward(g, x, x, None, 0)?;
        let x = residual(g, &self.ln1, x, a)?;
        let f = self.ff.forward(g, x)?;
        residual(g, &self.ln2, x, f)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        depth: usize,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("layers", "encoder needs at least one layer"));
        }
        let layers = (0..depth)
            .map(|i| EncoderLayer::new(store, &format!("{prefix}.layer{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Encoder { layers })
    }

    /// Outputs of every layer, bottom to top.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(g, h)?;
            outs.push(h);
        }
        Ok(outs)
    }
}

/// Masked relative self-attention, coverage cross-attention, feed-forward.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub cross: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
    pub ln3: LayerNorm,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.d_model;
        let p = |s: &str| format!("{prefix}.{s}");
        Ok(DecoderLayer {
            self_attn: MultiHeadAttention::new(store, &p("self_attn"), d, cfg.heads, cfg.d_k, cfg.d_v, Some(cfg.rel_clip), rng)?,
            ln1: LayerNorm::new(store, &p("ln1"), d, rng)?,
            cross: MultiHeadAttention::new(store, &p("cross"), d, cfg.heads, cfg.d_k, cfg.d_v, None, rng)?,
            ln2: LayerNorm::new(store, &p("ln2"), d, rng)?,
            ff: FeedForward::new(store, &p("ff"), d, cfg.d_ff, rng)?,
            ln3: LayerNorm::new(store, &p("ln3"), d, rng)?,
        })
    }

    fn finish(&self, g: &mut Graph, x: Var, enc_attn: Var) -> Result<Var> {
        let x = residual(g, &self.ln2, x, enc_attn)?;
        let f = self.ff.forward(g, x)?;
        residual(g, &self.ln3, x, f)
    }
}

/// Rows fed into each decoder layer at earlier steps; keys and values of the
/// incremental self-attention.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecoderCache {
    pub layer_inputs: Vec<Vec<Vec<f64>>>,
}

impl DecoderCache {
    pub fn new(layers: usize) -> Self {
        DecoderCache {
            layer_inputs: vec![Vec::new(); layers],
        }
    }

    pub fn steps(&self) -> usize {
        self.layer_inputs.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let layers = (0..cfg.layers)
            .map(|i| DecoderLayer::new(store, &format!("{prefix}.layer{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Decoder { layers })
    }

    pub fn heads(&self) -> usize {
        self.layers[0].cross.heads.len()
    }

    fn check_depth(&self, encoder_layers: usize) -> Result<()> {
        if encoder_layers != self.layers.len() {
            return Err(Error::config(
                "layers",
                format!(
                    "decoder has {} layers but {} encoder outputs were given",
                    self.layers.len(),
                    encoder_layers
                ),
            ));
        }
        Ok(())
    }

    /// Teacher-forced pass over all target positions. Layer `i` attends to
    /// encoder layer `i`.
    pub fn forward(&self, g: &mut Graph, x: Var, encoder: &[Var]) -> Result<Vec<Var>> {
        self.check_depth(encoder.len())?;
        let m = g.shape(x)[0];
        let mask = causal_mask(m, m, 0);
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (layer, &enc) in self.layers.iter().zip(encoder) {
            let (s, _) = layer.self_attn.forward(g, h, h, Some(&mask), 0)?;
            let h1 = residual(g, &layer.ln1, h, s)?;
            let (c, _) = layer.cross.forward_coverage_parallel(g, h1, enc)?;
            h = layer.finish(g, h1, c)?;
            outs.push(h);
        }
        Ok(outs)
    }

    /// One incremental step for the newest target row `x` (`[1 x d]`).
    pub fn step(
        &self,
        g: &mut Graph,
        x: Var,
        encoder: &[Var],
        cache: &mut DecoderCache,
        coverage: &mut CoverageState,
    ) -> Result<Vec<Var>> {
        self.check_depth(encoder.len())?;
        if cache.layer_inputs.len() != self.layers.len() || coverage.heads.len() != self.layers.len() {
            return Err(Error::State("decode state built for a different depth".into()));
        }
        let t = cache.steps();
        if coverage.steps() != t {
            return Err(Error::State(format!(
                "coverage at step {} but self-attention cache at step {t}",
                coverage.steps()
            )));
        }
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, (layer, &enc)) in self.layers.iter().zip(encoder).enumerate() {
            let rows = &mut cache.layer_inputs[i];
            rows.push(g.value(h).data().to_vec());
            let history = g.constant(Tensor::from_rows(rows));
            let (s, _) = layer.self_attn.forward(g, h, history, None, t)?;
            let h1 = residual(g, &layer.ln1, h, s)?;
            let (c, _) = layer.cross.forward_coverage_step(g, h1, enc, &mut coverage.heads[i], t + 1)?;
            h = layer.finish(g, h1, c)?;
            outs.push(h);
        }
        Ok(outs)
    }
}
