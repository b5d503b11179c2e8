use rand_chacha::ChaCha8Rng;

use crate::arraycore::{log_add_exp, Graph, Init, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Learned relative-position tables, `2 * clip + 1` rows each.
#[derive(Debug, Clone, Copy)]
pub struct RelTables {
    pub key: ParamId,
    pub value: ParamId,
    pub clip: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionHead {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub rel: Option<RelTables>,
    pub d_k: usize,
}

/// Coverage accumulator of one head: `ln sum_{k<t} exp(e^k)` per source position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeadCoverage {
    log_acc: Option<Vec<f64>>,
    steps: usize,
}

impl HeadCoverage {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `sum_{k<t} exp(e^k)` per source position; `None` before the first step.
    pub fn accumulated(&self) -> Option<Vec<f64>> {
        self.log_acc.as_ref().map(|v| v.iter().map(|x| x.exp()).collect())
    }
}

/// Coverage accumulators for every decoder layer and head of one decode session.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageState {
    pub heads: Vec<Vec<HeadCoverage>>,
}

impl CoverageState {
    pub fn new(layers: usize, heads: usize) -> Self {
        CoverageState {
            heads: vec![vec![HeadCoverage::default(); heads]; layers],
        }
    }

    /// Steps taken so far; all heads advance together.
    pub fn steps(&self) -> usize {
        self.heads.first().and_then(|l| l.first()).map_or(0, |h| h.steps)
    }
}

impl AttentionHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        d_k: usize,
        d_v: usize,
        rel_clip: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let name = |s: &str| format!("{prefix}.{s}");
        let rel = match rel_clip {
            Some(clip) => Some(RelTables {
                key: store.init(&name("rel_k"), 2 * clip + 1, d_k, Init::Normal(0.02), rng)?,
                value: store.init(&name("rel_v"), 2 * clip + 1, d_v, Init::Normal(0.02), rng)?,
                clip,
            }),
            None => None,
        };
        Ok(AttentionHead {
            wq: store.init(&name("wq"), d_model, d_k, Init::XavierUniform, rng)?,
            wk: store.init(&name("wk"), d_model, d_k, Init::XavierUniform, rng)?,
            wv: store.init(&name("wv"), d_model, d_v, Init::XavierUniform, rng)?,
            rel,
            d_k,
        })
    }

    /// Scaled logits `[m x n]` and projected values. Query row `i` sits at
    /// position `i + query_offset` for the relative terms.
    pub fn logits(&self, g: &mut Graph, q_in: Var, kv: Var, query_offset: usize) -> Result<(Var, Var)> {
        let m = g.shape(q_in)[0];
        let n = g.shape(kv)[0];
        if self.rel.is_some() && m + query_offset != n {
            return Err(Error::Contract(format!(
                "relative attention needs self-attention: {m} queries at offset {query_offset}, {n} keys"
            )));
        }
        let q = g.linear(q_in, self.wq, None)?;
        let k = g.linear(kv, self.wk, None)?;
        let v = g.linear(kv, self.wv, None)?;
        let mut e = g.matmul_nt(q, k)?;
        if let Some(rel) = self.rel {
            let table = g.param(rel.key);
            let per_offset = g.matmul_nt(q, table)?;
            let pairwise = g.rel_gather(per_offset, n, rel.clip, query_offset)?;
            e = g.add(e, pairwise)?;
        }
        Ok((g.scale(e, 1.0 / (self.d_k as f64).sqrt()), v))
    }

    fn mix(&self, g: &mut Graph, weights: Var, v: Var, query_offset: usize) -> Result<Var> {
        let out = g.matmul(weights, v)?;
        match self.rel {
            Some(rel) => {
                let buckets = g.rel_scatter(weights, rel.clip, query_offset)?;
                let table = g.param(rel.value);
                let extra = g.matmul(buckets, table)?;
                g.add(out, extra)
            }
            None => Ok(out),
        }
    }

    /// Masked scaled dot-product attention. Returns `(output, weights)`; the
    /// weights are pre-dropout.
    pub fn attend(
        &self,
        g: &mut Graph,
        q_in: Var,
        kv: Var,
        mask: Option<&[bool]>,
        query_offset: usize,
    ) -> Result<(Var, Var)> {
        let (e, v) = self.logits(g, q_in, kv, query_offset)?;
        let w = g.softmax_rows(e, mask)?;
        let dropped = g.dropout(w)?;
        Ok((self.mix(g, dropped, v, query_offset)?, w))
    }

    /// Coverage attention for all decoder positions at once (rows are steps).
    pub fn attend_coverage_parallel(&self, g: &mut Graph, q_in: Var, kv: Var) -> Result<(Var, Var)> {
        let (e, v) = self.logits(g, q_in, kv, 0)?;
        let adjusted = g.coverage_adjust(e)?;
        let w = g.softmax_rows(adjusted, None)?;
        let dropped = g.dropout(w)?;
        Ok((self.mix(g, dropped, v, 0)?, w))
    }

    /// One decoder step of coverage attention; `t` is 1-based and must follow
    /// the steps already recorded in `state`.
    pub fn attend_with_coverage(
        &self,
        g: &mut Graph,
        q_in: Var,
        kv: Var,
        state: &mut HeadCoverage,
        t: usize,
    ) -> Result<(Var, Var)> {
        if t != state.steps + 1 {
            return Err(Error::State(format!(
                "coverage step {t} requested after {} recorded steps",
                state.steps
            )));
        }
        if g.shape(q_in)[0] != 1 {
            return Err(Error::Contract("coverage step takes a single query row".into()));
        }
        let (e, v) = self.logits(g, q_in, kv, 0)?;
        let logits = g.value(e).data().to_vec();
        let adjusted = match &state.log_acc {
            None => e,
            Some(acc) => {
                let shift = g.constant(Tensor::row(acc.iter().map(|a| -a).collect()));
                g.add_row(e, shift)?
            }
        };
        state.log_acc = Some(match state.log_acc.take() {
            None => logits,
            Some(acc) => acc.iter().zip(&logits).map(|(&a, &x)| log_add_exp(a, x)).collect(),
        });
        state.steps += 1;
        let w = g.softmax_rows(adjusted, None)?;
        let dropped = g.dropout(w)?;
        Ok((self.mix(g, dropped, v, 0)?, w))
    }
}

/// Parallel heads, concatenated and projected back to `d_model`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: Vec<AttentionHead>,
    pub wo: ParamId,
}

impl MultiHeadAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        d_k: usize,
        d_v: usize,
        rel_clip: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let heads = (0..heads)
            .map(|h| AttentionHead::new(store, &format!("{prefix}.head{h}"), d_model, d_k, d_v, rel_clip, rng))
            .collect::<Result<Vec<_>>>()?;
        let wo = store.init(&format!("{prefix}.wo"), heads.len() * d_v, d_model, Init::XavierUniform, rng)?;
        Ok(MultiHeadAttention { heads, wo })
    }

    fn project(&self, g: &mut Graph, outs: &[Var]) -> Result<Var> {
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(outs)? };
        g.linear(cat, self.wo, None)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        q_in: Var,
        kv: Var,
        mask: Option<&[bool]>,
        query_offset: usize,
    ) -> Result<(Var, Vec<Var>)> {
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut weights = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let (o, w) = h.attend(g, q_in, kv, mask, query_offset)?;
            outs.push(o);
            weights.push(w);
        }
        Ok((self.project(g, &outs)?, weights))
    }

    pub fn forward_coverage_parallel(&self, g: &mut Graph, q_in: Var, kv: Var) -> Result<(Var, Vec<Var>)> {
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut weights = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let (o, w) = h.attend_coverage_parallel(g, q_in, kv)?;
            outs.push(o);
            weights.push(w);
        }
        Ok((self.project(g, &outs)?, weights))
    }

    pub fn forward_coverage_step(
        &self,
        g: &mut Graph,
        q_in: Var,
        kv: Var,
        states: &mut [HeadCoverage],
        t: usize,
    ) -> Result<(Var, Vec<Var>)> {
        if states.len() != self.heads.len() {
            return Err(Error::State(format!(
                "{} coverage accumulators for {} heads",
                states.len(),
                self.heads.len()
            )));
        }
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut weights = Vec::with_capacity(self.heads.len());
        for (h, st) in self.heads.iter().zip(states.iter_mut()) {
            let (o, w) = h.attend_with_coverage(g, q_in, kv, st, t)?;
            outs.push(o);
            weights.push(w);
        }
        Ok((self.project(g, &outs)?, weights))
    }
}

/// `mask[i * n + j]` allows key `j` for query `i` iff `j <= i + offset`.
pub fn causal_mask(m: usize, n: usize, offset: usize) -> Vec<bool> {
    (0..m)
        .flat_map(|i| (0..n).map(move |j| j <= i + offset))
        .collect()
}
