use crate::arraycore::{Graph, Tensor, Var};
use crate::config::ModelConfig;
use crate::corpus::vocab::PAD_ID;
use crate::error::{Error, Result};

pub const BCE_EPS: f64 = 1e-7;
pub const NLL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub omega_selector: f64,
    pub omega_extractor: f64,
}

impl LossWeights {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        LossWeights {
            alpha: cfg.alpha,
            beta: cfg.beta,
            omega_selector: cfg.omega_selector,
            omega_extractor: cfg.omega_extractor,
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::from_config(&ModelConfig::full())
    }
}

/// `-(1/N) sum [w y ln p + (1 - y) ln(1 - p)]` with `p` clamped to `[eps, 1 - eps]`.
pub fn weighted_bce(g: &mut Graph, probs: Var, labels: &[u8], omega: f64) -> Result<Var> {
    let shape = g.shape(probs).to_vec();
    let n = labels.len();
    if shape.iter().product::<usize>() != n || n == 0 {
        return Err(Error::shape("weighted_bce", &shape, &[n]));
    }
    let pos: Vec<f64> = labels.iter().map(|&y| omega * f64::from(y)).collect();
    let neg: Vec<f64> = labels.iter().map(|&y| 1.0 - f64::from(y)).collect();
    let log_p = g.log_clamped(probs, BCE_EPS);
    let q = g.one_minus(probs);
    let log_q = g.log_clamped(q, BCE_EPS);
    let a = g.mul_const(log_p, Tensor::new(shape.clone(), pos)?)?;
    let b = g.mul_const(log_q, Tensor::new(shape, neg)?)?;
    let s = g.add(a, b)?;
    let total = g.sum(s);
    Ok(g.scale(total, -1.0 / n as f64))
}

/// Plain-number twin of [`weighted_bce`].
pub fn weighted_bce_value(probs: &[f64], labels: &[u8], omega: f64) -> f64 {
    let n = probs.len() as f64;
    -probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let y = f64::from(y);
            omega * y * p.max(BCE_EPS).ln() + (1.0 - y) * (1.0 - p).max(BCE_EPS).ln()
        })
        .sum::<f64>()
        / n
}

/// Summed negative log-likelihood of `targets` under row distributions `dists`.
/// Rows whose target is the pad id are skipped. Returns the loss and how many
/// target probabilities fell below the clamp.
pub fn nll_sequence(g: &mut Graph, dists: Var, targets: &[usize]) -> Result<(Var, usize)> {
    let rows = g.shape(dists)[0];
    if rows != targets.len() {
        return Err(Error::shape("nll_sequence", g.shape(dists), &[targets.len()]));
    }
    let picked = g.pick(dists, targets)?;
    let clamped = g
        .value(picked)
        .data()
        .iter()
        .zip(targets)
        .filter(|&(&p, &t)| t != PAD_ID && p < NLL_EPS)
        .count();
    if clamped > 0 {
        log::warn!("{clamped} target probabilities clamped at {NLL_EPS:e}");
    }
    let logs = g.log_clamped(picked, NLL_EPS);
    let keep = if targets.contains(&PAD_ID) {
        let mask: Vec<f64> = targets.iter().map(|&t| if t == PAD_ID { 0.0 } else { 1.0 }).collect();
        g.mul_const(logs, Tensor::column(mask))?
    } else {
        logs
    };
    let total = g.sum(keep);
    Ok((g.scale(total, -1.0), clamped))
}

/// `(L_g, L_eg)` with `L_g = a L_w + (1 - a) L_tag` and `L_eg = b L_e + (1 - b) L_g`.
pub fn combine_losses(l_e: f64, l_w: f64, l_tag: f64, w: &LossWeights) -> Result<(f64, f64)> {
    for (name, v) in [("L_e", l_e), ("L_w", l_w), ("L_tag", l_tag)] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} is {v}")));
        }
    }
    let l_g = w.alpha * l_w + (1.0 - w.alpha) * l_tag;
    Ok((l_g, w.beta * l_e + (1.0 - w.beta) * l_g))
}

/// Graph version of [`combine_losses`].
pub fn combine_graph(g: &mut Graph, l_e: Var, l_w: Var, l_tag: Var, w: &LossWeights) -> Result<(Var, Var)> {
    let a = g.scale(l_w, w.alpha);
    let b = g.scale(l_tag, 1.0 - w.alpha);
    let l_g = g.add(a, b)?;
    let c = g.scale(l_e, w.beta);
    let d = g.scale(l_g, 1.0 - w.beta);
    let l_eg = g.add(c, d)?;
    Ok((l_g, l_eg))
}
