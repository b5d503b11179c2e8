//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{GradStore, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tolerance: f64,
    /// Denominator floor: `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Checks at most this many entries per parameter (sampled); `None` checks all.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Largest analytic gradient magnitude seen among checked entries.
    pub max_analytic: f64,
    pub non_finite: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| !p.non_finite && p.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.iter().max_by(|a, b| {
            a.max_rel_error
                .partial_cmp(&b.max_rel_error)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    }

    pub fn failures(&self) -> Vec<&ParamCheck> {
        self.params
            .iter()
            .filter(|p| p.non_finite || p.max_rel_error >= self.tolerance)
            .collect()
    }
}

fn evaluate<F>(params: &ParamStore, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::training(params, 0.0, None);
    let loss = loss_fn(&mut g)?;
    Ok(g.value(loss).item())
}

/// Analytic gradient of `loss_fn` at `params`, deterministic (no dropout).
pub fn analytic_grads<F>(params: &ParamStore, loss_fn: &F) -> Result<(f64, GradStore)>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::training(params, 0.0, None);
    let loss = loss_fn(&mut g)?;
    let mut grads = GradStore::for_params(params);
    g.backward(loss, &mut grads)?;
    Ok((g.value(loss).item(), grads))
}

/// Compares analytic and central-difference gradients for every trainable parameter.
pub fn grad_check<F>(params: &ParamStore, loss_fn: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let (_, grads) = analytic_grads(params, &loss_fn)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut report = Vec::new();
    for (id, p) in params.iter() {
        if !p.trainable {
            continue;
        }
        let n = p.value.len();
        let entries: Vec<usize> = match opts.max_entries {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut check = ParamCheck {
            name: p.name.clone(),
            checked: entries.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            max_analytic: 0.0,
            non_finite: false,
        };
        for &e in &entries {
            let orig = p.value.data()[e];
            work.value_mut(id).data_mut()[e] = orig + opts.step;
            let plus = evaluate(&work, &loss_fn)?;
            work.value_mut(id).data_mut()[e] = orig - opts.step;
            let minus = evaluate(&work, &loss_fn)?;
            work.value_mut(id).data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let analytic = grads.get(id).data()[e];
            if !numeric.is_finite() || !analytic.is_finite() {
                check.non_finite = true;
                continue;
            }
            let abs = (analytic - numeric).abs();
            let rel = abs / analytic.abs().max(numeric.abs()).max(opts.floor);
            check.max_abs_error = check.max_abs_error.max(abs);
            check.max_rel_error = check.max_rel_error.max(rel);
            check.max_analytic = check.max_analytic.max(analytic.abs());
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tolerance: opts.tolerance,
    })
}
