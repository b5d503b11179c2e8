use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{weighted_bce, Adam, LossWeights, PlateauSchedule};
use crate::arraycore::{GradStore, Graph, ParamStore};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::extgen::{ExtGenModel, TrainExample};
use crate::neural::SourceInput;
use crate::selector::{select_sentences, selection_metrics, SelectorModel};

/// One row of the metrics log. Losses a trainer does not compute are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_e: Option<f64>,
    pub l_w: Option<f64>,
    pub l_tag: Option<f64>,
    pub l_g: Option<f64>,
    pub l_eg: Option<f64>,
    pub val: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub best_val: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
        let mut out = String::from("epoch,L_e,L_w,L_tag,L_g,L_eg,val,lr\n");
        for r in &self.log {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.8},{:e}",
                r.epoch,
                cell(r.l_e),
                cell(r.l_w),
                cell(r.l_tag),
                cell(r.l_g),
                cell(r.l_eg),
                r.val,
                r.lr
            );
        }
        out
    }

    pub fn last(&self) -> Option<&EpochLog> {
        self.log.last()
    }
}

fn check_finite(name: &str, v: f64, epoch: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{name} became {v} in epoch {epoch}")))
    }
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    order
}

fn example_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((epoch as u64) << 32) | index as u64);
    r
}

/// Clips, steps and records. Returns the pre-clip norm.
fn apply(store: &mut ParamStore, adam: &mut Adam, grads: &mut GradStore, clip: f64) -> f64 {
    let norm = grads.clip_global_norm(clip);
    adam.step(store, grads);
    norm
}

/// Labelled sentences of a corpus for selector training.
pub fn selector_examples(model: &SelectorModel, docs: &[Document]) -> Vec<(SourceInput, u8)> {
    docs.iter()
        .flat_map(|d| {
            (0..d.sentences.len())
                .filter(|&s| d.sentence_len(s) > 0)
                .map(move |s| (model.sentence_input(d, s), d.salience_labels[s]))
        })
        .collect()
}

/// Micro-F1 of budgeted selections against gold salience.
pub fn selector_validation(model: &SelectorModel, docs: &[Document]) -> Result<f64> {
    let scored = docs
        .par_iter()
        .map(|d| {
            let probs = model.score_document(d)?;
            let lengths: Vec<usize> = (0..d.sentences.len()).map(|s| d.sentence_len(s)).collect();
            Ok(select_sentences(&lengths, &probs, model.cfg.max_src_len, model.cfg.select_threshold))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs = scored.iter().zip(docs).map(|(s, d)| (s.as_slice(), d.salience_labels.as_slice()));
    Ok(selection_metrics(pairs).f1)
}

/// Trains the selector. Validation is micro-F1 on `val` (or `train` when
/// `val` is empty). The best parameters are kept in `model` on return,
/// including when training diverges.
pub fn train_selector(model: &mut SelectorModel, train: &[Document], val: &[Document]) -> Result<TrainReport> {
    let cfg = model.cfg.clone();
    let examples = selector_examples(model, train);
    if examples.is_empty() {
        return Err(Error::Data("no training sentences".into()));
    }
    let val = if val.is_empty() { train } else { val };
    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut sched = PlateauSchedule::new(cfg.lr, cfg.patience, true);
    let mut best = model.store.clone();
    let mut report = TrainReport {
        log: Vec::new(),
        best_val: f64::NEG_INFINITY,
        best_epoch: 0,
        stopped_early: false,
    };
    for epoch in 1..=cfg.max_epochs {
        let order = shuffled(examples.len(), cfg.seed, epoch);
        let (mut total, mut count) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<SourceInput> = chunk.iter().map(|&i| examples[i].0.clone()).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| examples[i].1).collect();
            let mut grads = GradStore::for_params(&model.store);
            let (loss, stats) = {
                let mut g = Graph::training(&model.store, cfg.dropout, Some(example_rng(cfg.seed, epoch, b)));
                let (p, stats) = model.net.forward(&mut g, &batch)?;
                let l = weighted_bce(&mut g, p, &labels, cfg.omega_selector)?;
                g.backward(l, &mut grads)?;
                (g.value(l).item(), stats)
            };
            if let Err(e) = check_finite("selector loss", loss, epoch) {
                model.store = best;
                return Err(e);
            }
            apply(&mut model.store, &mut adam, &mut grads, cfg.clip_norm);
            model.net.update_running_stats(&mut model.store, &stats, cfg.bn_momentum);
            total += loss * chunk.len() as f64;
            count += chunk.len();
        }
        let score = selector_validation(model, val)?;
        let ev = sched.observe(score);
        adam.lr = sched.lr;
        if ev.improved {
            best = model.store.clone();
            report.best_val = score;
            report.best_epoch = epoch;
        }
        log::info!("selector epoch {epoch}: loss {:.6} val F1 {score:.4} lr {:e}", total / count as f64, sched.lr);
        report.log.push(EpochLog {
            epoch,
            l_e: Some(total / count as f64),
            l_w: None,
            l_tag: None,
            l_g: None,
            l_eg: None,
            val: score,
            lr: sched.lr,
        });
        if ev.stop {
            report.stopped_early = true;
            break;
        }
    }
    model.store = best;
    Ok(report)
}

/// Mean loss components `[L_e, L_w, L_tag, L_g, L_eg]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTotals(pub [f64; 5]);

impl LossTotals {
    fn add(&mut self, other: &[f64; 5]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += b;
        }
    }

    fn mean(mut self, n: usize) -> Self {
        self.0.iter_mut().for_each(|v| *v /= n as f64);
        self
    }
}

/// Evaluation-mode mean losses over `examples`.
pub fn extgen_validation(model: &ExtGenModel, examples: &[TrainExample], w: &LossWeights) -> Result<LossTotals> {
    let parts = examples
        .par_iter()
        .map(|ex| {
            let mut g = Graph::new(&model.store);
            let l = model.losses(&mut g, ex, w)?;
            Ok([l.l_e, l.l_w, l.l_tag, l.l_g, l.l_eg].map(|v| g.value(v).item()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = LossTotals::default();
    parts.iter().for_each(|p| t.add(p));
    Ok(t.mean(parts.len().max(1)))
}

/// Trains the extractor-generator on `L_eg`. Per-example gradients run in
/// parallel and are summed in example order, so results do not depend on the
/// thread count. Validation is mean `L_eg` on `val` (or `train`).
pub fn train_extgen(model: &mut ExtGenModel, train: &[TrainExample], val: &[TrainExample], w: &LossWeights) -> Result<TrainReport> {
    let cfg = model.cfg.clone();
    if train.is_empty() {
        return Err(Error::Data("no training documents".into()));
    }
    let val = if val.is_empty() { train } else { val };
    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut sched = PlateauSchedule::new(cfg.lr, cfg.patience, false);
    let mut best = model.store.clone();
    let mut report = TrainReport {
        log: Vec::new(),
        best_val: f64::INFINITY,
        best_epoch: 0,
        stopped_early: false,
    };
    for epoch in 1..=cfg.max_epochs {
        let order = shuffled(train.len(), cfg.seed, epoch);
        let mut totals = LossTotals::default();
        for chunk in order.chunks(cfg.batch_size) {
            let store = &model.store;
            let results = chunk
                .par_iter()
                .map(|&i| {
                    let mut g = Graph::training(store, cfg.dropout, Some(example_rng(cfg.seed, epoch, i)));
                    let l = model.losses(&mut g, &train[i], w)?;
                    let mut grads = GradStore::for_params(store);
                    g.backward(l.l_eg, &mut grads)?;
                    let values = [l.l_e, l.l_w, l.l_tag, l.l_g, l.l_eg].map(|v| g.value(v).item());
                    Ok((grads, values))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = GradStore::for_params(store);
            for (gs, values) in &results {
                if let Err(e) = check_finite("L_eg", values[4], epoch) {
                    model.store = best;
                    return Err(e);
                }
                grads.add(gs);
                totals.add(values);
            }
            grads.scale(1.0 / chunk.len() as f64);
            apply(&mut model.store, &mut adam, &mut grads, cfg.clip_norm);
        }
        let means = totals.mean(train.len());
        let score = extgen_validation(model, val, w)?.0[4];
        if let Err(e) = check_finite("validation L_eg", score, epoch) {
            model.store = best;
            return Err(e);
        }
        let ev = sched.observe(score);
        adam.lr = sched.lr;
        if ev.improved {
            best = model.store.clone();
            report.best_val = score;
            report.best_epoch = epoch;
        }
        let [l_e, l_w, l_tag, l_g, l_eg] = means.0;
        log::info!("extgen epoch {epoch}: L_eg {l_eg:.6} val {score:.6} lr {:e}", sched.lr);
        report.log.push(EpochLog {
            epoch,
            l_e: Some(l_e),
            l_w: Some(l_w),
            l_tag: Some(l_tag),
            l_g: Some(l_g),
            l_eg: Some(l_eg),
            val: score,
            lr: sched.lr,
        });
        if ev.stop {
            report.stopped_early = true;
            break;
        }
    }
    model.store = best;
    Ok(report)
}
