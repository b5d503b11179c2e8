use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::porter::stem_tokens;
use crate::corpus::tokenize;
use crate::error::{Error, Result};

/// Normalises, tokenizes and stems a phrase for identity comparison.
pub fn phrase_stems(phrase: &str) -> Vec<String> {
    stem_tokens(&tokenize(phrase))
}

/// Reserved filler used to pad short prediction lists; never produced by the tokenizer.
fn placeholder(i: usize) -> Vec<String> {
    vec![format!("<wrong-{i}>")]
}

/// One flag per prediction. Each gold phrase can satisfy at most one prediction.
pub fn match_sets(predicted: &[Vec<String>], gold: &[Vec<String>]) -> Result<Vec<bool>> {
    let mut seen = HashSet::new();
    for p in predicted {
        if !seen.insert(p) {
            return Err(Error::Contract(format!(
                "duplicate prediction `{}`",
                p.join(" ")
            )));
        }
    }
    let mut used = vec![false; gold.len()];
    Ok(predicted
        .iter()
        .map(|p| match gold.iter().enumerate().position(|(i, g)| !used[i] && g == p) {
            Some(i) => {
                used[i] = true;
                true
            }
            None => false,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cutoff {
    /// All predictions.
    M,
    /// Truncate or pad to exactly `k`.
    K(usize),
}

impl Cutoff {
    pub fn label(self) -> String {
        match self {
            Cutoff::M => "M".into(),
            Cutoff::K(k) => k.to_string(),
        }
    }
}

impl std::str::FromStr for Cutoff {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "m" | "M" => Ok(Cutoff::M),
            k => k
                .parse()
                .ok()
                .filter(|&k: &usize| k > 0)
                .map(Cutoff::K)
                .ok_or_else(|| Error::config("k", format!("expected `m` or a positive integer, got `{k}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(hits: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(hits, predicted);
        let recall = ratio(hits, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }

    fn mean(items: &[Prf]) -> Prf {
        if items.is_empty() {
            return Prf::default();
        }
        let n = items.len() as f64;
        Prf {
            precision: items.iter().map(|p| p.precision).sum::<f64>() / n,
            recall: items.iter().map(|p| p.recall).sum::<f64>() / n,
            f1: items.iter().map(|p| p.f1).sum::<f64>() / n,
        }
    }
}

/// Scores stemmed predictions against stemmed gold. With `recall_cap_k`, the
/// recall denominator becomes `min(|gold|, k)` for fixed cutoffs.
pub fn f1_at_k(
    predicted: &[Vec<String>],
    gold: &[Vec<String>],
    cutoff: Cutoff,
    recall_cap_k: bool,
) -> Result<Prf> {
    let (preds, gold_den): (Vec<Vec<String>>, usize) = match cutoff {
        Cutoff::M => (predicted.to_vec(), gold.len()),
        Cutoff::K(k) => {
            let mut p: Vec<Vec<String>> = predicted.iter().take(k).cloned().collect();
            let missing = k - p.len();
            p.extend((0..missing).map(placeholder));
            let den = if recall_cap_k { gold.len().min(k) } else { gold.len() };
            (p, den)
        }
    };
    let hits = match_sets(&preds, gold)?.into_iter().filter(|&m| m).count();
    Ok(Prf::from_counts(hits, preds.len(), gold_den))
}

/// Mean absolute count error and mean predicted count.
pub fn count_mae(predicted: &[usize], gold: &[usize]) -> Result<(f64, f64)> {
    if predicted.is_empty() {
        return Err(Error::Data("count MAE over an empty corpus".into()));
    }
    if predicted.len() != gold.len() {
        return Err(Error::shape("count_mae", &[predicted.len()], &[gold.len()]));
    }
    let n = predicted.len() as f64;
    let mae = predicted
        .iter()
        .zip(gold)
        .map(|(&p, &g)| (p as f64 - g as f64).abs())
        .sum::<f64>()
        / n;
    let avg = predicted.iter().sum::<usize>() as f64 / n;
    Ok((mae, avg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Present,
    Absent,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Present => "present",
            Split::Absent => "absent",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub splits: Vec<Split>,
    pub cutoffs: Vec<Cutoff>,
    pub recall_cap_k: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            splits: vec![Split::Present, Split::Absent],
            cutoffs: vec![Cutoff::M, Cutoff::K(5)],
            recall_cap_k: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub id: String,
    pub split: Split,
    pub predicted: usize,
    pub gold: usize,
    pub scores: BTreeMap<String, Prf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: Split,
    /// Documents with non-empty gold for this split.
    pub documents: usize,
    pub scores: BTreeMap<String, Prf>,
    pub mae: f64,
    pub avg_predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub splits: Vec<SplitReport>,
    pub mae: f64,
    pub avg_predicted: f64,
    pub details: Vec<DocScore>,
}

fn dedup_stems(phrases: &[String]) -> Vec<Vec<String>> {
    let mut seen = HashSet::new();
    phrases
        .iter()
        .map(|p| phrase_stems(p))
        .filter(|s| !s.is_empty() && seen.insert(s.clone()))
        .collect()
}

/// Per-document input: `(id, predicted present, predicted absent, gold present, gold absent)`.
pub struct EvalDoc<'a> {
    pub id: &'a str,
    pub pred: [&'a [String]; 2],
    pub gold: [&'a [String]; 2],
}

/// Macro-averaged scores over documents. Predictions and gold are deduplicated
/// by stemmed identity first.
pub fn evaluate(docs: &[EvalDoc<'_>], opts: &EvalOptions) -> Result<EvalReport> {
    if docs.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let mut details = Vec::new();
    let mut splits = Vec::new();
    for &split in &opts.splits {
        let si = split as usize;
        let mut per_doc: Vec<BTreeMap<String, Prf>> = Vec::new();
        let (mut pc, mut gc) = (Vec::new(), Vec::new());
        for d in docs {
            let pred = dedup_stems(d.pred[si]);
            let gold = dedup_stems(d.gold[si]);
            pc.push(pred.len());
            gc.push(gold.len());
            if gold.is_empty() {
                continue;
            }
            let mut scores = BTreeMap::new();
            for &c in &opts.cutoffs {
                scores.insert(c.label(), f1_at_k(&pred, &gold, c, opts.recall_cap_k)?);
            }
            details.push(DocScore {
                id: d.id.to_string(),
                split,
                predicted: pred.len(),
                gold: gold.len(),
                scores: scores.clone(),
            });
            per_doc.push(scores);
        }
        let mut scores = BTreeMap::new();
        for &c in &opts.cutoffs {
            let items: Vec<Prf> = per_doc.iter().map(|s| s[&c.label()]).collect();
            scores.insert(c.label(), Prf::mean(&items));
        }
        let (mae, avg_predicted) = count_mae(&pc, &gc)?;
        splits.push(SplitReport {
            split,
            documents: per_doc.len(),
            scores,
            mae,
            avg_predicted,
        });
    }
    let totals = |side: usize| -> Vec<usize> {
        docs.iter()
            .map(|d| {
                let mut all: Vec<String> = d.pred[side].to_vec();
                if side == 0 {
                    all.extend(d.pred[1].iter().cloned());
                } else {
                    all = d.gold[0].iter().chain(d.gold[1]).cloned().collect();
                }
                dedup_stems(&all).len()
            })
            .collect()
    };
    let (mae, avg_predicted) = count_mae(&totals(0), &totals(1))?;
    Ok(EvalReport {
        splits,
        mae,
        avg_predicted,
        details,
    })
}

impl EvalReport {
    /// Aligned plain-text summary.
    pub fn table(&self) -> String {
        let mut out = format!("{:<8} {:>5} {:>6} {:>7} {:>7} {:>7}\n", "split", "docs", "k", "P", "R", "F1");
        for s in &self.splits {
            for (k, prf) in &s.scores {
                out.push_str(&format!(
                    "{:<8} {:>5} {:>6} {:>7.4} {:>7.4} {:>7.4}\n",
                    s.split.name(),
                    s.documents,
                    k,
                    prf.precision,
                    prf.recall,
                    prf.f1
                ));
            }
            out.push_str(&format!(
                "{:<8} MAE={:.3} avg_pred={:.3}\n",
                s.split.name(),
                s.mae,
                s.avg_predicted
            ));
        }
        out.push_str(&format!("all      MAE={:.3} avg_pred={:.3}\n", self.mae, self.avg_predicted));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stems(ps: &[&str]) -> Vec<Vec<String>> {
        ps.iter().map(|p| phrase_stems(p)).collect()
    }

    #[test]
    fn stemmed_identity_matches() {
        let m = match_sets(&stems(&["neural networks"]), &stems(&["neural network"])).unwrap();
        assert_eq!(m, vec![true]);
        assert!(match_sets(&[], &stems(&["x"])).unwrap().is_empty());
        assert!(match_sets(&stems(&["a b", "a b"]), &stems(&["a b"])).is_err());
    }

    #[test]
    fn hand_computed_cutoffs() {
        let gold = stems(&["g one", "g two", "g three", "g four", "g five"]);
        let pred = stems(&["g one", "g two", "miss"]);
        let m = f1_at_k(&pred, &gold, Cutoff::M, false).unwrap();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 0.4).abs() < 1e-12);
        assert!((m.f1 - 0.5).abs() < 1e-12);
        let k5 = f1_at_k(&pred, &gold, Cutoff::K(5), false).unwrap();
        assert!((k5.precision - 0.4).abs() < 1e-12);
        assert!((k5.f1 - 0.4).abs() < 1e-12);
        let exact = f1_at_k(&gold, &gold, Cutoff::M, false).unwrap();
        assert_eq!(exact.f1, 1.0);
    }

    #[test]
    fn recall_cap_flag() {
        let gold = stems(&["a", "b", "c", "d", "e", "f", "g"]);
        let pred = stems(&["a", "b", "c", "d", "e"]);
        assert!((f1_at_k(&pred, &gold, Cutoff::K(5), false).unwrap().recall - 5.0 / 7.0).abs() < 1e-12);
        assert_eq!(f1_at_k(&pred, &gold, Cutoff::K(5), true).unwrap().recall, 1.0);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(count_mae(&[3, 3], &[5, 1]).unwrap(), (2.0, 3.0));
        assert_eq!(count_mae(&[4, 2], &[4, 2]).unwrap().0, 0.0);
        assert!(count_mae(&[], &[]).is_err());
    }

    #[test]
    fn empty_gold_split_excluded() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let (p1, a1, gp1, ga1) = (s(&["x"]), s(&[]), s(&["x"]), s(&[]));
        let (p2, a2, gp2, ga2) = (s(&["y"]), s(&["z"]), s(&["q"]), s(&["z"]));
        let docs = [
            EvalDoc { id: "1", pred: [&p1, &a1], gold: [&gp1, &ga1] },
            EvalDoc { id: "2", pred: [&p2, &a2], gold: [&gp2, &ga2] },
        ];
        let r = evaluate(&docs, &EvalOptions::default()).unwrap();
        assert_eq!(r.splits[0].documents, 2);
        assert_eq!(r.splits[0].scores["M"].f1, 0.5);
        assert_eq!(r.splits[1].documents, 1);
        assert_eq!(r.splits[1].scores["M"].f1, 1.0);
        assert_eq!(r.mae, 0.0);
    }
}
