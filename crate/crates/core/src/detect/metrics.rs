//! Ranking metrics. Out-of-category documents are the positive class and are
//! detected by *low* confidence; every function here uses that orientation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-document out-of-category flags derived from gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub is_out: Vec<bool>,
}

impl GroundTruth {
    /// Every document needs a gold label; a label outside `targets` is out-of-category.
    pub fn from_labels(labels: &[Option<String>], targets: &[String]) -> Result<Self> {
        let is_out = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.as_ref()
                    .map(|l| !targets.contains(l))
                    .ok_or_else(|| Error::UndefinedMetric(format!("document #{i} has no gold label")))
            })
            .collect::<Result<_>>()?;
        Ok(GroundTruth { is_out })
    }

    pub fn len(&self) -> usize {
        self.is_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.is_out.is_empty()
    }

    /// Number of out-of-category documents.
    pub fn positives(&self) -> usize {
        self.is_out.iter().filter(|&&o| o).count()
    }

    pub fn p_out(&self) -> f64 {
        self.positives() as f64 / self.len() as f64
    }

    fn check(&self, scores: &[f64]) -> Result<()> {
        if scores.len() != self.len() {
            return Err(Error::UndefinedMetric(format!("{} scores for {} documents", scores.len(), self.len())));
        }
        let pos = self.positives();
        if pos == 0 || pos == self.len() {
            return Err(Error::UndefinedMetric("both in- and out-of-category documents are required".into()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::UndefinedMetric("NaN confidence".into()));
        }
        Ok(())
    }
}

/// Document indices by ascending confidence, ties by ascending index.
pub fn ascending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx
}

/// Contiguous runs of equal scores in an ascending order.
fn tie_blocks<'a>(scores: &'a [f64], order: &'a [usize]) -> impl Iterator<Item = &'a [usize]> + 'a {
    order.chunk_by(move |&a, &b| scores[a] == scores[b])
}

/// Probability that a random out-of-category document has strictly lower
/// confidence than a random in-category one, ties counting ½.
pub fn auroc(scores: &[f64], truth: &GroundTruth) -> Result<f64> {
    truth.check(scores)?;
    let order = ascending_order(scores);
    let pos = truth.positives() as f64;
    let neg = truth.len() as f64 - pos;
    // Mann–Whitney U over in-category ranks, using midranks for ties.
    let mut rank_sum_neg = 0.0;
    let mut seen = 0usize;
    for block in tie_blocks(scores, &order) {
        let mid = seen as f64 + (block.len() as f64 + 1.0) / 2.0;
        let negs = block.iter().filter(|&&i| !truth.is_out[i]).count();
        rank_sum_neg += mid * negs as f64;
        seen += block.len();
    }
    let u = rank_sum_neg - neg * (neg + 1.0) / 2.0;
    Ok(u / (pos * neg))
}

/// Average precision with out-of-category as positive, sweeping confidence
/// upward; a block of tied scores is admitted at once.
pub fn aupr(scores: &[f64], truth: &GroundTruth) -> Result<f64> {
    truth.check(scores)?;
    let order = ascending_order(scores);
    let total_pos = truth.positives() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for block in tie_blocks(scores, &order) {
        let p = block.iter().filter(|&&i| truth.is_out[i]).count();
        tp += p;
        fp += block.len() - p;
        if p > 0 {
            ap += p as f64 * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap / total_pos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1AtO {
    pub f1: f64,
    /// Confidence of the O-th least confident document.
    pub gamma: f64,
    pub o: usize,
    /// The O documents predicted out-of-category.
    pub predicted: Vec<usize>,
}

/// F1 when exactly the O lowest-confidence documents are flagged, O being the
/// true number of out-of-category documents.
pub fn f1_at_o(scores: &[f64], truth: &GroundTruth) -> Result<F1AtO> {
    truth.check(scores)?;
    let o = truth.positives();
    let order = ascending_order(scores);
    let predicted: Vec<usize> = order[..o].to_vec();
    let hits = predicted.iter().filter(|&&i| truth.is_out[i]).count();
    // precision = recall = hits / O
    let f1 = hits as f64 / o as f64;
    Ok(F1AtO { f1, gamma: scores[order[o - 1]], o, predicted })
}
