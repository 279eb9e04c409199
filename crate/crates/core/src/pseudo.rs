//! Embedding-based relevance scores, temperature pseudo-labels, embedding
//! confidence, and the confident training subset.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embed::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::io::{csv_field, split_csv};
use crate::linalg::{dot, softmax_into, Matrix};

/// Above this exponent the proximity sum switches to a max-shifted row.
const EXP_OVERFLOW_GUARD: f64 = 500.0;

/// Log-relevance assigned when a proximity sum is not positive.
const LOG_FLOOR: f64 = -745.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelevanceKind {
    Direct,
    Proximity,
}

impl std::str::FromStr for RelevanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(RelevanceKind::Direct),
            "proximity" => Ok(RelevanceKind::Proximity),
            other => Err(Error::InvalidConfig(format!("unknown relevance `{other}` (direct|proximity)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMatrix {
    pub kind: RelevanceKind,
    /// N × K
    pub scores: Matrix,
}

/// `κ·cos(d, c)` for every document and category.
pub fn relevance_direct(space: &EmbeddingSpace) -> RelevanceMatrix {
    let n = space.docs.rows();
    let k = space.k();
    let mut scores = Matrix::zeros(n, k);
    for i in 0..n {
        let d = space.docs.row(i);
        let row = scores.row_mut(i);
        for (c, r) in row.iter_mut().enumerate() {
            *r = space.kappa * dot(d, space.cats.row(c));
        }
    }
    RelevanceMatrix { kind: RelevanceKind::Direct, scores }
}

/// Exact nearest neighbors by cosine, sorted by descending similarity with
/// ties broken by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    pub doc_neighbors: Vec<Vec<(usize, f64)>>,
    pub word_neighbors: Vec<Vec<(usize, f64)>>,
}

fn by_similarity(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

fn top_k(mut cands: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, by_similarity);
        cands.truncate(k);
    }
    cands.sort_by(by_similarity);
    cands
}

pub fn build_neighbor_index(space: &EmbeddingSpace, k: usize, j: usize) -> Result<NeighborIndex> {
    if k < 1 || j < 1 {
        return Err(Error::InvalidConfig("neighbor counts k and j must be at least 1".into()));
    }
    let n = space.docs.rows();
    let m = space.center.rows();
    let mut doc_neighbors = Vec::with_capacity(n);
    let mut word_neighbors = Vec::with_capacity(n);
    for i in 0..n {
        let d = space.docs.row(i);
        let docs: Vec<(usize, f64)> = (0..n).filter(|&o| o != i).map(|o| (o, dot(d, space.docs.row(o)))).collect();
        doc_neighbors.push(top_k(docs, k));
        let words: Vec<(usize, f64)> = (0..m).map(|w| (w, dot(d, space.center.row(w)))).collect();
        word_neighbors.push(top_k(words, j));
    }
    Ok(NeighborIndex { doc_neighbors, word_neighbors })
}

/// Log of the sum over neighbor documents `d′` of `d` and neighbor words `w`
/// of each `d′` of `cos(d,d′)·cos(d′,w)·exp(κ·cos(w,c))`, on the same
/// log-likelihood scale as [`relevance_direct`]. A sum that is not positive
/// maps to a floor of -745.
pub fn relevance_proximity(space: &EmbeddingSpace, index: &NeighborIndex) -> RelevanceMatrix {
    let (mut scores, shifts) = proximity_sums(space, index);
    for (i, shift) in shifts.into_iter().enumerate() {
        for r in scores.row_mut(i) {
            *r = if *r > 0.0 { r.ln() + shift } else { LOG_FLOOR };
        }
    }
    RelevanceMatrix { kind: RelevanceKind::Proximity, scores }
}

/// Raw neighbor sums behind [`relevance_proximity`], each row divided by
/// `exp(shift)`; the shift is zero unless an exponent exceeds the guard.
pub fn proximity_sums(space: &EmbeddingSpace, index: &NeighborIndex) -> (Matrix, Vec<f64>) {
    let n = space.docs.rows();
    let k = space.k();
    let kappa = space.kappa;
    // κ·cos(w, c) for every word, computed once
    let m = space.center.rows();
    let mut word_cat = Matrix::zeros(m, k);
    for w in 0..m {
        let u = space.center.row(w);
        for (c, x) in word_cat.row_mut(w).iter_mut().enumerate() {
            *x = kappa * dot(u, space.cats.row(c));
        }
    }
    let mut sums = Matrix::zeros(n, k);
    let mut shifts = vec![0.0; n];
    let mut weights: Vec<(usize, f64)> = Vec::new();
    for i in 0..n {
        weights.clear();
        for &(dn, sim_dd) in &index.doc_neighbors[i] {
            for &(w, sim_dw) in &index.word_neighbors[dn] {
                weights.push((w, sim_dd * sim_dw));
            }
        }
        let max_exp = weights
            .iter()
            .flat_map(|&(w, _)| word_cat.row(w).iter().copied())
            .fold(f64::NEG_INFINITY, f64::max);
        let shift = if max_exp > EXP_OVERFLOW_GUARD { max_exp } else { 0.0 };
        shifts[i] = shift;
        let row = sums.row_mut(i);
        for &(w, weight) in &weights {
            for (r, &e) in row.iter_mut().zip(word_cat.row(w)) {
                *r += weight * (e - shift).exp();
            }
        }
    }
    (sums, shifts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    /// N × K soft labels.
    pub labels: Matrix,
    pub conf_emb: Vec<f64>,
    pub temperature: f64,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.conf_emb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conf_emb.is_empty()
    }

    pub fn k(&self) -> usize {
        self.labels.cols()
    }

    /// Mean Shannon entropy (nats) of the label rows.
    pub fn mean_entropy(&self) -> f64 {
        let total: f64 = self
            .labels
            .iter_rows()
            .map(|r| -r.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
            .sum();
        total / self.len().max(1) as f64
    }
}

/// Row-wise temperature softmax of the relevance scores.
pub fn pseudo_labels(relevance: &RelevanceMatrix, temperature: f64) -> Result<PseudoLabelSet> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {temperature}")));
    }
    let s = &relevance.scores;
    let mut labels = Matrix::zeros(s.rows(), s.cols());
    let mut scaled = vec![0.0; s.cols()];
    let mut conf_emb = Vec::with_capacity(s.rows());
    for i in 0..s.rows() {
        for (x, r) in scaled.iter_mut().zip(s.row(i)) {
            *x = r / temperature;
        }
        let row = labels.row_mut(i);
        softmax_into(&scaled, row);
        conf_emb.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(PseudoLabelSet { labels, conf_emb, temperature })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Keep documents with `conf_emb > τ`.
    Threshold(f64),
    /// Keep the `ceil(ρ·N)` most confident documents.
    KeepRatio(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidentSet {
    /// Kept document indices, ascending.
    pub members: Vec<usize>,
    /// Realized threshold; every member's confidence is strictly above it
    /// except in ratio mode where it equals the smallest kept confidence.
    pub tau: f64,
    pub requested_ratio: Option<f64>,
}

impl ConfidentSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.members {
            m[i] = true;
        }
        m
    }
}

/// Selects the confident subset. `eligible` marks documents that may be kept
/// at all (documents with no tokens cannot train a classifier).
pub fn filter_confident(labels: &PseudoLabelSet, mode: FilterMode, eligible: Option<&[bool]>) -> Result<ConfidentSet> {
    let n = labels.len();
    let ok = |i: usize| eligible.is_none_or(|e| e[i]);
    match mode {
        FilterMode::Threshold(tau) => {
            let members: Vec<usize> = (0..n).filter(|&i| ok(i) && labels.conf_emb[i] > tau).collect();
            if members.is_empty() {
                return Err(Error::EmptyConfidentSet(format!("no document has conf_emb above {tau}")));
            }
            Ok(ConfidentSet { members, tau, requested_ratio: None })
        }
        FilterMode::KeepRatio(ratio) => {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Error::InvalidConfig(format!("keep ratio must lie in (0, 1], got {ratio}")));
            }
            let mut order: Vec<usize> = (0..n).filter(|&i| ok(i)).collect();
            let keep = (ratio * order.len() as f64).ceil() as usize;
            if keep == 0 {
                return Err(Error::EmptyConfidentSet(format!("keep ratio {ratio} over {} documents", order.len())));
            }
            order.sort_by(|&a, &b| {
                labels.conf_emb[b].partial_cmp(&labels.conf_emb[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
            });
            order.truncate(keep);
            let tau = order.iter().map(|&i| labels.conf_emb[i]).fold(f64::INFINITY, f64::min);
            order.sort_unstable();
            Ok(ConfidentSet { members: order, tau, requested_ratio: Some(ratio) })
        }
    }
}

/// Writes `doc_id,conf_emb,y_1..y_K,kept`. Values use the shortest
/// representation that parses back to the identical `f64`.
pub fn write_pseudo_csv(path: &Path, corpus: &Corpus, labels: &PseudoLabelSet, kept: &ConfidentSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "doc_id,conf_emb")?;
    for c in 1..=labels.k() {
        write!(w, ",y_{c}")?;
    }
    writeln!(w, ",kept")?;
    let mask = kept.mask(labels.len());
    for (i, doc) in corpus.docs.iter().enumerate() {
        write!(w, "{},{}", csv_field(&doc.id), labels.conf_emb[i])?;
        for y in labels.labels.row(i) {
            write!(w, ",{y}")?;
        }
        writeln!(w, ",{}", u8::from(mask[i]))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a pseudo-label CSV back, validating ids against the corpus order.
pub fn read_pseudo_csv(path: &Path, corpus: &Corpus) -> Result<(PseudoLabelSet, ConfidentSet)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, "empty file"))??;
    let k = split_csv(&header).len().saturating_sub(3);
    if k < 2 {
        return Err(Error::format(path, "header must be doc_id,conf_emb,y_1..y_K,kept"));
    }
    let mut labels = Matrix::zeros(corpus.len(), k);
    let mut conf = Vec::with_capacity(corpus.len());
    let mut members = Vec::new();
    let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::format(path, format!("bad number `{s}`")));
    for (i, line) in lines.enumerate() {
        let line = line?;
        let f = split_csv(&line);
        if i >= corpus.len() || f.len() != k + 3 || f[0] != corpus.docs[i].id {
            return Err(Error::format(path, format!("row {} does not match corpus document order", i + 1)));
        }
        conf.push(parse(&f[1])?);
        for c in 0..k {
            labels.row_mut(i)[c] = parse(&f[2 + c])?;
        }
        if f[k + 2] == "1" {
            members.push(i);
        }
    }
    if conf.len() != corpus.len() {
        return Err(Error::format(path, "row count does not match corpus"));
    }
    let tau = members.iter().map(|&i| conf[i]).fold(f64::INFINITY, f64::min);
    // temperature is not recorded in the CSV; callers that need it keep it in config
    Ok((PseudoLabelSet { labels, conf_emb: conf, temperature: f64::NAN }, ConfidentSet { members, tau, requested_ratio: None }))
}
