use std::cmp::Ordering;

use super::{Method, ScoredCorpus};
use crate::classifier::{conf_clf, pretrain, ClassifierConfig, ClassifierParams, ConfidenceMode};
use crate::corpus::{Corpus, Scenario};
use crate::embed::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

pub const DEFAULT_LOF_K: usize = 20;

/// Distances below this are treated as this, so duplicates keep finite density.
const DIST_FLOOR: f64 = 1e-12;

/// Mean cosine to every other document, via `dᵀ(S − d)` with `S` the sum of
/// all document vectors.
pub fn baseline_ancs(space: &EmbeddingSpace) -> Result<ScoredCorpus> {
    let n = space.docs.rows();
    if n < 2 {
        return Err(Error::UndefinedMetric("ANCS needs at least two documents".into()));
    }
    let mut sum = vec![0.0; space.dim()];
    for d in space.docs.iter_rows() {
        for (s, x) in sum.iter_mut().zip(d) {
            *s += x;
        }
    }
    let scale = 1.0 / (n - 1) as f64;
    let conf = space
        .docs
        .iter_rows()
        .map(|d| {
            let rest: Vec<f64> = sum.iter().zip(d).map(|(s, x)| s - x).collect();
            scale * dot(d, &rest)
        })
        .collect();
    Ok(ScoredCorpus::new(Method::Ancs, conf))
}

/// Local outlier factor over cosine distance `1 − cos`; confidence is −LOF.
/// Neighborhoods are exactly the `k` nearest documents, ties by id.
pub fn baseline_lof(space: &EmbeddingSpace, k: usize) -> Result<ScoredCorpus> {
    let n = space.docs.rows();
    if k < 1 || n <= k {
        return Err(Error::InvalidConfig(format!("LOF needs 1 <= k < N (k = {k}, N = {n})")));
    }
    let dist = |i: usize, j: usize| (1.0 - dot(space.docs.row(i), space.docs.row(j))).max(DIST_FLOOR);
    let mut neighbors: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        row.clear();
        row.extend((0..n).filter(|&j| j != i).map(|j| (j, dist(i, j))));
        let by_dist = |a: &(usize, f64), b: &(usize, f64)| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0));
        row.select_nth_unstable_by(k - 1, by_dist);
        let mut nn = row[..k].to_vec();
        nn.sort_by(by_dist);
        neighbors.push(nn);
    }
    let k_dist: Vec<f64> = neighbors.iter().map(|nn| nn[k - 1].1).collect();
    let lrd: Vec<f64> = neighbors
        .iter()
        .map(|nn| {
            let reach: f64 = nn.iter().map(|&(o, d)| d.max(k_dist[o])).sum();
            k as f64 / reach
        })
        .collect();
    let conf = neighbors
        .iter()
        .enumerate()
        .map(|(i, nn)| {
            let lof = nn.iter().map(|&(o, _)| lrd[o]).sum::<f64>() / (k as f64 * lrd[i]);
            -lof
        })
        .collect();
    Ok(ScoredCorpus::new(Method::Lof, conf))
}

/// Documents that contain exactly one distinct category-name token, with that
/// category as a hard label.
pub fn smclass_labels(corpus: &Corpus, scenario: &Scenario) -> Result<Vec<(usize, usize)>> {
    let mut labeled = Vec::new();
    let mut covered = vec![false; scenario.k()];
    for (i, doc) in corpus.docs.iter().enumerate() {
        let mut hit: Option<usize> = None;
        let mut multiple = false;
        for (c, tok) in scenario.tokens.iter().enumerate() {
            if doc.tokens.contains(tok) {
                if hit.is_some() {
                    multiple = true;
                }
                hit = Some(c);
            }
        }
        if let (Some(c), false) = (hit, multiple) {
            covered[c] = true;
            labeled.push((i, c));
        }
    }
    if let Some(c) = covered.iter().position(|&x| !x) {
        return Err(Error::CategoryUncovered(scenario.names[c].clone()));
    }
    Ok(labeled)
}

/// Trains the CNN on name-matched documents with one-hot targets and scores
/// every document by maximum softmax probability.
pub fn baseline_smclass(corpus: &Corpus, scenario: &Scenario, word_vectors: &Matrix, cfg: &ClassifierConfig) -> Result<ScoredCorpus> {
    let labeled = smclass_labels(corpus, scenario)?;
    let k = scenario.k();
    let docs: Vec<&[u32]> = labeled.iter().map(|&(i, _)| corpus.docs[i].tokens.as_slice()).collect();
    let mut targets = Matrix::zeros(labeled.len(), k);
    for (r, &(_, c)) in labeled.iter().enumerate() {
        targets.row_mut(r)[c] = 1.0;
    }
    let mut params = ClassifierParams::init(cfg.arch(k, word_vectors.cols()), word_vectors, cfg.seed)?;
    pretrain(&mut params, &docs, &targets, cfg)?;
    let all: Vec<&[u32]> = corpus.docs.iter().map(|d| d.tokens.as_slice()).collect();
    let (confidence, flagged) = conf_clf(&params, &all, ConfidenceMode::Msp)?;
    Ok(ScoredCorpus { method: Method::SmClass, confidence, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, resolve_category_names, RawDocument};
    use crate::rng::{stream, Stream};

    fn space_with_docs(docs: Matrix) -> EmbeddingSpace {
        let p = docs.cols();
        EmbeddingSpace {
            center: Matrix::zeros(1, p),
            context: Matrix::zeros(1, p),
            docs,
            cats: Matrix::zeros(2, p),
            kappa: 10.0,
        }
    }

    #[test]
    fn ancs_hand_example() {
        let s = space_with_docs(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]));
        let outlier: Vec<f64> = baseline_ancs(&s).unwrap().confidence.iter().map(|c| -c).collect();
        assert_eq!(outlier, vec![0.5, 0.0, 0.5]);
        let same = space_with_docs(Matrix::from_rows(&vec![vec![0.6, 0.8]; 4]));
        assert!(baseline_ancs(&same).unwrap().confidence.iter().all(|c| (c - 1.0).abs() < 1e-15));
        assert!(baseline_ancs(&space_with_docs(Matrix::from_rows(&[vec![1.0, 0.0]]))).is_err());
    }

    #[test]
    fn ancs_shortcut_matches_double_loop() {
        let docs = Matrix::random_unit(100, 16, &mut stream(5, Stream::EmbedInit));
        let s = space_with_docs(docs.clone());
        let fast = baseline_ancs(&s).unwrap().confidence;
        for i in 0..100 {
            let naive: f64 = (0..100).filter(|&j| j != i).map(|j| dot(docs.row(i), docs.row(j))).sum::<f64>() / 99.0;
            assert!((fast[i] - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn lof_equidistant_points_are_inliers() {
        let angles = [0.0f64, 120.0, 240.0];
        let rows: Vec<Vec<f64>> = angles.iter().map(|a| vec![a.to_radians().cos(), a.to_radians().sin()]).collect();
        let s = space_with_docs(Matrix::from_rows(&rows));
        for c in baseline_lof(&s, 2).unwrap().confidence {
            assert!((c + 1.0).abs() < 1e-12);
        }
        assert!(baseline_lof(&s, 3).is_err());
    }

    /// LOF written from the textbook definition with full distance matrices.
    fn reference_lof(x: &Matrix, k: usize) -> Vec<f64> {
        let n = x.rows();
        let d: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (1.0 - dot(x.row(i), x.row(j))).max(1e-12)).collect()).collect();
        let knn: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                others.sort_by(|&a, &b| d[i][a].partial_cmp(&d[i][b]).unwrap().then(a.cmp(&b)));
                others.truncate(k);
                others
            })
            .collect();
        let kd: Vec<f64> = (0..n).map(|i| d[i][knn[i][k - 1]]).collect();
        let lrd: Vec<f64> = (0..n).map(|i| 1.0 / (knn[i].iter().map(|&o| kd[o].max(d[i][o])).sum::<f64>() / k as f64)).collect();
        (0..n).map(|i| knn[i].iter().map(|&o| lrd[o] / lrd[i]).sum::<f64>() / k as f64).collect()
    }

    #[test]
    fn lof_flags_far_point_and_matches_reference() {
        let mut rng = stream(9, Stream::EmbedInit);
        let mut rows = Vec::new();
        use rand::Rng;
        for _ in 0..30 {
            let a: f64 = rng.random_range(-0.2..0.2);
            let b: f64 = rng.random_range(-0.2..0.2);
            let mut v = vec![1.0, a, b];
            crate::linalg::normalize(&mut v);
            rows.push(v);
        }
        rows.push(vec![-1.0, 0.0, 0.0]);
        let x = Matrix::from_rows(&rows);
        let lof: Vec<f64> = baseline_lof(&space_with_docs(x.clone()), 5).unwrap().confidence.iter().map(|c| -c).collect();
        let reference = reference_lof(&x, 5);
        for (a, b) in lof.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
        let worst = crate::linalg::argmax(&lof);
        assert_eq!(worst, 30);
    }

    #[test]
    fn lof_with_k_equal_n_minus_one_and_duplicates() {
        let s = space_with_docs(Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]));
        let conf = baseline_lof(&s, 3).unwrap().confidence;
        assert!(conf.iter().all(|c| c.is_finite()));
        let dup = baseline_lof(&s, 1).unwrap().confidence;
        assert!(dup.iter().all(|c| c.is_finite()));
    }

    fn sports_corpus(extra: &str) -> (Corpus, Scenario) {
        let texts = ["hockey puck ice", "tennis racket court", "hockey tennis both", "cooking recipe", extra];
        let raw: Vec<RawDocument> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| RawDocument { id: format!("d{i}"), text: t.to_string(), label: None })
            .collect();
        let corpus = build_corpus(&raw, 1).unwrap();
        let scenario = resolve_category_names(&corpus, &["hockey".into(), "tennis".into()]).unwrap();
        (corpus, scenario)
    }

    #[test]
    fn smclass_labeling_rule() {
        let (corpus, scenario) = sports_corpus("golf swing");
        let labeled = smclass_labels(&corpus, &scenario).unwrap();
        assert_eq!(labeled, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn smclass_uncovered_category() {
        let raw = vec![
            RawDocument { id: "a".into(), text: "hockey puck".into(), label: None },
            RawDocument { id: "b".into(), text: "hockey tennis".into(), label: None },
        ];
        let corpus = build_corpus(&raw, 1).unwrap();
        let scenario = resolve_category_names(&corpus, &["hockey".into(), "tennis".into()]).unwrap();
        assert!(matches!(smclass_labels(&corpus, &scenario), Err(Error::CategoryUncovered(n)) if n == "tennis"));
    }

    #[test]
    fn smclass_scores_every_document() {
        let (corpus, scenario) = sports_corpus("golf swing");
        let u = Matrix::random_unit(corpus.vocab.len(), 8, &mut stream(1, Stream::EmbedInit));
        let cfg = ClassifierConfig { widths: vec![1, 2], maps: 3, max_len: 8, epochs: 200, lr: 0.01, ..Default::default() };
        let s = baseline_smclass(&corpus, &scenario, &u, &cfg).unwrap();
        assert_eq!(s.len(), corpus.len());
        assert!(s.confidence.iter().all(|&c| (0.5..=1.0).contains(&c)));
        assert!(s.confidence[0] > 0.9 && s.confidence[1] > 0.9);
    }
}
