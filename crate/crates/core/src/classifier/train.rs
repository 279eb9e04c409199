use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierConfig, ClassifierParams};
use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix};
use crate::rng::{stream, Stream};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam moment estimates over the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub steps: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam { steps: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshLog {
    pub refresh: usize,
    /// Mean cross-entropy against q over the interval.
    pub mean_loss: f64,
    /// Fraction of documents whose argmax label changed since the previous refresh.
    pub changed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainReport {
    pub refreshes: Vec<RefreshLog>,
    /// True when the δ rule fired before the refresh limit.
    pub converged: bool,
}

/// Sharpened self-training target and the soft frequencies behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfTrainTarget {
    pub q: Matrix,
    pub f: Vec<f64>,
}

/// `f(c) = Σ_d p(c|d)`, `q(c|d) ∝ p(c|d)²/f(c)`.
pub fn self_train_targets(p: &Matrix) -> SelfTrainTarget {
    let k = p.cols();
    let mut f = vec![0.0; k];
    for row in p.iter_rows() {
        for (fc, &x) in f.iter_mut().zip(row) {
            *fc += x;
        }
    }
    let mut q = Matrix::zeros(p.rows(), k);
    for (i, row) in p.iter_rows().enumerate() {
        let out = q.row_mut(i);
        for c in 0..k {
            out[c] = row[c] * row[c] / f[c];
        }
        let z: f64 = out.iter().sum();
        for x in out.iter_mut() {
            *x /= z;
        }
    }
    SelfTrainTarget { q, f }
}

/// One optimizer step on a batch; returns the summed loss.
fn train_batch(
    params: &mut ClassifierParams,
    docs: &[&[u32]],
    targets: &[&[f64]],
    grad: &mut [f64],
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let fwd = params.forward_batch(docs, Some(rng))?;
    grad.fill(0.0);
    let loss = params.backward(&fwd, targets, grad);
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged(format!("classifier loss became {loss}")));
    }
    params.adam.step(&mut params.theta, grad, lr);
    Ok(loss)
}

fn check_finite(params: &ClassifierParams, when: &str) -> Result<()> {
    if params.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingDiverged(format!("classifier parameters non-finite {when}")))
    }
}

/// Minimizes soft cross-entropy against `targets` (one row per document) over
/// shuffled mini-batches for `cfg.epochs` epochs.
pub fn pretrain(params: &mut ClassifierParams, docs: &[&[u32]], targets: &Matrix, cfg: &ClassifierConfig) -> Result<PretrainReport> {
    cfg.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyInput);
    }
    assert_eq!(docs.len(), targets.rows(), "one target row per document");
    let mut rng = stream(cfg.seed, Stream::Pretrain);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut grad = vec![0.0; params.num_params()];
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let bd: Vec<&[u32]> = batch.iter().map(|&i| docs[i]).collect();
            let bt: Vec<&[f64]> = batch.iter().map(|&i| targets.row(i)).collect();
            total += train_batch(params, &bd, &bt, &mut grad, cfg.lr, &mut rng)?;
        }
        check_finite(params, &format!("after pretraining epoch {}", epoch + 1))?;
        let mean = total / docs.len() as f64;
        log::debug!("pretrain epoch {}: loss {mean:.5}", epoch + 1);
        epoch_loss.push(mean);
    }
    Ok(PretrainReport { epoch_loss })
}

fn hard_labels(p: &Matrix) -> Vec<usize> {
    p.iter_rows().map(argmax).collect()
}

/// Self-training: every `refresh_every` batches recompute q from the current
/// predictions; stop when fewer than δ of the hard labels changed since the
/// previous refresh, or after `max_refreshes` intervals.
pub fn self_train(params: &mut ClassifierParams, docs: &[&[u32]], cfg: &ClassifierConfig) -> Result<SelfTrainReport> {
    cfg.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rng = stream(cfg.seed, Stream::SelfTrain);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut grad = vec![0.0; params.num_params()];
    let p = params.predict(docs)?;
    let mut labels = hard_labels(&p);
    let mut q = self_train_targets(&p).q;
    let mut refreshes = Vec::new();
    let mut converged = false;
    for refresh in 1..=cfg.max_refreshes {
        let mut total = 0.0;
        let mut seen = 0;
        for _ in 0..cfg.refresh_every {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let end = (cursor + cfg.batch_size).min(order.len());
            let batch = &order[cursor..end];
            cursor = end;
            let bd: Vec<&[u32]> = batch.iter().map(|&i| docs[i]).collect();
            let bt: Vec<&[f64]> = batch.iter().map(|&i| q.row(i)).collect();
            total += train_batch(params, &bd, &bt, &mut grad, cfg.lr, &mut rng)?;
            seen += batch.len();
        }
        check_finite(params, &format!("at self-training refresh {refresh}"))?;
        let p = params.predict(docs)?;
        let new_labels = hard_labels(&p);
        let changed = labels.iter().zip(&new_labels).filter(|(a, b)| a != b).count();
        let changed_fraction = changed as f64 / docs.len() as f64;
        let mean_loss = total / seen as f64;
        log::debug!("self-train refresh {refresh}: loss {mean_loss:.5}, changed {changed_fraction:.4}");
        refreshes.push(RefreshLog { refresh, mean_loss, changed_fraction });
        labels = new_labels;
        if changed_fraction < cfg.delta {
            converged = true;
            break;
        }
        q = self_train_targets(&p).q;
    }
    Ok(SelfTrainReport { refreshes, converged })
}
