//! Single-layer text CNN trained on embedding pseudo-labels.
//!
//! Tokens are embedded, convolved with one bank of filters per width (valid
//! convolution over the sequence padded to `max_len`), ReLU'd, max-pooled over
//! time, concatenated, passed through dropout and an affine layer, then
//! softmaxed. The pad token is an implicit zero vector that never trains.

mod train;

use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_container, take_tensor, write_container, Tensor};
use crate::linalg::Matrix;
use crate::rng::{stream, Stream};

pub use train::{pretrain, self_train, self_train_targets, Adam, PretrainReport, RefreshLog, SelfTrainReport, SelfTrainTarget};

const MODEL_MAGIC: &[u8; 8] = b"OOCDCNN1";

/// Marks a pooled feature whose maximum came from an all-pad window.
const PAD_WINDOW: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub widths: Vec<usize>,
    pub maps: usize,
    pub max_len: usize,
    /// Dropout keep probability on pooled features.
    pub keep_prob: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Batches between self-training target refreshes.
    pub refresh_every: usize,
    /// Stop self-training once fewer than this fraction of labels change.
    pub delta: f64,
    pub max_refreshes: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            widths: vec![2, 3, 4, 5],
            maps: 25,
            max_len: 256,
            keep_prob: 0.5,
            lr: 1e-3,
            epochs: 20,
            batch_size: 32,
            refresh_every: 50,
            delta: 0.001,
            max_refreshes: 50,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("classifier: {msg}")));
        if self.widths.is_empty() || self.widths.iter().any(|&h| h < 1 || h > self.max_len) {
            return bad("filter widths must be non-empty and each in 1..=max_len");
        }
        if self.maps < 1 {
            return bad("feature maps must be at least 1");
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad("dropout keep probability must lie in (0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size < 1 || self.refresh_every < 1 || self.max_refreshes < 1 {
            return bad("batch size, refresh interval and max refreshes must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad("delta must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn arch(&self, k: usize, dim: usize) -> ClassifierArch {
        ClassifierArch {
            max_len: self.max_len,
            widths: self.widths.clone(),
            maps: self.maps,
            keep_prob: self.keep_prob,
            k,
            dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub max_len: usize,
    pub widths: Vec<usize>,
    pub maps: usize,
    pub keep_prob: f64,
    pub k: usize,
    pub dim: usize,
}

impl ClassifierArch {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.iter().any(|&h| h < 1 || h > self.max_len) || self.maps < 1 {
            return Err(Error::InvalidConfig("classifier: invalid architecture".into()));
        }
        if self.k < 1 || self.dim < 1 {
            return Err(Error::InvalidConfig("classifier: K and P must be positive".into()));
        }
        Ok(())
    }

    /// Pooled feature count.
    pub fn features(&self) -> usize {
        self.widths.len() * self.maps
    }

    /// Kernel rows: one per (width, offset, map).
    fn kernel_rows(&self) -> usize {
        self.widths.iter().sum::<usize>() * self.maps
    }
}

/// Offsets of each parameter group inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    emb: usize,
    kernels: usize,
    conv_bias: usize,
    out_w: usize,
    out_b: usize,
    len: usize,
    /// First kernel row of each width.
    width_base: Vec<usize>,
}

impl Layout {
    fn new(arch: &ClassifierArch, vocab: usize) -> Self {
        let p = arch.dim;
        let f = arch.features();
        let emb = 0;
        let kernels = emb + vocab * p;
        let conv_bias = kernels + arch.kernel_rows() * p;
        let out_w = conv_bias + f;
        let out_b = out_w + arch.k * f;
        let len = out_b + arch.k;
        let mut width_base = Vec::with_capacity(arch.widths.len());
        let mut row = 0;
        for &h in &arch.widths {
            width_base.push(row);
            row += h * arch.maps;
        }
        Layout { emb, kernels, conv_bias, out_w, out_b, len, width_base }
    }
}

/// Network weights plus Adam state, all stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub arch: ClassifierArch,
    vocab: usize,
    layout: Layout,
    theta: Vec<f64>,
    pub adam: Adam,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    version: u32,
    arch: ClassifierArch,
    vocab: usize,
    adam_steps: u64,
}

impl ClassifierParams {
    /// Fresh parameters with the embedding table copied from `word_vectors`
    /// (M × P) and the remaining weights drawn uniformly in ±1/√fan_in.
    pub fn init(arch: ClassifierArch, word_vectors: &Matrix, seed: u64) -> Result<Self> {
        arch.validate()?;
        if word_vectors.cols() != arch.dim {
            return Err(Error::InvalidConfig(format!(
                "classifier: word vectors have dimension {}, architecture expects {}",
                word_vectors.cols(),
                arch.dim
            )));
        }
        let vocab = word_vectors.rows();
        let layout = Layout::new(&arch, vocab);
        let mut theta = vec![0.0; layout.len];
        theta[..vocab * arch.dim].copy_from_slice(word_vectors.as_slice());
        let mut rng = stream(seed, Stream::ClassifierInit);
        let p = arch.dim;
        for (wi, &h) in arch.widths.iter().enumerate() {
            let bound = 1.0 / ((h * p) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let start = layout.kernels + layout.width_base[wi] * p;
            for x in &mut theta[start..start + h * arch.maps * p] {
                *x = dist.sample(&mut rng);
            }
            let bias = layout.conv_bias + wi * arch.maps;
            for x in &mut theta[bias..bias + arch.maps] {
                *x = dist.sample(&mut rng);
            }
        }
        let bound = 1.0 / (arch.features() as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for x in &mut theta[layout.out_w..layout.out_b] {
            *x = dist.sample(&mut rng);
        }
        let adam = Adam::new(layout.len);
        Ok(ClassifierParams { arch, vocab, layout, theta, adam })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Embedding row of token `w`.
    pub fn embedding_row(&self, w: usize) -> &[f64] {
        let p = self.arch.dim;
        &self.theta[self.layout.emb + w * p..self.layout.emb + (w + 1) * p]
    }

    /// Output layer as (K × F weights, K biases).
    pub fn output_layer(&self) -> (&[f64], &[f64]) {
        (&self.theta[self.layout.out_w..self.layout.out_b], &self.theta[self.layout.out_b..])
    }

    pub fn output_layer_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let (w, b) = self.theta[self.layout.out_w..].split_at_mut(self.layout.out_b - self.layout.out_w);
        (w, b)
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let l = &self.layout;
        let a = &self.arch;
        let p = a.dim;
        let f = a.features();
        let slice = |s: usize, e: usize| self.theta[s..e].to_vec();
        let tensors = [
            Tensor::new("embedding", &[self.vocab, p], slice(l.emb, l.kernels)),
            Tensor::new("kernels", &[a.kernel_rows(), p], slice(l.kernels, l.conv_bias)),
            Tensor::new("conv_bias", &[f], slice(l.conv_bias, l.out_w)),
            Tensor::new("out_w", &[a.k, f], slice(l.out_w, l.out_b)),
            Tensor::new("out_b", &[a.k], slice(l.out_b, l.len)),
            Tensor::new("adam_m", &[l.len], self.adam.m.clone()),
            Tensor::new("adam_v", &[l.len], self.adam.v.clone()),
        ];
        let meta = ModelMeta { version: 1, arch: a.clone(), vocab: self.vocab, adam_steps: self.adam.steps };
        write_container(path, MODEL_MAGIC, &meta, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, mut tensors): (ModelMeta, _) = read_container(path, MODEL_MAGIC)?;
        if meta.version != 1 {
            return Err(Error::format(path, format!("unsupported model version {}", meta.version)));
        }
        let a = meta.arch;
        a.validate().map_err(|e| Error::format(path, e.to_string()))?;
        let layout = Layout::new(&a, meta.vocab);
        let (p, f) = (a.dim, a.features());
        let mut theta = Vec::with_capacity(layout.len);
        for (name, shape) in [
            ("embedding", vec![meta.vocab, p]),
            ("kernels", vec![a.kernel_rows(), p]),
            ("conv_bias", vec![f]),
            ("out_w", vec![a.k, f]),
            ("out_b", vec![a.k]),
        ] {
            theta.extend(take_tensor(&mut tensors, name, &shape, path)?);
        }
        let m = take_tensor(&mut tensors, "adam_m", &[layout.len], path)?;
        let v = take_tensor(&mut tensors, "adam_v", &[layout.len], path)?;
        let adam = Adam { steps: meta.adam_steps, m, v };
        Ok(ClassifierParams { arch: a, vocab: meta.vocab, layout, theta, adam })
    }

    fn truncate<'a>(&self, doc: &'a [u32]) -> &'a [u32] {
        &doc[..doc.len().min(self.arch.max_len)]
    }

    /// Runs the network on a batch. With `dropout`, pooled features are masked
    /// and rescaled by 1/keep.
    pub(crate) fn forward_batch(&self, docs: &[&[u32]], dropout: Option<&mut ChaCha8Rng>) -> Result<Forward> {
        let a = &self.arch;
        let (p, f, k, maps) = (a.dim, a.features(), a.k, a.maps);
        let s = a.kernel_rows();
        let mut tokens = Vec::new();
        let mut offsets = Vec::with_capacity(docs.len() + 1);
        offsets.push(0);
        for doc in docs {
            let doc = self.truncate(doc);
            if doc.is_empty() {
                return Err(Error::EmptyInput);
            }
            if let Some(&bad) = doc.iter().find(|&&t| t as usize >= self.vocab) {
                return Err(Error::InvalidConfig(format!("token id {bad} outside the classifier vocabulary")));
            }
            tokens.extend_from_slice(doc);
            offsets.push(tokens.len());
        }
        // Z = E · Kᵀ: every kernel slice applied to every token at once.
        let rows = tokens.len();
        let mut e = vec![0.0; rows * p];
        for (r, &t) in tokens.iter().enumerate() {
            e[r * p..(r + 1) * p].copy_from_slice(self.embedding_row(t as usize));
        }
        let mut z = vec![0.0; rows * s];
        let kern = &self.theta[self.layout.kernels..self.layout.conv_bias];
        // SAFETY: dimensions and strides describe the three row-major buffers above.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                p,
                s,
                1.0,
                e.as_ptr(),
                p as isize,
                1,
                kern.as_ptr(),
                1,
                p as isize,
                0.0,
                z.as_mut_ptr(),
                s as isize,
                1,
            );
        }

        let b = docs.len();
        let conv_bias = &self.theta[self.layout.conv_bias..self.layout.out_w];
        let mut pre = vec![0.0; b * f];
        let mut argmax = vec![PAD_WINDOW; b * f];
        let mut best = vec![0.0; maps];
        let mut best_t = vec![PAD_WINDOW; maps];
        for d in 0..b {
            let (r0, n) = (offsets[d], offsets[d + 1] - offsets[d]);
            for (wi, &h) in a.widths.iter().enumerate() {
                let base = self.layout.width_base[wi];
                best.fill(f64::NEG_INFINITY);
                best_t.fill(PAD_WINDOW);
                // windows starting on a real token; later ones are all pad
                let real = n.min(a.max_len - h + 1);
                for t in 0..real {
                    let span = h.min(n - t);
                    for fm in 0..maps {
                        let mut acc = 0.0;
                        for o in 0..span {
                            acc += z[(r0 + t + o) * s + base + o * maps + fm];
                        }
                        if acc > best[fm] {
                            best[fm] = acc;
                            best_t[fm] = t as u32;
                        }
                    }
                }
                let has_pad_window = n + h <= a.max_len;
                for fm in 0..maps {
                    if has_pad_window && 0.0 > best[fm] {
                        best[fm] = 0.0;
                        best_t[fm] = PAD_WINDOW;
                    }
                    let j = wi * maps + fm;
                    pre[d * f + j] = best[fm] + conv_bias[j];
                    argmax[d * f + j] = best_t[fm];
                }
            }
        }

        let mut scale = vec![1.0; b * f];
        if let Some(rng) = dropout {
            if a.keep_prob < 1.0 {
                for x in &mut scale {
                    *x = if rng.random_bool(a.keep_prob) { 1.0 / a.keep_prob } else { 0.0 };
                }
            }
        }
        let hidden: Vec<f64> = pre.iter().zip(&scale).map(|(&x, &m)| x.max(0.0) * m).collect();
        let (out_w, out_b) = self.output_layer();
        let mut logits = Matrix::zeros(b, k);
        let mut probs = Matrix::zeros(b, k);
        for d in 0..b {
            let hd = &hidden[d * f..(d + 1) * f];
            for (c, l) in logits.row_mut(d).iter_mut().enumerate() {
                *l = out_b[c] + crate::linalg::dot(&out_w[c * f..(c + 1) * f], hd);
            }
            crate::linalg::softmax_into(logits.row(d), probs.row_mut(d));
        }
        Ok(Forward { tokens, offsets, pre, argmax, scale, hidden, logits, probs })
    }

    /// Mean soft cross-entropy against `targets` and its gradient with respect
    /// to every parameter, without dropout.
    pub fn loss_and_gradient(&self, docs: &[&[u32]], targets: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
        if docs.len() != targets.len() || docs.is_empty() {
            return Err(Error::InvalidConfig("need one target row per document".into()));
        }
        let fwd = self.forward_batch(docs, None)?;
        let mut grad = vec![0.0; self.num_params()];
        let loss = self.backward(&fwd, targets, &mut grad) / docs.len() as f64;
        Ok((loss, grad))
    }

    /// Accumulates into `grad` the gradient of
    /// `(1/B)·Σ_d −Σ_c y_c(d) log p(c|d)` and returns the summed (not averaged) loss.
    pub(crate) fn backward(&self, fwd: &Forward, targets: &[&[f64]], grad: &mut [f64]) -> f64 {
        let a = &self.arch;
        let (p, f, k, maps) = (a.dim, a.features(), a.k, a.maps);
        let b = targets.len();
        let inv_b = 1.0 / b as f64;
        let l = &self.layout;
        let (out_w, _) = self.output_layer();
        let mut loss = 0.0;
        let mut dlogit = vec![0.0; k];
        let mut dh = vec![0.0; f];
        for (d, y) in targets.iter().enumerate() {
            let logits = fwd.logits.row(d);
            let probs = fwd.probs.row(d);
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + logits.iter().map(|&z| (z - mx).exp()).sum::<f64>().ln();
            let ysum: f64 = y.iter().sum();
            for c in 0..k {
                if y[c] != 0.0 {
                    loss -= y[c] * (logits[c] - lse);
                }
                dlogit[c] = (probs[c] * ysum - y[c]) * inv_b;
            }
            let hd = &fwd.hidden[d * f..(d + 1) * f];
            for c in 0..k {
                grad[l.out_b + c] += dlogit[c];
                let row = &mut grad[l.out_w + c * f..l.out_w + (c + 1) * f];
                for (g, &h) in row.iter_mut().zip(hd) {
                    *g += dlogit[c] * h;
                }
            }
            dh.fill(0.0);
            for c in 0..k {
                let w = &out_w[c * f..(c + 1) * f];
                for (g, &wv) in dh.iter_mut().zip(w) {
                    *g += dlogit[c] * wv;
                }
            }
            let (r0, n) = (fwd.offsets[d], fwd.offsets[d + 1] - fwd.offsets[d]);
            for (wi, &h) in a.widths.iter().enumerate() {
                for fm in 0..maps {
                    let j = wi * maps + fm;
                    let idx = d * f + j;
                    if fwd.pre[idx] <= 0.0 || fwd.scale[idx] == 0.0 {
                        continue;
                    }
                    let g = dh[j] * fwd.scale[idx];
                    grad[l.conv_bias + j] += g;
                    let t = fwd.argmax[idx];
                    if t == PAD_WINDOW {
                        continue;
                    }
                    let t = t as usize;
                    for o in 0..h.min(n - t) {
                        let tok = fwd.tokens[r0 + t + o] as usize;
                        let row = l.width_base[wi] + o * maps + fm;
                        let kr = l.kernels + row * p;
                        let er = l.emb + tok * p;
                        for q in 0..p {
                            grad[kr + q] += g * self.theta[er + q];
                            grad[er + q] += g * self.theta[kr + q];
                        }
                    }
                }
            }
        }
        loss
    }

    /// p(c|d) for every document, without dropout.
    pub fn predict(&self, docs: &[&[u32]]) -> Result<Matrix> {
        let mut out = Matrix::zeros(docs.len(), self.arch.k);
        for (chunk_i, chunk) in docs.chunks(PREDICT_BATCH).enumerate() {
            let fwd = self.forward_batch(chunk, None)?;
            for d in 0..chunk.len() {
                out.row_mut(chunk_i * PREDICT_BATCH + d).copy_from_slice(fwd.probs.row(d));
            }
        }
        Ok(out)
    }

    /// Class probabilities for one document.
    pub fn forward(&self, doc: &[u32]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&[doc], None)?.probs.row(0).to_vec())
    }
}

const PREDICT_BATCH: usize = 64;

/// Cached activations of one batch.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    tokens: Vec<u32>,
    offsets: Vec<usize>,
    /// Pre-ReLU pooled value (max over time plus bias), B × F.
    pre: Vec<f64>,
    argmax: Vec<u32>,
    /// Dropout multiplier, 0 or 1/keep.
    scale: Vec<f64>,
    hidden: Vec<f64>,
    logits: Matrix,
    pub(crate) probs: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceMode {
    /// Maximum softmax probability.
    #[default]
    Msp,
    /// Negative entropy, natural log.
    Entropy,
}

impl FromStr for ConfidenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msp" => Ok(ConfidenceMode::Msp),
            "entropy" => Ok(ConfidenceMode::Entropy),
            other => Err(Error::InvalidConfig(format!("unknown confidence `{other}` (msp|entropy)"))),
        }
    }
}

impl ConfidenceMode {
    pub fn of(self, probs: &[f64]) -> f64 {
        match self {
            ConfidenceMode::Msp => probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ConfidenceMode::Entropy => probs.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum(),
        }
    }

    /// The lowest value the mode can take for K classes.
    pub fn minimum(self, k: usize) -> f64 {
        match self {
            ConfidenceMode::Msp => 1.0 / k as f64,
            ConfidenceMode::Entropy => -(k as f64).ln(),
        }
    }
}

/// Per-document classifier confidence. Empty documents get the mode's minimum
/// and a `true` flag.
pub fn conf_clf(params: &ClassifierParams, docs: &[&[u32]], mode: ConfidenceMode) -> Result<(Vec<f64>, Vec<bool>)> {
    let empty: Vec<bool> = docs.iter().map(|d| d.is_empty()).collect();
    let live: Vec<&[u32]> = docs.iter().copied().filter(|d| !d.is_empty()).collect();
    let probs = params.predict(&live)?;
    let mut rows = probs.iter_rows();
    let conf = empty
        .iter()
        .map(|&e| if e { mode.minimum(params.arch.k) } else { mode.of(rows.next().expect("one row per live doc")) })
        .collect();
    Ok((conf, empty))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::argmax;

    pub(super) fn tiny_arch() -> ClassifierArch {
        ClassifierArch { max_len: 12, widths: vec![2, 3], maps: 4, keep_prob: 1.0, k: 3, dim: 8 }
    }

    pub(super) fn random_vectors(m: usize, p: usize, seed: u64) -> Matrix {
        Matrix::random_unit(m, p, &mut stream(seed, Stream::EmbedInit))
    }

    #[test]
    fn embedding_table_starts_as_word_vectors() {
        let u = random_vectors(10, 8, 1);
        let params = ClassifierParams::init(tiny_arch(), &u, 0).unwrap();
        for w in 0..10 {
            assert_eq!(params.embedding_row(w), u.row(w));
        }
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let u = random_vectors(10, 8, 1);
        let mut params = ClassifierParams::init(tiny_arch(), &u, 0).unwrap();
        params.as_mut_slice().fill(0.0);
        let p = params.forward(&[1, 2, 3]).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn known_logits_give_sigmoid_probabilities() {
        let mut arch = tiny_arch();
        arch.k = 2;
        let u = random_vectors(10, 8, 1);
        let mut params = ClassifierParams::init(arch, &u, 0).unwrap();
        let (w, b) = params.output_layer_mut();
        w.fill(0.0);
        b.copy_from_slice(&[2.0, 0.0]);
        let p = params.forward(&[4, 5]).unwrap();
        assert!((p[0] - 0.8808).abs() < 1e-4 && (p[1] - 0.1192).abs() < 1e-4);
        assert_eq!(ConfidenceMode::Msp.of(&p), p[0]);
        // Σ p ln p = 2σ(2) − ln(1 + e²) = −0.36533
        let closed = 2.0 * p[0] - (1.0 + 2f64.exp()).ln();
        assert!((ConfidenceMode::Entropy.of(&p) - closed).abs() < 1e-12);
        assert!((closed + 0.36533).abs() < 1e-5);
    }

    #[test]
    fn swapping_output_rows_swaps_probabilities() {
        let u = random_vectors(10, 8, 1);
        let params = ClassifierParams::init(tiny_arch(), &u, 3).unwrap();
        let doc = [1u32, 7, 2, 9, 3];
        let p = params.forward(&doc).unwrap();
        let mut swapped = params.clone();
        let f = swapped.arch.features();
        let (w, b) = swapped.output_layer_mut();
        let (r0, r1) = w.split_at_mut(f);
        r0.swap_with_slice(&mut r1[..f]);
        b.swap(0, 1);
        let q = swapped.forward(&doc).unwrap();
        assert!((p[0] - q[1]).abs() < 1e-15 && (p[1] - q[0]).abs() < 1e-15 && (p[2] - q[2]).abs() < 1e-15);
    }

    #[test]
    fn empty_document_is_an_error() {
        let u = random_vectors(10, 8, 1);
        let params = ClassifierParams::init(tiny_arch(), &u, 0).unwrap();
        assert!(matches!(params.forward(&[]), Err(Error::EmptyInput)));
        let (conf, flags) = conf_clf(&params, &[&[1, 2], &[]], ConfidenceMode::Entropy).unwrap();
        assert_eq!(flags, vec![false, true]);
        assert!((conf[1] + 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confidence_modes() {
        assert_eq!(ConfidenceMode::Msp.of(&[0.5, 0.5]), 0.5);
        assert!((ConfidenceMode::Entropy.of(&[0.5, 0.5]) + std::f64::consts::LN_2).abs() < 1e-12);
        let eps = 1e-12;
        assert!(ConfidenceMode::Msp.of(&[1.0 - eps, eps]) > 1.0 - 1e-11);
        let e = ConfidenceMode::Entropy.of(&[1.0 - eps, eps]);
        assert!(e < 0.0 && e > -1e-10);
    }

    #[test]
    fn uniform_is_least_confident_in_both_modes() {
        let uniform = [1.0 / 3.0; 3];
        let other = [0.5, 0.3, 0.2];
        for mode in [ConfidenceMode::Msp, ConfidenceMode::Entropy] {
            assert!(mode.of(&uniform) < mode.of(&other));
            assert_eq!(mode.of(&other), mode.of(&[0.2, 0.5, 0.3]));
        }
    }

    #[test]
    fn long_documents_are_truncated() {
        let u = random_vectors(10, 8, 1);
        let params = ClassifierParams::init(tiny_arch(), &u, 0).unwrap();
        let long: Vec<u32> = (0..40).map(|i| i % 10).collect();
        assert_eq!(params.forward(&long).unwrap(), params.forward(&long[..12]).unwrap());
    }

    /// Direct evaluation over the explicitly padded sequence.
    fn naive_probs(params: &ClassifierParams, doc: &[u32]) -> Vec<f64> {
        let a = &params.arch;
        let p = a.dim;
        let l = &params.layout;
        let th = params.as_slice();
        let mut padded: Vec<Option<usize>> = doc.iter().map(|&t| Some(t as usize)).collect();
        padded.resize(a.max_len, None);
        let mut feats = Vec::new();
        for (wi, &h) in a.widths.iter().enumerate() {
            for fm in 0..a.maps {
                let mut best = f64::NEG_INFINITY;
                for t in 0..=a.max_len - h {
                    let mut acc = th[l.conv_bias + wi * a.maps + fm];
                    for o in 0..h {
                        if let Some(tok) = padded[t + o] {
                            let row = l.width_base[wi] + o * a.maps + fm;
                            for q in 0..p {
                                acc += th[l.kernels + row * p + q] * th[l.emb + tok * p + q];
                            }
                        }
                    }
                    best = best.max(acc.max(0.0));
                }
                feats.push(best);
            }
        }
        let (w, b) = params.output_layer();
        let f = feats.len();
        let logits: Vec<f64> = (0..a.k).map(|c| b[c] + (0..f).map(|j| w[c * f + j] * feats[j]).sum::<f64>()).collect();
        crate::linalg::softmax(&logits)
    }

    #[test]
    fn batched_forward_matches_naive_padded_convolution() {
        let u = random_vectors(10, 8, 1);
        let params = ClassifierParams::init(tiny_arch(), &u, 5).unwrap();
        let docs: Vec<Vec<u32>> = vec![vec![3], vec![1, 2], vec![0, 9, 4, 4, 7], (0..12).map(|i| (i * 7 % 10) as u32).collect()];
        let refs: Vec<&[u32]> = docs.iter().map(Vec::as_slice).collect();
        let probs = params.predict(&refs).unwrap();
        for (i, doc) in docs.iter().enumerate() {
            let expect = naive_probs(&params, doc);
            for c in 0..3 {
                assert!((probs.row(i)[c] - expect[c]).abs() < 1e-12);
            }
            assert!((probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(argmax(probs.row(0)), argmax(&naive_probs(&params, &docs[0])));
    }

    fn loss_at(params: &ClassifierParams, docs: &[&[u32]], targets: &[&[f64]]) -> f64 {
        params.loss_and_gradient(docs, targets).unwrap().0
    }

    fn check_gradient(targets_of: impl Fn(&Matrix) -> Matrix) {
        let u = random_vectors(10, 8, 11);
        let params = ClassifierParams::init(tiny_arch(), &u, 17).unwrap();
        let docs: Vec<Vec<u32>> = vec![
            vec![1, 2, 3, 4, 5, 6, 7],
            vec![9, 8, 0],
            vec![2, 2, 5, 1, 0, 3, 3, 8, 6, 4, 7, 9],
            vec![6],
        ];
        let refs: Vec<&[u32]> = docs.iter().map(Vec::as_slice).collect();
        let targets = targets_of(&params.predict(&refs).unwrap());
        let trows: Vec<&[f64]> = targets.iter_rows().collect();
        let analytic = params.loss_and_gradient(&refs, &trows).unwrap().1;

        let h = 1e-6;
        let mut numeric = vec![0.0; params.num_params()];
        let mut probe = params.clone();
        for i in 0..params.num_params() {
            let x = params.as_slice()[i];
            probe.as_mut_slice()[i] = x + h;
            let up = loss_at(&probe, &refs, &trows);
            probe.as_mut_slice()[i] = x - h;
            let down = loss_at(&probe, &refs, &trows);
            probe.as_mut_slice()[i] = x;
            numeric[i] = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = crate::linalg::norm(&analytic).max(crate::linalg::norm(&numeric));
        assert!(diff / scale <= 1e-4, "relative error {}", diff / scale);
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            assert!((a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-3), "param {i}: {a} vs {n}");
        }
    }

    #[test]
    fn pseudo_label_loss_gradient_matches_finite_differences() {
        check_gradient(|p| {
            let rows: Vec<Vec<f64>> = (0..p.rows()).map(|i| crate::linalg::softmax(&[i as f64 * 0.3, 1.0, -0.5])).collect();
            Matrix::from_rows(&rows)
        });
    }

    #[test]
    fn self_training_loss_gradient_matches_finite_differences() {
        check_gradient(|p| self_train_targets(p).q);
    }

    #[test]
    fn save_load_round_trip() {
        let u = random_vectors(10, 8, 1);
        let params = ClassifierParams::init(tiny_arch(), &u, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        params.save(&path).unwrap();
        assert_eq!(ClassifierParams::load(&path).unwrap(), params);
        std::fs::write(&path, b"garbage!garbage!").unwrap();
        assert!(matches!(ClassifierParams::load(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(ClassifierConfig::default().validate().is_ok());
        let bad = |f: fn(&mut ClassifierConfig)| {
            let mut c = ClassifierConfig::default();
            f(&mut c);
            matches!(c.validate(), Err(Error::InvalidConfig(_)))
        };
        assert!(bad(|c| c.widths = vec![]));
        assert!(bad(|c| c.widths = vec![300]));
        assert!(bad(|c| c.maps = 0));
        assert!(bad(|c| c.keep_prob = 0.0));
        assert!(bad(|c| c.delta = 1.5));
    }
}
