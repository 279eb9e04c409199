use std::sync::atomic::{AtomicU64, Ordering};

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sampler::NegativeSampler;
use super::{init_space, EmbedTrainConfig, EmbeddingSpace};
use crate::corpus::{Corpus, Scenario};
use crate::error::{Error, Result};
use crate::linalg::{dot, normalize, Matrix};
use crate::rng::{stream, worker_stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Table {
    Center,
    Context,
    Doc,
    Cat,
}

type Slot = (Table, usize);

/// Parameter access shared by the exclusive single-worker path and the
/// lock-free multi-worker path.
trait Store {
    fn dot(&self, a: Slot, b: Slot) -> f64;
    fn load(&self, s: Slot, out: &mut [f64]);
    fn store(&mut self, s: Slot, v: &[f64]);
}

impl EmbeddingSpace {
    fn table(&self, t: Table) -> &Matrix {
        match t {
            Table::Center => &self.center,
            Table::Context => &self.context,
            Table::Doc => &self.docs,
            Table::Cat => &self.cats,
        }
    }

    fn table_mut(&mut self, t: Table) -> &mut Matrix {
        match t {
            Table::Center => &mut self.center,
            Table::Context => &mut self.context,
            Table::Doc => &mut self.docs,
            Table::Cat => &mut self.cats,
        }
    }
}

impl Store for EmbeddingSpace {
    #[inline]
    fn dot(&self, a: Slot, b: Slot) -> f64 {
        dot(self.table(a.0).row(a.1), self.table(b.0).row(b.1))
    }

    #[inline]
    fn load(&self, s: Slot, out: &mut [f64]) {
        out.copy_from_slice(self.table(s.0).row(s.1));
    }

    #[inline]
    fn store(&mut self, s: Slot, v: &[f64]) {
        self.table_mut(s.0).row_mut(s.1).copy_from_slice(v);
    }
}

/// Shared tables for uncoordinated multi-worker updates. Individual reads and
/// writes are atomic per coordinate; concurrent updates of one vector may
/// interleave, which is tolerated.
struct SharedSpace {
    dim: usize,
    tables: [Vec<AtomicU64>; 4],
}

impl SharedSpace {
    fn from_space(space: &EmbeddingSpace) -> Self {
        let conv = |m: &Matrix| m.as_slice().iter().map(|x| AtomicU64::new(x.to_bits())).collect();
        SharedSpace {
            dim: space.dim(),
            tables: [conv(&space.center), conv(&space.context), conv(&space.docs), conv(&space.cats)],
        }
    }

    fn write_back(&self, space: &mut EmbeddingSpace) {
        for (t, table) in [Table::Center, Table::Context, Table::Doc, Table::Cat].into_iter().zip(&self.tables) {
            for (dst, src) in space.table_mut(t).as_mut_slice().iter_mut().zip(table) {
                *dst = f64::from_bits(src.load(Ordering::Relaxed));
            }
        }
    }

    #[inline]
    fn row(&self, s: Slot) -> &[AtomicU64] {
        &self.tables[s.0 as usize][s.1 * self.dim..(s.1 + 1) * self.dim]
    }
}

impl Store for &SharedSpace {
    fn dot(&self, a: Slot, b: Slot) -> f64 {
        self.row(a)
            .iter()
            .zip(self.row(b))
            .map(|(x, y)| f64::from_bits(x.load(Ordering::Relaxed)) * f64::from_bits(y.load(Ordering::Relaxed)))
            .sum()
    }

    fn load(&self, s: Slot, out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(self.row(s)) {
            *o = f64::from_bits(x.load(Ordering::Relaxed));
        }
    }

    fn store(&mut self, s: Slot, v: &[f64]) {
        for (x, &y) in self.row(s).iter().zip(v) {
            x.store(y.to_bits(), Ordering::Relaxed);
        }
    }
}

struct Scratch {
    u: Vec<f64>,
    v_pos: Vec<f64>,
    v_neg: Vec<f64>,
    d: Vec<f64>,
    u_neg: Vec<f64>,
}

impl Scratch {
    fn new(p: usize) -> Self {
        Scratch { u: vec![0.0; p], v_pos: vec![0.0; p], v_neg: vec![0.0; p], d: vec![0.0; p], u_neg: vec![0.0; p] }
    }
}

/// One projected SGD step on the positive hinge. Returns the loss before the step.
#[allow(clippy::too_many_arguments)]
#[inline]
fn hinge_step<S: Store>(
    s: &mut S,
    buf: &mut Scratch,
    doc: usize,
    center: u32,
    context: u32,
    neg_context: u32,
    neg_word: u32,
    margin: f64,
    lr: f64,
) -> f64 {
    let (center, context, neg_context, neg_word) =
        (center as usize, context as usize, neg_context as usize, neg_word as usize);
    let arg = s.dot((Table::Context, neg_context), (Table::Center, center))
        - s.dot((Table::Context, context), (Table::Center, center))
        + s.dot((Table::Center, neg_word), (Table::Doc, doc))
        - s.dot((Table::Center, center), (Table::Doc, doc))
        + margin;
    if arg <= 0.0 {
        return 0.0;
    }
    let Scratch { u, v_pos, v_neg, d, u_neg } = buf;
    s.load((Table::Center, center), u);
    s.load((Table::Context, context), v_pos);
    s.load((Table::Context, neg_context), v_neg);
    s.load((Table::Doc, doc), d);
    s.load((Table::Center, neg_word), u_neg);
    let same_word = neg_word == center;
    let same_context = neg_context == context;

    // gradients, evaluated at the pre-step point:
    //   ∂u = v_neg − v_pos − d   ∂v_pos = −u   ∂v_neg = u   ∂d = u_neg − u   ∂u_neg = d
    for i in 0..u.len() {
        let (ui, vpi, vni, di, uni) = (u[i], v_pos[i], v_neg[i], d[i], u_neg[i]);
        let mut gu = vni - vpi - di;
        if same_word {
            gu += di;
        }
        u[i] = ui - lr * gu;
        if !same_context {
            v_pos[i] = vpi + lr * ui;
            v_neg[i] = vni - lr * ui;
        }
        d[i] = di - lr * (uni - ui);
        if !same_word {
            u_neg[i] = uni - lr * di;
        }
    }
    normalize(u);
    normalize(d);
    s.store((Table::Center, center), u);
    s.store((Table::Doc, doc), d);
    if !same_context {
        normalize(v_pos);
        normalize(v_neg);
        s.store((Table::Context, context), v_pos);
        s.store((Table::Context, neg_context), v_neg);
    }
    if !same_word {
        normalize(u_neg);
        s.store((Table::Center, neg_word), u_neg);
    }
    arg
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub hinge_terms: u64,
    pub active_terms: u64,
    /// Mean hinge loss over all sampled terms.
    pub mean_loss: f64,
    /// Mean hinge loss over the terms that were active.
    pub mean_active_loss: f64,
    pub name_loss: f64,
    pub separation_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

#[derive(Default, Clone, Copy)]
struct LossAcc {
    terms: u64,
    active: u64,
    sum: f64,
}

impl LossAcc {
    fn add(&mut self, loss: f64) {
        self.terms += 1;
        if loss > 0.0 {
            self.active += 1;
            self.sum += loss;
        }
    }

    fn merge(&mut self, o: LossAcc) {
        self.terms += o.terms;
        self.active += o.active;
        self.sum += o.sum;
    }
}

struct Schedule {
    lr: f64,
    floor: f64,
    total_steps: f64,
}

impl Schedule {
    #[inline]
    fn at(&self, step: f64) -> f64 {
        let progress = (step / self.total_steps).min(1.0);
        self.lr - (self.lr - self.floor) * progress
    }
}

/// Number of (center, context) pairs in a document of `n` tokens.
fn pair_count(n: usize, window: usize) -> u64 {
    (0..n).map(|j| (j.saturating_add(window).min(n - 1) - j.saturating_sub(window)) as u64).sum()
}

struct DocPass<'a> {
    corpus: &'a Corpus,
    sampler: &'a NegativeSampler,
    cfg: &'a EmbedTrainConfig,
    schedule: &'a Schedule,
}

impl DocPass<'_> {
    /// Runs all hinge steps of one document; `step` counts globally scaled progress.
    fn run<S: Store, R: Rng>(&self, s: &mut S, buf: &mut Scratch, doc: usize, rng: &mut R, step: &mut f64, stride: f64, acc: &mut LossAcc) {
        let tokens = &self.corpus.docs[doc].tokens;
        let n = tokens.len();
        let w = self.cfg.window;
        for j in 0..n {
            let lo = j.saturating_sub(w);
            let hi = j.saturating_add(w).min(n - 1);
            for k in (lo..=hi).filter(|&k| k != j) {
                for _ in 0..self.cfg.negatives {
                    let neg_context = self.sampler.sample(rng);
                    let neg_word = self.sampler.sample(rng);
                    let lr = self.schedule.at(*step);
                    let loss = hinge_step(s, buf, doc, tokens[j], tokens[k], neg_context, neg_word, self.cfg.margin, lr);
                    acc.add(loss);
                    *step += stride;
                }
            }
        }
    }
}

/// Name attraction for every category, then separation for every unordered
/// category pair. Returns the two loss sums before the update.
fn category_pass(space: &mut EmbeddingSpace, scenario: &Scenario, cfg: &EmbedTrainConfig, lr: f64) -> (f64, f64) {
    let p = space.dim();
    let mut u = vec![0.0; p];
    let mut c = vec![0.0; p];
    let mut name_loss = 0.0;
    for (k, &name) in scenario.tokens.iter().enumerate() {
        let name = name as usize;
        u.copy_from_slice(space.center.row(name));
        c.copy_from_slice(space.cats.row(k));
        let cos = dot(&u, &c);
        let step = lr * cfg.kappa;
        if cos < cfg.margin {
            name_loss += -cfg.kappa * cos;
            // ∂u = −κc
            let row = space.center.row_mut(name);
            for (x, y) in row.iter_mut().zip(&c) {
                *x += step * y;
            }
            normalize(row);
        }
        // ∂c = −κu, applied whether or not the name term is active
        let row = space.cats.row_mut(k);
        for (x, y) in row.iter_mut().zip(&u) {
            *x += step * y;
        }
        normalize(row);
    }
    let mut sep_loss = 0.0;
    let k = scenario.k();
    for i in 0..k {
        for j in (i + 1)..k {
            u.copy_from_slice(space.cats.row(i));
            c.copy_from_slice(space.cats.row(j));
            let excess = dot(&u, &c) - cfg.margin;
            if excess > 0.0 {
                sep_loss += excess;
                // ∂c_i = c_j, ∂c_j = c_i
                let ri = space.cats.row_mut(i);
                for (x, y) in ri.iter_mut().zip(&c) {
                    *x -= lr * y;
                }
                normalize(ri);
                let rj = space.cats.row_mut(j);
                for (x, y) in rj.iter_mut().zip(&u) {
                    *x -= lr * y;
                }
                normalize(rj);
            }
        }
    }
    (name_loss, sep_loss)
}

/// Trains a fresh space initialized from the configured seed.
pub fn train(corpus: &Corpus, scenario: &Scenario, cfg: &EmbedTrainConfig) -> Result<(EmbeddingSpace, TrainReport)> {
    let space = init_space(corpus, scenario, cfg)?;
    train_from(space, corpus, scenario, cfg)
}

/// Trains starting from `space`. The sampling sequence depends only on the
/// seed and the corpus, never on vector values.
pub fn train_from(
    mut space: EmbeddingSpace,
    corpus: &Corpus,
    scenario: &Scenario,
    cfg: &EmbedTrainConfig,
) -> Result<(EmbeddingSpace, TrainReport)> {
    cfg.validate()?;
    if space.center.rows() != corpus.vocab.len() || space.docs.rows() != corpus.len() || space.k() != scenario.k() {
        return Err(Error::InvalidConfig("embedding space does not match corpus/scenario".into()));
    }
    if space.dim() != cfg.dim {
        return Err(Error::InvalidConfig("embedding space dimension does not match config".into()));
    }
    let sampler = NegativeSampler::new(&corpus.vocab);
    let mut order: Vec<usize> = corpus.trainable().collect();
    let per_epoch: u64 =
        order.iter().map(|&d| pair_count(corpus.docs[d].tokens.len(), cfg.window)).sum::<u64>() * cfg.negatives as u64;
    let schedule = Schedule {
        lr: cfg.lr,
        floor: cfg.lr_floor,
        total_steps: (per_epoch * cfg.epochs as u64).max(1) as f64,
    };
    let pass = DocPass { corpus, sampler: &sampler, cfg, schedule: &schedule };
    let mut rng = stream(cfg.seed, Stream::EmbedTrain);
    let mut report = TrainReport::default();
    let p = cfg.dim;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let base = (epoch as u64 * per_epoch) as f64;
        let mut acc = LossAcc::default();
        if cfg.workers == 1 {
            let mut buf = Scratch::new(p);
            let mut step = base;
            for &doc in &order {
                pass.run(&mut space, &mut buf, doc, &mut rng, &mut step, 1.0, &mut acc);
            }
        } else {
            let shared = SharedSpace::from_space(&space);
            let chunk = order.len().div_ceil(cfg.workers).max(1);
            let stride = cfg.workers as f64;
            let parts: Vec<LossAcc> = std::thread::scope(|scope| {
                let handles: Vec<_> = order
                    .chunks(chunk)
                    .enumerate()
                    .map(|(w, docs)| {
                        let shared = &shared;
                        let pass = &pass;
                        scope.spawn(move || {
                            let mut view = shared;
                            let mut rng = worker_stream(cfg.seed, epoch, w);
                            let mut buf = Scratch::new(p);
                            let mut acc = LossAcc::default();
                            let mut step = base;
                            for &doc in docs {
                                pass.run(&mut view, &mut buf, doc, &mut rng, &mut step, stride, &mut acc);
                            }
                            acc
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("embedding worker panicked")).collect()
            });
            shared.write_back(&mut space);
            for a in parts {
                acc.merge(a);
            }
        }
        let lr = schedule.at(((epoch + 1) as u64 * per_epoch) as f64);
        let (name_loss, separation_loss) = category_pass(&mut space, scenario, cfg, lr);
        let stats = EpochStats {
            epoch: epoch + 1,
            hinge_terms: acc.terms,
            active_terms: acc.active,
            mean_loss: if acc.terms > 0 { acc.sum / acc.terms as f64 } else { 0.0 },
            mean_active_loss: if acc.active > 0 { acc.sum / acc.active as f64 } else { 0.0 },
            name_loss,
            separation_loss,
            lr,
        };
        debug!(
            "embed epoch {}: mean hinge {:.5} (active {:.3}), name {:.4}, sep {:.4}",
            stats.epoch,
            stats.mean_loss,
            acc.active as f64 / acc.terms.max(1) as f64,
            name_loss,
            separation_loss
        );
        report.epochs.push(stats);
    }

    if cfg.workers > 1 {
        for m in [&mut space.center, &mut space.context, &mut space.docs, &mut space.cats] {
            for i in 0..m.rows() {
                normalize(m.row_mut(i));
            }
        }
    }
    if !space.is_finite() {
        return Err(Error::TrainingDiverged("non-finite embedding vector".into()));
    }
    Ok((space, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_counts() {
        assert_eq!(pair_count(1, 5), 0);
        assert_eq!(pair_count(2, 5), 2);
        // n=4, w=1: 1+2+2+1
        assert_eq!(pair_count(4, 1), 6);
    }

    #[test]
    fn hinge_step_keeps_unit_norm_and_reduces_loss() {
        let mut rng = stream(3, Stream::EmbedInit);
        let p = 6;
        let mut space = EmbeddingSpace {
            center: Matrix::random_unit(4, p, &mut rng),
            context: Matrix::random_unit(4, p, &mut rng),
            docs: Matrix::random_unit(1, p, &mut rng),
            cats: Matrix::random_unit(2, p, &mut rng),
            kappa: 10.0,
        };
        let mut buf = Scratch::new(p);
        let before = hinge_step(&mut space.clone(), &mut buf, 0, 0, 1, 2, 3, 1.5, 0.0);
        assert!(before > 0.0);
        for _ in 0..50 {
            hinge_step(&mut space, &mut buf, 0, 0, 1, 2, 3, 1.5, 0.05);
        }
        let after = hinge_step(&mut space.clone(), &mut buf, 0, 0, 1, 2, 3, 1.5, 0.0);
        assert!(after < before);
        assert!(space.max_norm_error() < 1e-12);
    }

    #[test]
    fn hinge_step_with_coinciding_negatives() {
        let mut rng = stream(4, Stream::EmbedInit);
        let p = 5;
        let mut space = EmbeddingSpace {
            center: Matrix::random_unit(3, p, &mut rng),
            context: Matrix::random_unit(3, p, &mut rng),
            docs: Matrix::random_unit(1, p, &mut rng),
            cats: Matrix::random_unit(2, p, &mut rng),
            kappa: 1.0,
        };
        let ctx_before = space.context.clone();
        let mut buf = Scratch::new(p);
        // negative context == positive context, negative word == center: loss is exactly m
        let loss = hinge_step(&mut space, &mut buf, 0, 1, 2, 2, 1, 0.25, 0.1);
        assert!((loss - 0.25).abs() < 1e-12);
        assert_eq!(space.context, ctx_before);
        assert!(space.max_norm_error() < 1e-12);
    }

    fn small_corpus() -> (Corpus, Scenario) {
        use crate::corpus::{build_corpus, resolve_category_names};
        let cfg = crate::synth::GenConfig {
            n_docs: 60,
            block_size: 30,
            background_size: 40,
            mean_len: 25.0,
            min_len: 10,
            name_rank: 3,
            seed: 11,
            ..crate::synth::default_config()
        };
        let (raw, scen) = crate::synth::generate(&cfg).unwrap();
        let corpus = build_corpus(&raw, 2).unwrap();
        let scenario = resolve_category_names(&corpus, &scen.targets).unwrap();
        (corpus, scenario)
    }

    fn small_config(workers: usize) -> EmbedTrainConfig {
        EmbedTrainConfig { dim: 8, epochs: 2, seed: 21, workers, ..Default::default() }
    }

    /// Orthogonal matrix from Gram-Schmidt on random rows.
    fn random_rotation(p: usize, seed: u64) -> Matrix {
        let mut rng = stream(seed, Stream::EmbedInit);
        let mut q = Matrix::random_unit(p, p, &mut rng);
        for i in 0..p {
            for j in 0..i {
                let prev = q.row(j).to_vec();
                let proj = dot(q.row(i), &prev);
                for (x, y) in q.row_mut(i).iter_mut().zip(&prev) {
                    *x -= proj * y;
                }
            }
            normalize(q.row_mut(i));
        }
        q
    }

    fn max_abs_diff(a: &EmbeddingSpace, b: &EmbeddingSpace) -> f64 {
        [(&a.center, &b.center), (&a.context, &b.context), (&a.docs, &b.docs), (&a.cats, &b.cats)]
            .iter()
            .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn single_worker_training_is_deterministic_and_unit_norm() {
        let (c, s) = small_corpus();
        let (a, ra) = train(&c, &s, &small_config(1)).unwrap();
        let (b, rb) = train(&c, &s, &small_config(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(a.max_norm_error() < 1e-6);
        assert_eq!(ra.epochs.len(), 2);
        assert!(ra.epochs.iter().all(|e| e.hinge_terms > 0));
    }

    #[test]
    fn training_commutes_with_rotation() {
        let (c, s) = small_corpus();
        let cfg = small_config(1);
        let init = init_space(&c, &s, &cfg).unwrap();
        let q = random_rotation(cfg.dim, 8);
        let (trained, _) = train_from(init.clone(), &c, &s, &cfg).unwrap();
        let (trained_rot, _) = train_from(init.rotated(&q), &c, &s, &cfg).unwrap();
        assert!(max_abs_diff(&trained.rotated(&q), &trained_rot) < 1e-8);
    }

    #[test]
    fn multi_worker_training_stays_finite_on_the_sphere() {
        let (c, s) = small_corpus();
        let (space, report) = train(&c, &s, &small_config(3)).unwrap();
        assert!(space.is_finite());
        assert!(space.max_norm_error() < 1e-6);
        let single = train(&c, &s, &small_config(1)).unwrap().1;
        assert_eq!(report.epochs[0].hinge_terms, single.epochs[0].hinge_terms);
    }

    #[test]
    fn mismatched_space_is_rejected() {
        let (c, s) = small_corpus();
        let init = init_space(&c, &s, &small_config(1)).unwrap();
        let cfg = EmbedTrainConfig { dim: 9, ..small_config(1) };
        assert!(matches!(train_from(init, &c, &s, &cfg), Err(Error::InvalidConfig(_))));
    }
}
