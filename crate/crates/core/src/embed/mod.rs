//! Joint spherical embedding of words, documents and categories.
//!
//! Every entity lives on the unit sphere. Training minimizes a max-margin
//! objective over (document, center word, context word) triples, pulls each
//! category-name word toward its category direction, and pushes category
//! directions apart.

pub mod loss;
pub mod sampler;
mod train;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Scenario};
use crate::error::{Error, Result};
use crate::io::{read_container, take_tensor, write_container, Tensor};
use crate::linalg::{norm, Matrix};
use crate::rng::{stream, Stream};

pub use sampler::NegativeSampler;
pub use train::{train, train_from, EpochStats, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedTrainConfig {
    pub dim: usize,
    /// Context window half-width.
    pub window: usize,
    pub negatives: usize,
    pub margin: f64,
    pub lr: f64,
    pub lr_floor: f64,
    pub epochs: usize,
    pub kappa: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        EmbedTrainConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            margin: 0.25,
            lr: 0.025,
            lr_floor: 1e-4,
            epochs: 10,
            kappa: 10.0,
            seed: 0,
            workers: 1,
        }
    }
}

impl EmbedTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("embed: {msg}")));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.window < 1 {
            return bad("window must be at least 1");
        }
        if self.negatives < 1 {
            return bad("negatives must be at least 1");
        }
        if !(self.margin > 0.0 && self.margin < 2.0) {
            return bad("margin must lie in (0, 2)");
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad("kappa must be finite and non-negative");
        }
        if !(self.lr > 0.0 && self.lr_floor >= 0.0 && self.lr_floor <= self.lr) {
            return bad("learning rate must be positive with 0 <= floor <= initial");
        }
        if self.workers < 1 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }
}

/// Unit-norm vectors for every entity plus the shared concentration κ.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    pub center: Matrix,
    pub context: Matrix,
    pub docs: Matrix,
    pub cats: Matrix,
    pub kappa: f64,
}

const SPACE_MAGIC: &[u8; 8] = b"OOCDSPC1";

#[derive(Serialize, Deserialize)]
struct SpaceMeta {
    version: u32,
    dim: usize,
    kappa: f64,
}

impl EmbeddingSpace {
    pub fn dim(&self) -> usize {
        self.center.cols()
    }

    pub fn k(&self) -> usize {
        self.cats.rows()
    }

    /// Largest deviation of any stored vector's norm from 1.
    pub fn max_norm_error(&self) -> f64 {
        [&self.center, &self.context, &self.docs, &self.cats]
            .iter()
            .flat_map(|m| m.iter_rows())
            .map(|r| (norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        [&self.center, &self.context, &self.docs, &self.cats]
            .iter()
            .all(|m| m.as_slice().iter().all(|x| x.is_finite()))
    }

    /// Same space with `q` applied to every vector.
    pub fn rotated(&self, q: &Matrix) -> EmbeddingSpace {
        EmbeddingSpace {
            center: self.center.rotate(q),
            context: self.context.rotate(q),
            docs: self.docs.rotate(q),
            cats: self.cats.rotate(q),
            kappa: self.kappa,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let p = self.dim();
        let t = |name: &str, m: &Matrix| Tensor::new(name, &[m.rows(), p], m.as_slice().to_vec());
        write_container(
            path,
            SPACE_MAGIC,
            &SpaceMeta { version: 1, dim: p, kappa: self.kappa },
            &[t("center", &self.center), t("context", &self.context), t("docs", &self.docs), t("cats", &self.cats)],
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, mut tensors): (SpaceMeta, _) = read_container(path, SPACE_MAGIC)?;
        let mut take = |name: &str| -> Result<Matrix> {
            let rows = tensors
                .iter()
                .find(|t| t.name == name)
                .map(|t| t.shape[0])
                .ok_or_else(|| Error::format(path, format!("missing tensor `{name}`")))?;
            let data = take_tensor(&mut tensors, name, &[rows, meta.dim], path)?;
            Ok(Matrix::from_vec(rows, meta.dim, data))
        };
        Ok(EmbeddingSpace {
            center: take("center")?,
            context: take("context")?,
            docs: take("docs")?,
            cats: take("cats")?,
            kappa: meta.kappa,
        })
    }

    /// Writes `words.vec`, `docs.vec` and `cats.vec` into `dir`.
    pub fn write_vec_files(&self, dir: &Path, corpus: &Corpus, scenario: &Scenario) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let words: Vec<&str> = corpus.vocab.words().iter().map(String::as_str).collect();
        let docs: Vec<&str> = corpus.docs.iter().map(|d| d.id.as_str()).collect();
        let cats: Vec<&str> = scenario.names.iter().map(String::as_str).collect();
        write_vec_file(&dir.join("words.vec"), &words, &self.center)?;
        write_vec_file(&dir.join("docs.vec"), &docs, &self.docs)?;
        write_vec_file(&dir.join("cats.vec"), &cats, &self.cats)?;
        Ok(())
    }
}

/// Text vector format: `<count> <dim>` header, then `<key> <f1> ... <fP>` rows.
pub fn write_vec_file(path: &Path, keys: &[&str], m: &Matrix) -> Result<()> {
    assert_eq!(keys.len(), m.rows());
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{} {}", m.rows(), m.cols())?;
    for (key, row) in keys.iter().zip(m.iter_rows()) {
        let key: String = key.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect();
        w.write_all(key.as_bytes())?;
        for x in row {
            write!(w, " {x:.9e}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vec_file(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, "empty vector file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| Error::format(path, "bad header")))
        .collect::<Result<_>>()?;
    let [count, dim] = dims[..] else {
        return Err(Error::format(path, "header must be `<count> <dim>`"));
    };
    let mut keys = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for line in lines.take(count) {
        let mut parts = line.split(' ');
        keys.push(parts.next().unwrap_or_default().to_string());
        for p in parts {
            data.push(p.parse::<f64>().map_err(|_| Error::format(path, format!("bad number `{p}`")))?);
        }
    }
    if keys.len() != count || data.len() != count * dim {
        return Err(Error::format(path, "row count or width does not match header"));
    }
    Ok((keys, Matrix::from_vec(count, dim, data)))
}

/// Fresh space with every vector drawn uniformly from the sphere.
pub fn init_space(corpus: &Corpus, scenario: &Scenario, config: &EmbedTrainConfig) -> Result<EmbeddingSpace> {
    config.validate()?;
    let mut rng = stream(config.seed, Stream::EmbedInit);
    let m = corpus.vocab.len();
    let p = config.dim;
    let center = Matrix::random_unit(m, p, &mut rng);
    let context = Matrix::random_unit(m, p, &mut rng);
    let docs = Matrix::random_unit(corpus.len(), p, &mut rng);
    let cats = Matrix::random_unit(scenario.k(), p, &mut rng);
    Ok(EmbeddingSpace { center, context, docs, cats, kappa: config.kappa })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, resolve_category_names, RawDocument};

    fn fixture() -> (Corpus, Scenario) {
        let raw: Vec<RawDocument> = (0..4)
            .map(|i| RawDocument { id: format!("d{i}"), text: "hockey puck tennis racket".into(), label: None })
            .collect();
        let c = build_corpus(&raw, 1).unwrap();
        let s = resolve_category_names(&c, &["hockey".into(), "tennis".into()]).unwrap();
        (c, s)
    }

    #[test]
    fn init_is_unit_and_deterministic() {
        let (c, s) = fixture();
        let cfg = EmbedTrainConfig { dim: 8, seed: 5, ..Default::default() };
        let a = init_space(&c, &s, &cfg).unwrap();
        let b = init_space(&c, &s, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.max_norm_error() < 1e-6);
        assert_eq!(a.k(), 2);
        assert_eq!(a.kappa, 10.0);
    }

    #[test]
    fn init_mean_direction_vanishes_in_2d() {
        // Monte Carlo: the mean of 10k uniform circle draws is near the origin.
        let mut rng = stream(99, Stream::EmbedInit);
        let m = Matrix::random_unit(10_000, 2, &mut rng);
        let mut mean = [0.0; 2];
        for r in m.iter_rows() {
            mean[0] += r[0] / 10_000.0;
            mean[1] += r[1] / 10_000.0;
        }
        assert!(norm(&mean) < 0.05);
    }

    #[test]
    fn config_validation() {
        assert!(EmbedTrainConfig::default().validate().is_ok());
        for bad in [
            EmbedTrainConfig { dim: 1, ..Default::default() },
            EmbedTrainConfig { window: 0, ..Default::default() },
            EmbedTrainConfig { negatives: 0, ..Default::default() },
            EmbedTrainConfig { margin: 2.0, ..Default::default() },
            EmbedTrainConfig { margin: 0.0, ..Default::default() },
            EmbedTrainConfig { kappa: -1.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn save_load_and_vec_files() {
        let (c, s) = fixture();
        let cfg = EmbedTrainConfig { dim: 4, seed: 1, ..Default::default() };
        let space = init_space(&c, &s, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        space.save(&dir.path().join("space.bin")).unwrap();
        assert_eq!(EmbeddingSpace::load(&dir.path().join("space.bin")).unwrap(), space);

        space.write_vec_files(dir.path(), &c, &s).unwrap();
        let (keys, m) = read_vec_file(&dir.path().join("cats.vec")).unwrap();
        assert_eq!(keys, vec!["hockey", "tennis"]);
        for (a, b) in m.as_slice().iter().zip(space.cats.as_slice()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-300));
        }
        let first = std::fs::read_to_string(dir.path().join("words.vec")).unwrap();
        assert!(first.starts_with("4 4\n"));
    }
}
