#![allow(dead_code)]

use std::path::{Path, PathBuf};

use oocd::pipeline::{Paths, PipelineConfig};
use oocd::synth::{self, GenConfig};

/// Writes a synthetic dataset under `dir` and returns a pipeline config
/// pointing at it with `dir/work` as workdir.
pub fn dataset(dir: &Path, gen: &GenConfig) -> PipelineConfig {
    let (docs, scenario) = synth::generate(gen).unwrap();
    let (corpus, scen) = synth::write_dataset(&dir.join("data"), &docs, &scenario).unwrap();
    PipelineConfig {
        seed: gen.seed,
        paths: Paths { corpus: Some(corpus), scenario: Some(scen), workdir: dir.join("work") },
        ..Default::default()
    }
}

/// A few hundred documents and small models; runs in seconds.
pub fn small(dir: &Path, seed: u64) -> PipelineConfig {
    let gen = GenConfig { n_docs: 300, block_size: 60, background_size: 150, mean_len: 40.0, seed, ..synth::default_config() };
    let mut cfg = dataset(dir, &gen);
    cfg.embed.dim = 16;
    cfg.embed.epochs = 3;
    cfg.classifier.widths = vec![2, 3];
    cfg.classifier.maps = 6;
    cfg.classifier.epochs = 3;
    cfg.classifier.refresh_every = 5;
    cfg.classifier.max_refreshes = 3;
    cfg
}

pub fn with_workdir(cfg: &PipelineConfig, workdir: PathBuf) -> PipelineConfig {
    let mut c = cfg.clone();
    c.paths.workdir = workdir;
    c
}

/// Copies every file of a workdir (one level of subdirectories).
pub fn copy_workdir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to.join("vectors")).unwrap();
    for entry in walk(from) {
        let rel = entry.strip_prefix(from).unwrap();
        std::fs::copy(&entry, to.join(rel)).unwrap();
    }
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
