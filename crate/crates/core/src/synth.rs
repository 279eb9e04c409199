//! Seeded synthetic corpora with known in/out-of-category structure.
//!
//! Each topic owns a disjoint block of tokens with Zipf-distributed mass; all
//! topics share a Zipf background vocabulary. Documents draw tokens i.i.d. from
//! `(1 − bg)·topic + bg·background`. Target topics carry a category-name token
//! whose mass is boosted before normalization; out-of-category topics never
//! contain a name token.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::{RawDocument, ScenarioFile};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

const TARGET_NAMES: [&str; 8] = ["sports", "politics", "science", "business", "arts", "health", "travel", "food"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub targets: usize,
    pub out_topics: usize,
    pub n_docs: usize,
    pub p_out: f64,
    pub mean_len: f64,
    pub min_len: usize,
    pub block_size: usize,
    pub background_size: usize,
    pub background_weight: f64,
    pub zipf_exponent: f64,
    pub name_boost: f64,
    /// 1-based Zipf rank of the name token inside its topic block.
    pub name_rank: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        default_config()
    }
}

pub fn default_config() -> GenConfig {
    GenConfig {
        targets: 4,
        out_topics: 2,
        n_docs: 2000,
        p_out: 0.2,
        mean_len: 80.0,
        min_len: 20,
        block_size: 300,
        background_size: 1000,
        background_weight: 0.3,
        zipf_exponent: 1.1,
        name_boost: 5.0,
        name_rank: 10,
        seed: 0,
    }
}

impl GenConfig {
    /// Reads a TOML generator config; missing keys keep their defaults.
    pub fn from_toml_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synth: {m}")));
        if self.targets < 2 {
            return bad("need at least 2 target topics");
        }
        if !(0.0..1.0).contains(&self.p_out) {
            return bad("p_out must lie in [0, 1)");
        }
        if self.n_docs < 10 {
            return bad("n_docs must be at least 10");
        }
        if !(0.0..1.0).contains(&self.background_weight) {
            return bad("background_weight must lie in [0, 1)");
        }
        if self.background_weight > 0.0 && self.background_size == 0 {
            return bad("background_size must be positive when background_weight > 0");
        }
        if self.n_out_docs() > 0 && self.out_topics == 0 {
            return bad("out-of-category documents requested but out_topics = 0");
        }
        if self.name_rank < 1 || self.name_rank > self.block_size {
            return bad("name_rank must lie in 1..=block_size");
        }
        if self.min_len < 1 || self.mean_len < self.min_len as f64 {
            return bad("need 1 <= min_len <= mean_len");
        }
        if !(self.zipf_exponent > 0.0 && self.name_boost > 0.0) {
            return bad("zipf_exponent and name_boost must be positive");
        }
        Ok(())
    }

    pub fn n_out_docs(&self) -> usize {
        (self.p_out * self.n_docs as f64).round() as usize
    }

    /// Upper bound on distinct surface tokens the generator can emit.
    pub fn vocabulary_bound(&self) -> usize {
        (self.targets + self.out_topics) * self.block_size + self.background_size
    }

    pub fn target_names(&self) -> Vec<String> {
        (0..self.targets)
            .map(|k| TARGET_NAMES.get(k).map_or_else(|| format!("category{k}"), |s| s.to_string()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TopicRole {
    Target { name: String },
    OutOfCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub id: usize,
    pub role: TopicRole,
    /// Global token index of the first block token; the block is contiguous.
    pub block_start: usize,
    pub block_size: usize,
    /// Global token index of the category-name token (targets only).
    pub name_token: Option<usize>,
    pub name_boost: f64,
}

impl TopicSpec {
    pub fn label(&self) -> String {
        match &self.role {
            TopicRole::Target { name } => name.clone(),
            TopicRole::OutOfCategory => format!("other{}", self.id),
        }
    }
}

/// Generator state: topic layout, surface forms and per-topic samplers.
pub struct Generator {
    config: GenConfig,
    topics: Vec<TopicSpec>,
    surfaces: Vec<String>,
    distributions: Vec<Vec<f64>>,
    samplers: Vec<WeightedAliasIndex<f64>>,
}

fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-s)).collect()
}

impl Generator {
    pub fn new(config: GenConfig) -> Result<Self> {
        config.validate()?;
        let names = config.target_names();
        let n_topics = config.targets + config.out_topics;
        let bg_start = n_topics * config.block_size;
        let vocab = config.vocabulary_bound();

        let mut topics = Vec::with_capacity(n_topics);
        let mut surfaces = vec![String::new(); vocab];
        for t in 0..n_topics {
            let block_start = t * config.block_size;
            let (role, name_token) = if t < config.targets {
                (TopicRole::Target { name: names[t].clone() }, Some(block_start + config.name_rank - 1))
            } else {
                (TopicRole::OutOfCategory, None)
            };
            for i in 0..config.block_size {
                surfaces[block_start + i] = format!("t{t}w{i}");
            }
            if let Some(nt) = name_token {
                surfaces[nt] = names[t].clone();
            }
            topics.push(TopicSpec { id: t, role, block_start, block_size: config.block_size, name_token, name_boost: config.name_boost });
        }
        for i in 0..config.background_size {
            surfaces[bg_start + i] = format!("bg{i}");
        }

        let bg = config.background_weight;
        let mut bg_w = zipf_weights(config.background_size, config.zipf_exponent);
        let bg_z: f64 = bg_w.iter().sum();
        bg_w.iter_mut().for_each(|w| *w /= bg_z);

        let mut distributions = Vec::with_capacity(n_topics);
        let mut samplers = Vec::with_capacity(n_topics);
        for topic in &topics {
            let mut w = zipf_weights(config.block_size, config.zipf_exponent);
            if let Some(nt) = topic.name_token {
                w[nt - topic.block_start] *= topic.name_boost;
            }
            let z: f64 = w.iter().sum();
            let mut probs = vec![0.0; vocab];
            for (i, wi) in w.iter().enumerate() {
                probs[topic.block_start + i] = (1.0 - bg) * wi / z;
            }
            for (i, wi) in bg_w.iter().enumerate() {
                probs[bg_start + i] += bg * wi;
            }
            samplers.push(WeightedAliasIndex::new(probs.clone()).map_err(|e| Error::InvalidConfig(format!("synth: {e}")))?);
            distributions.push(probs);
        }
        Ok(Generator { config, topics, surfaces, distributions, samplers })
    }

    pub fn topics(&self) -> &[TopicSpec] {
        &self.topics
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    /// Token distribution of topic `t` over all global token indices.
    pub fn distribution(&self, t: usize) -> &[f64] {
        &self.distributions[t]
    }

    pub fn sample_token<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> usize {
        self.samplers[t].sample(rng)
    }

    pub fn scenario(&self) -> ScenarioFile {
        ScenarioFile { targets: self.config.target_names() }
    }

    /// Topic assignment per document position (before shuffling): out topics
    /// round-robin over the first `round(p_out·N)` slots, targets balanced.
    fn assignments(&self) -> Vec<usize> {
        let c = &self.config;
        let n_out = c.n_out_docs();
        let mut a: Vec<usize> = (0..n_out).map(|i| c.targets + i % c.out_topics.max(1)).collect();
        a.extend((0..c.n_docs - n_out).map(|i| i % c.targets));
        a
    }

    pub fn generate(&self) -> Vec<RawDocument> {
        let c = &self.config;
        let mut rng = stream(c.seed, Stream::Synth);
        let mut topics = self.assignments();
        topics.shuffle(&mut rng);
        let extra = c.mean_len - c.min_len as f64;
        let poisson = (extra > 0.0).then(|| Poisson::new(extra).expect("positive rate"));
        topics
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let len = c.min_len + poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
                let words: Vec<&str> =
                    (0..len).map(|_| self.surfaces[self.sample_token(t, &mut rng)].as_str()).collect();
                RawDocument { id: format!("doc{i:05}"), text: words.join(" "), label: Some(self.topics[t].label()) }
            })
            .collect()
    }
}

/// Generates a labeled corpus and its scenario.
pub fn generate(config: &GenConfig) -> Result<(Vec<RawDocument>, ScenarioFile)> {
    let g = Generator::new(config.clone())?;
    Ok((g.generate(), g.scenario()))
}

/// Writes `corpus.jsonl` and `scenario.json` into `dir` and returns their paths.
pub fn write_dataset(
    dir: &std::path::Path,
    docs: &[RawDocument],
    scenario: &ScenarioFile,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let corpus = dir.join("corpus.jsonl");
    let scen = dir.join("scenario.json");
    crate::corpus::write_jsonl(&corpus, docs)?;
    scenario.write(&scen)?;
    Ok((corpus, scen))
}
