//! Document ingestion: tokenization, vocabulary construction and category-name resolution.
//!
//! Gold labels are kept in a sidecar on [`Corpus`] and are only read by the
//! evaluation code in [`crate::detect`].

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_FREQ: u64 = 5;

/// Lowercases, splits on runs of non-alphanumeric characters and drops tokens
/// shorter than two characters or made only of digits.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| t.chars().count() >= 2 && !t.chars().all(|c| c.is_numeric()))
        .collect()
}

/// One line of the JSON-lines corpus input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

pub fn read_jsonl(path: &Path) -> Result<Vec<RawDocument>> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_jsonl(path: &Path, docs: &[RawDocument]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Scenario input file: `{"targets": ["name", ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub targets: Vec<String>,
}

impl ScenarioFile {
    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path)?;
        serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    total: u64,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.words == other.words && self.counts == other.counts && self.total == other.total
    }
}

impl Vocabulary {
    /// Ids are assigned by descending count, then lexicographic surface.
    pub fn from_counts(counts: HashMap<String, u64>, min_freq: u64) -> Self {
        let mut kept: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let total = kept.iter().map(|(_, c)| c).sum();
        let (words, counts) = kept.into_iter().unzip();
        let mut v = Vocabulary { words, counts, total, index: HashMap::new() };
        v.rebuild_index();
        v
    }

    fn rebuild_index(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Total number of kept token occurrences.
    pub fn total(&self) -> u64 {
        self.total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<u32>,
}

impl Document {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub docs: Vec<Document>,
    /// Evaluation-only sidecar, parallel to `docs`.
    gold: Vec<Option<String>>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn gold_labels(&self) -> &[Option<String>] {
        &self.gold
    }

    pub fn decode(&self, doc: usize) -> Vec<&str> {
        self.docs[doc].tokens.iter().map(|&t| self.vocab.word(t)).collect()
    }

    /// Indices of documents that carry at least one token.
    pub fn trainable(&self) -> impl Iterator<Item = usize> + '_ {
        self.docs.iter().enumerate().filter(|(_, d)| !d.is_empty()).map(|(i, _)| i)
    }

    pub(crate) fn finish_load(&mut self) {
        self.vocab.rebuild_index();
    }
}

pub fn build_corpus(raw: &[RawDocument], min_freq: u64) -> Result<Corpus> {
    if min_freq < 1 {
        return Err(Error::InvalidConfig("min_freq must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    for d in raw {
        if !seen.insert(d.id.as_str()) {
            return Err(Error::DuplicateDocumentId(d.id.clone()));
        }
    }
    let tokenized: Vec<Vec<String>> = raw.iter().map(|d| tokenize(&d.text)).collect();
    let mut counts: HashMap<String, u64> = HashMap::new();
    for toks in &tokenized {
        for t in toks {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    let vocab = Vocabulary::from_counts(counts, min_freq);
    let docs: Vec<Document> = raw
        .iter()
        .zip(&tokenized)
        .map(|(d, toks)| Document {
            id: d.id.clone(),
            tokens: toks.iter().filter_map(|t| vocab.id(t)).collect(),
        })
        .collect();
    if docs.iter().all(Document::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    let gold = raw.iter().map(|d| d.label.clone()).collect();
    Ok(Corpus { vocab, docs, gold })
}

/// Target categories and the vocabulary token standing for each of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub names: Vec<String>,
    pub tokens: Vec<u32>,
}

impl Scenario {
    pub fn k(&self) -> usize {
        self.names.len()
    }
}

pub fn resolve_category_names(corpus: &Corpus, names: &[String]) -> Result<Scenario> {
    if names.len() < 2 {
        return Err(Error::InvalidScenario(format!("need at least 2 target categories, got {}", names.len())));
    }
    let mut tokens = Vec::with_capacity(names.len());
    let mut by_token: HashMap<u32, &str> = HashMap::new();
    let mut seen_names = HashSet::new();
    for name in names {
        if !seen_names.insert(name.as_str()) {
            return Err(Error::InvalidScenario(format!("category name `{name}` listed twice")));
        }
        let toks = tokenize(name);
        let surface = match toks.as_slice() {
            [] => return Err(Error::NameNotInVocabulary(name.clone())),
            [one] => one,
            _ => return Err(Error::MultiTokenName(name.clone())),
        };
        let id = corpus.vocab.id(surface).ok_or_else(|| Error::NameNotInVocabulary(name.clone()))?;
        if let Some(prev) = by_token.insert(id, name) {
            return Err(Error::DuplicateCategoryToken(prev.to_string(), name.clone()));
        }
        tokens.push(id);
    }
    Ok(Scenario { names: names.to_vec(), tokens })
}
