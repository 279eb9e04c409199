//! Confidence rankings, evaluation against gold labels, and baseline detectors.

mod baselines;
pub mod metrics;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::io::{csv_field, split_csv};

pub use baselines::{baseline_ancs, baseline_lof, baseline_smclass, smclass_labels, DEFAULT_LOF_K};
pub use metrics::{ascending_order, aupr, auroc, f1_at_o, F1AtO, GroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    OocdD,
    OocdW,
    VmfD,
    VmfW,
    Ancs,
    Lof,
    #[serde(rename = "smclass")]
    SmClass,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::OocdD => "oocd_d",
            Method::OocdW => "oocd_w",
            Method::VmfD => "vmf_d",
            Method::VmfW => "vmf_w",
            Method::Ancs => "ancs",
            Method::Lof => "lof",
            Method::SmClass => "smclass",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::OocdD, Method::OocdW, Method::VmfD, Method::VmfW, Method::Ancs, Method::Lof, Method::SmClass]
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// One confidence per document; higher means more in-category.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCorpus {
    pub method: Method,
    pub confidence: Vec<f64>,
    /// Documents scored by fallback (no tokens).
    pub flagged: Vec<bool>,
}

impl ScoredCorpus {
    pub fn new(method: Method, confidence: Vec<f64>) -> Self {
        let flagged = vec![false; confidence.len()];
        ScoredCorpus { method, confidence, flagged }
    }

    pub fn len(&self) -> usize {
        self.confidence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confidence.is_empty()
    }

    /// 1-based rank per document; rank 1 is the least confident, ties by id.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.len()];
        for (r, i) in ascending_order(&self.confidence).into_iter().enumerate() {
            ranks[i] = r + 1;
        }
        ranks
    }

    /// Writes `doc_id,confidence,rank[,is_out,gold_label]`; the last two
    /// columns appear when every document has a gold label.
    pub fn write_csv(&self, path: &Path, corpus: &Corpus, targets: &[String]) -> Result<()> {
        let truth = GroundTruth::from_labels(corpus.gold_labels(), targets).ok();
        let ranks = self.ranks();
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "doc_id,confidence,rank")?;
        if truth.is_some() {
            write!(w, ",is_out,gold_label")?;
        }
        writeln!(w)?;
        for (i, doc) in corpus.docs.iter().enumerate() {
            write!(w, "{},{},{}", csv_field(&doc.id), self.confidence[i], ranks[i])?;
            if let Some(t) = &truth {
                let gold = corpus.gold_labels()[i].as_deref().unwrap_or_default();
                write!(w, ",{},{}", u8::from(t.is_out[i]), csv_field(gold))?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads confidences back in corpus order.
    pub fn read_csv(path: &Path, corpus: &Corpus, method: Method) -> Result<Self> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header = lines.next().ok_or_else(|| Error::format(path, "empty file"))??;
        let cols = split_csv(&header);
        if cols.len() < 3 || cols[0] != "doc_id" || cols[1] != "confidence" {
            return Err(Error::format(path, "header must start with doc_id,confidence,rank"));
        }
        let mut confidence = Vec::with_capacity(corpus.len());
        for (i, line) in lines.enumerate() {
            let line = line?;
            let fields = split_csv(&line);
            let doc = corpus.docs.get(i).ok_or_else(|| Error::format(path, "more rows than documents"))?;
            if fields.len() != cols.len() || fields[0] != doc.id {
                return Err(Error::format(path, format!("row {} does not match document `{}`", i + 2, doc.id)));
            }
            let c: f64 = fields[1].parse().map_err(|_| Error::format(path, format!("bad confidence on row {}", i + 2)))?;
            confidence.push(c);
        }
        if confidence.len() != corpus.len() {
            return Err(Error::format(path, format!("{} rows for {} documents", confidence.len(), corpus.len())));
        }
        Ok(ScoredCorpus::new(method, confidence))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub auroc: f64,
    pub aupr: f64,
    pub f1_at_o: f64,
    pub gamma: f64,
    pub o: usize,
    pub n: usize,
    pub p_out: f64,
}

pub fn evaluate(scored: &ScoredCorpus, truth: &GroundTruth) -> Result<EvalReport> {
    if let Some(i) = scored.confidence.iter().position(|c| !c.is_finite()) {
        return Err(Error::UndefinedMetric(format!("document #{i} has non-finite confidence")));
    }
    let f1 = f1_at_o(&scored.confidence, truth)?;
    Ok(EvalReport {
        method: scored.method,
        auroc: auroc(&scored.confidence, truth)?,
        aupr: aupr(&scored.confidence, truth)?,
        f1_at_o: f1.f1,
        gamma: f1.gamma,
        o: f1.o,
        n: truth.len(),
        p_out: truth.p_out(),
    })
}
