//! Stage orchestration over a work directory.
//!
//! Every stage reads its inputs from the workdir, writes its outputs there,
//! and records input hashes, a config hash and the seed in `manifest.json`.
//! A stage refuses inputs that are missing or that no longer match what
//! their producer recorded.

mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::classifier::{conf_clf, pretrain, self_train, ClassifierParams, ConfidenceMode};
use crate::corpus::{build_corpus, read_jsonl, resolve_category_names, Corpus, Scenario, ScenarioFile};
use crate::detect::{baseline_ancs, baseline_lof, baseline_smclass, evaluate, EvalReport, GroundTruth, Method, ScoredCorpus};
use crate::embed::{train, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::io::{read_container, read_json, sha256_file, write_container, write_json};
use crate::linalg::Matrix;
use crate::pseudo::{
    build_neighbor_index, filter_confident, pseudo_labels, read_pseudo_csv, relevance_direct, relevance_proximity,
    write_pseudo_csv, RelevanceKind,
};

pub use config::{Ablation, Baseline, CorpusConfig, DetectConfig, Paths, PipelineConfig, PseudoConfig};
pub use manifest::{Manifest, StageRecord};

use manifest::{config_hash, outputs_intact, verified_hash};

pub const CORPUS_BIN: &str = "corpus.bin";
pub const SPACE_BIN: &str = "vectors/space.bin";
pub const WORDS_VEC: &str = "vectors/words.vec";
pub const DOCS_VEC: &str = "vectors/docs.vec";
pub const CATS_VEC: &str = "vectors/cats.vec";
pub const PSEUDO_CSV: &str = "pseudo.csv";
pub const MODEL_PRETRAIN_BIN: &str = "model_pretrain.bin";
pub const MODEL_BIN: &str = "model.bin";
pub const SCORES_CSV: &str = "scores.csv";
pub const REPORT_JSON: &str = "report.json";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Embed,
    Pseudo,
    Pretrain,
    SelfTrain,
    Score,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Ingest, Stage::Embed, Stage::Pseudo, Stage::Pretrain, Stage::SelfTrain, Stage::Score, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Embed => "embed",
            Stage::Pseudo => "pseudo",
            Stage::Pretrain => "pretrain",
            Stage::SelfTrain => "selftrain",
            Stage::Score => "score",
            Stage::Eval => "eval",
        }
    }

    /// Stages `run_pipeline` executes for this configuration, in order.
    pub fn plan(cfg: &PipelineConfig) -> Vec<Stage> {
        use Stage::*;
        match (cfg.detect.baseline, cfg.ablation.emb_only) {
            (Some(_), _) => vec![Ingest, Embed, Score, Eval],
            (None, true) => vec![Ingest, Embed, Pseudo, Score, Eval],
            (None, false) => Stage::ALL.to_vec(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage `{s}`")))
    }
}

const CORPUS_MAGIC: &[u8; 8] = b"OOCDCRP1";

#[derive(Serialize, Deserialize)]
struct CorpusMeta {
    version: u32,
    corpus: Corpus,
    scenario: Scenario,
}

pub fn save_corpus(path: &Path, corpus: &Corpus, scenario: &Scenario) -> Result<()> {
    let meta = CorpusMeta { version: 1, corpus: corpus.clone(), scenario: scenario.clone() };
    write_container(path, CORPUS_MAGIC, &meta, &[])
}

pub fn load_corpus(path: &Path) -> Result<(Corpus, Scenario)> {
    let (meta, _): (CorpusMeta, _) = read_container(path, CORPUS_MAGIC)?;
    let mut corpus = meta.corpus;
    corpus.finish_load();
    Ok((corpus, meta.scenario))
}

/// Inputs and outputs of one stage run; collected while the stage executes.
struct Run<'a> {
    cfg: &'a PipelineConfig,
    root: PathBuf,
    manifest: Manifest,
    inputs: BTreeMap<String, String>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a PipelineConfig) -> Result<Self> {
        let root = cfg.paths.workdir.clone();
        std::fs::create_dir_all(root.join("vectors"))?;
        let manifest = Manifest::load_or_default(&root.join(MANIFEST_JSON))?;
        Ok(Run { cfg, root, manifest, inputs: BTreeMap::new() })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Verifies a workdir artifact and records it as an input.
    fn input(&mut self, rel: &str, producer: Stage) -> Result<PathBuf> {
        let hash = verified_hash(&self.manifest, &self.root, rel, producer.name())?;
        self.inputs.insert(rel.to_string(), hash);
        Ok(self.path(rel))
    }

    fn external_input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    fn corpus(&mut self) -> Result<(Corpus, Scenario)> {
        let p = self.input(CORPUS_BIN, Stage::Ingest)?;
        load_corpus(&p)
    }

    fn space(&mut self) -> Result<EmbeddingSpace> {
        let p = self.input(SPACE_BIN, Stage::Embed)?;
        EmbeddingSpace::load(&p)
    }

    fn commit(mut self, stage: Stage, outputs: &[&str], info: Value) -> Result<()> {
        let mut out = BTreeMap::new();
        for rel in outputs {
            out.insert(rel.to_string(), sha256_file(&self.path(rel))?);
        }
        let record = StageRecord {
            inputs: std::mem::take(&mut self.inputs),
            config_hash: stage_config_hash(self.cfg, stage)?,
            seed: self.cfg.seed,
            outputs: out,
            info,
        };
        self.manifest.config = serde_json::to_value(self.cfg)?;
        self.manifest.stages.insert(stage.name().to_string(), record);
        self.manifest.save(&self.root.join(MANIFEST_JSON))
    }
}

/// Hash of exactly the settings that can change a stage's outputs.
fn stage_config_hash(cfg: &PipelineConfig, stage: Stage) -> Result<String> {
    let v = match stage {
        Stage::Ingest => json!({ "min_freq": cfg.corpus.min_freq }),
        Stage::Embed => json!({ "embed": cfg.embed_config() }),
        Stage::Pseudo => json!({
            "relevance": cfg.pseudo.relevance,
            "k": cfg.pseudo.k,
            "j": cfg.pseudo.j,
            "temperature": cfg.temperature(),
            "filter": format!("{:?}", cfg.filter_mode()),
        }),
        Stage::Pretrain => json!({ "classifier": cfg.classifier_config() }),
        Stage::SelfTrain => json!({
            "classifier": cfg.classifier_config(),
            "no_self_train": cfg.ablation.no_self_train,
        }),
        Stage::Score => json!({
            "method": cfg.method(),
            "confidence": cfg.detect.confidence,
            "lof_k": cfg.detect.lof_k,
            "classifier": cfg.classifier_config(),
        }),
        Stage::Eval => json!({ "report_dir": cfg.detect.report_dir }),
    };
    config_hash(&v)
}

/// Whether `stage` would reproduce what the manifest already records.
fn up_to_date(cfg: &PipelineConfig, stage: Stage) -> Result<bool> {
    let root = &cfg.paths.workdir;
    let manifest = Manifest::load_or_default(&root.join(MANIFEST_JSON))?;
    let Some(rec) = manifest.stage(stage.name()) else {
        return Ok(false);
    };
    if rec.seed != cfg.seed || rec.config_hash != stage_config_hash(cfg, stage)? || !outputs_intact(rec, root) {
        return Ok(false);
    }
    for (rel, h) in &rec.inputs {
        let p = if stage == Stage::Ingest { PathBuf::from(rel) } else { root.join(rel) };
        if !p.exists() || sha256_file(&p)? != *h {
            return Ok(false);
        }
    }
    if stage == Stage::Ingest {
        let expected: Vec<String> =
            [&cfg.paths.corpus, &cfg.paths.scenario].into_iter().flatten().map(|p| p.display().to_string()).collect();
        if !expected.iter().all(|p| rec.inputs.contains_key(p)) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Runs one stage unconditionally. Errors carry the stage name.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<()> {
    cfg.validate()?;
    log::info!("stage {stage}");
    let result = match stage {
        Stage::Ingest => ingest(cfg),
        Stage::Embed => embed(cfg),
        Stage::Pseudo => pseudo(cfg),
        Stage::Pretrain => pretrain_stage(cfg),
        Stage::SelfTrain => self_train_stage(cfg),
        Stage::Score => score(cfg),
        Stage::Eval => eval(cfg).map(|_| ()),
    };
    result.map_err(|e| e.in_stage(stage.name()))
}

/// Runs every stage of the plan, skipping those already up to date, and
/// returns the final report.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<EvalReport> {
    cfg.validate()?;
    for stage in Stage::plan(cfg) {
        if up_to_date(cfg, stage)? {
            log::info!("stage {stage} is up to date");
            continue;
        }
        run_stage(cfg, stage)?;
    }
    read_json(&cfg.paths.workdir.join(REPORT_JSON))
}

fn ingest(cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(cfg)?;
    let corpus_path = cfg.paths.corpus.as_ref().ok_or_else(|| Error::InvalidConfig("no corpus path given".into()))?;
    let scenario_path =
        cfg.paths.scenario.as_ref().ok_or_else(|| Error::InvalidConfig("no scenario path given".into()))?;
    run.external_input(corpus_path)?;
    run.external_input(scenario_path)?;
    let raw = read_jsonl(corpus_path)?;
    let names = ScenarioFile::read(scenario_path)?.targets;
    let corpus = build_corpus(&raw, cfg.corpus.min_freq)?;
    let scenario = resolve_category_names(&corpus, &names)?;
    let empty = corpus.docs.iter().filter(|d| d.is_empty()).count();
    if empty > 0 {
        log::warn!("{empty} documents have no in-vocabulary tokens");
    }
    save_corpus(&run.path(CORPUS_BIN), &corpus, &scenario)?;
    let info = json!({ "documents": corpus.len(), "vocabulary": corpus.vocab.len(), "empty_documents": empty });
    run.commit(Stage::Ingest, &[CORPUS_BIN], info)
}

fn embed(cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(cfg)?;
    let (corpus, scenario) = run.corpus()?;
    let (space, report) = train(&corpus, &scenario, &cfg.embed_config())?;
    space.save(&run.path(SPACE_BIN))?;
    space.write_vec_files(&run.path("vectors"), &corpus, &scenario)?;
    let info = json!({ "max_norm_error": space.max_norm_error(), "epochs": report.epochs });
    run.commit(Stage::Embed, &[SPACE_BIN, WORDS_VEC, DOCS_VEC, CATS_VEC], info)
}

fn pseudo(cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(cfg)?;
    let (corpus, _) = run.corpus()?;
    let space = run.space()?;
    let relevance = match cfg.pseudo.relevance {
        RelevanceKind::Direct => relevance_direct(&space),
        RelevanceKind::Proximity => {
            let index = build_neighbor_index(&space, cfg.pseudo.k, cfg.pseudo.j)?;
            relevance_proximity(&space, &index)
        }
    };
    let labels = pseudo_labels(&relevance, cfg.temperature())?;
    let eligible: Vec<bool> = corpus.docs.iter().map(|d| !d.is_empty()).collect();
    let kept = filter_confident(&labels, cfg.filter_mode(), Some(&eligible))?;
    write_pseudo_csv(&run.path(PSEUDO_CSV), &corpus, &labels, &kept)?;
    let info = json!({
        "temperature": labels.temperature,
        "mean_entropy": labels.mean_entropy(),
        "kept": kept.len(),
        "tau": kept.tau,
    });
    run.commit(Stage::Pseudo, &[PSEUDO_CSV], info)
}

/// Confident documents and their pseudo-label rows.
fn confident_docs<'c>(corpus: &'c Corpus, pseudo_path: &Path) -> Result<(Vec<&'c [u32]>, Matrix)> {
    let (labels, kept) = read_pseudo_csv(pseudo_path, corpus)?;
    let docs: Vec<&[u32]> = kept.members.iter().map(|&i| corpus.docs[i].tokens.as_slice()).collect();
    let mut targets = Matrix::zeros(docs.len(), labels.k());
    for (r, &i) in kept.members.iter().enumerate() {
        targets.row_mut(r).copy_from_slice(labels.labels.row(i));
    }
    Ok((docs, targets))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pretrain_stage(cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(cfg)?;
    let (corpus, scenario) = run.corpus()?;
    let space = run.space()?;
    let pseudo_path = run.input(PSEUDO_CSV, Stage::Pseudo)?;
    let (docs, targets) = confident_docs(&corpus, &pseudo_path)?;
    let ccfg = cfg.classifier_config();
    ccfg.validate()?;
    let mut params = ClassifierParams::init(ccfg.arch(scenario.k(), space.dim()), &space.center, ccfg.seed)?;
    let report = pretrain(&mut params, &docs, &targets, &ccfg)?;
    params.save(&run.path(MODEL_PRETRAIN_BIN))?;
    let (conf, _) = conf_clf(&params, &docs, ConfidenceMode::Msp)?;
    let info = json!({ "epoch_loss": report.epoch_loss, "mean_confidence": mean(&conf) });
    run.commit(Stage::Pretrain, &[MODEL_PRETRAIN_BIN], info)
}

fn self_train_stage(cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(cfg)?;
    let pre = run.input(MODEL_PRETRAIN_BIN, Stage::Pretrain)?;
    if cfg.ablation.no_self_train {
        std::fs::copy(&pre, run.path(MODEL_BIN))?;
        return run.commit(Stage::SelfTrain, &[MODEL_BIN], json!({ "skipped": true }));
    }
    let (corpus, _) = run.corpus()?;
    let pseudo_path = run.input(PSEUDO_CSV, Stage::Pseudo)?;
    let (docs, _) = confident_docs(&corpus, &pseudo_path)?;
    let mut params = ClassifierParams::load(&pre)?;
    let (before, _) = conf_clf(&params, &docs, ConfidenceMode::Msp)?;
    let report = self_train(&mut params, &docs, &cfg.classifier_config())?;
    let (after, _) = conf_clf(&params, &docs, ConfidenceMode::Msp)?;
    params.save(&run.path(MODEL_BIN))?;
    let info = json!({
        "skipped": false,
        "mean_confidence_before": mean(&before),
        "mean_confidence_after": mean(&after),
        "refreshes": report.refreshes,
        "converged": report.converged,
    });
    run.commit(Stage::SelfTrain, &[MODEL_BIN], info)
}

fn score(cfg: &PipelineConfig) -> Result<()> {
    let mut run = Run::new(cfg)?;
    let (corpus, scenario) = run.corpus()?;
    let method = cfg.method();
    let scored = match cfg.detect.baseline {
        Some(Baseline::Ancs) => baseline_ancs(&run.space()?)?,
        Some(Baseline::Lof) => baseline_lof(&run.space()?, cfg.detect.lof_k)?,
        Some(Baseline::Smclass) => {
            let space = run.space()?;
            baseline_smclass(&corpus, &scenario, &space.center, &cfg.classifier_config())?
        }
        None if cfg.ablation.emb_only => {
            let p = run.input(PSEUDO_CSV, Stage::Pseudo)?;
            let (labels, _) = read_pseudo_csv(&p, &corpus)?;
            ScoredCorpus::new(method, labels.conf_emb)
        }
        None => {
            let p = run.input(MODEL_BIN, Stage::SelfTrain)?;
            let params = ClassifierParams::load(&p)?;
            let docs: Vec<&[u32]> = corpus.docs.iter().map(|d| d.tokens.as_slice()).collect();
            let (confidence, flagged) = conf_clf(&params, &docs, cfg.detect.confidence)?;
            ScoredCorpus { method, confidence, flagged }
        }
    };
    let flagged: Vec<&str> =
        scored.flagged.iter().zip(&corpus.docs).filter(|(f, _)| **f).map(|(_, d)| d.id.as_str()).collect();
    if !flagged.is_empty() {
        log::warn!("{} empty documents scored at minimum confidence: {}", flagged.len(), flagged.join(", "));
    }
    scored.write_csv(&run.path(SCORES_CSV), &corpus, &scenario.names)?;
    let info = json!({ "method": method, "flagged": flagged });
    run.commit(Stage::Score, &[SCORES_CSV], info)
}

fn eval(cfg: &PipelineConfig) -> Result<EvalReport> {
    let mut run = Run::new(cfg)?;
    let scores = run.input(SCORES_CSV, Stage::Score)?;
    let (corpus, scenario) = run.corpus()?;
    let method: Method = run
        .manifest
        .stage(Stage::Score.name())
        .and_then(|r| r.info.get("method"))
        .and_then(|m| serde_json::from_value(m.clone()).ok())
        .unwrap_or_else(|| cfg.method());
    let scored = ScoredCorpus::read_csv(&scores, &corpus, method)?;
    let truth = GroundTruth::from_labels(corpus.gold_labels(), &scenario.names)?;
    let report = evaluate(&scored, &truth)?;
    write_json(&run.path(REPORT_JSON), &report)?;
    if let Some(dir) = &cfg.detect.report_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join(format!("report_{}_seed{}.json", method, cfg.seed)), &report)?;
    }
    run.commit(Stage::Eval, &[REPORT_JSON], json!({ "method": method }))?;
    Ok(report)
}

/// Writes the three `.vec` files of the workdir's embedding into `out`.
pub fn dump_vectors(workdir: &Path, out: &Path) -> Result<()> {
    let manifest = Manifest::load_or_default(&workdir.join(MANIFEST_JSON))?;
    verified_hash(&manifest, workdir, CORPUS_BIN, Stage::Ingest.name())?;
    verified_hash(&manifest, workdir, SPACE_BIN, Stage::Embed.name())?;
    let (corpus, scenario) = load_corpus(&workdir.join(CORPUS_BIN))?;
    let space = EmbeddingSpace::load(&workdir.join(SPACE_BIN))?;
    space.write_vec_files(out, &corpus, &scenario)
}

/// Mean of every metric over the reports of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub runs: usize,
    pub auroc: f64,
    pub aupr: f64,
    pub f1_at_o: f64,
}

pub fn aggregate(reports: &[EvalReport]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.method.tag()).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let m = |f: fn(&EvalReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
            AggregateRow {
                method: rs[0].method,
                runs: rs.len(),
                auroc: m(|r| r.auroc),
                aupr: m(|r| r.aupr),
                f1_at_o: m(|r| r.f1_at_o),
            }
        })
        .collect()
}

/// Aggregates every `report_*.json` in `dir`.
pub fn aggregate_dir(dir: &Path) -> Result<Vec<AggregateRow>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| {
        p.file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("report_") && n.ends_with(".json"))
    });
    paths.sort();
    if paths.is_empty() {
        return Err(Error::MissingArtifact(Stage::Eval.name().to_string()));
    }
    let reports = paths.iter().map(|p| read_json(p)).collect::<Result<Vec<EvalReport>>>()?;
    Ok(aggregate(&reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(method: Method, auroc: f64) -> EvalReport {
        EvalReport { method, auroc, aupr: auroc / 2.0, f1_at_o: 0.5, gamma: 0.1, o: 10, n: 100, p_out: 0.1 }
    }

    #[test]
    fn aggregate_is_the_mean_per_method() {
        let rows = aggregate(&[report(Method::OocdD, 0.9), report(Method::Lof, 0.5), report(Method::OocdD, 0.8)]);
        assert_eq!(rows.len(), 2);
        let o = rows.iter().find(|r| r.method == Method::OocdD).unwrap();
        assert_eq!(o.runs, 2);
        assert!((o.auroc - 0.85).abs() < 1e-15);
        assert!((o.aupr - 0.425).abs() < 1e-15);
    }

    #[test]
    fn stage_plans() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(Stage::plan(&cfg).len(), 7);
        cfg.ablation.emb_only = true;
        assert!(!Stage::plan(&cfg).contains(&Stage::Pretrain));
        cfg.ablation.emb_only = false;
        cfg.detect.baseline = Some(Baseline::Lof);
        assert_eq!(Stage::plan(&cfg), vec![Stage::Ingest, Stage::Embed, Stage::Score, Stage::Eval]);
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
    }

    #[test]
    fn pretrain_hash_ignores_self_train_switch() {
        let mut cfg = PipelineConfig::default();
        let a = stage_config_hash(&cfg, Stage::Pretrain).unwrap();
        let s = stage_config_hash(&cfg, Stage::SelfTrain).unwrap();
        cfg.ablation.no_self_train = true;
        assert_eq!(stage_config_hash(&cfg, Stage::Pretrain).unwrap(), a);
        assert_ne!(stage_config_hash(&cfg, Stage::SelfTrain).unwrap(), s);
    }

    #[test]
    fn missing_and_stale_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            paths: Paths { workdir: dir.path().to_path_buf(), ..Default::default() },
            ..Default::default()
        };
        let e = run_stage(&cfg, Stage::Eval).unwrap_err();
        assert!(matches!(&e, Error::Stage { source, .. } if matches!(**source, Error::MissingArtifact(ref s) if s == "score")));
        assert_eq!(e.exit_code(), 3);
        std::fs::write(dir.path().join(CORPUS_BIN), b"x").unwrap();
        let e = run_stage(&cfg, Stage::Embed).unwrap_err();
        assert!(matches!(&e, Error::Stage { source, .. } if matches!(**source, Error::StaleArtifact { .. })));
    }
}
