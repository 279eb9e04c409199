use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierConfig, ConfidenceMode};
use crate::corpus::DEFAULT_MIN_FREQ;
use crate::detect::{Method, DEFAULT_LOF_K};
use crate::embed::EmbedTrainConfig;
use crate::error::{Error, Result};
use crate::pseudo::{FilterMode, RelevanceKind};

/// Everything a run needs. Loaded from TOML, then overridden by flags. The
/// top-level `seed` and `workers` win over the same keys in sub-sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: usize,
    pub paths: Paths,
    pub corpus: CorpusConfig,
    pub embed: EmbedTrainConfig,
    pub pseudo: PseudoConfig,
    pub classifier: ClassifierConfig,
    pub detect: DetectConfig,
    pub ablation: Ablation,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            workers: 1,
            paths: Paths::default(),
            corpus: CorpusConfig::default(),
            embed: EmbedTrainConfig::default(),
            pseudo: PseudoConfig::default(),
            classifier: ClassifierConfig::default(),
            detect: DetectConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub workdir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { corpus: None, scenario: None, workdir: PathBuf::from("oocd-work") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub min_freq: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { min_freq: DEFAULT_MIN_FREQ }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoConfig {
    pub relevance: RelevanceKind,
    /// Neighbor documents for proximity relevance.
    pub k: usize,
    /// Neighbor words per neighbor document.
    pub j: usize,
    pub temperature: f64,
    pub keep_ratio: f64,
    /// Absolute confidence threshold; replaces `keep_ratio` when set.
    pub tau: Option<f64>,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        PseudoConfig { relevance: RelevanceKind::Direct, k: 30, j: 30, temperature: 0.1, keep_ratio: 0.5, tau: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Ancs,
    Lof,
    Smclass,
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ancs" => Ok(Baseline::Ancs),
            "lof" => Ok(Baseline::Lof),
            "smclass" => Ok(Baseline::Smclass),
            other => Err(Error::InvalidConfig(format!("unknown baseline `{other}` (ancs|lof|smclass)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub confidence: ConfidenceMode,
    pub baseline: Option<Baseline>,
    pub lof_k: usize,
    /// Extra directory receiving `report_<method>_seed<seed>.json`.
    pub report_dir: Option<PathBuf>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig { confidence: ConfidenceMode::Msp, baseline: None, lof_k: DEFAULT_LOF_K, report_dir: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Train the classifier on every document instead of the confident set.
    pub no_filter: bool,
    /// Pseudo-labels at T = 1.
    pub temperature_off: bool,
    pub no_self_train: bool,
    /// Score with the embedding confidence and skip the classifier.
    pub emb_only: bool,
}

impl PipelineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.embed_config().validate()?;
        self.classifier_config().validate()?;
        let p = &self.pseudo;
        if p.k < 1 || p.j < 1 {
            return Err(Error::InvalidConfig("pseudo: k and j must be at least 1".into()));
        }
        if !(p.temperature > 0.0 && p.temperature.is_finite()) {
            return Err(Error::InvalidConfig("pseudo: temperature must be positive".into()));
        }
        if !(p.keep_ratio > 0.0 && p.keep_ratio <= 1.0) {
            return Err(Error::InvalidConfig("pseudo: keep ratio must lie in (0, 1]".into()));
        }
        if p.tau.is_some_and(|t| !(0.0..1.0).contains(&t)) {
            return Err(Error::InvalidConfig("pseudo: tau must lie in [0, 1)".into()));
        }
        if self.corpus.min_freq < 1 {
            return Err(Error::InvalidConfig("corpus: min_freq must be at least 1".into()));
        }
        if self.detect.lof_k < 1 {
            return Err(Error::InvalidConfig("detect: lof_k must be at least 1".into()));
        }
        if self.ablation.emb_only && self.detect.baseline.is_some() {
            return Err(Error::InvalidConfig("--emb-only and --baseline are mutually exclusive".into()));
        }
        Ok(())
    }

    pub fn embed_config(&self) -> EmbedTrainConfig {
        EmbedTrainConfig { seed: self.seed, workers: self.workers, ..self.embed.clone() }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig { seed: self.seed, ..self.classifier.clone() }
    }

    pub fn temperature(&self) -> f64 {
        if self.ablation.temperature_off {
            1.0
        } else {
            self.pseudo.temperature
        }
    }

    pub fn filter_mode(&self) -> FilterMode {
        if self.ablation.no_filter {
            FilterMode::KeepRatio(1.0)
        } else if let Some(tau) = self.pseudo.tau {
            FilterMode::Threshold(tau)
        } else {
            FilterMode::KeepRatio(self.pseudo.keep_ratio)
        }
    }

    /// Method tag of the final ranking.
    pub fn method(&self) -> Method {
        match (self.detect.baseline, self.ablation.emb_only, self.pseudo.relevance) {
            (Some(Baseline::Ancs), ..) => Method::Ancs,
            (Some(Baseline::Lof), ..) => Method::Lof,
            (Some(Baseline::Smclass), ..) => Method::SmClass,
            (None, true, RelevanceKind::Direct) => Method::VmfD,
            (None, true, RelevanceKind::Proximity) => Method::VmfW,
            (None, false, RelevanceKind::Direct) => Method::OocdD,
            (None, false, RelevanceKind::Proximity) => Method::OocdW,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_sections_override_defaults() {
        let cfg = PipelineConfig::from_toml_str(
            r#"
            seed = 7
            [paths]
            workdir = "w"
            [embed]
            dim = 20
            epochs = 2
            [pseudo]
            relevance = "proximity"
            keep_ratio = 0.3
            [classifier]
            widths = [2, 3]
            [detect]
            confidence = "entropy"
            [ablation]
            no_self_train = true
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.embed_config().seed, 7);
        assert_eq!(cfg.classifier_config().seed, 7);
        assert_eq!(cfg.embed.dim, 20);
        assert_eq!(cfg.embed.window, 5);
        assert_eq!(cfg.pseudo.relevance, RelevanceKind::Proximity);
        assert_eq!(cfg.filter_mode(), FilterMode::KeepRatio(0.3));
        assert_eq!(cfg.classifier.widths, vec![2, 3]);
        assert_eq!(cfg.detect.confidence, ConfidenceMode::Entropy);
        assert!(cfg.ablation.no_self_train);
        assert_eq!(cfg.method(), Method::OocdW);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let e = PipelineConfig::from_toml_str("[embed]\nbogus = 1\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let cfg = PipelineConfig::from_toml_str("[pseudo]\ntemperature = 0.0\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn ablation_switches() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(cfg.temperature(), 0.1);
        assert_eq!(cfg.method(), Method::OocdD);
        cfg.ablation.temperature_off = true;
        cfg.ablation.no_filter = true;
        cfg.ablation.emb_only = true;
        assert_eq!(cfg.temperature(), 1.0);
        assert_eq!(cfg.filter_mode(), FilterMode::KeepRatio(1.0));
        assert_eq!(cfg.method(), Method::VmfD);
        cfg.pseudo.tau = Some(0.9);
        cfg.ablation.no_filter = false;
        assert_eq!(cfg.filter_mode(), FilterMode::Threshold(0.9));
        cfg.detect.baseline = Some(Baseline::Lof);
        assert!(cfg.validate().is_err());
    }
}
