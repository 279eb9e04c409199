use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oocd::classifier::ConfidenceMode;
use oocd::pipeline::{aggregate_dir, dump_vectors, run_pipeline, run_stage, Baseline, PipelineConfig, Stage};
use oocd::pseudo::RelevanceKind;
use oocd::synth::{self, GenConfig};

#[derive(Parser)]
#[command(name = "oocd", version, about = "Out-of-category document detection from category names")]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize the corpus, build the vocabulary and resolve category names.
    Ingest(Inputs),
    /// Generate a labeled synthetic corpus and scenario.
    Synth {
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the joint spherical embedding.
    Embed,
    /// Compute pseudo-labels and the confident set.
    Pseudo,
    /// Pretrain the classifier, then self-train it.
    Train,
    /// Rank every document by confidence.
    Score,
    /// Evaluate the ranking against gold labels.
    Eval,
    /// Run every stage, skipping those already up to date.
    Pipeline(Inputs),
    /// Write words.vec, docs.vec and cats.vec for external tools.
    DumpVectors {
        #[arg(long)]
        out: PathBuf,
    },
    /// Average the metrics of `report_*.json` files per method.
    Aggregate {
        dir: PathBuf,
        /// Write the table as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
}

#[derive(Args)]
struct Inputs {
    /// JSON-lines corpus: {"id", "text", "label"?} per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Scenario JSON: {"targets": [...]}.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct Flags {
    /// TOML config; flags override it. For `synth`, a generator config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[arg(long, global = true, help_heading = "Embedding")]
    dim: Option<usize>,
    #[arg(long, global = true, help_heading = "Embedding")]
    window: Option<usize>,
    #[arg(long, global = true, help_heading = "Embedding")]
    negatives: Option<usize>,
    #[arg(long, global = true, help_heading = "Embedding")]
    margin: Option<f64>,
    #[arg(long, global = true, help_heading = "Embedding")]
    kappa: Option<f64>,
    #[arg(long, global = true, help_heading = "Embedding")]
    lr: Option<f64>,
    #[arg(long, global = true, help_heading = "Embedding")]
    epochs: Option<usize>,

    #[arg(long, global = true, value_enum, help_heading = "Pseudo-labels")]
    relevance: Option<Relevance>,
    #[arg(long, global = true, help_heading = "Pseudo-labels")]
    k: Option<usize>,
    #[arg(long, global = true, help_heading = "Pseudo-labels")]
    j: Option<usize>,
    #[arg(long, global = true, help_heading = "Pseudo-labels")]
    temperature: Option<f64>,
    #[arg(long, global = true, help_heading = "Pseudo-labels")]
    keep_ratio: Option<f64>,
    #[arg(long, global = true, help_heading = "Pseudo-labels")]
    tau: Option<f64>,

    /// Filter widths, comma separated.
    #[arg(long, global = true, value_delimiter = ',', help_heading = "Classifier")]
    filters: Option<Vec<usize>>,
    #[arg(long, global = true, help_heading = "Classifier")]
    maps: Option<usize>,
    #[arg(long, global = true, help_heading = "Classifier")]
    maxlen: Option<usize>,
    /// Keep probability of dropout on pooled features.
    #[arg(long, global = true, help_heading = "Classifier")]
    dropout: Option<f64>,
    #[arg(long, global = true, help_heading = "Classifier")]
    clf_lr: Option<f64>,
    #[arg(long, global = true, help_heading = "Classifier")]
    clf_epochs: Option<usize>,
    #[arg(long, global = true, help_heading = "Classifier")]
    refresh_every: Option<usize>,
    #[arg(long, global = true, help_heading = "Classifier")]
    delta: Option<f64>,

    #[arg(long, global = true, help_heading = "Ablations")]
    no_self_train: bool,
    #[arg(long, global = true, help_heading = "Ablations")]
    no_filter: bool,
    #[arg(long, global = true, help_heading = "Ablations")]
    temperature_off: bool,
    #[arg(long, global = true, help_heading = "Ablations")]
    emb_only: bool,

    #[arg(long, global = true, value_enum, help_heading = "Detection")]
    confidence: Option<Confidence>,
    #[arg(long, global = true, value_enum, help_heading = "Detection")]
    baseline: Option<BaselineArg>,
    #[arg(long, global = true, help_heading = "Detection")]
    lof_k: Option<usize>,
    #[arg(long, global = true, help_heading = "Detection")]
    report_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Relevance {
    Direct,
    Proximity,
}

#[derive(Clone, Copy, ValueEnum)]
enum Confidence {
    Msp,
    Entropy,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Ancs,
    Lof,
    Smclass,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl Flags {
    fn resolve(&self, inputs: Option<&Inputs>) -> oocd::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_toml_file(p)?,
            None => PipelineConfig::default(),
        };
        set(&mut cfg.paths.workdir, self.workdir.clone());
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.workers, self.workers);
        if let Some(i) = inputs {
            cfg.paths.corpus = i.corpus.clone().or(cfg.paths.corpus);
            cfg.paths.scenario = i.scenario.clone().or(cfg.paths.scenario);
        }
        let e = &mut cfg.embed;
        set(&mut e.dim, self.dim);
        set(&mut e.window, self.window);
        set(&mut e.negatives, self.negatives);
        set(&mut e.margin, self.margin);
        set(&mut e.kappa, self.kappa);
        set(&mut e.lr, self.lr);
        set(&mut e.epochs, self.epochs);
        let p = &mut cfg.pseudo;
        set(
            &mut p.relevance,
            self.relevance.map(|r| match r {
                Relevance::Direct => RelevanceKind::Direct,
                Relevance::Proximity => RelevanceKind::Proximity,
            }),
        );
        set(&mut p.k, self.k);
        set(&mut p.j, self.j);
        set(&mut p.temperature, self.temperature);
        set(&mut p.keep_ratio, self.keep_ratio);
        if self.tau.is_some() {
            p.tau = self.tau;
        }
        let c = &mut cfg.classifier;
        set(&mut c.widths, self.filters.clone());
        set(&mut c.maps, self.maps);
        set(&mut c.max_len, self.maxlen);
        set(&mut c.keep_prob, self.dropout);
        set(&mut c.lr, self.clf_lr);
        set(&mut c.epochs, self.clf_epochs);
        set(&mut c.refresh_every, self.refresh_every);
        set(&mut c.delta, self.delta);
        let a = &mut cfg.ablation;
        a.no_self_train |= self.no_self_train;
        a.no_filter |= self.no_filter;
        a.temperature_off |= self.temperature_off;
        a.emb_only |= self.emb_only;
        let d = &mut cfg.detect;
        set(
            &mut d.confidence,
            self.confidence.map(|c| match c {
                Confidence::Msp => ConfidenceMode::Msp,
                Confidence::Entropy => ConfidenceMode::Entropy,
            }),
        );
        if let Some(b) = self.baseline {
            d.baseline = Some(match b {
                BaselineArg::Ancs => Baseline::Ancs,
                BaselineArg::Lof => Baseline::Lof,
                BaselineArg::Smclass => Baseline::Smclass,
            });
        }
        set(&mut d.lof_k, self.lof_k);
        if self.report_dir.is_some() {
            d.report_dir = self.report_dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn synth_config(flags: &Flags) -> oocd::Result<GenConfig> {
    let mut cfg = match &flags.config {
        Some(p) => GenConfig::from_toml_file(p)?,
        None => synth::default_config(),
    };
    set(&mut cfg.seed, flags.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> oocd::Result<()> {
    let flags = &cli.flags;
    match &cli.command {
        Command::Synth { preset: _, out } => {
            let (docs, scenario) = synth::generate(&synth_config(flags)?)?;
            let (c, s) = synth::write_dataset(out, &docs, &scenario)?;
            println!("wrote {} documents to {} and {}", docs.len(), c.display(), s.display());
        }
        Command::Ingest(inputs) => run_stage(&flags.resolve(Some(inputs))?, Stage::Ingest)?,
        Command::Embed => run_stage(&flags.resolve(None)?, Stage::Embed)?,
        Command::Pseudo => run_stage(&flags.resolve(None)?, Stage::Pseudo)?,
        Command::Train => {
            let cfg = flags.resolve(None)?;
            run_stage(&cfg, Stage::Pretrain)?;
            run_stage(&cfg, Stage::SelfTrain)?;
        }
        Command::Score => run_stage(&flags.resolve(None)?, Stage::Score)?,
        Command::Eval => {
            let cfg = flags.resolve(None)?;
            run_stage(&cfg, Stage::Eval)?;
            print!("{}", std::fs::read_to_string(cfg.paths.workdir.join(oocd::pipeline::REPORT_JSON))?);
        }
        Command::Pipeline(inputs) => {
            let report = run_pipeline(&flags.resolve(Some(inputs))?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::DumpVectors { out } => {
            let cfg = flags.resolve(None)?;
            dump_vectors(&cfg.paths.workdir, out)?;
        }
        Command::Aggregate { dir, out } => {
            let rows = aggregate_dir(dir)?;
            match out {
                Some(p) => oocd::io::write_json(p, &rows)?,
                None => println!("{}", serde_json::to_string_pretty(&rows)?),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
