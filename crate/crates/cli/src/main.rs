use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vocabfree_core::classifier::ClassifierMode;
use vocabfree_core::runner::{self, DatasetManifest, Providers, RunConfig, RunOptions};
use vocabfree_core::{Error, Result, Stage};

/// Vocabulary-free fine-grained image classification.
#[derive(Parser, Debug)]
#[command(name = "vocabfree", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Discover, ground, and refine candidate class names
    Discover(Common),
    /// Build the classifier artifact for the configured mode
    Build {
        #[command(flatten)]
        common: Common,
        /// Directory holding the discovery output (defaults to --out-dir)
        #[arg(long)]
        vocabulary_dir: Option<PathBuf>,
    },
    /// Predict a class for every test image
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        classifier: PathBuf,
    },
    /// Score a predictions file against ground truth
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        /// Vocabulary artifact; enables the name-filtration audit
        #[arg(long)]
        vocabulary: Option<PathBuf>,
    },
    /// Discovery through evaluation in one go
    RunAll(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON run configuration; every field is optional
    #[arg(long)]
    config: Option<PathBuf>,
    /// vocabulary_free | zero_shot | few_shot
    #[arg(long)]
    mode: Option<ClassifierMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k_aug: Option<usize>,
    #[arg(long)]
    m_contexts: Option<usize>,
    #[arg(long)]
    retention_ratio: Option<f64>,
    /// Plain prompts instead of generated context sentences
    #[arg(long)]
    no_ccg: bool,
    /// Keep every candidate name
    #[arg(long)]
    no_cnr: bool,
    #[arg(long)]
    repeat_runs: Option<usize>,
    /// Class names for zero-shot mode, one per line
    #[arg(long)]
    names: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(k) = self.k_aug {
            cfg.k_aug = k;
        }
        if let Some(m) = self.m_contexts {
            cfg.m_contexts = m;
        }
        if let Some(r) = self.retention_ratio {
            cfg.retention_ratio = r;
        }
        if self.no_ccg {
            cfg.ccg_enabled = false;
        }
        if self.no_cnr {
            cfg.cnr_enabled = false;
        }
        if let Some(n) = self.repeat_runs {
            cfg.repeat_runs = n;
        }
        if let Some(p) = &self.names {
            cfg.class_names = Some(runner::read_names_file(p)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            out_dir: self.out_dir.clone(),
            timestamp: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()),
        }
    }
}

fn tag<T>(r: Result<T>, stage: Stage) -> Result<T> {
    vocabfree_core::error::StageExt::stage(r, stage)
}

fn load(common: &Common) -> Result<(RunConfig, DatasetManifest, RunOptions)> {
    let cfg = tag(common.config(), Stage::Config)?;
    let manifest = tag(DatasetManifest::load(&common.manifest), Stage::Manifest)?;
    Ok((cfg, manifest, common.options()))
}

fn providers(cfg: &RunConfig) -> Result<Providers> {
    tag(Providers::from_config(cfg, cfg.seed), Stage::Config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Discover(c) => {
            let (cfg, manifest, opts) = load(&c)?;
            let v = runner::cli_discover(&cfg, &manifest, &providers(&cfg)?, &opts)?;
            println!(
                "meta-category {}; {} candidates, {} retained -> {}",
                v.discovery.meta.name,
                v.scored.len(),
                v.k_effective,
                opts.out_dir.display()
            );
        }
        Command::Build { common, vocabulary_dir } => {
            let (cfg, manifest, opts) = load(&common)?;
            let dir = vocabulary_dir.unwrap_or_else(|| opts.out_dir.clone());
            let a = runner::cli_build(&cfg, &manifest, &providers(&cfg)?, &dir, &opts)?;
            println!("{} classes -> {}", a.classifier.classes.len(), opts.out_dir.display());
        }
        Command::Classify { common, classifier } => {
            let (cfg, manifest, opts) = load(&common)?;
            let records = runner::cli_classify(&cfg, &manifest, &classifier, &providers(&cfg)?, &opts)?;
            let failed = records
                .iter()
                .filter(|r| matches!(r, runner::artifacts::PredictionRecord::Failed { .. }))
                .count();
            println!("{} predictions, {failed} failed -> {}", records.len() - failed, opts.out_dir.display());
        }
        Command::Evaluate {
            common,
            predictions,
            vocabulary,
        } => {
            let (cfg, manifest, opts) = load(&common)?;
            let vocabulary = vocabulary.or_else(|| sibling_vocabulary(&predictions));
            let m = runner::cli_evaluate(&cfg, &manifest, &predictions, vocabulary.as_deref(), &providers(&cfg)?, &opts)?;
            println!("{}", summary(&m.report));
        }
        Command::RunAll(c) => {
            let (cfg, manifest, opts) = load(&c)?;
            let outcomes = runner::cli_run_all(&cfg, &manifest, &|seed| Providers::from_config(&cfg, seed), &opts)?;
            for o in &outcomes {
                match &o.metrics {
                    Some(m) => println!("seed {}: {}", o.seed, summary(m)),
                    None => println!("seed {}: {} predictions (no labels to score)", o.seed, o.predictions.len()),
                }
            }
        }
    }
    Ok(())
}

fn sibling_vocabulary(predictions: &Path) -> Option<PathBuf> {
    let p = predictions.parent()?.join(runner::artifacts::VOCABULARY_FILE);
    p.exists().then_some(p)
}

fn summary(m: &vocabfree_core::evaluation::MetricsReport) -> String {
    let mut s = format!("cACC {:.4}  sACC {:.4}  ({} images)", m.cacc, m.sacc, m.n_images);
    if let Some(f) = m.filtration {
        s.push_str(&format!("  TP {} FN {}", f.tp, f.fn_count));
    }
    s
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .without_time()
        .init();

    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e = match e {
                tagged @ Error::Stage { .. } => tagged,
                other => Error::Stage {
                    stage: Stage::Config,
                    source: Box::new(other),
                },
            };
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
