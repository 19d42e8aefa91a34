use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use tradesig::anomaly::AnomalyMode;
use tradesig::config::{KChoice, RunConfig, CONFIG_ENV};
use tradesig::features::FeatureSet;
use tradesig::ingest::Flow;
use tradesig::pipeline::{run_pipeline, with_threads, Stage, Workspace};
use tradesig::synth::{
    generate_archetype_corpus, generate_driver_corpus, generate_signature_corpus, Driver,
};
use tradesig::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tradesig",
    version,
    about = "Inverse price-volume signature detection on annual trade data"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Run directory holding stage artifacts.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override config file values.
#[derive(Args, Default)]
struct Overrides {
    /// Trade CSV; repeatable. `-` reads stdin.
    #[arg(long, global = true)]
    input: Vec<String>,
    #[arg(long, global = true)]
    preset: Option<String>,
    /// `,` or `tab`.
    #[arg(long, global = true)]
    delimiter: Option<String>,
    #[arg(long, global = true)]
    flow: Option<String>,
    #[arg(long, global = true)]
    reporter: Option<String>,
    #[arg(long, global = true)]
    year_start: Option<i32>,
    #[arg(long, global = true)]
    year_end: Option<i32>,
    /// `full8` or `primary5`.
    #[arg(long, global = true)]
    features: Option<String>,
    /// Cluster count or `elbow`.
    #[arg(long, global = true)]
    k: Option<String>,
    /// `per-code` or `pooled`.
    #[arg(long, global = true)]
    anomaly_mode: Option<String>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    trees: Option<usize>,
    #[arg(long, global = true)]
    max_depth: Option<usize>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Evaluate on one stratified holdout of this fraction instead of k-fold.
    #[arg(long, global = true)]
    holdout: Option<f64>,
    #[arg(long, global = true)]
    horizon: Option<i32>,
    #[arg(long, global = true)]
    true_code: Option<String>,
    #[arg(long, global = true)]
    tariffs: Option<String>,
    #[arg(long, global = true)]
    basel: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and clean trade rows into annual series.
    Ingest,
    /// Per-code features and the normalized matrix.
    Features,
    /// K-means segmentation and archetype naming.
    Segment,
    /// Isolation-forest flags on yearly volumes.
    DetectAnomalies,
    /// Fit the random forest on segment labels.
    Train,
    /// Stratified cross-validation report.
    Evaluate,
    /// Exact Shapley attributions of the trained forest.
    Explain,
    /// Linear extrapolation to the horizon.
    Forecast,
    /// Ranked watchlist with charts.
    Watchlist,
    /// Write a synthetic corpus in ingest format.
    Synth(SynthArgs),
    /// Run every stage in order.
    Pipeline,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Archetypes,
    Signature,
    Price,
    Volume,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "archetypes")]
    kind: SynthKind,
    /// Codes per archetype or class.
    #[arg(long, default_value_t = 32)]
    archetypes: usize,
    /// Multiplicative noise sd for the signature corpus.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Ground-truth labels sidecar.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Corpus destination; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn apply(cfg: &mut RunConfig, seed: Option<u64>, o: &Overrides) -> Result<()> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if !o.input.is_empty() {
        cfg.input.paths = o.input.clone();
    }
    if let Some(v) = &o.preset {
        cfg.input.preset = v.clone();
    }
    if let Some(v) = &o.delimiter {
        cfg.input.delimiter = v.clone();
    }
    if let Some(v) = &o.flow {
        cfg.input.flow = match v.as_str() {
            "any" => None,
            s => Some(Flow::parse(s).ok_or_else(|| Error::Config(format!("unknown flow `{s}`")))?),
        };
    }
    if let Some(v) = &o.reporter {
        cfg.input.reporter = Some(v.clone());
    }
    if o.year_start.is_some() {
        cfg.input.year_start = o.year_start;
    }
    if o.year_end.is_some() {
        cfg.input.year_end = o.year_end;
    }
    if let Some(v) = &o.features {
        cfg.features.set = FeatureSet::parse(v)?;
    }
    if let Some(v) = &o.k {
        cfg.segment.k = KChoice::parse(v)?;
    }
    if let Some(v) = &o.anomaly_mode {
        cfg.anomaly.mode = AnomalyMode::parse(v)?;
    }
    if let Some(v) = o.threshold {
        cfg.anomaly.threshold = v;
    }
    if let Some(v) = o.trees {
        cfg.forest.n_trees = v;
    }
    if o.max_depth.is_some() {
        cfg.forest.max_depth = o.max_depth;
    }
    if let Some(v) = o.folds {
        cfg.forest.folds = v;
        cfg.forest.holdout = false;
    }
    if let Some(v) = o.holdout {
        cfg.forest.holdout = true;
        cfg.forest.holdout_fraction = v;
    }
    if let Some(v) = o.horizon {
        cfg.risk.horizon = v;
    }
    if let Some(v) = &o.true_code {
        cfg.risk.true_code = v.clone();
    }
    if let Some(v) = &o.tariffs {
        cfg.risk.tariff_file = Some(v.clone());
    }
    if let Some(v) = &o.basel {
        cfg.risk.basel_file = Some(v.clone());
    }
    cfg.validate()
}

fn synth(cfg: &RunConfig, a: &SynthArgs) -> Result<()> {
    let corpus = match a.kind {
        SynthKind::Archetypes => generate_archetype_corpus(a.archetypes, cfg.seed)?,
        SynthKind::Signature => generate_signature_corpus(cfg.seed, a.noise)?,
        SynthKind::Price => generate_driver_corpus(Driver::Price, a.archetypes, cfg.seed)?,
        SynthKind::Volume => generate_driver_corpus(Driver::Volume, a.archetypes, cfg.seed)?,
    };
    let body = corpus.to_ingest_csv();
    match &a.output {
        Some(p) => std::fs::write(p, body).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?,
        None => std::io::stdout()
            .lock()
            .write_all(body.as_bytes())
            .map_err(|e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            })?,
    }
    if let Some(p) = &a.labels {
        std::fs::write(p, corpus.labels_csv()).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply(&mut cfg, cli.seed, &cli.overrides)?;
    let stage = match &cli.command {
        Command::Synth(a) => return synth(&cfg, a),
        Command::Pipeline => None,
        Command::Ingest => Some(Stage::Ingest),
        Command::Features => Some(Stage::Features),
        Command::Segment => Some(Stage::Segment),
        Command::DetectAnomalies => Some(Stage::DetectAnomalies),
        Command::Train => Some(Stage::Train),
        Command::Evaluate => Some(Stage::Evaluate),
        Command::Explain => Some(Stage::Explain),
        Command::Forecast => Some(Stage::Forecast),
        Command::Watchlist => Some(Stage::Watchlist),
    };
    if matches!(stage, None | Some(Stage::Ingest)) && cfg.input.paths.is_empty() {
        cfg.input.paths = vec!["-".into()];
    }
    let ws = Workspace::new(&cli.out, cfg)?.with_threads(cli.threads);
    let files = with_threads(cli.threads, || match stage {
        Some(s) => ws.run(s),
        None => run_pipeline(&ws),
    })??;
    let mut out = std::io::stdout().lock();
    for f in &files {
        let _ = writeln!(out, "{}", f.display());
    }
    if stage == Some(Stage::Evaluate) {
        let text = std::fs::read_to_string(ws.path("cv_report.txt")).map_err(|e| Error::Io {
            path: ws.path("cv_report.txt"),
            source: e,
        })?;
        let _ = write!(out, "{text}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
