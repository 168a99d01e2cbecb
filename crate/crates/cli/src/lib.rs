//! The `fidelity` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use fidelity_core::corpus::{load_config, split_functions, ConfigError, PipelineConfig};
use fidelity_core::evaluation::{evaluate, render_table};
use fidelity_core::graph::analyze;
use fidelity_core::intensity::{derive_feature_weights, FeatureWeights, RetrievalMode};
use fidelity_core::labels::DistortionType;
use fidelity_core::llm::{Gateway, HttpProvider, MockProvider, MockScript, Provider};
use fidelity_core::pipeline::{render_report_table, Baseline, BatchMode, BatchReport, Pipeline, PipelineOptions, RUN_REPORT_FILE};
use fidelity_core::prompt::Templates;
use fidelity_core::pseudocode::Lexicon;
use fidelity_core::store::{load_database_path, Embedder, EmbeddingIndex, HashEmbedder, RemoteEmbedder};
use fidelity_core::EvalReportF64;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

const DEFAULT_CONFIG: &str = "config.ini";

#[derive(Debug, Parser)]
#[command(name = "fidelity", version, about = "Detect and correct distortions in decompiled pseudo-C")]
pub struct Cli {
    /// Configuration file; `./config.ini` is used when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// LLM backend: off (HTTP provider), oracle, or script:<path>.
    #[arg(long, global = true, default_value = "off")]
    pub mock: MockMode,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label every function in the input directory.
    Detect {
        #[command(flatten)]
        run: RunArgs,
        /// Also correct, writing results under `corrected/`.
        #[arg(long)]
        correct: bool,
        /// Write CFG and PDG graphs (Graphviz) for each function here.
        #[arg(long)]
        dump_dot: Option<PathBuf>,
    },
    /// Correct labeled functions (detection output).
    Correct {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare a labeled model output with ground truth.
    Evaluate {
        model: PathBuf,
        truth: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Summarize the distortion database.
    DbStats {
        /// Database file or directory; defaults to the configured knowledge base.
        #[arg(long)]
        db: Option<PathBuf>,
    },
    /// Render a run report as a table.
    Report {
        /// `run_report.json` or the output directory holding it.
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, value_parser = ["intensity", "random", "all"])]
    pub retrieval_mode: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(Baseline))]
    pub baseline: Option<Baseline>,
    #[arg(long)]
    pub chunk_threshold: Option<usize>,
    #[arg(long)]
    pub chunk_overlap: Option<usize>,
    #[arg(long)]
    pub retrieval_k: Option<usize>,
    /// Seed for random retrieval.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Require one output line per input line, code unchanged (default).
    #[arg(long, overrides_with = "lenient")]
    pub strict: bool,
    /// Align model output to input by content instead.
    #[arg(long, overrides_with = "strict")]
    pub lenient: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockMode {
    Off,
    Oracle,
    Script(PathBuf),
}

impl std::str::FromStr for MockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(MockMode::Off),
            "oracle" => Ok(MockMode::Oracle),
            _ => match s.strip_prefix("script:") {
                Some(p) if !p.is_empty() => Ok(MockMode::Script(PathBuf::from(p))),
                _ => Err(format!("expected off, oracle or script:<path>, got `{s}`")),
            },
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_PARTIAL,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Settings after layering flags over the config file over defaults.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: PipelineConfig,
    pub options: PipelineOptions,
}

/// Reads the config file (explicit, or `./config.ini` if present) and
/// applies flag overrides.
pub fn resolve(config_path: Option<&Path>, run: &RunArgs) -> Result<Resolved, CliError> {
    let mut config = match config_path {
        Some(p) => load_config(p)?,
        None if Path::new(DEFAULT_CONFIG).is_file() => load_config(DEFAULT_CONFIG)?,
        None => PipelineConfig::with_knowledge_base(""),
    };
    if let Some(v) = &run.input {
        config.input_dir = v.clone();
    }
    if let Some(v) = &run.output {
        config.output_dir = v.clone();
    }
    if let Some(v) = &run.db {
        config.knowledge_base = v.clone();
    }
    if let Some(v) = &run.model {
        config.model_id = v.clone();
    }
    if let Some(v) = run.temperature {
        config.temperature = v;
    }
    if let Some(v) = run.chunk_threshold {
        config.chunk_threshold = v;
    }
    if let Some(v) = run.chunk_overlap {
        config.chunk_overlap = v;
    }
    if let Some(v) = run.retrieval_k {
        config.retrieval_k = v;
    }
    config.validate()?;

    let mut options = PipelineOptions::from(&config);
    options.retrieval = match run.retrieval_mode.as_deref() {
        None | Some("intensity") => RetrievalMode::Intensity,
        Some("random") => RetrievalMode::Random {
            seed: run.seed.unwrap_or(0),
        },
        Some("all") => RetrievalMode::All,
        Some(other) => return Err(CliError::Usage(format!("unknown retrieval mode `{other}`"))),
    };
    if run.seed.is_some() && !matches!(options.retrieval, RetrievalMode::Random { .. }) {
        log::warn!("--seed only affects --retrieval-mode random");
    }
    options.baseline = run.baseline.unwrap_or_default();
    options.strict = !run.lenient;
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    options.jobs = run.jobs.unwrap_or_else(|| cpus.min(config.concurrency)).max(1);
    Ok(Resolved { config, options })
}

fn build_pipeline(resolved: &Resolved, mock: &MockMode, templates: Option<&Path>) -> Result<Pipeline<f64>, CliError> {
    let cfg = &resolved.config;
    let timeout = Duration::from_secs(cfg.timeout_secs);
    let (provider, embedder): (Arc<dyn Provider>, Arc<dyn Embedder<f64>>) = match mock {
        MockMode::Off => {
            if cfg.api_key_ref.resolve().is_none() {
                return Err(CliError::Usage(
                    "no API key: set api_key in config.ini or FIDELITY_API_KEY, or use --mock".into(),
                ));
            }
            (
                Arc::new(HttpProvider::new(cfg.api_base.clone(), cfg.api_key_ref.clone(), timeout)),
                Arc::new(RemoteEmbedder::new(
                    cfg.api_base.clone(),
                    cfg.embedding_model.clone(),
                    cfg.api_key_ref.clone(),
                    timeout,
                )),
            )
        }
        MockMode::Oracle => (Arc::new(MockProvider::oracle()), Arc::new(HashEmbedder::default())),
        MockMode::Script(p) => {
            let script = MockScript::load(p).map_err(CliError::Usage)?;
            (Arc::new(MockProvider::script(script)), Arc::new(HashEmbedder::default()))
        }
    };
    let index = if cfg.knowledge_base.as_os_str().is_empty() {
        log::warn!("no knowledge base configured; prompts get no retrieval context");
        None
    } else {
        let records = load_database_path(&cfg.knowledge_base).map_err(|e| CliError::Usage(e.to_string()))?;
        Some(EmbeddingIndex::build(records, embedder).map_err(runtime)?)
    };
    let mut gateway = Gateway::new(provider, cfg.concurrency);
    if !matches!(mock, MockMode::Off) {
        gateway = gateway.with_backoff(Duration::ZERO);
    }
    let lexicon = Lexicon::with_extra_types(cfg.extra_types.iter().map(String::as_str));
    let mut pipeline = Pipeline::new(resolved.options.clone(), Arc::new(gateway), index, lexicon);
    if let Some(dir) = templates {
        pipeline = pipeline.with_templates(Templates::load_dir(dir).map_err(|e| CliError::Usage(e.to_string()))?);
    }
    Ok(pipeline)
}

fn dump_dot(input: &Path, out: &Path, lexicon: &Lexicon) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(runtime)?;
    let mut entries: Vec<PathBuf> = fs::read_dir(input)
        .map_err(runtime)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    for path in entries {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let text = fs::read_to_string(&path).map_err(runtime)?;
        for (i, f) in split_functions(&text).iter().enumerate() {
            let Ok(function) = lexicon.parse_function(f) else {
                continue;
            };
            let a = analyze(&function);
            let base = out.join(format!("{stem}_{}", i + 1));
            fs::write(base.with_extension("cfg.dot"), a.cfg.to_dot(&function)).map_err(runtime)?;
            fs::write(base.with_extension("pdg.dot"), a.graph.to_dot(&function)).map_err(runtime)?;
        }
    }
    Ok(())
}

fn run_pipeline(cli: &Cli, run: &RunArgs, mode: BatchMode, dot: Option<&Path>) -> Result<i32, CliError> {
    let resolved = resolve(cli.config.as_deref(), run)?;
    let pipeline = build_pipeline(&resolved, &cli.mock, run.templates.as_deref())?;
    let (input, output) = (&resolved.config.input_dir, &resolved.config.output_dir);
    if !input.is_dir() {
        return Err(CliError::Usage(format!("input directory {} not found", input.display())));
    }
    if let Some(d) = dot {
        dump_dot(input, d, &pipeline.lexicon)?;
    }
    let report = pipeline.run_batch(input, output, mode).map_err(runtime)?;
    print!("{}", render_report_table(&report));
    println!("outputs in {}", output.display());
    Ok(if report.has_failures() { EXIT_PARTIAL } else { EXIT_OK })
}

fn db_stats(cli: &Cli, db: Option<&Path>) -> Result<i32, CliError> {
    let path = match db {
        Some(p) => p.to_path_buf(),
        None => {
            let resolved = resolve(cli.config.as_deref(), &RunArgs::default())?;
            if resolved.config.knowledge_base.as_os_str().is_empty() {
                return Err(CliError::Usage("no database given (--db or knowledge_base)".into()));
            }
            resolved.config.knowledge_base
        }
    };
    let records = load_database_path(&path).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut hist: BTreeMap<DistortionType, usize> = DistortionType::ALL.iter().map(|t| (*t, 0)).collect();
    for r in &records {
        *hist.entry(r.label).or_default() += 1;
    }
    println!("{} records", records.len());
    for (t, n) in &hist {
        println!("  {t}  {n:>4}  {}", t.title());
    }
    let weights: FeatureWeights<f64> =
        derive_feature_weights(records.iter().map(|r| r.code_line.as_str()), &Lexicon::default());
    println!("feature weights");
    for (kind, w) in weights.iter() {
        println!("  {:<22} {w:.4}", kind.name());
    }
    Ok(EXIT_OK)
}

fn evaluate_cmd(model: &Path, truth: &Path, json: bool) -> Result<i32, CliError> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())));
    let report: EvalReportF64 = evaluate(&read(model)?, &read(truth)?).map_err(runtime)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
    } else {
        print!("{}", render_table(&report));
    }
    Ok(EXIT_OK)
}

fn report_cmd(path: &Path) -> Result<i32, CliError> {
    let file = if path.is_dir() { path.join(RUN_REPORT_FILE) } else { path.to_path_buf() };
    let report = BatchReport::load(&file).map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
    print!("{}", render_report_table(&report));
    Ok(if report.has_failures() { EXIT_PARTIAL } else { EXIT_OK })
}

pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Detect { run, correct, dump_dot } => {
            let mode = if *correct { BatchMode::DetectAndCorrect } else { BatchMode::Detect };
            run_pipeline(cli, run, mode, dump_dot.as_deref())
        }
        Command::Correct { run } => run_pipeline(cli, run, BatchMode::Correct, None),
        Command::Evaluate { model, truth, json } => evaluate_cmd(model, truth, *json),
        Command::DbStats { db } => db_stats(cli, db.as_deref()),
        Command::Report { path } => report_cmd(path),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let mut b = env_logger::Builder::new();
    b.filter_level(level).parse_env("FIDELITY_LOG");
    if std::env::var_os("NO_COLOR").is_some() {
        b.write_style(env_logger::WriteStyle::Never);
    }
    let _ = b.try_init();
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            e.exit_code()
        }
    }
}
