//! entiq command line: build and query embedding indexes, run the
//! end-to-end ask flow against fixture or HTTP backends, produce
//! evaluation reports, and drive dataset curation.
//!
//! Exit codes: 0 success, 2 runtime/IO failures, 64 usage errors,
//! 65 data errors (malformed or inconsistent inputs). Failures print a
//! single machine-readable JSON line to stderr:
//! `{"error":{"kind":…,"message":…}}`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use entiq::answer::{AnswerError, AnswerGenerator, HttpGenerator, TemplateGenerator};
use entiq::dataset::{
    bucket_popularity, dataset_stats, fetch_pageviews, filter_stage, lint_qa, load_manifest_csv,
    load_manifest_jsonl, load_qa_jsonl, manifest_entity_ids, run_pipeline, sample_entities,
    write_manifest_csv, write_manifest_jsonl, BucketScheme, DatasetError, EntityManifestRow,
    FilterParams, FilterStage, FixturePageviews, LintProblem, QuestionType, DEFAULT_MIN_IMAGES,
};
use entiq::eval::{
    compare_reports, evaluate, format_comparison_table, format_metric_table, join_gold_predictions,
    load_gold_jsonl, load_predictions_jsonl, EvalConfig, EvalError,
};
use entiq::index::{load_entries_jsonl, EmbeddingIndex, IndexError, RetrievalSet};
use entiq::knowledge::{
    AggregationConfig, FixtureFetcher, HttpFetcher, KnowledgeError, KnowledgeFetcher,
    KnowledgeStore, SourceKind, DEFAULT_FETCH_TIMEOUT_MS,
};
use entiq::pipeline::{
    ask, AskBackends, AskParams, EmbedError, EmbedderBackend, FixtureEmbedder, HttpEmbedder,
    PipelineError, DEFAULT_K, DEFAULT_SNIPPET_BUDGET,
};
use entiq::region::{
    DetectorBackend, FixtureDetector, HttpDetector, ImageRef, RegionError, DEFAULT_MIN_CONFIDENCE,
};
use entiq::resolve::{ResolutionConfig, ResolveError};

#[derive(Parser)]
#[command(
    name = "entiq",
    version,
    about = "Entity-centric retrieval-augmented VQA toolkit"
)]
struct Cli {
    /// TOML config file (required by `ask`; ignored elsewhere).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for randomized operations (e.g. `dataset sample`).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Emit JSON instead of human-readable tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or query an embedding index.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Ask a question about an image through the full pipeline.
    Ask(AskArgs),
    /// Evaluation reports over gold answers and model predictions.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Dataset curation: filtering, stats, popularity buckets, linting.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Ingest JSONL entries into a sealed index file.
    Build {
        /// JSONL of index entries.
        #[arg(long)]
        entries: PathBuf,
        /// Output index path.
        #[arg(long)]
        out: PathBuf,
        /// Embedding dimension; inferred from the first entry if omitted.
        #[arg(long)]
        dim: Option<usize>,
        /// Overwrite an existing index file.
        #[arg(long)]
        force: bool,
    },
    /// Run a k-NN query and print the retrieval set as JSON.
    Query {
        /// Index file to load.
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        vector: VectorSource,
        /// Number of neighbours.
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct VectorSource {
    /// Query vector as comma-separated floats.
    #[arg(long)]
    vector: Option<String>,
    /// File containing the query vector as a JSON array.
    #[arg(long)]
    vector_file: Option<PathBuf>,
}

#[derive(Args)]
struct AskArgs {
    /// The question to answer.
    #[arg(long)]
    question: String,
    /// Image identifier (resolved against the configured image fixture
    /// when present).
    #[arg(long)]
    image_id: String,
    /// Image URI (defaults to img://{image_id}).
    #[arg(long)]
    uri: Option<String>,
    /// Pixel width used when the image is not in the image fixture.
    #[arg(long, default_value_t = 640)]
    width: u32,
    /// Pixel height used when the image is not in the image fixture.
    #[arg(long, default_value_t = 480)]
    height: u32,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Score predictions against gold answers; optionally compare a
    /// second prediction file against the first.
    Run {
        /// Gold rows (JSONL).
        #[arg(long)]
        gold: PathBuf,
        /// Prediction rows (JSONL).
        #[arg(long)]
        pred: PathBuf,
        /// Second prediction file; prints a delta table (pred → compare).
        #[arg(long)]
        compare: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Apply one filter stage (or the whole canonical pipeline).
    Filter {
        /// Manifest file (.csv or .jsonl).
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        stage: StageSelect,
        /// Minimum image count for the image-count stage.
        #[arg(long, default_value_t = DEFAULT_MIN_IMAGES)]
        min_images: usize,
        /// Write the kept rows here (.csv or .jsonl); summary still prints.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a manifest and its QA pairs.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// QA pairs (JSONL).
        #[arg(long)]
        qa: PathBuf,
    },
    /// Assign popularity buckets from pageview statistics.
    Buckets {
        #[arg(long)]
        manifest: PathBuf,
        /// Pageview fixture (JSONL of {"entity_id", "daily": [60 ints]}).
        #[arg(long)]
        pageviews: PathBuf,
    },
    /// Validate QA pairs against the manifest.
    Lint {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        qa: PathBuf,
    },
    /// Seed-deterministically sample a fraction of entities per category.
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        /// Fraction of each category to keep, in (0, 1].
        #[arg(long)]
        fraction: f64,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct StageSelect {
    /// Stage name: wiki-validity | image-count | ambiguity.
    #[arg(long)]
    stage: Option<String>,
    /// Run all three stages in canonical order.
    #[arg(long)]
    all: bool,
}

const EXIT_RUNTIME: i32 = 2;
const EXIT_USAGE: i32 = 64;
const EXIT_DATA: i32 = 65;

/// A failure with a stable kind string and an exit code.
struct CliError {
    kind: String,
    message: String,
    code: i32,
}

impl CliError {
    fn new(kind: &str, code: i32, message: impl Into<String>) -> Self {
        CliError {
            kind: kind.to_string(),
            message: message.into(),
            code,
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        CliError::new("Usage", EXIT_USAGE, message)
    }

    fn stderr_json(&self) -> String {
        serde_json::json!({"error": {"kind": self.kind, "message": self.message}}).to_string()
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        let (kind, code) = match &e {
            IndexError::IoFailure(_) => ("IoFailure", EXIT_RUNTIME),
            IndexError::CorruptHeader(_) => ("CorruptHeader", EXIT_DATA),
            IndexError::TruncatedPayload(_) => ("TruncatedPayload", EXIT_DATA),
            IndexError::SchemaViolation(_) => ("SchemaViolation", EXIT_DATA),
            IndexError::ZeroVector => ("ZeroVector", EXIT_DATA),
            IndexError::NonFinite => ("NonFinite", EXIT_DATA),
            IndexError::InvalidDim(_) => ("InvalidDim", EXIT_DATA),
            IndexError::DimMismatch { .. } => ("DimMismatch", EXIT_DATA),
            IndexError::DuplicateId(_) => ("DuplicateId", EXIT_DATA),
            IndexError::EmptyIndex => ("EmptyIndex", EXIT_DATA),
        };
        CliError::new(kind, code, e.to_string())
    }
}

impl From<RegionError> for CliError {
    fn from(e: RegionError) -> Self {
        let (kind, code) = match &e {
            RegionError::BackendUnavailable(_) => ("BackendUnavailable", EXIT_RUNTIME),
            RegionError::IoFailure(_) => ("IoFailure", EXIT_RUNTIME),
            RegionError::BackendMalformedResponse(_) => ("MalformedResponse", EXIT_DATA),
            RegionError::InvalidBoundingBox(_) => ("InvalidBoundingBox", EXIT_DATA),
            RegionError::ImageLoadFailure(_) => ("ImageLoadFailure", EXIT_DATA),
            RegionError::SchemaViolation(_) => ("SchemaViolation", EXIT_DATA),
        };
        CliError::new(kind, code, e.to_string())
    }
}

impl From<KnowledgeError> for CliError {
    fn from(e: KnowledgeError) -> Self {
        let (kind, code) = match &e {
            KnowledgeError::IoFailure(_) => ("IoFailure", EXIT_RUNTIME),
            KnowledgeError::FetcherFailure(_) => ("FetcherFailure", EXIT_RUNTIME),
            KnowledgeError::NotFound(_) => ("NotFound", EXIT_DATA),
            KnowledgeError::SchemaViolation(_) => ("SchemaViolation", EXIT_DATA),
            KnowledgeError::InvalidBudget => ("InvalidBudget", EXIT_DATA),
            KnowledgeError::MalformedResponse(_) => ("MalformedResponse", EXIT_DATA),
        };
        CliError::new(kind, code, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let (kind, code) = match &e {
            EvalError::IoFailure(_) => ("IoFailure", EXIT_RUNTIME),
            EvalError::EmptyEvalSet => ("EmptyEvalSet", EXIT_DATA),
            EvalError::SchemaViolation(_) => ("SchemaViolation", EXIT_DATA),
        };
        CliError::new(kind, code, e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let (kind, code) = match &e {
            DatasetError::IoFailure(_) => ("IoFailure", EXIT_RUNTIME),
            DatasetError::ClientUnavailable(_) => ("ClientUnavailable", EXIT_RUNTIME),
            DatasetError::UnknownStage(_) => ("UnknownStage", EXIT_USAGE),
            DatasetError::InvalidParameter(_) => ("InvalidParameter", EXIT_USAGE),
            DatasetError::CsvFailure(_) => ("CsvFailure", EXIT_DATA),
            DatasetError::SchemaViolation(_) => ("SchemaViolation", EXIT_DATA),
            DatasetError::TooFewEntities(_) => ("TooFewEntities", EXIT_DATA),
            DatasetError::MissingStats(_) => ("MissingStats", EXIT_DATA),
            DatasetError::DanglingReference(_) => ("DanglingReference", EXIT_DATA),
            DatasetError::MalformedResponse(_) => ("MalformedResponse", EXIT_DATA),
        };
        CliError::new(kind, code, e.to_string())
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        let (kind, code) = match &e {
            EmbedError::BackendUnavailable(_) => ("BackendUnavailable", EXIT_RUNTIME),
            EmbedError::IoFailure(_) => ("IoFailure", EXIT_RUNTIME),
            EmbedError::MissingEmbedding(_) => ("MissingEmbedding", EXIT_DATA),
            EmbedError::MalformedResponse(_) => ("MalformedResponse", EXIT_DATA),
        };
        CliError::new(kind, code, e.to_string())
    }
}

impl From<AnswerError> for CliError {
    fn from(e: AnswerError) -> Self {
        let (kind, code) = match &e {
            AnswerError::GeneratorUnavailable(_) => ("GeneratorUnavailable", EXIT_RUNTIME),
            AnswerError::GeneratorTimeout(_) => ("GeneratorTimeout", EXIT_RUNTIME),
            AnswerError::EmptyQuestion => ("EmptyQuestion", EXIT_USAGE),
            AnswerError::EmptyAnswer => ("EmptyAnswer", EXIT_DATA),
            AnswerError::MalformedResponse(_) => ("MalformedResponse", EXIT_DATA),
        };
        CliError::new(kind, code, e.to_string())
    }
}

impl From<ResolveError> for CliError {
    fn from(e: ResolveError) -> Self {
        CliError::new("InvalidConfig", EXIT_DATA, e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        // Reuse the per-stage mappings but keep the stage-labelled message.
        let message = e.to_string();
        let mut mapped = match e {
            PipelineError::Detect(inner) => CliError::from(inner),
            PipelineError::Embed(inner) => CliError::from(inner),
            PipelineError::Retrieve(inner) => CliError::from(inner),
            PipelineError::Resolve(inner) => CliError::from(inner),
            PipelineError::Knowledge(inner) => CliError::from(inner),
            PipelineError::Answer(inner) => CliError::from(inner),
            PipelineError::InvalidParameter(msg) => {
                CliError::new("InvalidParameter", EXIT_DATA, msg)
            }
        };
        mapped.message = message;
        mapped
    }
}

fn main() {
    // Rust spawns with SIGPIPE ignored, which turns `entiq ... | head` into
    // a write-error panic; restore the default so the process terminates
    // quietly like other line-oriented tools.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.stderr_json());
            e.code
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Index { command } => match command {
            IndexCommand::Build {
                entries,
                out,
                dim,
                force,
            } => cmd_index_build(entries, out, *dim, *force, cli.json),
            IndexCommand::Query { index, vector, k } => cmd_index_query(index, vector, *k),
        },
        Command::Ask(args) => cmd_ask(cli, args),
        Command::Eval { command } => match command {
            EvalCommand::Run {
                gold,
                pred,
                compare,
            } => cmd_eval_run(gold, pred, compare.as_deref(), cli.json),
        },
        Command::Dataset { command } => match command {
            DatasetCommand::Filter {
                manifest,
                stage,
                min_images,
                out,
            } => cmd_dataset_filter(manifest, stage, *min_images, out.as_deref(), cli.json),
            DatasetCommand::Stats { manifest, qa } => cmd_dataset_stats(manifest, qa, cli.json),
            DatasetCommand::Buckets {
                manifest,
                pageviews,
            } => cmd_dataset_buckets(manifest, pageviews, cli.json),
            DatasetCommand::Lint { manifest, qa } => cmd_dataset_lint(manifest, qa, cli.json),
            DatasetCommand::Sample { manifest, fraction } => {
                cmd_dataset_sample(manifest, *fraction, cli.seed, cli.json)
            }
        },
    }
}

// ---------------------------------------------------------------- index

fn cmd_index_build(
    entries_path: &Path,
    out: &Path,
    dim: Option<usize>,
    force: bool,
    json: bool,
) -> Result<(), CliError> {
    if out.exists() && !force {
        return Err(CliError::new(
            "AlreadyExists",
            EXIT_RUNTIME,
            format!(
                "{} already exists (use --force to overwrite)",
                out.display()
            ),
        ));
    }
    let entries = load_entries_jsonl(entries_path)?;
    let first_dim = match (dim, entries.first()) {
        (Some(d), _) => d,
        (None, Some(e)) => e.vector.len(),
        (None, None) => {
            return Err(CliError::new(
                "EmptyIndex",
                EXIT_DATA,
                format!("no entries in {}", entries_path.display()),
            ))
        }
    };
    let mut index = EmbeddingIndex::new(first_dim)?;
    for entry in entries {
        index.add_entry(entry)?;
    }
    index.save(out)?;
    if json {
        println!(
            "{}",
            serde_json::json!({
                "indexed": index.len(),
                "dim": index.dim(),
                "path": out.display().to_string(),
            })
        );
    } else {
        println!(
            "indexed {} entries (dim {}) -> {}",
            index.len(),
            index.dim(),
            out.display()
        );
    }
    Ok(())
}

fn parse_vector(source: &VectorSource) -> Result<Vec<f32>, CliError> {
    if let Some(csv) = &source.vector {
        return csv
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f32>()
                    .map_err(|e| CliError::usage(format!("bad vector component {tok:?}: {e}")))
            })
            .collect();
    }
    let path = source
        .vector_file
        .as_ref()
        .expect("clap group guarantees one source");
    let body = std::fs::read_to_string(path).map_err(|e| {
        CliError::new(
            "IoFailure",
            EXIT_RUNTIME,
            format!("{}: {e}", path.display()),
        )
    })?;
    serde_json::from_str::<Vec<f32>>(&body).map_err(|e| {
        CliError::new(
            "SchemaViolation",
            EXIT_DATA,
            format!("{}: expected a JSON array of numbers: {e}", path.display()),
        )
    })
}

fn cmd_index_query(index_path: &Path, source: &VectorSource, k: usize) -> Result<(), CliError> {
    let index = EmbeddingIndex::load(index_path)?;
    let query = parse_vector(source)?;
    let retrieval = index.knn(&query, k)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&retrieval).expect("retrieval serializes")
    );
    Ok(())
}

// ------------------------------------------------------------------ ask

/// TOML pipeline configuration for `ask`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AskConfig {
    /// Sealed index file.
    index: PathBuf,
    /// Local knowledge records (JSONL).
    knowledge: PathBuf,
    /// Embedder: `fixture:PATH` or an http(s) URL.
    embedder: String,
    /// Detector: `none`, `fixture:PATH`, or an http(s) base URL.
    #[serde(default = "default_detector_spec")]
    detector: String,
    /// Generator: `template` or an http(s) URL.
    #[serde(default = "default_generator_spec")]
    generator: String,
    #[serde(default)]
    fetchers: Vec<FetcherSpec>,
    /// Optional image fixture (JSONL of {image_id, uri, width, height}).
    #[serde(default)]
    images: Option<PathBuf>,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default = "default_budget")]
    snippet_budget: usize,
    #[serde(default = "default_min_confidence")]
    min_confidence: f64,
    #[serde(default = "default_min_score")]
    min_score: f64,
    #[serde(default = "default_min_margin")]
    min_margin: f64,
    #[serde(default = "default_timeout_ms")]
    timeout_ms: u64,
    /// Freshness anchor (unix seconds); wall clock when omitted.
    #[serde(default)]
    now_unix: Option<i64>,
    /// Question type for snippet scoring (default `static`).
    #[serde(default)]
    qtype: Option<String>,
    #[serde(default = "default_max_snippet_tokens")]
    max_snippet_tokens: usize,
}

fn default_detector_spec() -> String {
    "none".to_string()
}
fn default_generator_spec() -> String {
    "template".to_string()
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_budget() -> usize {
    DEFAULT_SNIPPET_BUDGET
}
fn default_min_confidence() -> f64 {
    DEFAULT_MIN_CONFIDENCE
}
fn default_min_score() -> f64 {
    ResolutionConfig::default().min_score
}
fn default_min_margin() -> f64 {
    ResolutionConfig::default().min_margin
}
fn default_timeout_ms() -> u64 {
    DEFAULT_FETCH_TIMEOUT_MS
}
fn default_max_snippet_tokens() -> usize {
    entiq::answer::DEFAULT_MAX_SNIPPET_TOKENS
}

#[derive(Debug, Deserialize)]
struct FetcherSpec {
    /// knowledge_graph | web_search | pageview_api | local_kb
    kind: String,
    /// `fixture:PATH` or an http(s) URL.
    spec: String,
}

enum BackendSpec {
    Fixture(PathBuf),
    Http(String),
}

fn parse_backend_spec(value: &str, what: &str) -> Result<BackendSpec, CliError> {
    if let Some(path) = value.strip_prefix("fixture:") {
        Ok(BackendSpec::Fixture(PathBuf::from(path)))
    } else if value.starts_with("http://") || value.starts_with("https://") {
        Ok(BackendSpec::Http(value.to_string()))
    } else {
        Err(CliError::new(
            "ConfigParse",
            EXIT_DATA,
            format!("{what} spec {value:?} must be fixture:PATH or an http(s) URL"),
        ))
    }
}

fn parse_source_kind(value: &str) -> Result<SourceKind, CliError> {
    match value {
        "local_kb" => Ok(SourceKind::LocalKB),
        "knowledge_graph" => Ok(SourceKind::KnowledgeGraph),
        "web_search" => Ok(SourceKind::WebSearch),
        "pageview_api" => Ok(SourceKind::PageviewApi),
        other => Err(CliError::new(
            "ConfigParse",
            EXIT_DATA,
            format!(
                "unknown fetcher kind {other:?} (expected local_kb, knowledge_graph, \
                 web_search, or pageview_api)"
            ),
        )),
    }
}

fn load_ask_config(path: &Path) -> Result<AskConfig, CliError> {
    let body = std::fs::read_to_string(path).map_err(|e| {
        CliError::new(
            "IoFailure",
            EXIT_RUNTIME,
            format!("{}: {e}", path.display()),
        )
    })?;
    toml::from_str(&body)
        .map_err(|e| CliError::new("ConfigParse", EXIT_DATA, format!("{}: {e}", path.display())))
}

fn load_image_fixture(path: &Path) -> Result<HashMap<String, ImageRef>, CliError> {
    let body = std::fs::read_to_string(path).map_err(|e| {
        CliError::new(
            "IoFailure",
            EXIT_RUNTIME,
            format!("{}: {e}", path.display()),
        )
    })?;
    let mut by_id = HashMap::new();
    for (lineno, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let image: ImageRef = serde_json::from_str(line).map_err(|e| {
            CliError::new(
                "SchemaViolation",
                EXIT_DATA,
                format!("{} line {}: {e}", path.display(), lineno + 1),
            )
        })?;
        by_id.insert(image.image_id.clone(), image);
    }
    Ok(by_id)
}

/// The condensed ask output: final answer plus the evidence trail.
#[derive(Serialize)]
struct AskSummary<'a> {
    answer: &'a str,
    entity: Option<AskEntity<'a>>,
    snippets_used: Vec<&'a str>,
    retrieval: &'a RetrievalSet,
}

#[derive(Serialize)]
struct AskEntity<'a> {
    entity_id: &'a str,
    name: Option<&'a str>,
    score: f64,
}

fn cmd_ask(cli: &Cli, args: &AskArgs) -> Result<(), CliError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::usage("ask requires --config pointing at a pipeline TOML"))?;
    let cfg = load_ask_config(config_path)?;

    let index = EmbeddingIndex::load(&cfg.index)?;
    let store = KnowledgeStore::from_jsonl(&cfg.knowledge)?;
    let timeout = Duration::from_millis(cfg.timeout_ms);

    let detector: Box<dyn DetectorBackend> = if cfg.detector == "none" {
        Box::new(FixtureDetector::from_map(HashMap::new()))
    } else {
        match parse_backend_spec(&cfg.detector, "detector")? {
            BackendSpec::Fixture(path) => Box::new(FixtureDetector::from_jsonl(&path)?),
            BackendSpec::Http(url) => Box::new(HttpDetector::new(&url, timeout)?),
        }
    };
    let embedder: Box<dyn EmbedderBackend> = match parse_backend_spec(&cfg.embedder, "embedder")? {
        BackendSpec::Fixture(path) => Box::new(FixtureEmbedder::from_jsonl(&path)?),
        BackendSpec::Http(url) => Box::new(HttpEmbedder::new(url, timeout)),
    };
    let generator: Box<dyn AnswerGenerator> = if cfg.generator == "template" {
        Box::new(TemplateGenerator)
    } else {
        match parse_backend_spec(&cfg.generator, "generator")? {
            BackendSpec::Fixture(path) => {
                return Err(CliError::new(
                    "ConfigParse",
                    EXIT_DATA,
                    format!(
                        "generator has no fixture form (got {:?}); use template or a URL",
                        path.display()
                    ),
                ))
            }
            BackendSpec::Http(url) => Box::new(HttpGenerator::new(url, timeout)),
        }
    };
    let mut fetchers: Vec<Arc<dyn KnowledgeFetcher>> = Vec::new();
    for spec in &cfg.fetchers {
        let kind = parse_source_kind(&spec.kind)?;
        let fetcher: Arc<dyn KnowledgeFetcher> = match parse_backend_spec(&spec.spec, "fetcher")? {
            BackendSpec::Fixture(path) => Arc::new(FixtureFetcher::from_jsonl(kind, &path)?),
            BackendSpec::Http(url) => Arc::new(HttpFetcher::new(kind, url, timeout)),
        };
        fetchers.push(fetcher);
    }

    let image = match &cfg.images {
        Some(path) => load_image_fixture(path)?.remove(&args.image_id),
        None => None,
    }
    .unwrap_or_else(|| ImageRef {
        image_id: args.image_id.clone(),
        uri: args
            .uri
            .clone()
            .unwrap_or_else(|| format!("img://{}", args.image_id)),
        width: args.width,
        height: args.height,
    });

    let qtype: QuestionType = match &cfg.qtype {
        Some(raw) => raw
            .parse()
            .map_err(|e: DatasetError| CliError::new("ConfigParse", EXIT_DATA, e.to_string()))?,
        None => QuestionType::Static,
    };
    let mut aggregation = AggregationConfig {
        timeout_ms: cfg.timeout_ms,
        ..AggregationConfig::default()
    };
    if let Some(now) = cfg.now_unix {
        aggregation.now_unix = now;
    }
    let params = AskParams {
        k: cfg.k,
        qtype,
        min_confidence: cfg.min_confidence,
        snippet_budget: cfg.snippet_budget,
        resolution: ResolutionConfig {
            min_score: cfg.min_score,
            min_margin: cfg.min_margin,
        },
        aggregation,
        prompt: entiq::answer::PromptConfig {
            max_snippet_tokens: cfg.max_snippet_tokens,
        },
    };

    let backends = AskBackends {
        detector: detector.as_ref(),
        embedder: embedder.as_ref(),
        fetchers: &fetchers,
        generator: generator.as_ref(),
    };
    let trace = ask(&args.question, &image, &index, &store, &backends, &params)?;

    if cli.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&trace).expect("trace serializes")
        );
    } else {
        let summary = AskSummary {
            answer: &trace.answer.text,
            entity: trace.resolution.entity().map(|h| AskEntity {
                entity_id: &h.entity_id,
                name: trace.entity_name.as_deref(),
                score: h.score,
            }),
            snippets_used: trace
                .prompt
                .snippets
                .iter()
                .map(|s| s.text.as_str())
                .collect(),
            retrieval: &trace.retrieval,
        };
        println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        );
    }
    Ok(())
}

// ----------------------------------------------------------------- eval

fn cmd_eval_run(
    gold_path: &Path,
    pred_path: &Path,
    compare_path: Option<&Path>,
    json: bool,
) -> Result<(), CliError> {
    let gold = load_gold_jsonl(gold_path)?;
    let config = EvalConfig::default();
    let baseline = evaluate(
        &join_gold_predictions(&gold, &load_predictions_jsonl(pred_path)?)?,
        &config,
    )?;

    match compare_path {
        None => {
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&baseline).expect("report serializes")
                );
            } else {
                print!("{}", format_metric_table(&baseline));
            }
        }
        Some(path) => {
            let improved = evaluate(
                &join_gold_predictions(&gold, &load_predictions_jsonl(path)?)?,
                &config,
            )?;
            let comparison = compare_reports(&baseline, &improved);
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&comparison).expect("comparison serializes")
                );
            } else {
                print!("{}", format_comparison_table(&comparison));
            }
        }
    }
    Ok(())
}

// --------------------------------------------------------------- dataset

fn load_manifest(path: &Path) -> Result<Vec<EntityManifestRow>, CliError> {
    let is_csv = path.extension().and_then(|e| e.to_str()) == Some("csv");
    let manifest = if is_csv {
        load_manifest_csv(path)?
    } else {
        load_manifest_jsonl(path)?
    };
    Ok(manifest)
}

fn write_manifest(path: &Path, manifest: &[EntityManifestRow]) -> Result<(), CliError> {
    let is_csv = path.extension().and_then(|e| e.to_str()) == Some("csv");
    if is_csv {
        write_manifest_csv(path, manifest)?;
    } else {
        write_manifest_jsonl(path, manifest)?;
    }
    Ok(())
}

fn cmd_dataset_filter(
    manifest_path: &Path,
    stage: &StageSelect,
    min_images: usize,
    out: Option<&Path>,
    json: bool,
) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let params = FilterParams { min_images };
    if stage.all {
        let report = run_pipeline(&manifest, &params);
        if json {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
        } else {
            for stage_report in &report.stages {
                println!(
                    "{}: kept {}, removed {}",
                    stage_report.stage,
                    stage_report.kept_count(),
                    stage_report.removed_count()
                );
            }
            println!("final kept: {}", report.final_kept.len());
        }
        if let Some(path) = out {
            write_manifest(path, &report.final_kept)?;
        }
        return Ok(());
    }
    let name = stage
        .stage
        .as_deref()
        .expect("clap group guarantees one selection");
    let stage: FilterStage = name.parse::<FilterStage>().map_err(CliError::from)?;
    let report = filter_stage(&manifest, stage, &params);
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        println!(
            "{}: kept {}, removed {}",
            report.stage,
            report.kept_count(),
            report.removed_count()
        );
        for (category, counts) in &report.per_category {
            println!(
                "  {category}: kept {}, removed {}",
                counts.kept, counts.removed
            );
        }
    }
    if let Some(path) = out {
        write_manifest(path, &report.kept)?;
    }
    Ok(())
}

fn cmd_dataset_stats(manifest_path: &Path, qa_path: &Path, json: bool) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let pairs = load_qa_jsonl(qa_path)?;
    let stats = dataset_stats(&manifest, &pairs)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&stats).expect("stats serialize")
        );
    } else {
        println!("categories: {}", stats.n_categories);
        println!("entities:   {}", stats.n_entities);
        println!("qa pairs:   {}", stats.n_qa);
        println!("images:     {}", stats.n_images);
        println!("avg answer tokens: {:.1}", stats.avg_answer_tokens);
        for (category, slice) in &stats.per_category {
            println!(
                "  {category}: {} entities, {} images, {} qa pairs",
                slice.entities, slice.images, slice.qa_pairs
            );
        }
    }
    Ok(())
}

fn cmd_dataset_buckets(
    manifest_path: &Path,
    pageviews_path: &Path,
    json: bool,
) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let client = FixturePageviews::from_jsonl(pageviews_path)?;
    let mut stats = Vec::new();
    for entity_id in manifest_entity_ids(&manifest) {
        stats.push(fetch_pageviews(&entity_id, &client)?);
    }
    let buckets = bucket_popularity(&manifest, &stats, BucketScheme::PerCategoryTertiles)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&buckets).expect("buckets serialize")
        );
    } else {
        for (entity_id, bucket) in &buckets {
            println!("{entity_id}\t{bucket}");
        }
    }
    Ok(())
}

fn describe_problem(problem: &LintProblem) -> String {
    match problem {
        LintProblem::EmptyQuestion => "empty question".to_string(),
        LintProblem::EmptyAnswer => "empty answer".to_string(),
        LintProblem::AnswerMissingEntityName { entity_name } => {
            format!("answer does not name the entity {entity_name:?}")
        }
        LintProblem::AnonymityBreach { span } => {
            format!("question leaks the entity name: {span:?}")
        }
        LintProblem::DanglingReference { entity_id } => {
            format!("references unknown entity {entity_id:?}")
        }
    }
}

fn cmd_dataset_lint(manifest_path: &Path, qa_path: &Path, json: bool) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let pairs = load_qa_jsonl(qa_path)?;
    let report = lint_qa(&manifest, &pairs);
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else if report.is_clean() {
        println!("clean: {} pairs checked", report.pairs_checked);
    } else {
        for finding in &report.findings {
            println!(
                "pair {} (entity {}): {}",
                finding.pair_index,
                finding.entity_id,
                describe_problem(&finding.problem)
            );
        }
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::new(
            "LintFindings",
            EXIT_DATA,
            format!(
                "{} findings across {} pairs",
                report.findings.len(),
                report.pairs_checked
            ),
        ))
    }
}

fn cmd_dataset_sample(
    manifest_path: &Path,
    fraction: f64,
    seed: u64,
    json: bool,
) -> Result<(), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let sampled = sample_entities(&manifest, fraction, seed)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&sampled).expect("ids serialize")
        );
    } else {
        for entity_id in &sampled {
            println!("{entity_id}");
        }
    }
    Ok(())
}
