//! `qahub` command line: ingest corpora, build indexes, manage skills and
//! workers, run behavioural suites and serve the gateway.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qahub_core::behave::{bundled_suite, export_report, load_suite, run_suite, TestReport};
use qahub_core::datastore::{parse_jsonl, Bm25Params, DenseParams, IndexKind, Metric, Quantizer};
use qahub_core::gateway::{server, Gateway, GatewayConfig};
use qahub_core::modelhub::WorkerSpec;
use qahub_core::skillrt::SkillSpec;
use qahub_core::{ErrorCode, Platform, Principal};
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const DEFAULT_DATA_DIR: &str = "qahub-data";
pub const DEFAULT_OWNER: &str = "operator";

#[derive(Debug, Parser)]
#[command(name = "qahub", version, about = "Self-hosted question answering platform")]
pub struct Cli {
    /// State directory (overrides the config file's data_dir).
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Gateway config file; supplies data_dir, listen, tokens and suites.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Upsert documents from a JSON-Lines file, creating the datastore if needed.
    Ingest {
        #[arg(long)]
        datastore: String,
        file: PathBuf,
    },
    /// Index operations.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Query an index.
    Search {
        #[arg(long)]
        datastore: String,
        #[arg(long, value_enum)]
        index: IndexArg,
        #[arg(long)]
        query: String,
        #[arg(short = 'k', long = "k", default_value_t = 10)]
        k: usize,
        /// Partitions to probe (dense only); defaults to all.
        #[arg(long)]
        nprobe: Option<usize>,
    },
    /// Skill management.
    #[command(subcommand)]
    Skill(SkillCommand),
    /// Model worker management.
    #[command(subcommand)]
    Worker(WorkerCommand),
    /// Behavioural tests.
    #[command(subcommand)]
    Test(TestCommand),
    /// Run the HTTP gateway.
    Serve {
        /// Overrides the config's listen address.
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    Build(BuildArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IndexArg {
    Sparse,
    Dense,
}

impl From<IndexArg> for IndexKind {
    fn from(a: IndexArg) -> Self {
        match a {
            IndexArg::Sparse => IndexKind::Sparse,
            IndexArg::Dense => IndexKind::Dense,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuantizerArg {
    Sq8,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    InnerProduct,
    Euclidean,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub datastore: String,
    #[arg(long = "type", value_enum)]
    pub kind: IndexArg,
    /// Embedding worker (dense only).
    #[arg(long, required_if_eq("kind", "dense"))]
    pub embedder: Option<String>,
    /// Embedding dimension; defaults to the embedder's `dim` parameter.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub nlist: Option<usize>,
    #[arg(long, value_enum, default_value = "sq8")]
    pub quantizer: QuantizerArg,
    #[arg(long, value_enum, default_value = "inner-product")]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// BM25 k1 (sparse only).
    #[arg(long)]
    pub k1: Option<f64>,
    /// BM25 b (sparse only).
    #[arg(long)]
    pub b: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum SkillCommand {
    /// Register a skill from a JSON spec.
    Register {
        #[arg(long)]
        file: PathBuf,
        /// Owning user id.
        #[arg(long, default_value = DEFAULT_OWNER)]
        owner: String,
    },
    /// List every skill.
    List,
}

#[derive(Debug, Subcommand)]
pub enum WorkerCommand {
    /// Deploy a worker from a JSON spec.
    Deploy {
        #[arg(long)]
        file: PathBuf,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum TestCommand {
    /// Run a suite against a skill and write the report.
    Run {
        #[arg(long)]
        skill: String,
        /// Suite JSON file; the bundled suite when omitted.
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A runtime failure: a module error code plus its message.
#[derive(Debug)]
pub struct Failure {
    pub code: String,
    pub message: String,
}

impl<E: ErrorCode> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: e.code().to_string(), message: e.to_string() }
    }
}

fn failure(code: &str, message: impl Into<String>) -> Failure {
    Failure { code: code.to_string(), message: message.into() }
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| failure("Io", format!("{}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| failure("ParseError", format!("{}: {e}", path.display())))
}

/// What a command prints: a JSON value for `--json`, lines otherwise.
struct Output {
    json: Value,
    text: String,
}

impl Output {
    fn new(json: Value, text: impl Into<String>) -> Self {
        Output { json, text: text.into() }
    }
}

struct Context {
    config: GatewayConfig,
    data_dir: PathBuf,
}

impl Context {
    fn open(&self) -> Result<Platform, Failure> {
        Platform::open(&self.data_dir).map_err(|e| failure("Io", e.to_string()))
    }

    fn persist<T>(&self, r: Result<T, qahub_core::PlatformError>) -> Result<T, Failure> {
        r.map_err(|e| failure("PersistFailed", e.to_string()))
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    match runtime.block_on(execute(&cli, err)) {
        Ok(output) => {
            if cli.json {
                let _ = writeln!(out, "{}", serde_json::to_string_pretty(&output.json).expect("json"));
            } else if !output.text.is_empty() {
                let _ = writeln!(out, "{}", output.text.trim_end());
            }
            EXIT_OK
        }
        Err(f) => {
            let _ = writeln!(err, "error: {}: {}", f.code, f.message);
            EXIT_RUNTIME
        }
    }
}

async fn execute(cli: &Cli, err: &mut dyn Write) -> Result<Output, Failure> {
    let config = match &cli.config {
        Some(path) => GatewayConfig::load(path).map_err(|e| failure("InvalidConfig", e.to_string()))?,
        None => GatewayConfig::default(),
    };
    let data_dir = cli
        .data_dir
        .clone()
        .or_else(|| config.data_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
    let ctx = Context { config, data_dir };

    match &cli.command {
        Command::Ingest { datastore, file } => ingest(&ctx, datastore, file),
        Command::Index(IndexCommand::Build(args)) => build_index(&ctx, args).await,
        Command::Search { datastore, index, query, k, nprobe } => {
            search(&ctx, datastore, (*index).into(), query, *k, *nprobe).await
        }
        Command::Skill(SkillCommand::Register { file, owner }) => register_skill(&ctx, file, owner),
        Command::Skill(SkillCommand::List) => list_skills(&ctx),
        Command::Worker(WorkerCommand::Deploy { file }) => deploy_worker(&ctx, file),
        Command::Worker(WorkerCommand::List) => list_workers(&ctx),
        Command::Test(TestCommand::Run { skill, suite, out }) => run_tests(&ctx, skill, suite.as_deref(), out.as_deref()).await,
        Command::Serve { listen } => serve(ctx, listen.clone(), err).await,
    }
}

fn ingest(ctx: &Context, datastore: &str, file: &Path) -> Result<Output, Failure> {
    let bytes = read_file(file)?;
    let text = String::from_utf8(bytes).map_err(|_| failure("ParseError", "corpus is not UTF-8"))?;
    let inputs = parse_jsonl(&text)?;
    let platform = ctx.open()?;
    if !platform.datastores.exists(datastore) {
        platform.datastores.create_datastore(datastore)?;
    }
    let added = platform.datastores.ingest(datastore, inputs)?;
    ctx.persist(platform.persist_datastore(datastore))?;
    let count = platform.datastores.document_count(datastore)?;
    Ok(Output::new(
        json!({ "datastore": datastore, "added": added, "document_count": count }),
        format!("added {added} documents"),
    ))
}

async fn build_index(ctx: &Context, args: &BuildArgs) -> Result<Output, Failure> {
    let platform = ctx.open()?;
    let name = args.datastore.as_str();
    let summary = match args.kind {
        IndexArg::Sparse => {
            let defaults = Bm25Params::default();
            let params = Bm25Params { k1: args.k1.unwrap_or(defaults.k1), b: args.b.unwrap_or(defaults.b) };
            let index = platform.datastores.build_sparse_index(name, params)?;
            json!({ "datastore": name, "index": "sparse", "documents": index.doc_count, "params": index.params })
        }
        IndexArg::Dense => {
            let embedder = args.embedder.as_deref().expect("clap requires --embedder for dense");
            let dim = match args.dim.or_else(|| platform.models.get(embedder).and_then(|w| w.embedding_dim())) {
                Some(d) => d,
                None => return Err(failure("InvalidParameter", format!("--dim is required for embedder `{embedder}`"))),
            };
            let params = DenseParams {
                dim,
                nlist: args.nlist,
                metric: match args.metric {
                    MetricArg::InnerProduct => Metric::InnerProduct,
                    MetricArg::Euclidean => Metric::Euclidean,
                },
                quantizer: match args.quantizer {
                    QuantizerArg::Sq8 => Quantizer::Sq8,
                    QuantizerArg::None => Quantizer::None,
                },
                seed: args.seed,
            };
            let index = platform.datastores.build_dense_index(name, embedder, &params, &platform.models).await?;
            json!({
                "datastore": name,
                "index": "dense",
                "documents": index.len(),
                "embedder": index.embedder_name,
                "dim": index.dim,
                "nlist": index.nlist,
                "metric": index.metric,
                "quantizer": index.quantizer,
                "seed": index.seed,
            })
        }
    };
    ctx.persist(platform.persist_datastore(name))?;
    let text = format!("built {} index over {} documents", summary["index"].as_str().unwrap(), summary["documents"]);
    Ok(Output::new(summary, text))
}

async fn search(
    ctx: &Context,
    datastore: &str,
    kind: IndexKind,
    query: &str,
    k: usize,
    nprobe: Option<usize>,
) -> Result<Output, Failure> {
    let platform = ctx.open()?;
    let results = match kind {
        IndexKind::Sparse => platform.datastores.sparse_search(datastore, query, k)?,
        IndexKind::Dense => {
            let nprobe = match nprobe {
                Some(n) => n,
                None => platform.datastores.dense_index(datastore)?.nlist,
            };
            platform.datastores.dense_search(datastore, query, k, nprobe, &platform.models).await?
        }
    };
    let text: String = results.iter().map(|r| format!("{}\t{:.6}\n", r.doc_id, r.score)).collect();
    Ok(Output::new(json!({ "results": results }), text))
}

fn register_skill(ctx: &Context, file: &Path, owner: &str) -> Result<Output, Failure> {
    let spec: SkillSpec = parse_json(file)?;
    let platform = ctx.open()?;
    let skill = platform.skills.register(spec, &Principal::user(owner))?;
    ctx.persist(platform.persist_skills())?;
    let text = skill.id.clone();
    Ok(Output::new(serde_json::to_value(&skill).expect("skill serializes"), text))
}

fn list_skills(ctx: &Context) -> Result<Output, Failure> {
    let platform = ctx.open()?;
    let mut skills = platform.skills.all();
    skills.sort_by(|a, b| a.spec.name.cmp(&b.spec.name).then_with(|| a.id.cmp(&b.id)));
    let text: String = skills
        .iter()
        .map(|s| {
            let vis = serde_json::to_value(s.spec.visibility).expect("enum serializes");
            format!("{}\t{}\t{}\t{}\n", s.id, s.spec.name, vis.as_str().unwrap_or_default(), s.owner)
        })
        .collect();
    Ok(Output::new(json!({ "skills": skills }), text))
}

fn deploy_worker(ctx: &Context, file: &Path) -> Result<Output, Failure> {
    let spec: WorkerSpec = parse_json(file)?;
    let platform = ctx.open()?;
    platform.models.deploy(spec.clone())?;
    ctx.persist(platform.persist_workers())?;
    let text = format!("deployed {}", spec.name);
    Ok(Output::new(serde_json::to_value(&spec).expect("worker serializes"), text))
}

fn list_workers(ctx: &Context) -> Result<Output, Failure> {
    let platform = ctx.open()?;
    let workers = platform.models.list();
    let text: String = workers
        .iter()
        .map(|w| format!("{}\t{}\t{}\n", w.name, w.task.as_str(), w.endpoint.as_deref().unwrap_or("builtin")))
        .collect();
    Ok(Output::new(json!({ "models": workers }), text))
}

fn summary_text(report: &TestReport) -> String {
    report
        .tests
        .iter()
        .map(|t| {
            let ty = serde_json::to_value(t.test_type).expect("enum serializes");
            format!(
                "{}\t{}\t{}\t{}/{}\t{}%\n",
                t.name,
                ty.as_str().unwrap_or_default(),
                t.capability,
                t.failures,
                t.total,
                t.failure_rate_display()
            )
        })
        .collect()
}

async fn run_tests(ctx: &Context, skill_id: &str, suite: Option<&Path>, out: Option<&Path>) -> Result<Output, Failure> {
    let suite = match suite {
        Some(path) => load_suite(&read_file(path)?)?,
        None => bundled_suite(),
    };
    let platform = ctx.open()?;
    // The operator runs suites on behalf of the skill's owner.
    let owner = platform
        .skills
        .all()
        .into_iter()
        .find(|s| s.id == skill_id)
        .map(|s| Principal::user(s.owner))
        .ok_or_else(|| failure("SkillNotFound", format!("skill `{skill_id}` not found")))?;
    let report = run_suite(&platform.runtime(), skill_id, &suite, &owner).await?;
    let bytes = export_report(&report);
    if let Some(path) = out {
        std::fs::write(path, &bytes).map_err(|e| failure("Io", format!("{}: {e}", path.display())))?;
    }
    let text = summary_text(&report);
    ctx.persist(platform.store_report(report))?;
    let json: Value = serde_json::from_slice(&bytes).expect("exported report is JSON");
    Ok(Output::new(json, text))
}

async fn serve(ctx: Context, listen: Option<String>, err: &mut dyn Write) -> Result<Output, Failure> {
    let mut config = ctx.config;
    config.data_dir = Some(ctx.data_dir);
    let addr = listen.unwrap_or_else(|| config.listen.clone());
    let gateway = Gateway::from_config(&config).map_err(|e| failure("InvalidConfig", e))?;
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| failure("Io", format!("{addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| failure("Io", e.to_string()))?;
    let _ = writeln!(err, "listening on http://{local}");
    server::serve_with_shutdown(Arc::new(gateway), listener, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(|e| failure("Io", e.to_string()))?;
    Ok(Output::new(Value::Null, ""))
}
