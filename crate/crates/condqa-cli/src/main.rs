//! Command line interface for the conditional question answering toolkit.
//!
//! Subcommands:
//! * `run`      drive a dataset through an answering method, writing
//!   predictions as JSONL and optional per-question traces
//! * `eval`     score a prediction file against a reference file
//! * `solve`    resolve one condition expression against stored verdicts
//! * `inspect`  pretty-print a saved per-question trace
//! * `fixtures` record or verify the prompt/response fixture store
//!
//! Exit codes: 0 on success, 1 when the work itself fails, 2 for usage or
//! configuration mistakes. `solve` and `eval` never touch the network; `run`
//! only does so with the live backend.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use condqa::baselines::{BaselineConfig, ChainOfThought, ZeroShot};
use condqa::dataset::{load_conditionalqa, load_sharc};
use condqa::eval::evaluate_run;
use condqa::llm::{
    verify_fixture_dir, BackendKind, CompletionClient, GenParams, LiveClient, LiveConfig,
    ReplayClient,
};
use condqa::solver::emit_trace;
use condqa::{
    run_dataset, solve, ConditionExpression, DatasetKind, Example, Pipeline, PipelineConfig,
    RetrievalMode, RunOptions, RunReport, VerdictMap,
};

/// Seed for the ShARC evaluation/exemplar split. Fixed so every run scores
/// the same half of the data.
const SHARC_SPLIT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "condqa",
    version,
    about = "Conditional question answering over policy documents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a dataset through an answering method and write predictions.
    Run(RunArgs),
    /// Score a prediction file against a reference file.
    Eval(EvalArgs),
    /// Resolve a condition expression against recorded verdicts.
    Solve(SolveArgs),
    /// Pretty-print a stored per-question trace.
    Inspect(InspectArgs),
    /// Record or verify the prompt/response fixture store.
    Fixtures(FixturesArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file, TOML or JSON by extension.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Dataset the examples come from.
    #[arg(long, value_enum)]
    dataset: Option<DatasetArg>,
    /// Answering method.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Model name requested from the completion backend.
    #[arg(long)]
    model: Option<String>,
    /// Where completions come from.
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Fixture directory: the replay source, or the recording target when
    /// the backend is live.
    #[arg(long, value_name = "DIR")]
    fixtures: Option<PathBuf>,
    /// Document narrowing strategy (conditionalqa only).
    #[arg(long, value_enum)]
    retrieval: Option<RetrievalArg>,
    /// Sections kept by embedding retrieval.
    #[arg(long, value_name = "N")]
    top_k: Option<usize>,
    /// Prediction output file (JSONL).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Directory for per-question trace files.
    #[arg(long, value_name = "DIR")]
    trace_dir: Option<PathBuf>,
    /// Stop after this many newly attempted questions.
    #[arg(long, value_name = "N")]
    limit: Option<usize>,
    /// Redo questions already present in the output file.
    #[arg(long)]
    no_resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction file: run output JSONL, or a reference-style JSON array.
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// Reference file with gold labels.
    #[arg(long = "ref", value_name = "FILE")]
    reference: PathBuf,
    /// Dataset the files belong to.
    #[arg(long, value_enum)]
    dataset: DatasetArg,
    /// Also write the full report as JSON to this path.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// JSON file holding {"expression": ..., "verdicts": {...}}.
    #[arg(long, value_name = "FILE")]
    expr: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Question id to look up in the trace directory, or a path to a trace
    /// file.
    #[arg(long, value_name = "ID")]
    trace: String,
    /// Directory where run traces were written.
    #[arg(long, value_name = "DIR", default_value = "traces")]
    trace_dir: PathBuf,
}

#[derive(Args)]
struct FixturesArgs {
    #[command(subcommand)]
    action: FixturesAction,
}

#[derive(Subcommand)]
enum FixturesAction {
    /// Run against the live backend, saving every completion as a fixture.
    Record(RunArgs),
    /// Check that every fixture file name matches its content digest.
    Verify {
        /// Fixture directory.
        #[arg(long, value_name = "DIR")]
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DatasetArg {
    #[value(alias = "cqa")]
    Conditionalqa,
    Sharc,
}

impl From<DatasetArg> for DatasetKind {
    fn from(value: DatasetArg) -> Self {
        match value {
            DatasetArg::Conditionalqa => DatasetKind::Conditionalqa,
            DatasetArg::Sharc => DatasetKind::Sharc,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Identify conditions, verify each, solve, then answer.
    ChainOfCondition,
    /// Single prompt with chain-of-thought exemplars.
    Cot,
    /// Single prompt without exemplars.
    ZeroShot,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Replay,
    Live,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RetrievalArg {
    None,
    Oracle,
    Embedding,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Method {
    ChainOfCondition,
    Cot,
    ZeroShot,
}

impl Method {
    fn as_str(self) -> &'static str {
        match self {
            Method::ChainOfCondition => "chain-of-condition",
            Method::Cot => "cot",
            Method::ZeroShot => "zero-shot",
        }
    }
}

enum CliError {
    /// Bad flags, bad config file, or missing required settings. Exit 2.
    Config(String),
    /// The work itself failed. Exit 1.
    Runtime(String),
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn runtime_err(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

fn main() -> ExitCode {
    // Die quietly when stdout closes early (`condqa inspect ... | head`)
    // instead of panicking in println.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run_command(args, false),
        Command::Eval(args) => eval_command(args),
        Command::Solve(args) => solve_command(args),
        Command::Inspect(args) => inspect_command(args),
        Command::Fixtures(args) => match args.action {
            FixturesAction::Record(run) => run_command(run, true),
            FixturesAction::Verify { dir } => verify_command(&dir),
        },
    };
    match result {
        Ok(code) => code,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// What a run configuration file may contain. Relative paths are resolved
/// against the file's own directory; command line flags override file values
/// and stay relative to the working directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<String>,
    method: Option<String>,
    model: Option<String>,
    backend: Option<String>,
    fixtures: Option<PathBuf>,
    documents: Option<PathBuf>,
    questions: Option<PathBuf>,
    sharc: Option<PathBuf>,
    out: Option<PathBuf>,
    trace_dir: Option<PathBuf>,
    limit: Option<usize>,
    resume: Option<bool>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    seed: Option<u64>,
    verification_concurrency: Option<usize>,
    cot_exemplars: Option<usize>,
    retrieval: Option<RetrievalFile>,
    live: Option<LiveFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrievalFile {
    mode: Option<String>,
    top_k: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LiveFile {
    base_url: String,
    chat_path: Option<String>,
    api_key_env: Option<String>,
    timeout_secs: Option<u64>,
    max_in_flight: Option<usize>,
}

impl LiveFile {
    fn into_config(self) -> LiveConfig {
        LiveConfig {
            base_url: self.base_url,
            chat_path: self.chat_path.unwrap_or_else(|| "/v1/chat/completions".to_string()),
            api_key_env: self.api_key_env.unwrap_or_else(|| "OPENAI_API_KEY".to_string()),
            timeout_secs: self.timeout_secs.unwrap_or(120),
            max_in_flight: self.max_in_flight.unwrap_or(4),
        }
    }
}

/// Everything a run needs, after defaults, config file, and flags have been
/// merged in that order.
struct RunPlan {
    dataset: DatasetKind,
    method: Method,
    backend: BackendKind,
    fixtures: Option<PathBuf>,
    documents: Option<PathBuf>,
    questions: Option<PathBuf>,
    sharc: Option<PathBuf>,
    retrieval: RetrievalMode,
    out: PathBuf,
    trace_dir: Option<PathBuf>,
    limit: Option<usize>,
    resume: bool,
    params: GenParams,
    verification_concurrency: usize,
    cot_exemplars: usize,
    live: Option<LiveConfig>,
}

fn load_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&raw)
            .map_err(|e| config_err(format!("bad config {}: {e}", path.display()))),
        Some("json") => serde_json::from_str(&raw)
            .map_err(|e| config_err(format!("bad config {}: {e}", path.display()))),
        _ => Err(config_err(format!(
            "config {} must end in .toml or .json",
            path.display()
        ))),
    }
}

fn parse_method(s: &str) -> Result<Method, CliError> {
    match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "chain-of-condition" => Ok(Method::ChainOfCondition),
        "cot" | "chain-of-thought" => Ok(Method::Cot),
        "zero-shot" | "zeroshot" => Ok(Method::ZeroShot),
        other => Err(config_err(format!(
            "unknown method `{other}` (expected chain-of-condition, cot, or zero-shot)"
        ))),
    }
}

fn parse_backend(s: &str) -> Result<BackendKind, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "replay" => Ok(BackendKind::Replay),
        "live" => Ok(BackendKind::Live),
        other => Err(config_err(format!(
            "unknown backend `{other}` (expected replay or live)"
        ))),
    }
}

fn parse_retrieval(s: &str, top_k: usize) -> Result<RetrievalMode, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "none" => Ok(RetrievalMode::None),
        "oracle" => Ok(RetrievalMode::Oracle),
        "embedding" => Ok(RetrievalMode::Embedding { top_k }),
        other => Err(config_err(format!(
            "unknown retrieval mode `{other}` (expected none, oracle, or embedding)"
        ))),
    }
}

fn resolve_plan(args: &RunArgs, force_live: bool) -> Result<RunPlan, CliError> {
    let file = load_file_config(&args.config)?;
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

    let dataset = match (args.dataset, &file.dataset) {
        (Some(d), _) => d.into(),
        (None, Some(s)) => s.parse::<DatasetKind>().map_err(CliError::Config)?,
        (None, None) => {
            return Err(config_err(
                "dataset is not set (config `dataset` or --dataset)",
            ))
        }
    };
    let method = match (args.method, &file.method) {
        (Some(MethodArg::ChainOfCondition), _) => Method::ChainOfCondition,
        (Some(MethodArg::Cot), _) => Method::Cot,
        (Some(MethodArg::ZeroShot), _) => Method::ZeroShot,
        (None, Some(s)) => parse_method(s)?,
        (None, None) => Method::ChainOfCondition,
    };
    let model = match (&args.model, &file.model) {
        (Some(m), _) => m.clone(),
        (None, Some(m)) => m.clone(),
        (None, None) => return Err(config_err("model is not set (config `model` or --model)")),
    };
    let mut backend = match (args.backend, &file.backend) {
        (Some(BackendArg::Replay), _) => BackendKind::Replay,
        (Some(BackendArg::Live), _) => BackendKind::Live,
        (None, Some(s)) => parse_backend(s)?,
        (None, None) => BackendKind::Replay,
    };
    if force_live {
        backend = BackendKind::Live;
    }

    let fixtures = args
        .fixtures
        .clone()
        .or_else(|| file.fixtures.clone().map(&rel));
    if backend == BackendKind::Replay && fixtures.is_none() {
        return Err(config_err(
            "replay backend needs a fixture directory (config `fixtures` or --fixtures)",
        ));
    }
    if force_live && fixtures.is_none() {
        return Err(config_err(
            "fixture recording needs a fixture directory (config `fixtures` or --fixtures)",
        ));
    }

    let file_retrieval = file.retrieval.unwrap_or_default();
    let top_k = args.top_k.or(file_retrieval.top_k).unwrap_or(5);
    let retrieval = match (args.retrieval, &file_retrieval.mode) {
        (Some(RetrievalArg::None), _) => RetrievalMode::None,
        (Some(RetrievalArg::Oracle), _) => RetrievalMode::Oracle,
        (Some(RetrievalArg::Embedding), _) => RetrievalMode::Embedding { top_k },
        (None, Some(s)) => parse_retrieval(s, top_k)?,
        (None, None) => RetrievalMode::None,
    };

    let documents = file.documents.clone().map(&rel);
    let questions = file.questions.clone().map(&rel);
    let sharc = file.sharc.clone().map(&rel);
    match dataset {
        DatasetKind::Conditionalqa => {
            if documents.is_none() || questions.is_none() {
                return Err(config_err(
                    "conditionalqa needs `documents` and `questions` paths in the config",
                ));
            }
        }
        DatasetKind::Sharc => {
            if sharc.is_none() {
                return Err(config_err("sharc needs a `sharc` data path in the config"));
            }
        }
    }

    let out = args
        .out
        .clone()
        .or_else(|| file.out.clone().map(&rel))
        .unwrap_or_else(|| PathBuf::from("predictions.jsonl"));
    let trace_dir = args
        .trace_dir
        .clone()
        .or_else(|| file.trace_dir.clone().map(&rel));
    let limit = args.limit.or(file.limit);
    let resume = if args.no_resume { false } else { file.resume.unwrap_or(true) };

    let mut params = GenParams::deterministic(model);
    if let Some(t) = file.temperature {
        params.temperature = t;
    }
    if let Some(m) = file.max_tokens {
        params.max_tokens = m;
    }
    if let Some(s) = file.seed {
        params.seed = s;
    }

    let live = file.live.clone().map(LiveFile::into_config);
    if backend == BackendKind::Live && live.is_none() {
        return Err(config_err(
            "live backend needs a [live] config section with base_url",
        ));
    }

    Ok(RunPlan {
        dataset,
        method,
        backend,
        fixtures,
        documents,
        questions,
        sharc,
        retrieval,
        out,
        trace_dir,
        limit,
        resume,
        params,
        verification_concurrency: file.verification_concurrency.unwrap_or(4),
        cot_exemplars: file.cot_exemplars.unwrap_or(4),
        live,
    })
}

fn print_plan(plan: &RunPlan) {
    let backend = match plan.backend {
        BackendKind::Replay => "replay",
        BackendKind::Live => "live",
    };
    let retrieval = match plan.retrieval {
        RetrievalMode::None => "none".to_string(),
        RetrievalMode::Oracle => "oracle".to_string(),
        RetrievalMode::Embedding { top_k } => format!("embedding (top {top_k})"),
    };
    println!("configuration");
    println!("  dataset      {}", plan.dataset);
    println!("  method       {}", plan.method.as_str());
    println!("  model        {}", plan.params.model);
    println!("  backend      {backend}");
    println!("  fixtures     {}", display_opt_path(&plan.fixtures));
    println!("  retrieval    {retrieval}");
    match plan.dataset {
        DatasetKind::Conditionalqa => {
            println!("  documents    {}", display_opt_path(&plan.documents));
            println!("  questions    {}", display_opt_path(&plan.questions));
        }
        DatasetKind::Sharc => {
            println!("  data         {}", display_opt_path(&plan.sharc));
        }
    }
    println!("  out          {}", plan.out.display());
    println!("  trace dir    {}", display_opt_path(&plan.trace_dir));
    match plan.limit {
        Some(n) => println!("  limit        {n}"),
        None => println!("  limit        (none)"),
    }
    println!("  resume       {}", if plan.resume { "yes" } else { "no" });
    println!("  temperature  {}", plan.params.temperature);
    println!("  max tokens   {}", plan.params.max_tokens);
    println!("  seed         {}", plan.params.seed);
    if plan.method == Method::ChainOfCondition {
        println!("  concurrency  {}", plan.verification_concurrency);
    }
    if plan.method == Method::Cot {
        println!("  exemplars    {}", plan.cot_exemplars);
    }
    if matches!(plan.retrieval, RetrievalMode::Embedding { .. }) {
        println!("note: no embedding service is wired in; embedding retrieval falls back to the whole document");
    }
}

fn display_opt_path(p: &Option<PathBuf>) -> String {
    match p {
        Some(p) => p.display().to_string(),
        None => "(none)".to_string(),
    }
}

fn build_client(plan: &RunPlan) -> Result<Arc<dyn CompletionClient>, CliError> {
    match plan.backend {
        BackendKind::Replay => {
            let dir = plan.fixtures.clone().expect("checked during resolution");
            Ok(Arc::new(ReplayClient::strict(dir)))
        }
        BackendKind::Live => {
            let config = plan.live.clone().expect("checked during resolution");
            let client = LiveClient::new(config)
                .map_err(|e| config_err(format!("cannot set up live backend: {e}")))?;
            match &plan.fixtures {
                Some(dir) => Ok(Arc::new(ReplayClient::recording(dir.clone(), Box::new(client)))),
                None => Ok(Arc::new(client)),
            }
        }
    }
}

fn load_examples(plan: &RunPlan) -> Result<Vec<Example>, CliError> {
    let examples = match plan.dataset {
        DatasetKind::Conditionalqa => {
            let documents = plan.documents.as_ref().expect("checked during resolution");
            let questions = plan.questions.as_ref().expect("checked during resolution");
            load_conditionalqa(documents, questions)
        }
        DatasetKind::Sharc => {
            let path = plan.sharc.as_ref().expect("checked during resolution");
            load_sharc(path, SHARC_SPLIT_SEED)
        }
    }
    .map_err(|e| runtime_err(e.to_string()))?;
    println!("loaded {} examples", examples.len());
    Ok(examples)
}

fn run_command(args: RunArgs, force_live: bool) -> Result<ExitCode, CliError> {
    let plan = resolve_plan(&args, force_live)?;
    print_plan(&plan);
    let client = build_client(&plan)?;
    let examples = load_examples(&plan)?;
    let options = RunOptions {
        predictions_path: plan.out.clone(),
        trace_dir: plan.trace_dir.clone(),
        limit: plan.limit,
        resume: plan.resume,
    };
    let report = match plan.method {
        Method::ChainOfCondition => {
            let mut config = PipelineConfig::new(plan.dataset, plan.params.model.clone());
            config.params = plan.params.clone();
            config.retrieval = plan.retrieval;
            config.verification_concurrency = plan.verification_concurrency;
            let pipeline = Pipeline::new(config, client);
            run_dataset(&pipeline, &examples, &options)
        }
        Method::Cot => {
            let mut config = BaselineConfig::new(plan.dataset, plan.params.model.clone());
            config.params = plan.params.clone();
            config.cot_exemplars = plan.cot_exemplars;
            let baseline = ChainOfThought::new(config, client);
            run_dataset(&baseline, &examples, &options)
        }
        Method::ZeroShot => {
            let mut config = BaselineConfig::new(plan.dataset, plan.params.model.clone());
            config.params = plan.params.clone();
            let baseline = ZeroShot::new(config, client);
            run_dataset(&baseline, &examples, &options)
        }
    }
    .map_err(|e| runtime_err(e.to_string()))?;
    print_report(&report, &plan.out);
    if report.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

fn print_report(report: &RunReport, out: &Path) {
    println!(
        "run finished: {} total, {} skipped (already answered), {} attempted, {} succeeded, {} failed, {} warnings",
        report.total,
        report.skipped_existing,
        report.attempted,
        report.succeeded,
        report.failures.len(),
        report.warnings,
    );
    println!("predictions written to {}", out.display());
    for failure in &report.failures {
        eprintln!("failed {}: {}", failure.id, failure.error);
    }
}

fn eval_command(args: EvalArgs) -> Result<ExitCode, CliError> {
    for path in [&args.pred, &args.reference] {
        if !path.exists() {
            return Err(config_err(format!("no such file: {}", path.display())));
        }
    }
    let report = evaluate_run(&args.pred, &args.reference, args.dataset.into())
        .map_err(|e| runtime_err(e.to_string()))?;
    print!("{report}");
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| runtime_err(format!("cannot serialize report: {e}")))?;
        std::fs::write(out, json + "\n")
            .map_err(|e| runtime_err(format!("cannot write {}: {e}", out.display())))?;
        println!("report written to {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// On-disk input for `solve`: the expression and one verdict per condition
/// id, e.g. {"verdicts": {"g1.c1": "satisfied"}}.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveInput {
    expression: ConditionExpression,
    verdicts: VerdictMap,
}

fn solve_command(args: SolveArgs) -> Result<ExitCode, CliError> {
    let raw = std::fs::read_to_string(&args.expr)
        .map_err(|e| config_err(format!("cannot read {}: {e}", args.expr.display())))?;
    let input: SolveInput = serde_json::from_str(&raw).map_err(|e| {
        config_err(format!("{} is not a valid solve input: {e}", args.expr.display()))
    })?;
    let result =
        solve(&input.expression, &input.verdicts).map_err(|e| runtime_err(e.to_string()))?;
    println!("answer class: {}", result.answer_class);
    if result.missing_conditions.is_empty() {
        println!("missing conditions: none");
    } else {
        println!("missing conditions ({}):", result.missing_conditions.len());
        for id in &result.missing_conditions {
            match input.expression.find_condition(id) {
                Some(c) => println!("  [{id}] {}", c.text),
                None => println!("  [{id}]"),
            }
        }
    }
    println!();
    print!("{}", emit_trace(&input.expression, &input.verdicts, &result));
    Ok(ExitCode::SUCCESS)
}

fn inspect_command(args: InspectArgs) -> Result<ExitCode, CliError> {
    let path = locate_trace(&args)?;
    let raw = std::fs::read_to_string(&path)
        .map_err(|e| runtime_err(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&raw)
        .map_err(|e| runtime_err(format!("{} is not valid JSON: {e}", path.display())))?;
    if let Some(id) = value.get("example_id").and_then(|v| v.as_str()) {
        println!("trace for {id}");
    }
    if let Some(steps) = value.get("steps").and_then(|v| v.as_array()) {
        println!("steps ({}):", steps.len());
        for (i, step) in steps.iter().enumerate() {
            let stage = step.get("stage").and_then(|v| v.as_str()).unwrap_or("?");
            let label = step.get("label").and_then(|v| v.as_str()).unwrap_or("");
            if label.is_empty() {
                println!("  {}. {stage}", i + 1);
            } else {
                println!("  {}. {stage} ({label})", i + 1);
            }
        }
    }
    if let Some(warnings) = value.get("warnings").and_then(|v| v.as_array()) {
        println!("warnings ({}):", warnings.len());
        for w in warnings {
            if let Some(w) = w.as_str() {
                println!("  - {w}");
            }
        }
    }
    println!();
    println!("{}", serde_json::to_string_pretty(&value).expect("value round trip"));
    Ok(ExitCode::SUCCESS)
}

/// Trace files are written with the question id sanitized to filename-safe
/// characters, so look the id up both ways before giving up.
fn locate_trace(args: &InspectArgs) -> Result<PathBuf, CliError> {
    let direct = PathBuf::from(&args.trace);
    if direct.is_file() {
        return Ok(direct);
    }
    let named = args.trace_dir.join(format!("{}.json", args.trace));
    if named.is_file() {
        return Ok(named);
    }
    let sanitized = condqa::pipeline::sanitize_id(&args.trace);
    let fallback = args.trace_dir.join(format!("{sanitized}.json"));
    if fallback.is_file() {
        return Ok(fallback);
    }
    Err(config_err(format!(
        "no trace found for `{}` in {}",
        args.trace,
        args.trace_dir.display()
    )))
}

fn verify_command(dir: &Path) -> Result<ExitCode, CliError> {
    let count = verify_fixture_dir(dir).map_err(|e| runtime_err(e.to_string()))?;
    println!("ok: {count} fixtures verified in {}", dir.display());
    Ok(ExitCode::SUCCESS)
}
