//! Command-line entry point: world generation, search, evaluation,
//! training-data synthesis, and tree inspection.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use halusearch::backends::{
    world_switch, FactWorld, HttpBackendConfig, HttpJudge, HttpPolicy, HttpReward,
    HttpRiskEstimator, WorldJudge, WorldParams, WorldPolicy, WorldReward, ENV_API_KEY,
    ENV_BASE_URL,
};
use halusearch::core::{deserialize_tree, serialize_tree, NodeId, SearchConfig, TreeDocument};
use halusearch::engine::{run_search, EngineError, SearchOptions, SearchTrace};
use halusearch::harness::{
    comparison_table, evaluate_method, items_from_world, load_dataset, EvalContext, EvalReport,
    Method, QaItem,
};
use halusearch::models::{
    AlwaysFast, AlwaysSlow, Judge, PolicyModel, RewardMode, RewardModel, SwitchModel,
    ThresholdSwitch,
};
use halusearch::synth::{
    collect_reward_data, dedup_and_balance, label_instance_switch, label_step_switch, to_jsonl,
    BalanceStats,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_PARSE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "halusearch",
    about = "Sentence-level MCTS decoding with a fast/slow thinking switch",
    version
)]
struct Cli {
    /// TOML config file; flags override it, it overrides built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    /// Master seed for world generation and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    /// Deterministic simulated fact world.
    Sim,
    /// OpenAI-compatible chat-completions service.
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SwitchKind {
    /// Threshold switch on the backend's risk estimate (gamma).
    Auto,
    /// Always slow thinking (full search).
    Slow,
    /// Always fast thinking (direct generation).
    Fast,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "sim")]
    backend: BackendKind,

    /// World file for the sim backend; generated on the fly from the seed
    /// when omitted.
    #[arg(long)]
    world: Option<PathBuf>,

    /// Base URL of the chat-completions service (http backend).
    #[arg(long, env = ENV_BASE_URL)]
    base_url: Option<String>,

    /// API key for the http backend. Never logged or serialized.
    #[arg(long, env = ENV_API_KEY, hide_env_values = true)]
    api_key: Option<String>,

    /// Model name for the http backend.
    #[arg(long)]
    model: Option<String>,

    #[arg(long, value_enum, default_value = "auto")]
    switch: SwitchKind,
}

#[derive(Args, Default, Clone)]
struct SearchArgs {
    /// Nodes expanded per slow step (K).
    #[arg(short = 'k', long)]
    expansions: Option<usize>,

    /// Rollouts per expanded node (m).
    #[arg(short = 'm', long)]
    rollouts: Option<usize>,

    /// Maximum search iterations (M).
    #[arg(long)]
    max_iterations: Option<usize>,

    /// UCT exploration weight (w).
    #[arg(long)]
    uct_weight: Option<f64>,

    /// Early-termination threshold on the mapped value scale; above 1.0
    /// disables it.
    #[arg(long)]
    reward_threshold: Option<f64>,

    /// Fast/slow switch threshold on the Likert scale.
    #[arg(long)]
    gamma: Option<f64>,

    /// Decoding temperature.
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated fact world and write it to a file.
    Worldgen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        questions: usize,
        #[arg(long, default_value_t = 3)]
        branch_factor: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        /// Base hallucination rate in [0, 1].
        #[arg(long, default_value_t = 0.5)]
        rate: f64,
        /// Sampling weight of truthful statements (1 = uniform).
        #[arg(long, default_value_t = 1.0)]
        bias: f64,
    },
    /// Answer one question (or every question in a dataset file).
    Search {
        /// Question text (mutually exclusive with --file).
        #[arg(long, conflicts_with = "file")]
        question: Option<String>,
        /// Dataset file: one {id, question, answer, lang} object per line.
        #[arg(long)]
        file: Option<PathBuf>,
        /// Directory for tree dumps and event logs.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Evaluate decoding methods over a dataset and write reports.
    Eval {
        /// Dataset file; defaults to the sim world's own questions.
        #[arg(long)]
        data: Option<PathBuf>,
        /// direct | cot | self-consistency | best-of-n | mcts | all
        #[arg(long, default_value = "mcts")]
        method: String,
        /// Samples for self-consistency / best-of-n.
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Output directory for report files.
        #[arg(long)]
        out: Option<PathBuf>,
        /// File with one gamma value per line; runs one mcts report per value.
        #[arg(long)]
        gamma_sweep: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Synthesize reward or switch training data from search traces.
    Synth {
        /// Directory of *.events.jsonl (and *.tree.json) trace files.
        #[arg(long)]
        traces: PathBuf,
        /// reward | switch
        #[arg(long)]
        mode: String,
        /// Emit critique-based reward records.
        #[arg(long)]
        critique: bool,
        /// Inject the ground-truth answer into the scoring prompt.
        #[arg(long)]
        with_reference: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Summarize a serialized tree; optionally export Graphviz DOT.
    Inspect {
        tree: PathBuf,
        /// Write a DOT graph with (n, v) labels; the best path is highlighted.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum AppError {
    Config(String),
    Backend(String),
    Parse(String),
}

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => EXIT_CONFIG,
            AppError::Backend(_) => EXIT_BACKEND,
            AppError::Parse(_) => EXIT_PARSE,
        }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "config error: {m}"),
            AppError::Backend(m) => write!(f, "backend error: {m}"),
            AppError::Parse(m) => write!(f, "parse error: {m}"),
        }
    }
}

impl From<EngineError> for AppError {
    fn from(err: EngineError) -> Self {
        match &err {
            EngineError::Config(_) => AppError::Config(err.to_string()),
            _ => AppError::Backend(err.to_string()),
        }
    }
}

/// Values loadable from the TOML config file. Every field is optional; flags
/// win over the file, the file wins over built-in defaults.
#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    version: Option<u32>,
    seed: Option<u64>,
    jobs: Option<usize>,
    search: Option<FileSearch>,
    backend: Option<FileBackend>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileSearch {
    expansions_k: Option<usize>,
    rollouts_m: Option<usize>,
    max_iterations_m: Option<usize>,
    uct_weight_w: Option<f64>,
    reward_threshold: Option<f64>,
    gamma: Option<f64>,
    temperature: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileBackend {
    world: Option<PathBuf>,
    base_url: Option<String>,
    model: Option<String>,
    timeout_secs: Option<u64>,
    max_retries: Option<u32>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, AppError> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: FileConfig = toml::from_str(&text)
        .map_err(|e| AppError::Config(format!("cannot parse {}: {e}", path.display())))?;
    if let Some(version) = config.version {
        if version != 1 {
            return Err(AppError::Config(format!("unsupported config version {version}")));
        }
    }
    Ok(config)
}

fn effective_search_config(
    args: &SearchArgs,
    file: &FileConfig,
    seed: u64,
) -> Result<SearchConfig, AppError> {
    let defaults = SearchConfig::default();
    let fs = file.search.as_ref().cloned().unwrap_or_default();
    let config = SearchConfig {
        expansions_k: args.expansions.or(fs.expansions_k).unwrap_or(defaults.expansions_k),
        rollouts_m: args.rollouts.or(fs.rollouts_m).unwrap_or(defaults.rollouts_m),
        max_iterations_m: args
            .max_iterations
            .or(fs.max_iterations_m)
            .unwrap_or(defaults.max_iterations_m),
        uct_weight_w: args.uct_weight.or(fs.uct_weight_w).unwrap_or(defaults.uct_weight_w),
        reward_threshold: args
            .reward_threshold
            .or(fs.reward_threshold)
            .unwrap_or(defaults.reward_threshold),
        gamma: args.gamma.or(fs.gamma).unwrap_or(defaults.gamma),
        temperature: args.temperature.or(fs.temperature).unwrap_or(defaults.temperature),
        seed,
    };
    config.validate().map_err(|e| AppError::Config(e.to_string()))?;
    Ok(config)
}

/// All models behind trait objects, plus the sim world when applicable.
struct Backends {
    policy: Box<dyn PolicyModel>,
    reward: Box<dyn RewardModel>,
    switch: Box<dyn SwitchModel>,
    judge: Box<dyn Judge>,
    world: Option<Arc<FactWorld>>,
}

fn build_backends(
    args: &BackendArgs,
    file: &FileConfig,
    config: &SearchConfig,
    dataset: &[QaItem],
) -> Result<Backends, AppError> {
    let fb = file.backend.as_ref();
    match args.backend {
        BackendKind::Sim => {
            let world_path = args.world.clone().or_else(|| fb.and_then(|b| b.world.clone()));
            let world = match world_path {
                Some(path) => Arc::new(
                    FactWorld::load(&path).map_err(|e| AppError::Config(e.to_string()))?,
                ),
                None => Arc::new(FactWorld::generate(&WorldParams::default(), config.seed)),
            };
            let switch: Box<dyn SwitchModel> = match args.switch {
                SwitchKind::Auto => Box::new(world_switch(world.clone(), config.gamma)),
                SwitchKind::Slow => Box::new(AlwaysSlow),
                SwitchKind::Fast => Box::new(AlwaysFast),
            };
            Ok(Backends {
                policy: Box::new(WorldPolicy { world: world.clone() }),
                reward: Box::new(WorldReward { world: world.clone() }),
                switch,
                judge: Box::new(WorldJudge { world: world.clone() }),
                world: Some(world),
            })
        }
        BackendKind::Http => {
            let base_url = args
                .base_url
                .clone()
                .or_else(|| fb.and_then(|b| b.base_url.clone()))
                .ok_or_else(|| {
                    AppError::Config(format!("http backend requires --base-url or {ENV_BASE_URL}"))
                })?;
            let api_key = args.api_key.clone().ok_or_else(|| {
                AppError::Config(format!("http backend requires --api-key or {ENV_API_KEY}"))
            })?;
            let model = args
                .model
                .clone()
                .or_else(|| fb.and_then(|b| b.model.clone()))
                .ok_or_else(|| AppError::Config("http backend requires --model".into()))?;
            let mut http = HttpBackendConfig::new(base_url, api_key, model);
            if let Some(secs) = fb.and_then(|b| b.timeout_secs) {
                http.timeout = Duration::from_secs(secs);
            }
            if let Some(retries) = fb.and_then(|b| b.max_retries) {
                http.max_retries = retries;
            }
            http.validate().map_err(|e| AppError::Config(e.to_string()))?;
            let switch: Box<dyn SwitchModel> = match args.switch {
                SwitchKind::Auto => Box::new(ThresholdSwitch {
                    estimator: HttpRiskEstimator {
                        config: http.clone(),
                        temperature: config.temperature,
                    },
                    gamma: config.gamma,
                }),
                SwitchKind::Slow => Box::new(AlwaysSlow),
                SwitchKind::Fast => Box::new(AlwaysFast),
            };
            let references = dataset
                .iter()
                .map(|item| (item.question.clone(), item.reference_answer.clone()))
                .collect();
            Ok(Backends {
                policy: Box::new(HttpPolicy { config: http.clone() }),
                reward: Box::new(HttpReward {
                    config: http.clone(),
                    temperature: config.temperature,
                }),
                switch,
                judge: Box::new(HttpJudge { config: http, references }),
                world: None,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    let file = load_file_config(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let jobs = cli.jobs.or(file.jobs).unwrap_or(1).max(1);

    match cli.command {
        Command::Worldgen { out, questions, branch_factor, depth, rate, bias } => {
            if !(0.0..=1.0).contains(&rate) {
                return Err(AppError::Config("rate must be in [0, 1]".into()));
            }
            let params = WorldParams {
                questions,
                branch_factor,
                depth,
                hallucination_rate: rate,
                truthful_bias: bias,
            };
            let world = FactWorld::generate(&params, seed);
            world
                .save(&out)
                .map_err(|e| AppError::Config(format!("cannot write world file: {e}")))?;
            println!(
                "wrote {} ({} questions, branch {}, depth {})",
                out.display(),
                questions,
                branch_factor,
                depth
            );
            Ok(())
        }
        Command::Search { question, file: data_file, trace, backend, search } => {
            let config = effective_search_config(&search, &file, seed)?;
            let items = search_items(question, data_file.as_deref())?;
            let backends = build_backends(&backend, &file, &config, &items)?;
            cmd_search(&items, &config, &backends, trace.as_deref())
        }
        Command::Eval { data, method, n, out, gamma_sweep, backend, search } => {
            let config = effective_search_config(&search, &file, seed)?;
            let backends = build_backends(&backend, &file, &config, &[])?;
            let items = match data {
                Some(path) => load_items(&path)?,
                None => backends
                    .world
                    .as_ref()
                    .map(|w| items_from_world(w))
                    .ok_or_else(|| {
                        AppError::Config("--data is required with the http backend".into())
                    })?,
            };
            // The judge's reference table must cover the dataset; rebuild the
            // http backends now that the items are known.
            let backends = if backends.world.is_none() {
                build_backends(&backend, &file, &config, &items)?
            } else {
                backends
            };
            cmd_eval(
                &items,
                &method,
                n,
                out.as_deref(),
                gamma_sweep.as_deref(),
                &config,
                &backends,
                jobs,
                &backend,
                &file,
            )
        }
        Command::Synth { traces, mode, critique, with_reference, out, backend, search } => {
            let config = effective_search_config(&search, &file, seed)?;
            let backends = build_backends(&backend, &file, &config, &[])?;
            cmd_synth(&traces, &mode, critique, with_reference, &out, &config, &backends)
        }
        Command::Inspect { tree, dot } => cmd_inspect(&tree, dot.as_deref()),
    }
}

fn load_items(path: &Path) -> Result<Vec<QaItem>, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
    load_dataset(&text).map_err(|e| AppError::Config(e.to_string()))
}

fn search_items(
    question: Option<String>,
    file: Option<&Path>,
) -> Result<Vec<QaItem>, AppError> {
    match (question, file) {
        (Some(question), None) => Ok(vec![QaItem {
            id: "single".into(),
            question,
            reference_answer: String::new(),
            language_tag: "en".into(),
        }]),
        (None, Some(path)) => load_items(path),
        (None, None) => Err(AppError::Config("provide --question or --file".into())),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    }
}

fn cmd_search(
    items: &[QaItem],
    config: &SearchConfig,
    backends: &Backends,
    trace_dir: Option<&Path>,
) -> Result<(), AppError> {
    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| AppError::Config(format!("cannot create trace dir: {e}")))?;
    }
    for item in items {
        let mut options = SearchOptions::new(item.id.clone());
        options.language_tag = item.language_tag.clone();
        options.collect_trace = trace_dir.is_some();
        if !item.reference_answer.is_empty() {
            options.reference_answer = Some(item.reference_answer.clone());
        }
        if let Some(dir) = trace_dir {
            options.recovery_path = Some(dir.join(format!("{}.recovery.json", item.id)));
        }
        let result = run_search(
            &item.question,
            config,
            backends.policy.as_ref(),
            backends.reward.as_ref(),
            backends.switch.as_ref(),
            &options,
        )?;
        println!("{}\t{}", item.id, result.answer);
        println!(
            "# mode={:?} termination={} iterations={} slow_step_ratio={:.3} time={:.3}s",
            result.instance_mode,
            result.reason.kind.as_str(),
            result.reason.iterations_used,
            result.slow_step_ratio,
            result.wall_time
        );
        if let Some(dir) = trace_dir {
            let doc = result.document(config);
            write_file(&dir.join(format!("{}.tree.json", item.id)), &serialize_tree(&doc))?;
            if let Some(trace) = &result.trace {
                write_file(&dir.join(format!("{}.events.jsonl", item.id)), &trace.to_jsonl())?;
            }
        }
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), AppError> {
    std::fs::write(path, contents)
        .map_err(|e| AppError::Config(format!("cannot write {}: {e}", path.display())))
}

fn parse_methods(method: &str, n: usize) -> Result<Vec<Method>, AppError> {
    let one = |name: &str| -> Result<Method, AppError> {
        match name {
            "direct" => Ok(Method::Direct),
            "cot" => Ok(Method::Cot),
            "self-consistency" | "self_consistency" => Ok(Method::SelfConsistency(n)),
            "best-of-n" | "best_of_n" => Ok(Method::BestOfN(n)),
            "mcts" => Ok(Method::Mcts),
            other => Err(AppError::Config(format!("unknown method {other:?}"))),
        }
    };
    if method == "all" {
        Ok(vec![
            Method::Direct,
            Method::Cot,
            Method::SelfConsistency(n),
            Method::BestOfN(n),
            Method::Mcts,
        ])
    } else {
        Ok(vec![one(method)?])
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    items: &[QaItem],
    method: &str,
    n: usize,
    out: Option<&Path>,
    gamma_sweep: Option<&Path>,
    config: &SearchConfig,
    backends: &Backends,
    jobs: usize,
    backend_args: &BackendArgs,
    file: &FileConfig,
) -> Result<(), AppError> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|e| AppError::Config(format!("cannot create output dir: {e}")))?;
    }
    let mut reports: Vec<EvalReport> = Vec::new();

    if let Some(sweep_path) = gamma_sweep {
        let text = std::fs::read_to_string(sweep_path)
            .map_err(|e| AppError::Config(format!("cannot read sweep file: {e}")))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let gamma: f64 = line
                .trim()
                .parse()
                .map_err(|e| AppError::Config(format!("bad gamma {line:?}: {e}")))?;
            let swept = SearchConfig { gamma, ..config.clone() };
            // The switch threshold lives inside the switch model; rebuild it
            // for each gamma.
            let swept_backends = build_backends(backend_args, file, &swept, items)?;
            let ctx = EvalContext {
                policy: swept_backends.policy.as_ref(),
                reward: swept_backends.reward.as_ref(),
                switch: swept_backends.switch.as_ref(),
                judge: swept_backends.judge.as_ref(),
                config: &swept,
                jobs,
            };
            let mut report = evaluate_method(items, Method::Mcts, &ctx);
            report.method = format!("mcts_gamma{gamma}");
            if let Some(dir) = out {
                write_report(dir, &report)?;
            }
            reports.push(report);
        }
    } else {
        for method in parse_methods(method, n)? {
            let ctx = EvalContext {
                policy: backends.policy.as_ref(),
                reward: backends.reward.as_ref(),
                switch: backends.switch.as_ref(),
                judge: backends.judge.as_ref(),
                config,
                jobs,
            };
            let report = evaluate_method(items, method, &ctx);
            if let Some(dir) = out {
                write_report(dir, &report)?;
            }
            reports.push(report);
        }
    }

    let table = comparison_table(&reports);
    print!("{table}");
    if let Some(dir) = out {
        write_file(&dir.join("comparison.txt"), &table)?;
    }
    Ok(())
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<(), AppError> {
    let body = serde_json::to_string_pretty(report).expect("report serializes");
    write_file(&dir.join(format!("report-{}.json", report.method)), &body)
}

#[derive(Serialize)]
struct SynthStats {
    mode: String,
    traces_read: usize,
    records_out: usize,
    scorer_rejects: usize,
    skipped_questions: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    balance: Option<BalanceStats>,
    class_counts: BTreeMap<String, usize>,
}

fn cmd_synth(
    trace_dir: &Path,
    mode: &str,
    critique: bool,
    with_reference: bool,
    out: &Path,
    config: &SearchConfig,
    backends: &Backends,
) -> Result<(), AppError> {
    std::fs::create_dir_all(out)
        .map_err(|e| AppError::Config(format!("cannot create output dir: {e}")))?;

    let mut traces = Vec::new();
    let mut trees: Vec<(String, TreeDocument)> = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(trace_dir)
        .map_err(|e| AppError::Config(format!("cannot read trace dir: {e}")))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".events.jsonl") {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| AppError::Parse(format!("cannot read {}: {e}", path.display())))?;
            traces.push(SearchTrace::from_jsonl(&text).map_err(AppError::Parse)?);
        } else if name.ends_with(".tree.json") {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| AppError::Parse(format!("cannot read {}: {e}", path.display())))?;
            let doc = deserialize_tree(&text).map_err(|e| AppError::Parse(e.to_string()))?;
            trees.push((name.trim_end_matches(".tree.json").to_string(), doc));
        }
    }
    if traces.is_empty() && trees.is_empty() {
        log::warn!("no trace files found in {}", trace_dir.display());
    }

    match mode {
        "reward" => {
            let reward_mode = if critique { RewardMode::Critique } else { RewardMode::Generative };
            let collected = collect_reward_data(
                &traces,
                backends.reward.as_ref(),
                reward_mode,
                with_reference,
            );
            let (records, balance) = dedup_and_balance(collected.records, config.seed);
            let class_counts = balance
                .class_counts
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect();
            write_file(&out.join("reward.jsonl"), &to_jsonl(&records))?;
            let stats = SynthStats {
                mode: "reward".into(),
                traces_read: traces.len(),
                records_out: records.len(),
                scorer_rejects: collected.rejects.len(),
                skipped_questions: 0,
                balance: Some(balance),
                class_counts,
            };
            write_file(
                &out.join("stats.json"),
                &serde_json::to_string_pretty(&stats).expect("stats serialize"),
            )?;
            println!(
                "wrote {} reward records ({} rejects)",
                records.len(),
                collected.rejects.len()
            );
            Ok(())
        }
        "switch" => {
            let mut records = Vec::new();
            // Step labels from evaluated trees; the trace meta supplies the
            // question for each tree via the shared run id.
            let question_of: std::collections::HashMap<&str, &str> = traces
                .iter()
                .map(|t| (t.run_id.as_str(), t.question.as_str()))
                .collect();
            for (run_id, doc) in &trees {
                let Some(question) = question_of.get(run_id.as_str()) else {
                    log::warn!("tree {run_id} has no matching event log; skipped");
                    continue;
                };
                records.extend(label_step_switch(&doc.tree, question, config.gamma));
            }
            let questions: Vec<String> =
                traces.iter().map(|t| t.question.clone()).collect();
            let instance = label_instance_switch(
                &questions,
                backends.policy.as_ref(),
                backends.judge.as_ref(),
                config.temperature,
            );
            records.extend(instance.records);
            let mut class_counts = BTreeMap::new();
            for record in &records {
                *class_counts.entry(format!("label{}", record.label)).or_insert(0) += 1;
            }
            write_file(&out.join("switch.jsonl"), &to_jsonl(&records))?;
            let stats = SynthStats {
                mode: "switch".into(),
                traces_read: traces.len(),
                records_out: records.len(),
                scorer_rejects: 0,
                skipped_questions: instance.skipped.len(),
                balance: None,
                class_counts,
            };
            write_file(
                &out.join("stats.json"),
                &serde_json::to_string_pretty(&stats).expect("stats serialize"),
            )?;
            println!(
                "wrote {} switch records ({} questions skipped)",
                records.len(),
                instance.skipped.len()
            );
            Ok(())
        }
        other => Err(AppError::Config(format!("unknown synth mode {other:?}"))),
    }
}

fn cmd_inspect(tree_path: &Path, dot: Option<&Path>) -> Result<(), AppError> {
    let text = std::fs::read_to_string(tree_path)
        .map_err(|e| AppError::Parse(format!("cannot read {}: {e}", tree_path.display())))?;
    let doc = deserialize_tree(&text).map_err(|e| AppError::Parse(e.to_string()))?;
    let tree = &doc.tree;
    let best = halusearch::engine::extract_best_path(tree);
    println!("nodes: {}", tree.len());
    println!("depth: {}", tree.depth());
    println!(
        "termination: {} after {} iterations",
        doc.termination_reason.kind.as_str(),
        doc.termination_reason.iterations_used
    );
    println!("best path ({} nodes):", best.len());
    for id in &best {
        let node = tree.node(*id);
        let text = if node.parent.is_none() { "<root>" } else { node.sentence.text.as_str() };
        println!("  [{}] n={} v={:.4} {}", id, node.visit_count, node.value, text);
    }
    if let Some(dot_path) = dot {
        write_file(dot_path, &render_dot(&doc, &best))?;
        println!("wrote {}", dot_path.display());
    }
    Ok(())
}

fn render_dot(doc: &TreeDocument, best: &[NodeId]) -> String {
    let on_path = |id: NodeId| best.contains(&id);
    let mut out = String::from("digraph search {\n  node [shape=box];\n");
    for node in doc.tree.nodes() {
        let label = if node.parent.is_none() {
            format!("root\\n(n={}, v={:.3})", node.visit_count, node.value)
        } else {
            format!(
                "{}\\n(n={}, v={:.3})",
                node.sentence.text.replace('\\', "\\\\").replace('"', "\\\""),
                node.visit_count,
                node.value
            )
        };
        let style = if on_path(node.id) { ", color=red, penwidth=2" } else { "" };
        out.push_str(&format!("  n{} [label=\"{}\"{}];\n", node.id, label, style));
    }
    for node in doc.tree.nodes() {
        for &child in &node.children {
            let style = if on_path(node.id) && on_path(child) { " [color=red, penwidth=2]" } else { "" };
            out.push_str(&format!("  n{} -> n{}{};\n", node.id, child, style));
        }
    }
    out.push_str("}\n");
    out
}
