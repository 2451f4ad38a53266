use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use evohpo::bench::bbob::{self, load_trajectory_dir, make_suite};
use evohpo::bench::binpack::{gen_weibull_instance, BinPackInstance};
use evohpo::bench::tsp::{self, TspInstance, HELD_KARP_MAX};
use evohpo::bench::{BbobBenchmark, BinPackBenchmark, Benchmark, Problem, Program, SandboxRunner, TspBenchmark};
use evohpo::configspace::{parse_space, ConfigSpace};
use evohpo::engine::{run_evolution, EvolutionConfig};
use evohpo::glicko2::{standings_csv, standings_table, tournament, Glicko2Config, TournamentConfig, TrajectorySets};
use evohpo::hpo::{RacingTuner, Strategy, Tuner, TunerConfig};
use evohpo::llm::{parse_response, ChatCompletionsClient, LiveConfig, LlmGateway, ScriptedSource};
use evohpo::sandbox::{SandboxLimits, ShimCommand};
use evohpo::store::export::{convergence_points, render};
use evohpo::store::{Clock, RunStore, Series};

const DEFAULT_SHIM: &str = "python3 -m evohpo_runner";

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

#[derive(Parser)]
#[command(name = "evohpo", version, about = "LLM-driven heuristic evolution with in-loop hyper-parameter tuning")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the evolution loop.
    Run(RunArgs),
    /// Tune one candidate on the training instances.
    Tune(TuneArgs),
    /// Evaluate a stored candidate with its tuned configuration on the full set.
    Eval(EvalArgs),
    /// Rate algorithms from their trajectory directories.
    Tournament(TournamentArgs),
    /// Write benchmark instance files.
    GenInstances(GenArgs),
    /// Write convergence CSVs for a run.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum LlmKind {
    OpenaiCompatible,
    Mock,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct BenchArgs {
    #[arg(long)]
    problem: Problem,
    /// Command starting the candidate runner.
    #[arg(long, default_value = DEFAULT_SHIM)]
    shim: String,
    /// Directory of instance files (binpack, tsp). Generated from --instance-seed when absent.
    #[arg(long)]
    instances: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    instance_seed: u64,
    /// Number of generated instances (binpack 5, tsp 64).
    #[arg(long)]
    count: Option<usize>,
    /// Tune on the first N instances only.
    #[arg(long)]
    train: Option<usize>,
    #[arg(long, default_value_t = 5000)]
    items: usize,
    #[arg(long, default_value_t = 100)]
    capacity: i64,
    #[arg(long, default_value_t = 3.0)]
    weibull_shape: f64,
    #[arg(long, default_value_t = 45.0)]
    weibull_scale: f64,
    /// TSP cities per instance.
    #[arg(long, default_value_t = 100)]
    size: usize,
    #[arg(long, default_value_t = 1000)]
    gls_iterations: usize,
    /// Wall-clock cap per GLS run; 0 disables it.
    #[arg(long, default_value_t = 10.0)]
    gls_seconds: f64,
    /// 2-opt restarts for the reference length of instances too large for the exact solver.
    #[arg(long, default_value_t = 50)]
    reference_starts: usize,
    #[arg(long, value_delimiter = ',', default_values_t = bbob::IMPLEMENTED)]
    functions: Vec<u32>,
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    instances_per_fn: u32,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Function evaluations per optimizer run.
    #[arg(long, default_value_t = bbob::DEFAULT_BUDGET)]
    run_budget: usize,
    /// Seconds allowed for one runner reply.
    #[arg(long, default_value_t = 60)]
    call_timeout: u64,
    /// Seconds allowed for one runner session.
    #[arg(long, default_value_t = 600)]
    session_timeout: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct TunerArgs {
    /// Instance evaluations per tuning session.
    #[arg(long, default_value_t = 2000)]
    hpo_budget: usize,
    #[arg(long, default_value = "surrogate", value_parser = parse_strategy)]
    strategy: Strategy,
    #[arg(long, default_value_t = 1)]
    min_instances: usize,
    #[arg(long, default_value_t = 4)]
    max_instances: usize,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct RunArgs {
    /// Flat JSON object of flag values; flags on the command line win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    bench: BenchArgs,
    #[command(flatten)]
    #[serde(flatten)]
    tuner: TunerArgs,
    #[arg(long, value_enum, default_value = "openai-compatible")]
    llm: LlmKind,
    /// Response files replayed by the mock, in file-name order.
    #[arg(long)]
    script_dir: Option<PathBuf>,
    /// LLM queries, counting the first generation.
    #[arg(long, default_value_t = 100)]
    llm_budget: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "gpt-4o-2024-05-13")]
    model: String,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value = "")]
    system_message: String,
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    endpoint: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
}

#[derive(Debug, Clone, Args)]
struct TuneArgs {
    /// Response document, or a candidate directory with code.py and space.txt.
    candidate: PathBuf,
    #[command(flatten)]
    bench: BenchArgs,
    #[command(flatten)]
    tuner: TunerArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Args)]
struct EvalArgs {
    run_dir: PathBuf,
    /// Candidate id; defaults to the run's best.
    #[arg(long)]
    candidate: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the runner command recorded in the run.
    #[arg(long)]
    shim: Option<String>,
    /// Directory for per-instance artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct TournamentArgs {
    /// NAME=DIR pairs; each DIR holds f<fid>_i<iid>_s<seed>.csv files.
    #[arg(required = true)]
    players: Vec<String>,
    #[arg(long, default_value_t = 200)]
    games: usize,
    #[arg(long, default_value_t = 10_000)]
    max_budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Directory for standings.csv and standings.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct GenArgs {
    #[command(flatten)]
    bench: BenchArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct ExportArgs {
    run_dir: PathBuf,
    #[arg(long, default_value = "fitness-vs-llm-queries", value_parser = parse_series)]
    series: Series,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_series(s: &str) -> Result<Series, String> {
    s.parse()
}

impl BenchArgs {
    fn runner(&self) -> Result<SandboxRunner, CliError> {
        let command = ShimCommand::parse(&self.shim).ok_or_else(|| CliError::Usage("--shim is empty".into()))?;
        let mut runner = SandboxRunner::new(command);
        runner.limits = SandboxLimits {
            wall_timeout_per_call: Duration::from_secs(self.call_timeout),
            wall_timeout_total: Duration::from_secs(self.session_timeout),
            ..SandboxLimits::default()
        };
        Ok(runner)
    }

    fn binpack_instances(&self) -> Result<Vec<BinPackInstance>, CliError> {
        if let Some(dir) = &self.instances {
            return json_files(dir)?.iter().map(|p| BinPackInstance::load(p).map_err(failed)).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.instance_seed);
        Ok((0..self.count.unwrap_or(5))
            .map(|_| gen_weibull_instance(self.items, self.capacity, self.weibull_shape, self.weibull_scale, &mut rng))
            .collect())
    }

    /// Instances with reference lengths, and whether every reference is exact.
    fn tsp_instances(&self) -> Result<(Vec<TspInstance>, bool), CliError> {
        let mut instances = Vec::new();
        if let Some(dir) = &self.instances {
            let mut paths: Vec<_> = fs::read_dir(dir)
                .map_err(|e| failed(format!("{}: {e}", dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("json" | "tsp")))
                .collect();
            paths.sort();
            for p in paths {
                let inst = if p.extension().is_some_and(|x| x == "tsp") {
                    TspInstance::load_tsplib(&p)
                } else {
                    fs::read_to_string(&p).map_err(|e| e.to_string()).and_then(|t| TspInstance::from_json(&t).map_err(|e| e.to_string())).map_err(
                        |e| tsp::TspError::Tsplib(format!("{}: {e}", p.display())),
                    )
                }
                .map_err(failed)?;
                instances.push(inst);
            }
            if instances.is_empty() {
                return Err(failed(format!("no .json or .tsp instances in {}", dir.display())));
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.instance_seed);
            for i in 0..self.count.unwrap_or(64) {
                let mut inst = tsp::gen_instance(self.size, &mut rng).map_err(failed)?;
                inst.name = format!("tsp{}_{i:03}", self.size);
                instances.push(inst);
            }
        }
        let mut exact = true;
        let mut rng = ChaCha8Rng::seed_from_u64(self.instance_seed ^ 0x5eed);
        for inst in &mut instances {
            if inst.optimum_length.is_some() {
                continue;
            }
            if inst.len() <= HELD_KARP_MAX {
                inst.optimum_length = Some(tsp::optimal_tour(inst).map_err(failed)?.1);
            } else {
                exact = false;
                inst.optimum_length = Some(tsp::reference_length(inst, self.reference_starts, &mut rng));
            }
        }
        Ok((instances, exact))
    }

    fn benchmark(&self, stderr_dir: Option<PathBuf>) -> Result<Box<dyn Benchmark>, CliError> {
        let mut runner = self.runner()?;
        runner.stderr_dir = stderr_dir;
        let train = |n_full: usize| -> Result<Option<Vec<usize>>, CliError> {
            match self.train {
                None => Ok(None),
                Some(n) if n >= 1 && n <= n_full => Ok(Some((0..n).collect())),
                Some(n) => Err(CliError::Usage(format!("--train {n} must be between 1 and {n_full}"))),
            }
        };
        Ok(match self.problem {
            Problem::Binpack => {
                let mut b = BinPackBenchmark::new(runner, self.binpack_instances()?);
                if let Some(t) = train(b.instances.len())? {
                    b.training = t;
                }
                Box::new(b)
            }
            Problem::Bbob => {
                let suite = make_suite(&self.functions, self.dim, self.instances_per_fn, self.seeds).map_err(failed)?;
                let mut b = BbobBenchmark::new(runner, suite, self.run_budget);
                if let Some(t) = train(b.slots().len())? {
                    b.training = t;
                }
                Box::new(b)
            }
            Problem::Tsp => {
                let (instances, exact) = self.tsp_instances()?;
                let mut b = TspBenchmark::new(runner, instances, self.gls_iterations, exact);
                b.wall_limit = (self.gls_seconds > 0.0).then(|| Duration::from_secs_f64(self.gls_seconds));
                if let Some(t) = train(b.instances.len())? {
                    b.training = t;
                }
                Box::new(b)
            }
        })
    }

    /// Settings that determine the benchmark, recorded in the event log.
    fn metadata(&self, tuner: &TunerArgs) -> Value {
        let mut v = serde_json::to_value(self).expect("flags serialize");
        if let Value::Object(m) = &mut v {
            m.remove("shim");
            m.remove("call-timeout");
            m.remove("session-timeout");
            if let Value::Object(t) = serde_json::to_value(tuner).expect("flags serialize") {
                m.extend(t);
            }
        }
        v
    }
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| failed(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(failed(format!("no .json instances in {}", dir.display())));
    }
    Ok(paths)
}

impl TunerArgs {
    fn tuner(&self) -> RacingTuner {
        RacingTuner::new(TunerConfig {
            budget: self.hpo_budget,
            min_instances: self.min_instances,
            max_instances: self.max_instances,
            strategy: self.strategy,
            ..TunerConfig::default()
        })
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| failed(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let stderr_dir = args.out.join("stderr");
    fs::create_dir_all(&stderr_dir).map_err(|e| failed(format!("{}: {e}", stderr_dir.display())))?;
    let bench = args.bench.benchmark(Some(stderr_dir))?;
    let tuner = args.tuner.tuner();
    let (mut llm, clock): (Box<dyn LlmGateway>, Clock) = match args.llm {
        LlmKind::Mock => {
            let dir = args.script_dir.as_ref().ok_or_else(|| CliError::Usage("--llm mock needs --script-dir".into()))?;
            (Box::new(ScriptedSource::from_dir(dir).map_err(failed)?), Clock::Logical)
        }
        LlmKind::OpenaiCompatible => {
            let cfg = LiveConfig { endpoint: args.endpoint.clone(), ..LiveConfig::default() }.with_key_from_env(&args.api_key_env);
            (Box::new(ChatCompletionsClient::new(cfg)), Clock::Wall)
        }
    };
    let mut cfg = EvolutionConfig::new(args.bench.problem, args.llm_budget, args.tuner.hpo_budget, args.seed);
    cfg.model = args.model.clone();
    cfg.temperature = args.temperature;
    cfg.system_message = args.system_message.clone();
    cfg.metadata = args.bench.metadata(&args.tuner);

    let mut store = RunStore::open(&args.out, clock).map_err(failed)?;
    write_text(&args.out.join("config.json"), &pretty(&args))?;
    let (best, state) = run_evolution(&cfg, &mut llm, &tuner, bench.as_ref(), &mut store).map_err(failed)?;
    println!(
        "best: candidate {} {:?} fitness {} after {} LLM queries, {} full benchmark evaluations",
        best.id,
        best.name,
        best.fitness,
        state.t,
        state.full_benchmark_evals()
    );
    Ok(())
}

fn load_program(path: &Path) -> Result<(String, String, String), CliError> {
    if path.is_dir() {
        let read = |f: &str| fs::read_to_string(path.join(f)).map_err(|e| failed(format!("{}: {e}", path.join(f).display())));
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok((name, read("code.py")?, read("space.txt")?));
    }
    let text = fs::read_to_string(path).map_err(|e| failed(format!("{}: {e}", path.display())))?;
    let p = parse_response(&text).map_err(failed)?;
    Ok((p.name, p.code, p.space_text))
}

fn cmd_tune(args: TuneArgs) -> Result<(), CliError> {
    let (name, code, space_text) = load_program(&args.candidate)?;
    let space: ConfigSpace = parse_space(&space_text).map_err(failed)?;
    let bench = args.bench.benchmark(None)?;
    let reserved = bench.reserved_params();
    if let Some(v) = space.reserved_collisions(reserved).first() {
        return Err(failed(v));
    }
    let program = Program { id: 0, code, space };
    let mut objective = |a: &_, i: usize| bench.instance_cost(&program, a, i, args.seed);
    let outcome = args
        .tuner
        .tuner()
        .tune(&program.space, &mut objective, bench.training_instances(), args.seed)
        .map_err(failed)?;
    println!(
        "{}",
        pretty(&json!({
            "name": name,
            "incumbent": outcome.incumbent.assignment,
            "mean_cost": outcome.incumbent.mean_cost,
            "instances_seen": outcome.incumbent.instances_seen,
            "evaluations": outcome.trials.len(),
        }))
        .trim_end()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let path = args.run_dir.join("config.json");
    let text = fs::read_to_string(&path).map_err(|e| failed(format!("{}: {e}", path.display())))?;
    let mut run: RunArgs = serde_json::from_str(&text).map_err(|e| failed(format!("{}: {e}", path.display())))?;
    if let Some(shim) = args.shim {
        run.bench.shim = shim;
    }
    let store = RunStore::open(&args.run_dir, Clock::Logical).map_err(failed)?;
    let id = match args.candidate {
        Some(id) => id,
        None => RunStore::load_best(&args.run_dir).map_err(failed)?.candidate_id,
    };
    let cand = store.load_candidate(id).map_err(failed)?;
    let tuned = cand
        .tuned
        .clone()
        .ok_or_else(|| failed(format!("candidate {id} has no tuned configuration")))?;
    let bench = run.bench.benchmark(None)?;
    let program = Program { id, code: cand.code.clone(), space: cand.space.clone() };
    let ev = bench.evaluate_full(&program, &tuned, args.seed.unwrap_or(run.seed)).map_err(failed)?;
    if let Some(out) = &args.out {
        for a in &ev.artifacts {
            write_text(&out.join(&a.path), &a.contents)?;
        }
    }
    println!(
        "{}",
        pretty(&json!({
            "candidate_id": id,
            "name": cand.name,
            "fitness": ev.fitness,
            "fitness_std": ev.fitness_std,
            "raw": ev.raw,
        }))
        .trim_end()
    );
    Ok(())
}

fn cmd_tournament(args: TournamentArgs) -> Result<(), CliError> {
    let mut sets = TrajectorySets::new();
    for p in &args.players {
        let (name, dir) = p
            .split_once('=')
            .filter(|(n, d)| !n.is_empty() && !d.is_empty())
            .ok_or_else(|| CliError::Usage(format!("expected NAME=DIR, got `{p}`")))?;
        if sets.insert(name.to_string(), load_trajectory_dir(Path::new(dir)).map_err(failed)?).is_some() {
            return Err(CliError::Usage(format!("player `{name}` given twice")));
        }
    }
    let cfg = TournamentConfig {
        games_per_function: args.games,
        max_budget: args.max_budget,
        seed: args.seed,
        glicko: Glicko2Config { tau: args.tau, ..Glicko2Config::default() },
    };
    let (standings, _) = tournament(&sets, &cfg).map_err(failed)?;
    let table = standings_table(&standings);
    if let Some(out) = &args.out {
        write_text(&out.join("standings.csv"), &standings_csv(&standings))?;
        write_text(&out.join("standings.txt"), &table)?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let b = &args.bench;
    fs::create_dir_all(&args.out).map_err(|e| failed(format!("{}: {e}", args.out.display())))?;
    match b.problem {
        Problem::Binpack => {
            for (i, inst) in b.binpack_instances()?.iter().enumerate() {
                inst.save(&args.out.join(format!("binpack_{i:03}.json"))).map_err(failed)?;
            }
        }
        Problem::Tsp => {
            let (instances, _) = b.tsp_instances()?;
            for inst in &instances {
                write_text(&args.out.join(format!("{}.json", inst.name)), &pretty(inst))?;
            }
        }
        Problem::Bbob => {
            let suite = make_suite(&b.functions, b.dim, b.instances_per_fn, b.seeds).map_err(failed)?;
            write_text(&args.out.join("manifest.json"), &pretty(&suite.manifest()))?;
        }
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<(), CliError> {
    let points = convergence_points(&args.run_dir).map_err(failed)?;
    let csv = render(&points, args.series);
    match &args.out {
        Some(path) => write_text(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

/// Expands `--config FILE` into flags placed right after the subcommand, so
/// flags given on the command line override them.
fn expand_config(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut path = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().ok_or_else(|| CliError::Usage("--config needs a file".into()))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
    let map: Map<String, Value> =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{path}: expected a flat JSON object: {e}")))?;
    let mut flags = Vec::new();
    for (key, value) in map {
        let flag = format!("--{key}");
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => flags.push(flag),
            Value::String(s) => flags.extend([flag, s]),
            Value::Number(n) => flags.extend([flag, n.to_string()]),
            Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|v| match v {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect();
                flags.extend([flag, parts.join(",")]);
            }
            Value::Object(_) => return Err(CliError::Usage(format!("{path}: `{key}` must not be an object"))),
        }
    }
    let at = rest.len().min(2);
    rest.splice(at..at, flags);
    Ok(rest)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let argv = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Tournament(a) => cmd_tournament(a),
        Command::GenInstances(a) => cmd_gen(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
