use std::fs;
use std::io::Write;
use std::path::Path;

use heteroswarm::config::{parse_config, FileConfig, TaskConfig};
use heteroswarm::metrics::{analyze, bucketize, collaborative_gain, metrics_csv, CorrectnessFile, Report};
use heteroswarm::orchestrator::{init_state, run_to_completion, trace_jsonl, StopReason};
use heteroswarm::remote::StubServer;
use heteroswarm::rng::{seeded, stream, Purpose};
use heteroswarm::store;
use heteroswarm::utility::ExactMatchUtility;
use heteroswarm::{
    g_decode, AdjacencyMatrix, Assignment, DagStructure, Error, FinalSystem, NodeEvaluator, PsoHyperparams, Result,
    RunOutcome, RunState, TraceRecord, Utility, Workers,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::task::{self, Task};
use crate::{Command, RunArgs, Which};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Optimize { run, resume, pool } => optimize(&run, resume, pool.as_deref()),
        Command::Decode { matrix, top_p, seed } => decode(&matrix, top_p, seed),
        Command::Evaluate { system, config, seed, which } => evaluate(&system, config.as_deref(), seed, which),
        Command::Analyze { input, trace, out } => analyze_cmd(&input, trace.as_deref(), out.as_deref()),
        Command::Sweep { run, runs } => sweep(&run, runs),
        Command::ServeStub { addr } => serve_stub(&addr),
    }
}

/// Contents of `best_system.json`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "E: Serialize", deserialize = "E: DeserializeOwned"))]
struct SystemFile<E> {
    task: String,
    /// Seed of the task instance (teacher, inputs, initial pool).
    task_seed: u64,
    seed: u64,
    iterations: usize,
    stop: StopReason,
    /// Best structure, identity placement, last-iteration experts.
    returned: FinalSystem<E>,
    /// Highest-scoring system evaluated during the run.
    best_found: FinalSystem<E>,
}

/// Summary written to `report.json` by `optimize`.
#[derive(Debug, Serialize)]
struct RunReport {
    task: String,
    seed: u64,
    mode: heteroswarm::Mode,
    iterations: usize,
    stop: StopReason,
    returned_utility: f64,
    best_found_utility: f64,
    evaluator_calls: u64,
    max_iteration_calls: u64,
    call_budget_per_iteration: u64,
    /// Collaborative-gain analysis of the returned system, for dataset tasks.
    analysis: Option<Report>,
}

#[derive(Debug, Serialize)]
struct SweepLine {
    run: usize,
    seed: u64,
    hyperparams: PsoHyperparams,
    iterations: usize,
    stop: StopReason,
    returned_utility: f64,
    best_found_utility: f64,
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), message: message.into() }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let mut cfg = parse_config(path)?;
    // Dataset paths are relative to the config file.
    if let TaskConfig::Dataset { path: data } = &mut cfg.task {
        if data.is_relative() {
            if let Some(dir) = path.parent() {
                *data = dir.join(&*data);
            }
        }
    }
    Ok(cfg)
}

fn run_config(args: &RunArgs) -> Result<FileConfig> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(mode) = args.mode {
        cfg.run.mode = mode;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn workers(jobs: Option<usize>) -> Result<Workers> {
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    Workers::new(jobs)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn max_iteration_calls(trace: &[TraceRecord]) -> u64 {
    trace.iter().map(|r| r.evaluator_calls).max().unwrap_or(0)
}

fn system_file<E: Clone>(cfg: &FileConfig, task_seed: u64, outcome: &RunOutcome<E>) -> SystemFile<E> {
    SystemFile {
        task: cfg.task.name().to_string(),
        task_seed,
        seed: cfg.run.seed,
        iterations: outcome.trace.len(),
        stop: outcome.stop,
        returned: outcome.system.clone(),
        best_found: outcome.best_found.clone(),
    }
}

fn write_run_outputs<E: Clone + Serialize>(
    out: &Path,
    cfg: &FileConfig,
    outcome: &RunOutcome<E>,
    dataset_size: usize,
    analysis: Option<Report>,
) -> Result<()> {
    write_json(&out.join("best_system.json"), &system_file(cfg, cfg.run.seed, outcome))?;
    fs::write(out.join("trace.jsonl"), trace_jsonl(&outcome.trace)?)?;
    fs::write(out.join("metrics.csv"), metrics_csv(&outcome.trace))?;
    let report = RunReport {
        task: cfg.task.name().to_string(),
        seed: cfg.run.seed,
        mode: cfg.run.mode,
        iterations: outcome.trace.len(),
        stop: outcome.stop,
        returned_utility: outcome.system.utility,
        best_found_utility: outcome.best_found.utility,
        evaluator_calls: outcome.trace.iter().map(|r| r.evaluator_calls).sum(),
        max_iteration_calls: max_iteration_calls(&outcome.trace),
        call_budget_per_iteration: cfg.run.call_budget(dataset_size),
        analysis,
    };
    write_json(&out.join("report.json"), &report)
}

/// Runs (or resumes) the search, checkpointing into `out` after each iteration.
fn search<U: Utility>(
    cfg: &FileConfig,
    pool: Vec<U::Expert>,
    utility: &U,
    workers: &Workers,
    out: &Path,
    resume: bool,
) -> Result<RunOutcome<U::Expert>>
where
    U::Expert: Serialize + DeserializeOwned,
{
    let checkpoint = out.join("checkpoint.json");
    let state = if resume {
        let state = RunState::load(&checkpoint)?;
        if state.config != cfg.run {
            return Err(config_error("config", "checkpoint was written with a different run config"));
        }
        state
    } else {
        init_state(&cfg.run, pool, utility, workers)?
    };
    run_to_completion(state, utility, workers, |s| s.save(&checkpoint))
}

/// Per-problem correctness of each component expert alone and of the whole system.
fn dataset_analysis<E: NodeEvaluator>(
    utility: &ExactMatchUtility<E>,
    system: &FinalSystem<E::Expert>,
) -> Result<Report> {
    let single = DagStructure::from_edges(1, &[])?;
    let solo = Assignment::identity(1);
    let per_node = system
        .assignment
        .slots()
        .iter()
        .map(|&slot| utility.correctness(&single, &solo, std::slice::from_ref(&system.experts[slot])))
        .collect::<Result<Vec<_>>>()?;
    let system_correct = utility.correctness(&system.dag, &system.assignment, &system.experts)?;
    let per_expert: Vec<Vec<bool>> =
        (0..system_correct.len()).map(|q| per_node.iter().map(|col| col[q]).collect()).collect();
    let buckets = bucketize(&per_expert, &system_correct)?;
    let gain = collaborative_gain(&buckets)?;
    Ok(Report { buckets, c_gain: gain.gain, b0_rate: gain.b0_rate, ablation_consistent: Vec::new() })
}

fn optimize(args: &RunArgs, resume: bool, pool_dir: Option<&Path>) -> Result<()> {
    let cfg = run_config(args)?;
    let workers = workers(args.jobs)?;
    fs::create_dir_all(&args.out)?;
    match task::build(&cfg, cfg.run.seed)? {
        Task::Vector { utility, pool } => {
            let pool = match pool_dir {
                Some(dir) => store::load_pool(dir)?,
                None => pool,
            };
            let outcome = search(&cfg, pool, &utility, &workers, &args.out, resume)?;
            store::save_pool(&args.out.join("pool"), &outcome.system.experts)?;
            write_run_outputs(&args.out, &cfg, &outcome, utility.dataset_size(), None)
        }
        Task::Remote { utility, pool } => {
            if pool_dir.is_some() {
                return Err(config_error("pool", "remote experts come from [remote] endpoints"));
            }
            let outcome = search(&cfg, pool, &utility, &workers, &args.out, resume)?;
            let analysis = dataset_analysis(&utility, &outcome.system)?;
            write_run_outputs(&args.out, &cfg, &outcome, utility.dataset_size(), Some(analysis))
        }
    }
}

fn decode(matrix: &Path, top_p: f64, seed: u64) -> Result<()> {
    let rows: Vec<Vec<f64>> = serde_json::from_slice(&fs::read(matrix)?)?;
    let a = AdjacencyMatrix::from_rows(rows)?;
    let dag = g_decode(&a, top_p, &mut seeded(seed))?;
    print_json(&dag)
}

#[derive(Debug, Serialize)]
struct Evaluation {
    utility: f64,
    /// Per-item exact-match results, for dataset tasks.
    correct: Option<Vec<bool>>,
}

fn pick<E>(file: SystemFile<E>, which: Which) -> FinalSystem<E> {
    match which {
        Which::Returned => file.returned,
        Which::BestFound => file.best_found,
    }
}

fn evaluate(system: &Path, config: Option<&Path>, seed: Option<u64>, which: Which) -> Result<()> {
    let mut cfg = load_config(config)?;
    let text = fs::read(system)?;
    let header: SystemFile<serde_json::Value> = serde_json::from_slice(&text)?;
    if header.task != cfg.task.name() {
        return Err(config_error(
            "task",
            format!("system was optimized on `{}`, config names `{}`", header.task, cfg.task.name()),
        ));
    }
    cfg.run.n_experts = header.returned.experts.len();
    let task_seed = seed.unwrap_or(header.task_seed);
    let result = match task::build(&cfg, task_seed)? {
        Task::Vector { utility, .. } => {
            let s: FinalSystem<Vec<f64>> = pick(serde_json::from_slice(&text)?, which);
            Evaluation { utility: utility.evaluate(&s.dag, &s.assignment, &s.experts)?, correct: None }
        }
        Task::Remote { utility, .. } => {
            let s = pick(serde_json::from_slice(&text)?, which);
            let correct = utility.correctness(&s.dag, &s.assignment, &s.experts)?;
            let hits = correct.iter().filter(|c| **c).count();
            Evaluation { utility: hits as f64 / correct.len() as f64, correct: Some(correct) }
        }
    };
    print_json(&result)
}

fn analyze_cmd(input: &Path, trace: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let file: CorrectnessFile = serde_json::from_slice(&fs::read(input)?)?;
    let report = analyze(&file)?;
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_json(&out.join("report.json"), &report)?;
        if let Some(trace) = trace {
            let records = fs::read_to_string(trace)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<std::result::Result<Vec<TraceRecord>, _>>()?;
            fs::write(out.join("metrics.csv"), metrics_csv(&records))?;
        }
    } else if trace.is_some() {
        return Err(config_error("out", "--trace needs --out for metrics.csv"));
    }
    print_json(&report)
}

fn sweep_runs<U: Utility>(
    cfg: &FileConfig,
    pool: &[U::Expert],
    utility: &U,
    workers: &Workers,
    runs: usize,
    out: &Path,
) -> Result<()>
where
    U::Expert: Serialize,
{
    let base = cfg.run.seed;
    let mut lines = String::new();
    let mut best: Option<(usize, SystemFile<U::Expert>)> = None;
    for r in 0..runs {
        let hp = PsoHyperparams::sample_grid(&mut stream(base, Purpose::Sweep, r as u64, 0));
        let mut run_cfg = cfg.clone();
        run_cfg.run.seed = base.wrapping_add(r as u64);
        run_cfg.run.role_pso = hp;
        run_cfg.run.weight_pso = hp;
        let outcome = heteroswarm::optimize(&run_cfg.run, pool.to_vec(), utility, workers)?;
        let line = SweepLine {
            run: r,
            seed: run_cfg.run.seed,
            hyperparams: hp,
            iterations: outcome.trace.len(),
            stop: outcome.stop,
            returned_utility: outcome.system.utility,
            best_found_utility: outcome.best_found.utility,
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
        if best.as_ref().is_none_or(|(_, b)| outcome.best_found.utility > b.best_found.utility) {
            best = Some((r, system_file(&run_cfg, base, &outcome)));
        }
    }
    fs::write(out.join("sweep.jsonl"), lines)?;
    if let Some((run, system)) = best {
        write_json(&out.join("best_system.json"), &system)?;
        write_json(
            &out.join("report.json"),
            &serde_json::json!({ "runs": runs, "best_run": run, "best_found_utility": system.best_found.utility }),
        )?;
    }
    Ok(())
}

fn sweep(args: &RunArgs, runs: usize) -> Result<()> {
    if runs == 0 {
        return Err(config_error("runs", "must be >= 1"));
    }
    let cfg = run_config(args)?;
    let workers = workers(args.jobs)?;
    fs::create_dir_all(&args.out)?;
    // The task instance stays fixed across runs; only PSO settings and run seeds vary.
    match task::build(&cfg, cfg.run.seed)? {
        Task::Vector { utility, pool } => sweep_runs(&cfg, &pool, &utility, &workers, runs, &args.out),
        Task::Remote { utility, pool } => sweep_runs(&cfg, &pool, &utility, &workers, runs, &args.out),
    }
}

fn serve_stub(addr: &str) -> Result<()> {
    let server = StubServer::start(addr)?;
    println!("{}", serde_json::json!({ "url": server.url() }));
    std::io::stdout().flush()?;
    server.join();
    Ok(())
}
