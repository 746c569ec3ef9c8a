use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use imcts::experimenter::{
    CommandBackend, ExperimentBackend, ExperimentTask, RecordingBackend, ReplayBackend, SimBackend, SimLandscape,
};
use imcts::harness::{
    dump_tree_json, dump_tree_text, load_state, run_ablation_suite, save_state, sign_test_p, LlmOracles, RunConfig,
    RunState, Search, SearchOracles, SearchPolicy, SearchReport, SimOracles,
};
use imcts::llm::{read_recording, write_recording, HttpOracle, RecordingOracle, ReplayOracle};
use imcts::metrics;
use imcts::tree::SearchParams;

const LLM_RECORDING: &str = "llm_recording.jsonl";
const BACKEND_RECORDING: &str = "backend_recording.jsonl";
const STATE_FILE: &str = "state.json";

/// Introspective Monte Carlo tree search over staged ML pipelines.
#[derive(Parser)]
#[command(name = "imcts", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one search.
    Run(RunArgs),
    /// Compare all policies on the simulated landscape over many seeds.
    Ablate(AblateArgs),
    /// Aggregate benchmark results from a CSV file (dataset,method,run,raw,kind).
    Score {
        #[arg(long)]
        csv: PathBuf,
    },
}

#[derive(Args)]
struct SearchFlags {
    /// JSON config with optional llm, backend, landscape, task and search sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha_explore: Option<f64>,
    /// Children created per expansion.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SearchFlags {
    fn load(&self) -> Result<(RunConfig, SearchParams)> {
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let mut params = cfg.search.clone();
        if let Some(v) = self.rollouts {
            params.rollouts = v;
        }
        if let Some(v) = self.gamma {
            params.gamma = v;
        }
        if let Some(v) = self.alpha_explore {
            params.alpha_explore = v;
        }
        if let Some(v) = self.width {
            params.expansion_width = v;
        }
        if let Some(v) = self.seed {
            params.seed = v;
        }
        params.validate()?;
        Ok((cfg, params))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Simulated landscape, no model or backend needed.
    Sim,
    /// Chat endpoint and backend command from the config; both are recorded.
    Live,
    /// Re-run from the recordings of a live run.
    Replay,
}

#[derive(Clone, Copy, ValueEnum)]
enum DumpFormat {
    Text,
    Json,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    search: SearchFlags,
    /// imcts, no-ine, no-hrm, vanilla or random.
    #[arg(long, default_value = "imcts")]
    policy: SearchPolicy,
    #[arg(long, value_enum, default_value = "sim")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "text")]
    dump: DumpFormat,
    /// Output directory for state, dump, report and recordings.
    #[arg(long, default_value = "imcts-out")]
    out: PathBuf,
    /// Continue from a saved state file; its parameters and policy are kept.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Directory holding the recordings to replay (defaults to --out).
    #[arg(long)]
    recordings: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    search: SearchFlags,
    /// Number of consecutive seeds, starting at --seed.
    #[arg(long, default_value_t = 50)]
    seeds: u64,
    /// Also write the per-seed results as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Ablate(args) => ablate(args),
        Command::Score { csv } => score(&csv),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let (cfg, params) = args.search.load()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let resumed = args.resume.as_deref().map(load_state).transpose()?;
    let rec_dir = args.recordings.clone().unwrap_or_else(|| args.out.clone());
    let llm_path = rec_dir.join(LLM_RECORDING);
    let backend_path = rec_dir.join(BACKEND_RECORDING);
    let state_path = args.out.join(STATE_FILE);
    let job = Job { params, policy: args.policy, task: cfg.task.clone(), resumed, state_path: &state_path };

    let report = match args.mode {
        Mode::Sim => {
            let seed = job.resumed.as_ref().map_or(job.params.seed, |s| s.tree.params.seed);
            let land = SimLandscape::new(seed, cfg.landscape.clone())?;
            let mut oracles = SimOracles::new(land.clone());
            let mut backend = SimBackend::new(land);
            job.drive(&mut oracles, &mut backend)?
        }
        Mode::Live => {
            if cfg.backend.command.is_empty() {
                bail!("live mode needs backend.command in the config file");
            }
            fs::create_dir_all(&rec_dir)?;
            prepare_recordings(job.resumed.as_ref(), &llm_path, &backend_path)?;
            let http = HttpOracle::new(&cfg.llm.endpoint, &cfg.llm.model, Duration::from_secs(cfg.llm.timeout_secs))?;
            let mut oracles = LlmOracles::new(RecordingOracle::to_file(http, &llm_path)?, cfg.llm.gen_params());
            let command = CommandBackend::new(
                &cfg.backend.command,
                Duration::from_secs(cfg.backend.timeout_secs),
                args.out.join("work"),
            )?;
            let mut backend = RecordingBackend::to_file(command, &backend_path)?;
            job.drive(&mut oracles, &mut backend)?
        }
        Mode::Replay => {
            let mut oracle = ReplayOracle::from_file(&llm_path)
                .with_context(|| format!("reading {}", llm_path.display()))?;
            let mut backend = ReplayBackend::from_file(&backend_path)
                .with_context(|| format!("reading {}", backend_path.display()))?;
            if let Some(state) = &job.resumed {
                oracle.skip(state.counters.oracle.total() as usize);
                backend.skip(state.counters.backend_requests as usize);
            }
            let mut oracles = LlmOracles::new(oracle, cfg.llm.gen_params());
            job.drive(&mut oracles, &mut backend)?
        }
    };

    let (name, dump) = match args.dump {
        DumpFormat::Text => ("tree.txt", dump_tree_text(&report.tree)),
        DumpFormat::Json => ("tree.json", dump_tree_json(&report.tree)),
    };
    fs::write(args.out.join(name), &dump)?;
    fs::write(args.out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    print!("{dump}");
    eprintln!(
        "{} simulations, dev-best {} (dev {}, test {}), {} model calls, {} backend stage runs, {:.2?}",
        report.simulations,
        report.best_by_dev.label,
        report.best_by_dev.dev_score,
        report.best_by_dev.test_score,
        report.oracle_call_counts.total(),
        report.backend_stage_invocations,
        report.wall_time
    );
    Ok(())
}

/// Starts fresh recordings, or cuts existing ones back to what the resumed
/// state has consumed so that a later replay lines up.
fn prepare_recordings(resumed: Option<&RunState>, llm_path: &Path, backend_path: &Path) -> Result<()> {
    let Some(state) = resumed else {
        for p in [llm_path, backend_path] {
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        return Ok(());
    };
    if llm_path.exists() {
        let mut exchanges = read_recording(llm_path)?;
        exchanges.truncate(state.counters.oracle.total() as usize);
        write_recording(llm_path, &exchanges)?;
    }
    if backend_path.exists() {
        let text = fs::read_to_string(backend_path)?;
        let keep: Vec<&str> = text.lines().take(state.counters.backend_requests as usize).collect();
        let mut body = keep.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        fs::write(backend_path, body)?;
    }
    Ok(())
}

struct Job<'p> {
    params: SearchParams,
    policy: SearchPolicy,
    task: ExperimentTask,
    resumed: Option<RunState>,
    state_path: &'p Path,
}

impl Job<'_> {
    /// Runs to completion, saving state after every rollout. On failure the
    /// state after the last completed rollout is kept.
    fn drive(self, oracles: &mut dyn SearchOracles, backend: &mut dyn ExperimentBackend) -> Result<SearchReport> {
        let start = Instant::now();
        let mut search = match self.resumed {
            Some(state) => Search::resume(state, oracles, backend),
            None => Search::start(self.params, self.policy, self.task, oracles, backend)?,
        };
        save_state(&search.state, self.state_path)?;
        loop {
            let snapshot = search.state.clone();
            match search.step() {
                Ok(Some(_)) => save_state(&search.state, self.state_path)?,
                Ok(None) => break,
                Err(e) => {
                    save_state(&snapshot, self.state_path)?;
                    return Err(e).with_context(|| {
                        format!(
                            "search aborted after {} rollouts; state saved to {}",
                            snapshot.tree.rollouts_done,
                            self.state_path.display()
                        )
                    });
                }
            }
        }
        let mut report = SearchReport::from_state(&search.state)?;
        report.wall_time = start.elapsed();
        Ok(report)
    }
}

fn ablate(args: AblateArgs) -> Result<()> {
    let (cfg, params) = args.search.load()?;
    let seeds: Vec<u64> = (params.seed..params.seed + args.seeds).collect();
    let table = run_ablation_suite(&cfg.landscape, &seeds, params.rollouts)?;
    print!("{table}");
    let p = sign_test_p(&table.qualities(SearchPolicy::Imcts), &table.qualities(SearchPolicy::VanillaMcts));
    println!("sign test I-MCTS > Vanilla MCTS: p = {p:.3e}");
    if let Some(path) = args.out {
        fs::write(&path, serde_json::to_string_pretty(&table)? + "\n")?;
    }
    Ok(())
}

fn score(csv: &Path) -> Result<()> {
    let file = fs::File::open(csv).with_context(|| format!("opening {}", csv.display()))?;
    let rows = metrics::read_results(file)?;
    let summary = metrics::aggregate(&rows)?;
    metrics::write_summary(std::io::stdout().lock(), &summary)?;
    Ok(())
}
