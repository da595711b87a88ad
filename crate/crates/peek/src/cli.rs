//! Command-line surface: initialize a workspace, run the policy loop, apply
//! a single update from a trajectory file, render, and re-evict.
//!
//! Exit codes: 0 success, 1 hard failure, 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::map::CharEstimateCounter;
use crate::policy::{run_policy, update_cycle, PolicyConfig, UpdateRecord};
use crate::provider::{
    ChatProvider, HttpConfig, HttpProvider, RecordingProvider, ReplayProvider, API_BASE_ENV,
    DEFAULT_API_BASE,
};
use crate::runner::{AgentRunner, CommandRunner, ScriptedRunner};
use crate::trajectory::Trajectory;
use crate::workspace::{Workspace, WorkspaceConfig};

#[derive(Debug, Parser)]
#[command(
    name = "peek",
    version,
    about = "Maintain a fixed-budget context map for LLM agents over recurring contexts"
)]
pub struct Cli {
    /// Workspace directory.
    #[arg(long, global = true, default_value = ".")]
    pub dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a workspace with an empty map.
    Init {
        /// Hard token budget B for the map.
        #[arg(long, default_value_t = 1024)]
        budget: usize,
    },
    /// Run one update cycle from a recorded trajectory file.
    Update {
        /// Trajectory JSON file: {"task", "steps": [{"actor", "content"}], "final_answer"?}.
        #[arg(long)]
        trajectory: PathBuf,
        /// Replay fixture (JSONL file, or a directory of them).
        #[arg(long, conflicts_with = "live")]
        replay: Option<PathBuf>,
        /// Call the live provider (PEEK_API_KEY, PEEK_API_BASE).
        #[arg(long)]
        live: bool,
        /// With --live: append exchanges to this fixture file.
        #[arg(long, requires = "live")]
        record: Option<PathBuf>,
    },
    /// Print the rendered map, exactly as prepended to agent runs.
    Render,
    /// Run the policy loop over a task list.
    Run {
        /// Task list: one task per line, or JSONL rows with a "task" field.
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, value_enum)]
        runner: RunnerKind,
        /// Evolve steps m: update the map for the first m tasks, then freeze.
        #[arg(long = "m")]
        evolve_steps: Option<u64>,
        /// Replay fixture directory (or a single JSONL file).
        #[arg(long, conflicts_with = "live")]
        replay: Option<PathBuf>,
        #[arg(long)]
        live: bool,
        /// With --live: append exchanges to this fixture file.
        #[arg(long, requires = "live")]
        record: Option<PathBuf>,
        /// Scripted runner: directory of task script JSON files.
        #[arg(long)]
        scripts: Option<PathBuf>,
        /// Command runner: the agent executable.
        #[arg(long)]
        runner_cmd: Option<PathBuf>,
        /// Command runner: extra arguments, repeatable.
        #[arg(long = "runner-arg")]
        runner_args: Vec<String>,
        /// Abort the batch on the first failure.
        #[arg(long)]
        fail_fast: bool,
    },
    /// Re-run eviction, optionally at a new budget, and persist the result.
    Evict {
        /// New hard budget; defaults to the one stored in map.json.
        #[arg(long)]
        budget: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RunnerKind {
    Scripted,
    Command,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

fn fail(message: impl std::fmt::Display) -> CliError {
    CliError::Failure(message.to_string())
}

impl Cli {
    pub fn run(self) -> Result<(), CliError> {
        match self.command {
            Command::Init { budget } => cmd_init(&self.dir, budget),
            Command::Update {
                trajectory,
                replay,
                live,
                record,
            } => cmd_update(&self.dir, &trajectory, replay.as_deref(), live, record),
            Command::Render => cmd_render(&self.dir),
            Command::Run {
                tasks,
                runner,
                evolve_steps,
                replay,
                live,
                record,
                scripts,
                runner_cmd,
                runner_args,
                fail_fast,
            } => cmd_run(RunArgs {
                dir: &self.dir,
                tasks: &tasks,
                runner,
                evolve_steps,
                replay: replay.as_deref(),
                live,
                record,
                scripts: scripts.as_deref(),
                runner_cmd: runner_cmd.as_deref(),
                runner_args,
                fail_fast,
            }),
            Command::Evict { budget } => cmd_evict(&self.dir, budget),
        }
    }
}

fn cmd_init(dir: &Path, budget: usize) -> Result<(), CliError> {
    let workspace = Workspace::init(dir, budget).map_err(fail)?;
    println!(
        "initialized workspace at {} (budget {budget})",
        workspace.root().display()
    );
    Ok(())
}

/// Builds the provider from the --replay/--live/--record flag triple.
fn choose_provider(
    replay: Option<&Path>,
    live: bool,
    record: Option<PathBuf>,
    config: &WorkspaceConfig,
) -> Result<Box<dyn ChatProvider>, CliError> {
    match (replay, live) {
        (Some(path), false) => {
            let provider = if path.is_dir() {
                ReplayProvider::from_dir(path)
            } else {
                ReplayProvider::from_file(path)
            }
            .map_err(fail)?;
            Ok(Box::new(provider))
        }
        (None, true) => {
            let api_key = std::env::var(crate::provider::API_KEY_ENV)
                .ok()
                .filter(|k| !k.is_empty())
                .ok_or_else(|| {
                    CliError::Usage(format!(
                        "--live requires the {} environment variable",
                        crate::provider::API_KEY_ENV
                    ))
                })?;
            let base_url = std::env::var(API_BASE_ENV)
                .ok()
                .or_else(|| config.provider.api_base.clone())
                .unwrap_or_else(|| DEFAULT_API_BASE.to_string());
            let http = HttpProvider::new(HttpConfig {
                base_url,
                api_key,
                ..HttpConfig::default()
            });
            match record {
                Some(sink) => Ok(Box::new(RecordingProvider::new(http, sink))),
                None => Ok(Box::new(http)),
            }
        }
        (None, false) => Err(CliError::Usage("choose --replay FIXTURE or --live".into())),
        (Some(_), true) => unreachable!("clap conflicts_with"),
    }
}

fn print_cycle_summary(record: &UpdateRecord, budget: usize) {
    println!(
        "cycle {}: applied {}, rejected {}, evicted {}, tokens {} -> {} (budget {budget})",
        record.cycle,
        record.applied.len(),
        record.rejected.len(),
        record.evicted.len(),
        record.tokens_before,
        record.tokens_after,
    );
    for applied in &record.applied {
        println!("  applied {} -> {}", applied.op.describe(), applied.item_id);
    }
    for rejected in &record.rejected {
        println!("  rejected {}: {}", rejected.op.describe(), rejected.reason);
    }
    for evicted in &record.evicted {
        println!("  evicted {}", evicted.id);
    }
}

fn cmd_update(
    dir: &Path,
    trajectory_path: &Path,
    replay: Option<&Path>,
    live: bool,
    record: Option<PathBuf>,
) -> Result<(), CliError> {
    let workspace = Workspace::open(dir).map_err(fail)?;
    let _lock = workspace.lock().map_err(fail)?;
    let map = workspace.load_map().map_err(fail)?;
    let config = workspace.load_config().map_err(fail)?;

    let trajectory_text = std::fs::read_to_string(trajectory_path)
        .map_err(|e| fail(format!("{}: {e}", trajectory_path.display())))?;
    let trajectory = Trajectory::from_json(&trajectory_text)
        .map_err(|e| fail(format!("{}: {e}", trajectory_path.display())))?;

    let provider = choose_provider(replay, live, record, &config)?;
    let policy = config.to_policy();
    let counter = CharEstimateCounter;

    let (updated, update_record) =
        update_cycle(&map, &trajectory, &policy, provider.as_ref(), &counter);
    workspace.append_record(&update_record).map_err(fail)?;
    if let Some(error) = &update_record.error {
        return Err(fail(format!("update cycle failed, map unchanged: {error}")));
    }
    workspace.store_map(&updated).map_err(fail)?;
    print_cycle_summary(&update_record, updated.budget());
    Ok(())
}

fn cmd_render(dir: &Path) -> Result<(), CliError> {
    let workspace = Workspace::open(dir).map_err(fail)?;
    let map = workspace.load_map().map_err(fail)?;
    println!("{}", map.render());
    Ok(())
}

struct RunArgs<'a> {
    dir: &'a Path,
    tasks: &'a Path,
    runner: RunnerKind,
    evolve_steps: Option<u64>,
    replay: Option<&'a Path>,
    live: bool,
    record: Option<PathBuf>,
    scripts: Option<&'a Path>,
    runner_cmd: Option<&'a Path>,
    runner_args: Vec<String>,
    fail_fast: bool,
}

/// Task list: one task per line; lines starting with `{` are JSONL rows with
/// a "task" field. Blank lines are skipped.
fn load_tasks(path: &Path) -> Result<Vec<String>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    let mut tasks = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('{') {
            let value: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| fail(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            let task = value.get("task").and_then(|v| v.as_str()).ok_or_else(|| {
                fail(format!(
                    "{}:{}: row has no \"task\" field",
                    path.display(),
                    lineno + 1
                ))
            })?;
            tasks.push(task.to_string());
        } else {
            tasks.push(line.to_string());
        }
    }
    if tasks.is_empty() {
        return Err(CliError::Usage(format!("{}: no tasks", path.display())));
    }
    Ok(tasks)
}

fn cmd_run(args: RunArgs<'_>) -> Result<(), CliError> {
    let workspace = Workspace::open(args.dir).map_err(fail)?;
    let _lock = workspace.lock().map_err(fail)?;
    let map = workspace.load_map().map_err(fail)?;
    let config = workspace.load_config().map_err(fail)?;

    let tasks = load_tasks(args.tasks)?;
    let mut policy: PolicyConfig = config.to_policy();
    if let Some(m) = args.evolve_steps {
        policy.evolve_steps = m;
    }
    if args.fail_fast {
        policy.fail_fast = true;
    }

    let runner: Box<dyn AgentRunner> = match args.runner {
        RunnerKind::Scripted => {
            let scripts = args.scripts.ok_or_else(|| {
                CliError::Usage("--runner scripted requires --scripts DIR".into())
            })?;
            Box::new(ScriptedRunner::from_dir(scripts).map_err(fail)?)
        }
        RunnerKind::Command => {
            let program = args.runner_cmd.ok_or_else(|| {
                CliError::Usage("--runner command requires --runner-cmd PATH".into())
            })?;
            Box::new(CommandRunner::new(program, args.runner_args.clone()))
        }
    };

    let provider: Option<Box<dyn ChatProvider>> = if policy.evolve_steps > 0 {
        Some(choose_provider(
            args.replay,
            args.live,
            args.record.clone(),
            &config,
        )?)
    } else {
        None
    };

    let budget = map.budget();
    let counter = CharEstimateCounter;
    let mut persist_error: Option<CliError> = None;
    let outcome = run_policy(
        map,
        &tasks,
        &policy,
        runner.as_ref(),
        provider.as_deref(),
        &counter,
        &mut |updated| {
            workspace.store_map(updated).map_err(|e| {
                persist_error = Some(fail(&e));
                std::io::Error::other(e.to_string())
            })
        },
    )
    .map_err(|e| persist_error.take().unwrap_or_else(|| fail(e)))?;

    let mut record_iter = outcome.records.iter();
    let mut hard_failure = false;
    for task_outcome in &outcome.answers {
        match &task_outcome.error {
            None => println!("task {}: ok", task_outcome.index),
            Some(error) => {
                hard_failure = true;
                println!("task {}: failed: {error}", task_outcome.index);
            }
        }
        if task_outcome.error.is_none() && (task_outcome.index as u64) <= policy.evolve_steps {
            if let Some(record) = record_iter.next() {
                workspace.append_record(record).map_err(fail)?;
                match &record.error {
                    None => print_cycle_summary(record, budget),
                    Some(error) => {
                        hard_failure = true;
                        println!("cycle {}: failed: {error}", record.cycle);
                    }
                }
            }
        }
    }

    let answers_path = workspace.answers_path();
    let mut answers_file = std::fs::File::create(&answers_path)
        .map_err(|e| fail(format!("{}: {e}", answers_path.display())))?;
    for task_outcome in &outcome.answers {
        let mut line = serde_json::to_string(task_outcome).expect("outcome serializes");
        line.push('\n');
        answers_file
            .write_all(line.as_bytes())
            .map_err(|e| fail(format!("{}: {e}", answers_path.display())))?;
    }

    println!(
        "final map: {}/{} tokens, {} items",
        outcome.final_map.tokens(&counter),
        budget,
        outcome.final_map.item_count()
    );
    if hard_failure {
        return Err(fail("one or more tasks or cycles failed"));
    }
    Ok(())
}

fn cmd_evict(dir: &Path, budget: Option<usize>) -> Result<(), CliError> {
    let workspace = Workspace::open(dir).map_err(fail)?;
    let _lock = workspace.lock().map_err(fail)?;
    let mut map = workspace.load_map().map_err(fail)?;
    if let Some(budget) = budget {
        map.set_budget(budget);
    }
    let counter = CharEstimateCounter;
    let tokens_before = map.tokens(&counter);
    let (after, evicted) = crate::evict::evict_to_budget(&map, &counter).map_err(fail)?;
    workspace.store_map(&after).map_err(fail)?;
    for item in &evicted {
        println!("evicted {}", item.id);
    }
    println!(
        "tokens {tokens_before} -> {} (budget {})",
        after.tokens(&counter),
        after.budget()
    );
    Ok(())
}
