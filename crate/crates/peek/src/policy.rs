//! Policy loop: run agent task, distill, plan edits, apply, evict; repeat for
//! the first `m` tasks, then freeze the map and merely reuse it.
//!
//! Each update cycle is atomic: any stage failure returns the pre-cycle map
//! and records the error, so a bad LLM response can never corrupt the stored
//! map.

use serde::{Deserialize, Serialize};

use crate::cartographer::{plan_edits, CartographerInput};
use crate::distiller::{distill, DistillOptions, DistillerReport, LlmSettings};
use crate::edit::{apply_edits, AppliedEdit, RejectedEdit, DEFAULT_ITEM_CAP};
use crate::evict::{apply_tags, evict_to_budget, TagDelta};
use crate::map::{ContextMap, MapItem, TokenCounter};
use crate::provider::ChatProvider;
use crate::runner::{AgentRunner, RunnerError};
use crate::trajectory::Trajectory;

/// Knobs for one policy run. `evolve_steps` is the freeze parameter m:
/// updates run for tasks 1..=m only; m = 0 means pure reuse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub evolve_steps: u64,
    pub tag_delta: TagDelta,
    pub per_item_cap: usize,
    pub step_char_limit: usize,
    pub llm: LlmSettings,
    pub fail_fast: bool,
    pub retry_on_parse_error: bool,
}

impl Default for PolicyConfig {
    fn default() -> PolicyConfig {
        PolicyConfig {
            evolve_steps: 1,
            tag_delta: TagDelta::default(),
            per_item_cap: DEFAULT_ITEM_CAP,
            step_char_limit: crate::distiller::DEFAULT_STEP_CHAR_LIMIT,
            llm: LlmSettings::default(),
            fail_fast: false,
            retry_on_parse_error: true,
        }
    }
}

/// Audit record for one update cycle, serialized into records.jsonl.
#[derive(Debug, Clone, Default, Serialize)]
pub struct UpdateRecord {
    pub cycle: u64,
    /// Model that served the distiller and cartographer calls.
    pub llm_model: String,
    /// Stage names in execution order, appended as each stage completes.
    pub stages: Vec<String>,
    pub report: Option<DistillerReport>,
    pub plan_reasoning: String,
    pub applied: Vec<AppliedEdit>,
    pub rejected: Vec<RejectedEdit>,
    pub evicted: Vec<MapItem>,
    pub tokens_before: usize,
    pub tokens_after: usize,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

/// Outcome of one task inside a policy run.
#[derive(Debug, Clone, Serialize)]
pub struct TaskOutcome {
    pub index: usize,
    pub task: String,
    pub answer: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct PolicyRunOutcome {
    pub answers: Vec<TaskOutcome>,
    pub final_map: ContextMap,
    pub records: Vec<UpdateRecord>,
}

/// Renders the map into the system prefix and executes the agent. The map is
/// read-only here; failures surface with the partial trajectory attached.
pub fn run_task(
    map: &ContextMap,
    task: &str,
    runner: &dyn AgentRunner,
) -> Result<(String, Trajectory), RunnerError> {
    let system_prefix = map.render();
    let run = runner.run(&system_prefix, task)?;
    Ok((run.answer, run.trajectory))
}

/// One full cache-policy cycle in fixed stage order: distill, apply tags,
/// plan edits, apply edits, evict. Returns the updated map, or the original
/// map with `record.error` set if any stage failed.
pub fn update_cycle(
    map: &ContextMap,
    trajectory: &Trajectory,
    config: &PolicyConfig,
    provider: &dyn ChatProvider,
    counter: &dyn TokenCounter,
) -> (ContextMap, UpdateRecord) {
    let mut record = UpdateRecord {
        cycle: map.update_seq() + 1,
        llm_model: config.llm.model.clone(),
        tokens_before: map.tokens(counter),
        tokens_after: map.tokens(counter),
        ..UpdateRecord::default()
    };
    let abort = |mut record: UpdateRecord, error: String| {
        record.error = Some(error);
        record
    };

    let options = DistillOptions {
        ground_truth: None,
        agent_result: None,
        step_char_limit: config.step_char_limit,
        retry_on_parse_error: config.retry_on_parse_error,
    };
    let report = match distill(trajectory, map, provider, &config.llm, &options) {
        Ok(report) => report,
        Err(e) => return (map.clone(), abort(record, format!("distiller: {e}"))),
    };
    record.stages.push("distiller".into());
    record.warnings.extend(report.warnings.iter().cloned());

    let mut working = map.clone();
    working.increment_update_seq();

    let (tagged, tag_warnings) = apply_tags(&working, &report.item_tags, &config.tag_delta);
    record.stages.push("apply_tags".into());
    record.warnings.extend(tag_warnings);

    let input = CartographerInput {
        report: &report,
        map: &tagged,
        question_text: &trajectory.task_text,
        budget: map.budget(),
        current_tokens: tagged.tokens(counter),
    };
    let planned = match plan_edits(&input, provider, &config.llm, config.retry_on_parse_error) {
        Ok(planned) => planned,
        Err(e) => return (map.clone(), abort(record, format!("cartographer: {e}"))),
    };
    record.stages.push("cartographer".into());
    record.warnings.extend(planned.warnings.iter().cloned());
    record.plan_reasoning = planned.edits.reasoning.clone();

    let outcome = match apply_edits(&tagged, &planned.edits, counter, config.per_item_cap) {
        Ok(outcome) => outcome,
        Err(e) => return (map.clone(), abort(record, format!("apply_edits: {e}"))),
    };
    record.stages.push("apply_edits".into());
    record.applied = outcome.applied.clone();
    record.rejected = outcome.rejected.clone();

    let (final_map, evicted) = match evict_to_budget(&outcome.map_after, counter) {
        Ok(result) => result,
        Err(e) => return (map.clone(), abort(record, format!("evictor: {e}"))),
    };
    record.stages.push("evictor".into());
    record.evicted = evicted;
    record.tokens_after = final_map.tokens(counter);
    record.report = Some(report);

    (final_map, record)
}

/// Algorithm driver: for each task, run the agent with the current map
/// prepended; update the map for the first `m` tasks and persist after each
/// completed cycle. After task m the map is frozen byte-for-byte.
///
/// `persist` is called with every successfully updated map; per-task failures
/// are recorded and the loop continues unless `fail_fast` is set.
pub fn run_policy(
    initial_map: ContextMap,
    tasks: &[String],
    config: &PolicyConfig,
    runner: &dyn AgentRunner,
    provider: Option<&dyn ChatProvider>,
    counter: &dyn TokenCounter,
    persist: &mut dyn FnMut(&ContextMap) -> std::io::Result<()>,
) -> std::io::Result<PolicyRunOutcome> {
    let mut map = initial_map;
    let mut answers = Vec::with_capacity(tasks.len());
    let mut records = Vec::new();

    for (i, task) in tasks.iter().enumerate() {
        let index = i + 1;
        let (answer, trajectory) = match run_task(&map, task, runner) {
            Ok(result) => result,
            Err(e) => {
                answers.push(TaskOutcome {
                    index,
                    task: task.clone(),
                    answer: None,
                    error: Some(e.to_string()),
                });
                if config.fail_fast {
                    break;
                }
                continue;
            }
        };
        answers.push(TaskOutcome {
            index,
            task: task.clone(),
            answer: Some(answer),
            error: None,
        });

        if (index as u64) <= config.evolve_steps {
            let record = match provider {
                Some(provider) => {
                    let (updated, record) =
                        update_cycle(&map, &trajectory, config, provider, counter);
                    if record.error.is_none() {
                        map = updated;
                        persist(&map)?;
                    }
                    record
                }
                None => UpdateRecord {
                    cycle: map.update_seq() + 1,
                    llm_model: config.llm.model.clone(),
                    tokens_before: map.tokens(counter),
                    tokens_after: map.tokens(counter),
                    error: Some("no provider configured for update cycle".into()),
                    ..UpdateRecord::default()
                },
            };
            let failed = record.error.is_some();
            records.push(record);
            if failed && config.fail_fast {
                break;
            }
        }
    }

    Ok(PolicyRunOutcome {
        answers,
        final_map: map,
        records,
    })
}
