//! Distiller stage: builds the trajectory-review prompt, invokes the
//! provider, and parses the response into a [`DistillerReport`] (diagnosis,
//! per-item tags, cache candidates).
//!
//! By default the Distiller runs ground-truth-free: the ground-truth and
//! agent-result slots carry their "not applicable" sentinels and the model
//! works from execution signals alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evict::Tag;
use crate::json_extract::{extract_first_json_object, JsonExtractError};
use crate::map::{ContextMap, ItemId, SectionKind};
use crate::prompt::fill;
use crate::provider::{ChatMessage, ChatProvider, ChatRequest, ProviderError};
use crate::trajectory::Trajectory;

/// Default per-step character limit when serializing trajectories.
pub const DEFAULT_STEP_CHAR_LIMIT: usize = 20_000;

/// Marker appended to step content cut at the limit.
pub const TRUNCATION_MARKER: &str = "…[truncated]";

pub const GROUND_TRUTH_SENTINEL: &str = "[Ground Truth not applicable]";
pub const AGENT_RESULT_SENTINEL: &str = "[Agent's result not applicable]";

const DISTILLER_TEMPLATE: &str = r#"You are an expert analyst reviewing a Recursive Language Model (RLM) agent's attempt to answer questions by interacting with long context.

## What is an RLM?

An RLM transforms a single `lm.completion(context, query)` call into a controller-style inference loop. Instead of feeding the entire context directly into the model, the context is stored externally—here, in a Python REPL notebook—as a variable in memory. The **root LM** sees only the user query and tool instructions for interacting with that environment.

The root LM emits code blocks that:
- Inspect slices of the context
- Run string/regex searches
- Chunk or transform data
- Accumulate intermediate results in variables
- Invoke sub-LM calls on selected substrings or derived summaries

In the minimal implementation, recursion is limited to depth 1, though the design can be extended. After each execution, the REPL returns truncated outputs to the root LM. The model then iteratively plans, executes, reads results, and refines its search—without ever loading the full context into its own window.

The loop terminates when the model emits `FINAL(...)` or `FINAL_VAR(...)`, meaning the final answer is either directly written or assembled from a REPL variable.

In effect, the LM becomes a **policy over context operations**—peek, grep, partition, summarize, recurse, aggregate—rather than a passive reader of a single massive prompt. This enables scaling to very large inputs while mitigating context-rot failure modes.

## Your Task

You will be provided with:
1. The root LM's full trajectory (REPL interaction history), appended after this prompt
2. The ground truth answer and the agent's predicted answer (Optional)
3. A **context map** currently prepended to the agent as a small fixed-budget map

The context map is a compact **cache** that captures the agent's evolving *understanding* of this context. Its purpose is NOT to store answers to specific questions. Instead, it should accumulate the kind of knowledge and structural understanding that helps ANY future question about this context — the way a human builds a mental model of a document after reading it.

Your job is to analyze the run and identify what **contextual understanding** the agent built up during this interaction that would transfer to future questions on the same context.

## Key Principle: Cache Understanding, Not Answers

Observe what the agent spent iterations doing. Much of its work falls into two categories:
1. **Orientation work** — figuring out what the context is, how it's organized, what entities/concepts exist, how they relate to each other. This understanding transfers to ANY future question.
2. **Question-specific work** — locating the specific passage or fact needed for THIS question. This rarely helps other questions.

Focus on caching category (1). Ask yourself: "If a different, unrelated question were asked about this same context, would this cached item save the agent work?"

## Produce three outputs

### 1. Diagnosis
Briefly explain what went right or wrong in the run. Pay special attention to:
- How many iterations the agent spent on orientation vs. question-specific work
- Whether the agent re-discovered structural information that was already available (or should have been cached)
- What kind of contextual understanding the agent built that could transfer

### 2. Context Map Item Review
For EVERY item in the current context map, tag it as exactly one of:
- `helpful` — the item directly helped or would directly help this run
- `harmful` — the item is misleading, incorrect, or actively hurts performance
- `neutral` — the item is correct domain knowledge that wasn't relevant to THIS specific question but would plausibly help other questions
- `stale` — the item is outdated, superseded, or no longer accurate

When tagging, distinguish between "not needed for this question" (neutral) and "not useful for any question" (harmful/stale). Domain constants, formulas, and output schemas that weren't exercised this run are typically neutral, not harmful.

### 3. Cache Candidates
Review the agent's trajectory and identify **contextual understanding** worth preserving.

**Prefer abstractions over raw data — but preserve exact parameters.** If the agent copied lengthy records or data dumps, abstract them. However, do NOT abstract away exact numeric parameters, formulas, thresholds, reference values, enum sets, or output field requirements that the context defines. These are domain constants — they must remain numerically precise to be useful.

**Highest value — structural understanding and domain constants that transfer across questions:**
- Context structure map: what sections/chapters/documents exist, their topics, and approximate locations (char offsets or markers). Like a Table of Contents the agent won't have to rebuild.
- Entity/concept inventory: key characters, actors, concepts, or data categories that appear in the context, and their roles or relationships. A brief "cast of characters" or "glossary" that orients the agent. (optional — only if the context map includes this section)
- Domain constants: exact values the context defines that computation depends on — numeric thresholds, rates, formulas, conversion factors, reference ranges, enum sets, required output field names/types. Keep these precise. (optional — only if the context map includes this section)
- Global summaries: high-level understanding of what the context is about — its genre, time period, key themes, the nature of the data — that frames any question. (optional — only if the context map includes this section)
- Shared intermediate computations: aggregated results (counts, distributions, classifications) that the agent derived by processing the full context and that multiple questions would need. Note how the result was computed.

**Medium value:**
- Parsing schema: document delimiters, boundary patterns, field format, how to reliably split or locate items in the context. (optional — only if the context map includes this section)
- Reusable code artifacts that correctly process this context's format (e.g., extraction functions, classifiers).
- Error patterns: concrete failure modes observed (e.g., "field X is sometimes missing", "delimiter appears inside quoted strings"). (optional — only if the context map includes this section)

**Low value — avoid unless budget permits:**
- Facts that answer only one specific question (e.g., a verbatim quote that resolves a single query).
- Verbose passages or long excerpts. Prefer compact summaries.

**Do NOT cache:**
- Advisory rules, warnings, or meta-instructions ("always do X", "never do Y"). The cache is for understanding, not instructions.
- Results from naive surface-level text operations (e.g., `str.count()` for frequency estimation).
- Verbatim answers to the current question.

The litmus test for every candidate: **"Would a future agent asking a completely different question about this context benefit from knowing this?"**

## Inputs

- Ground truth:
<<<GROUND_TRUTH>>>
{ground_truth}
<<<GROUND_TRUTH>>>

- Agent's result:
<<<AGENT_RESULT>>>
{agent_result}
<<<AGENT_RESULT>>>

- Current context map:
<<<CONTEXT_MAP>>>
{playbook}
<<<CONTEXT_MAP>>>

- Agent's trajectory:
{trace_history}

## Output Format

Return a JSON object with exactly these fields:
{
  "diagnosis": "[Brief analysis of orientation vs. question-specific work, and what transferable understanding the agent built]",
  "item_tags": {
    "<item_id>": "helpful | harmful | neutral | stale",
    ...
  },
  "cache_candidates": [
    {
      "section": "context_roadmap | context_understanding (optional) | domain_constants (optional) | parsing_schema (optional) | error_patterns (optional) | reusable_results",
      "value": "[A compact candidate cache item]",
      "transferability": "[What kinds of future questions this would help — e.g., 'any question about character motivations', 'any question requiring locating a specific scene', 'all aggregation questions']",
      "rationale": "[Why this represents shared understanding rather than a question-specific fact]"
    }
  ]
}"#;

const FORMAT_REMINDER: &str = "Your previous reply could not be parsed. Return ONLY one valid JSON object with exactly the fields \"diagnosis\", \"item_tags\", and \"cache_candidates\" — no code fences, no surrounding prose.";

/// One proposed cache entry extracted from a trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheCandidate {
    pub section: SectionKind,
    pub value: String,
    pub transferability: String,
    pub rationale: String,
}

/// The Distiller's three outputs plus any parse warnings.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DistillerReport {
    pub diagnosis: String,
    pub item_tags: BTreeMap<ItemId, Tag>,
    pub candidates: Vec<CacheCandidate>,
    pub warnings: Vec<String>,
}

impl DistillerReport {
    pub fn is_empty(&self) -> bool {
        self.diagnosis.trim().is_empty() && self.item_tags.is_empty() && self.candidates.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error(transparent)]
    NoJson(#[from] JsonExtractError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("response did not parse (retried: {retried}): {source}")]
    Parse { source: ParseError, retried: bool },
}

#[derive(Debug, Clone)]
pub struct DistillOptions {
    /// Fills the GROUND_TRUTH slot when provided; sentinel otherwise.
    pub ground_truth: Option<String>,
    /// Fills the AGENT_RESULT slot when provided; sentinel otherwise.
    pub agent_result: Option<String>,
    pub step_char_limit: usize,
    /// One retry with a format reminder when the response fails to parse.
    pub retry_on_parse_error: bool,
}

impl Default for DistillOptions {
    fn default() -> DistillOptions {
        DistillOptions {
            ground_truth: None,
            agent_result: None,
            step_char_limit: DEFAULT_STEP_CHAR_LIMIT,
            retry_on_parse_error: true,
        }
    }
}

/// Model settings for pipeline calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSettings {
    pub model: String,
    pub temperature: Option<f64>,
}

impl Default for LlmSettings {
    fn default() -> LlmSettings {
        LlmSettings {
            model: "gpt-5-mini".to_string(),
            temperature: None,
        }
    }
}

fn truncate_step(content: &str, limit: usize) -> String {
    let mut chars = content.char_indices();
    match chars.nth(limit) {
        None => content.to_string(),
        Some((byte_pos, _)) => format!("{}{}", &content[..byte_pos], TRUNCATION_MARKER),
    }
}

/// Serializes steps as `ITERATION k — ACTOR:` blocks separated by blank
/// lines, truncating each step's content at the character limit.
pub fn serialize_trajectory(traj: &Trajectory, step_char_limit: usize) -> String {
    if traj.steps.is_empty() {
        return "(empty trajectory)".to_string();
    }
    let mut blocks = Vec::with_capacity(traj.steps.len());
    for step in &traj.steps {
        blocks.push(format!(
            "ITERATION {} — {}:\n{}",
            step.index,
            step.actor.label(),
            truncate_step(&step.content, step_char_limit)
        ));
    }
    blocks.join("\n\n")
}

/// Deterministic prompt construction: identical (trajectory, map, options)
/// yield byte-identical prompts.
pub fn build_distiller_prompt(
    traj: &Trajectory,
    map: &ContextMap,
    options: &DistillOptions,
) -> String {
    let ground_truth = options
        .ground_truth
        .as_deref()
        .unwrap_or(GROUND_TRUTH_SENTINEL);
    let agent_result = options
        .agent_result
        .as_deref()
        .unwrap_or(AGENT_RESULT_SENTINEL);
    let playbook = map.render();
    let trace = serialize_trajectory(traj, options.step_char_limit);
    fill(
        DISTILLER_TEMPLATE,
        &[
            ("ground_truth", ground_truth),
            ("agent_result", agent_result),
            ("playbook", &playbook),
            ("trace_history", &trace),
        ],
    )
}

fn string_field(value: &serde_json::Value, key: &str, warnings: &mut Vec<String>) -> String {
    match value.get(key) {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(other) => {
            warnings.push(format!(
                "field \"{key}\" is not a string (got {other}), ignored"
            ));
            String::new()
        }
        None => {
            warnings.push(format!("field \"{key}\" missing"));
            String::new()
        }
    }
}

/// Total parser: any text yields either a report or a typed [`ParseError`];
/// recoverable oddities (unknown tags or sections, non-string fields) become
/// warnings instead of failures.
pub fn parse_distiller_response(text: &str) -> Result<DistillerReport, ParseError> {
    let value = extract_first_json_object(text)?;
    let mut warnings = Vec::new();

    let diagnosis = string_field(&value, "diagnosis", &mut warnings);

    let mut item_tags = BTreeMap::new();
    match value.get("item_tags") {
        Some(serde_json::Value::Object(map)) => {
            for (key, tag_value) in map {
                let id = match ItemId::parse(key) {
                    Ok(id) => id,
                    Err(_) => {
                        warnings.push(format!(
                            "item_tags key {key:?} is not a valid item id, skipped"
                        ));
                        continue;
                    }
                };
                let tag_text = tag_value.as_str().unwrap_or_default();
                let tag = match Tag::parse(tag_text) {
                    Some(tag) => tag,
                    None => {
                        warnings.push(format!(
                            "unknown tag {tag_text:?} for {id}, downgraded to neutral"
                        ));
                        Tag::Neutral
                    }
                };
                item_tags.insert(id, tag);
            }
        }
        Some(other) => warnings.push(format!("item_tags is not an object (got {other}), ignored")),
        None => warnings.push("field \"item_tags\" missing".to_string()),
    }

    let mut candidates = Vec::new();
    match value.get("cache_candidates") {
        Some(serde_json::Value::Array(entries)) => {
            for (i, entry) in entries.iter().enumerate() {
                let section_text = entry.get("section").and_then(|v| v.as_str()).unwrap_or("");
                let section = match SectionKind::from_name(section_text.trim()) {
                    Some(section) => section,
                    None => {
                        warnings.push(format!(
                            "cache_candidates[{i}]: unknown section {section_text:?}, dropped"
                        ));
                        continue;
                    }
                };
                let value_text = entry
                    .get("value")
                    .and_then(|v| v.as_str())
                    .unwrap_or("")
                    .to_string();
                if value_text.trim().is_empty() {
                    warnings.push(format!("cache_candidates[{i}]: empty value, dropped"));
                    continue;
                }
                candidates.push(CacheCandidate {
                    section,
                    value: value_text,
                    transferability: entry
                        .get("transferability")
                        .and_then(|v| v.as_str())
                        .unwrap_or("")
                        .to_string(),
                    rationale: entry
                        .get("rationale")
                        .and_then(|v| v.as_str())
                        .unwrap_or("")
                        .to_string(),
                });
            }
        }
        Some(other) => warnings.push(format!(
            "cache_candidates is not an array (got {other}), ignored"
        )),
        None => warnings.push("field \"cache_candidates\" missing".to_string()),
    }

    Ok(DistillerReport {
        diagnosis,
        item_tags,
        candidates,
        warnings,
    })
}

/// Build prompt, call the provider once, parse; optionally retry once with a
/// format reminder appended as a second user turn.
pub fn distill(
    traj: &Trajectory,
    map: &ContextMap,
    provider: &dyn ChatProvider,
    llm: &LlmSettings,
    options: &DistillOptions,
) -> Result<DistillerReport, PipelineError> {
    let prompt = build_distiller_prompt(traj, map, options);
    let request = ChatRequest {
        model: llm.model.clone(),
        messages: vec![ChatMessage::user(&prompt)],
        temperature: llm.temperature,
    };
    let response = provider.complete(&request)?;
    match parse_distiller_response(&response.content) {
        Ok(report) => Ok(report),
        Err(first_err) if options.retry_on_parse_error => {
            let retry_request = ChatRequest {
                model: llm.model.clone(),
                messages: vec![
                    ChatMessage::user(&prompt),
                    ChatMessage::assistant(&response.content),
                    ChatMessage::user(FORMAT_REMINDER),
                ],
                temperature: llm.temperature,
            };
            let retry_response = provider.complete(&retry_request)?;
            parse_distiller_response(&retry_response.content)
                .map_err(|source| PipelineError::Parse {
                    source,
                    retried: true,
                })
                .map(|mut report| {
                    report.warnings.insert(
                        0,
                        format!("first response failed to parse ({first_err}); retry succeeded"),
                    );
                    report
                })
        }
        Err(source) => Err(PipelineError::Parse {
            source,
            retried: false,
        }),
    }
}
