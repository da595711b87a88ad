//! Cartographer stage: turns a Distiller report into a structured edit set
//! against the current map. Builds the curator prompt, invokes the provider,
//! parses the ADD/DELETE/REPLACE operations, and pre-filters ADD contents
//! through engine-side dedup.
//!
//! The Cartographer never evicts: even when it proposes DELETEs to free
//! budget, the Evictor stays the sole budget enforcer.

use crate::distiller::{DistillerReport, LlmSettings, ParseError, PipelineError};
use crate::edit::{dedup_candidates, EditOp, EditSet};
use crate::json_extract::extract_first_json_object;
use crate::map::{ContextMap, ItemId, SectionKind};
use crate::prompt::fill;
use crate::provider::{ChatMessage, ChatProvider, ChatRequest};

const CARTOGRAPHER_TEMPLATE: &str = r#"You are a context map curator. You maintain a concise, high-value context map that is prepended to an RLM (Recursive Language Model) agent. The agent uses a REPL environment to explore long contexts via code execution and sub-LM calls, then assembles a final answer.

The context map captures the agent's evolving **understanding** of the context — NOT answers to specific questions. Think of it as the mental model a human builds after reading a document: structure, key entities, relationships, and global summaries that help with ANY question about the content.

**HARD BUDGET: {token_budget} tokens. Current usage: {current_tokens}/{token_budget} tokens.**

## Instructions

- Review the latest reflection and the current context map
- **Prioritize items that represent shared understanding** — knowledge useful across many different questions about this context
- **Demote or remove question-specific facts** — items that only help answer one particular query
- Keep items that are **structural, relational, or globally informative** about this context
- Remove items that are stale, misleading, redundant, low-value, or not worth their budget
- Rewrite items when a more compact or more useful version exists
- Add new items only when they represent transferable understanding
- Prefer REPLACE over ADD when possible
- Each item must be short and budget-efficient — **max ~80 tokens per item**. If an item exceeds this, rewrite it more compactly or split it.
- If nothing new is worth keeping, return an empty operations list

**The litmus test**: For each item, ask "Would a future agent asking a completely *different* question about this context benefit from knowing this?" If not, it probably isn't worth the budget.

**Value priority** (highest to lowest):
1. **Context understanding**: entity/concept inventories (key actors, data categories, and their roles/relationships), global summaries (what this context is about, key themes), and any structural knowledge that orients the agent for arbitrary questions
2. **Domain constants**: exact values the context defines that computation depends on — numeric thresholds, rates, formulas, conversion factors, reference ranges, enum sets, required output field names/types. These must remain numerically precise — do not abstract them.
3. **Context roadmap**: section/chapter/document index with topics and approximate locations — a Table of Contents the agent won't have to rebuild
4. **Reusable results**: agent-derived aggregated outputs (counts, distributions, classifications) from processing the full context that multiple questions would need. Note the computation method to judge reliability.
5. **Parsing schema**: format observations, delimiters, splitting methods — cheap to rediscover but saves one iteration
6. **Error patterns**: concrete failure modes observed during processing

**Do NOT add:**
- Facts that answer only one specific question (e.g., a verbatim quote resolving a single query)
- Raw data dumps or lengthy excerpts copied verbatim from the context — abstract these into higher-level understanding
- Advisory rules, warnings, or meta-instructions ("always do X", "never do Y") — these consume budget and are not reliably followed by the agent
- Verbose passages or long excerpts — prefer compact summaries

**Do NOT abstract away:**
- Exact numeric values (thresholds, rates, formulas, conversion factors) that the context defines for computation
- Reference values, enum sets, or allowed value lists that the context specifies
- Output field names, types, and structural requirements
- These are **domain constants**, not raw data. They must remain precise to be useful.

**Budget triage** — when near/over budget, cut items in this order (lowest value first):
1. Question-specific facts that only helped one query
2. Error patterns (situational; may not apply to the next question)
3. Parsing schema (cheap to rediscover)
4. Context roadmap items (the agent can rebuild these in one iteration)
5. Reusable results (agent-derived computations)
6. Domain constants and context understanding — protect these most

## Inputs

- Reflection from the latest task attempt:
<<<REFLECTION>>>
{reflection}
<<<REFLECTION>>>

- Current context map:
<<<CONTEXT_MAP>>>
{current_playbook}
<<<CONTEXT_MAP>>>

- Task context (the question the agent was answering):
{question_context}

## Available Sections

- `context_roadmap` — a Table of Contents / directory for the context: what documents or sections exist, what topics they cover, and where to find relevant information (like a book's ToC)
- `context_understanding` — the agent's accumulated understanding of the context: key entities/characters and their roles, relationships between concepts, global summaries, data category inventories — knowledge that orients the agent for any question (optional — skip if the initial context map does not include this section)
- `domain_constants` — exact parameters, formulas, thresholds, reference values, enum sets, and output field requirements defined by the context. Keep numerically precise — these are lookup values, not summaries (optional — skip if the initial context map does not include this section)
- `parsing_schema` — how to parse the context format: document delimiters, boundary patterns, field structure, reliable splitting methods (optional — skip if the initial context map does not include this section)
- `error_patterns` — concrete, factual failure modes observed during processing (e.g., "Document X has malformed encoding", "nested tags break naive regex"). NOT advisory rules. (optional — skip if the initial context map does not include this section)
- `reusable_results` — agent-derived outputs from substantive processing of the context (counts, classifications, aggregated computations) that multiple questions would need

## Available Operations

1. **ADD**
   `{"type": "ADD", "section": "<section_name>", "content": "<short item>"}`

2. **DELETE**
   `{"type": "DELETE", "item_id": "<id>"}`

3. **REPLACE**
   `{"type": "REPLACE", "item_id": "<id>", "content": "<short item>"}`

## Output Format

Return ONLY a valid JSON object with these exact fields:
{
  "reasoning": "[Brief explanation of why these edits improve the shared understanding cached in the context map]",
  "operations": [
    {"type": "ADD", "section": "context_understanding", "content": "..."},
    {"type": "DELETE", "item_id": "rr-00003"},
    {"type": "REPLACE", "item_id": "cr-00001", "content": "..."}
  ]
}"#;

const FORMAT_REMINDER: &str = "Your previous reply could not be parsed. Return ONLY one valid JSON object with exactly the fields \"reasoning\" and \"operations\" — no code fences, no surrounding prose.";

/// Reflection slot text when the Distiller produced nothing actionable.
pub const NO_FINDINGS_SENTINEL: &str = "(no findings from this run)";

/// Everything the Cartographer prompt needs about the current state.
#[derive(Debug, Clone)]
pub struct CartographerInput<'a> {
    pub report: &'a DistillerReport,
    pub map: &'a ContextMap,
    pub question_text: &'a str,
    pub budget: usize,
    /// Rendered size of `map` at build time.
    pub current_tokens: usize,
}

/// Parsed edit set plus recoverable parse warnings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlannedEdits {
    pub edits: EditSet,
    pub warnings: Vec<String>,
}

/// Renders a Distiller report as labeled plain-text blocks for the
/// `{reflection}` slot.
pub fn render_reflection(report: &DistillerReport) -> String {
    if report.is_empty() {
        return NO_FINDINGS_SENTINEL.to_string();
    }
    let mut out = String::new();

    out.push_str("DIAGNOSIS:\n");
    if report.diagnosis.trim().is_empty() {
        out.push_str("(none)");
    } else {
        out.push_str(report.diagnosis.trim());
    }

    out.push_str("\n\nITEM TAGS:\n");
    if report.item_tags.is_empty() {
        out.push_str("(none)");
    } else {
        let lines: Vec<String> = report
            .item_tags
            .iter()
            .map(|(id, tag)| format!("- {id}: {}", tag.name()))
            .collect();
        out.push_str(&lines.join("\n"));
    }

    out.push_str("\n\nCANDIDATES:\n");
    if report.candidates.is_empty() {
        out.push_str("(none)");
    } else {
        let blocks: Vec<String> = report
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                format!(
                    "{}. [{}] {}\n   transferability: {}\n   rationale: {}",
                    i + 1,
                    c.section,
                    c.value,
                    c.transferability,
                    c.rationale
                )
            })
            .collect();
        out.push_str(&blocks.join("\n"));
    }

    out
}

pub fn build_cartographer_prompt(input: &CartographerInput<'_>) -> String {
    let reflection = render_reflection(input.report);
    let playbook = input.map.render();
    let budget = input.budget.to_string();
    let current = input.current_tokens.to_string();
    fill(
        CARTOGRAPHER_TEMPLATE,
        &[
            ("token_budget", &budget),
            ("current_tokens", &current),
            ("reflection", &reflection),
            ("current_playbook", &playbook),
            ("question_context", input.question_text),
        ],
    )
}

/// Total parser with the same JSON-extraction discipline as the Distiller's.
/// Unknown op types, unknown sections, malformed ids and missing fields drop
/// the single operation with a warning; an empty operations list is valid.
pub fn parse_cartographer_response(text: &str) -> Result<PlannedEdits, ParseError> {
    let value = extract_first_json_object(text)?;
    let mut warnings = Vec::new();

    let reasoning = match value.get("reasoning") {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(other) => {
            warnings.push(format!(
                "field \"reasoning\" is not a string (got {other}), ignored"
            ));
            String::new()
        }
        None => {
            warnings.push("field \"reasoning\" missing".to_string());
            String::new()
        }
    };

    let mut operations = Vec::new();
    match value.get("operations") {
        Some(serde_json::Value::Array(entries)) => {
            for (i, entry) in entries.iter().enumerate() {
                match parse_operation(entry) {
                    Ok(op) => operations.push(op),
                    Err(reason) => warnings.push(format!("operations[{i}]: {reason}, dropped")),
                }
            }
        }
        Some(other) => warnings.push(format!("operations is not an array (got {other}), ignored")),
        None => warnings.push("field \"operations\" missing".to_string()),
    }

    Ok(PlannedEdits {
        edits: EditSet {
            reasoning,
            operations,
        },
        warnings,
    })
}

fn parse_operation(entry: &serde_json::Value) -> Result<EditOp, String> {
    let op_type = entry
        .get("type")
        .and_then(|v| v.as_str())
        .ok_or_else(|| "missing \"type\"".to_string())?;
    match op_type.to_ascii_uppercase().as_str() {
        "ADD" => {
            let section_text = entry
                .get("section")
                .and_then(|v| v.as_str())
                .ok_or_else(|| "ADD missing \"section\"".to_string())?;
            let section = SectionKind::from_name(section_text.trim().to_ascii_lowercase().as_str())
                .ok_or_else(|| format!("unknown section {section_text:?}"))?;
            let content = entry
                .get("content")
                .and_then(|v| v.as_str())
                .ok_or_else(|| "ADD missing \"content\"".to_string())?;
            Ok(EditOp::Add {
                section,
                content: content.to_string(),
            })
        }
        "DELETE" => {
            let id_text = entry
                .get("item_id")
                .and_then(|v| v.as_str())
                .ok_or_else(|| "DELETE missing \"item_id\"".to_string())?;
            let item_id = ItemId::parse(id_text.trim()).map_err(|e| e.to_string())?;
            Ok(EditOp::Delete { item_id })
        }
        "REPLACE" => {
            let id_text = entry
                .get("item_id")
                .and_then(|v| v.as_str())
                .ok_or_else(|| "REPLACE missing \"item_id\"".to_string())?;
            let item_id = ItemId::parse(id_text.trim()).map_err(|e| e.to_string())?;
            let content = entry
                .get("content")
                .and_then(|v| v.as_str())
                .ok_or_else(|| "REPLACE missing \"content\"".to_string())?;
            Ok(EditOp::Replace {
                item_id,
                content: content.to_string(),
            })
        }
        other => Err(format!("unknown operation type {other:?}")),
    }
}

/// Drops ADD operations whose content duplicates an existing same-section
/// item or an earlier surviving ADD, via [`dedup_candidates`]. DELETE and
/// REPLACE pass through; relative order is preserved.
pub fn dedup_edit_set(map: &ContextMap, edits: &EditSet) -> EditSet {
    let adds: Vec<(SectionKind, String)> = edits
        .operations
        .iter()
        .filter_map(|op| match op {
            EditOp::Add { section, content } => Some((*section, content.clone())),
            _ => None,
        })
        .collect();
    let mut surviving = dedup_candidates(map, &adds).into_iter();
    let mut next_survivor = surviving.next();

    let operations = edits
        .operations
        .iter()
        .filter(|op| match op {
            EditOp::Add { section, content } => match &next_survivor {
                Some((s, c)) if s == section && c == content => {
                    next_survivor = surviving.next();
                    true
                }
                _ => false,
            },
            _ => true,
        })
        .cloned()
        .collect();
    EditSet {
        reasoning: edits.reasoning.clone(),
        operations,
    }
}

/// Build, call, parse, dedup. Shares the Distiller's one-retry policy on
/// parse failures.
pub fn plan_edits(
    input: &CartographerInput<'_>,
    provider: &dyn ChatProvider,
    llm: &LlmSettings,
    retry_on_parse_error: bool,
) -> Result<PlannedEdits, PipelineError> {
    let prompt = build_cartographer_prompt(input);
    let request = ChatRequest {
        model: llm.model.clone(),
        messages: vec![ChatMessage::user(&prompt)],
        temperature: llm.temperature,
    };
    let response = provider.complete(&request)?;
    let parsed = match parse_cartographer_response(&response.content) {
        Ok(parsed) => parsed,
        Err(first_err) if retry_on_parse_error => {
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
            let mut parsed =
                parse_cartographer_response(&retry_response.content).map_err(|source| {
                    PipelineError::Parse {
                        source,
                        retried: true,
                    }
                })?;
            parsed.warnings.insert(
                0,
                format!("first response failed to parse ({first_err}); retry succeeded"),
            );
            parsed
        }
        Err(source) => {
            return Err(PipelineError::Parse {
                source,
                retried: false,
            })
        }
    };

    let before = parsed.edits.operations.len();
    let edits = dedup_edit_set(input.map, &parsed.edits);
    let mut warnings = parsed.warnings;
    let dropped = before - edits.operations.len();
    if dropped > 0 {
        warnings.push(format!(
            "{dropped} duplicate ADD operation(s) dropped by dedup"
        ));
    }
    Ok(PlannedEdits { edits, warnings })
}
