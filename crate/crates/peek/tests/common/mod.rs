//! Shared helpers for integration tests: random map generation through the
//! public document schema, and independent oracles for rendering and
//! eviction that deliberately do not call the library's implementations.

#![allow(dead_code)]

use peek::map::{CharEstimateCounter, ContextMap, SectionKind};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub const BUDGETS: [usize; 3] = [512, 1024, 2048];

/// Plain description of one item, independent of library types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecItem {
    pub section: &'static str,
    pub serial: u32,
    pub text: String,
    pub created_seq: u64,
    pub modified_seq: u64,
    pub score: i64,
}

pub const SECTION_NAMES: [&str; 6] = [
    "context_roadmap",
    "context_understanding",
    "domain_constants",
    "parsing_schema",
    "error_patterns",
    "reusable_results",
];

const PREFIXES: [&str; 6] = ["cr", "cu", "dc", "ps", "ep", "rr"];

const HEADINGS: [&str; 6] = [
    "## CONTEXT ROADMAP",
    "## CONTEXT UNDERSTANDING",
    "## DOMAIN CONSTANTS",
    "## PARSING SCHEMA",
    "## ERROR PATTERNS",
    "## REUSABLE RESULTS",
];

const PLACEHOLDERS: [&str; 6] = [
    "(Index of what the context contains and where to find it)",
    "(High-level understanding of the context: what it is, how it's organized, and what matters)",
    "(Exact parameters, formulas, thresholds, reference values, enum sets, and output field requirements defined by the context.)",
    "(How to parse and navigate the context's format)",
    "(Concrete, factual failure modes observed while processing the context)",
    "(Reusable knowledge about the context)",
];

/// Eviction tier per section index, restated from the contract: parsing
/// schema first, then error patterns, reusable results, domain constants;
/// roadmap and understanding protected last.
const TIERS: [u8; 6] = [4, 4, 3, 0, 1, 2];

pub fn section_index(name: &str) -> usize {
    SECTION_NAMES.iter().position(|s| *s == name).unwrap()
}

/// Independent re-statement of the rendering contract.
pub fn oracle_render(items: &[SpecItem]) -> String {
    let mut blocks = Vec::with_capacity(6);
    for (i, heading) in HEADINGS.iter().enumerate() {
        let mut lines = vec![heading.to_string()];
        let mut section_items: Vec<&SpecItem> = items
            .iter()
            .filter(|item| section_index(item.section) == i)
            .collect();
        section_items.sort_by_key(|item| (item.created_seq, item.serial));
        if section_items.is_empty() {
            lines.push(PLACEHOLDERS[i].to_string());
        } else {
            for item in section_items {
                lines.push(format!(
                    "- [{}-{:05}] {}",
                    PREFIXES[i], item.serial, item.text
                ));
            }
        }
        blocks.push(lines.join("\n"));
    }
    blocks.join("\n\n")
}

pub fn oracle_tokens(items: &[SpecItem]) -> usize {
    oracle_render(items).chars().count().div_ceil(4)
}

/// Independent eviction key: (tier, score, created_seq, serial, section).
pub fn oracle_eviction_key(item: &SpecItem) -> (u8, i64, u64, u32, usize) {
    let idx = section_index(item.section);
    (TIERS[idx], item.score, item.created_seq, item.serial, idx)
}

/// Brute-force oracle: sort all items by the eviction key and drop the
/// shortest prefix that brings the rendering under budget. Returns the
/// survivors (in no particular order) and the dropped prefix in drop order.
pub fn oracle_evict(items: &[SpecItem], budget: usize) -> Option<(Vec<SpecItem>, Vec<SpecItem>)> {
    let mut order: Vec<SpecItem> = items.to_vec();
    order.sort_by_key(oracle_eviction_key);
    for dropped in 0..=order.len() {
        let survivors: Vec<SpecItem> = order[dropped..].to_vec();
        if oracle_tokens(&survivors) <= budget {
            return Some((survivors, order[..dropped].to_vec()));
        }
    }
    None
}

/// Renders the item set as a schema-v1 document and loads it through the
/// public deserializer.
pub fn build_map(items: &[SpecItem], budget: usize, update_seq: u64) -> ContextMap {
    let mut sections = serde_json::Map::new();
    let mut next_serial = serde_json::Map::new();
    for (i, name) in SECTION_NAMES.iter().enumerate() {
        let mut section_items: Vec<&SpecItem> = items
            .iter()
            .filter(|item| section_index(item.section) == i)
            .collect();
        section_items.sort_by_key(|item| (item.created_seq, item.serial));
        let rows: Vec<serde_json::Value> = section_items
            .iter()
            .map(|item| {
                serde_json::json!({
                    "id": format!("{}-{:05}", PREFIXES[i], item.serial),
                    "text": item.text,
                    "created_seq": item.created_seq,
                    "modified_seq": item.modified_seq,
                    "score": item.score,
                })
            })
            .collect();
        sections.insert(name.to_string(), serde_json::Value::Array(rows));
        let max_serial = section_items
            .iter()
            .map(|item| item.serial)
            .max()
            .unwrap_or(0);
        next_serial.insert(PREFIXES[i].to_string(), serde_json::json!(max_serial + 1));
    }
    let doc = serde_json::json!({
        "schema_version": 1,
        "budget": budget,
        "update_seq": update_seq,
        "next_serial": next_serial,
        "sections": sections,
    });
    ContextMap::from_json(&doc.to_string()).expect("constructed document is valid")
}

const WORDS: [&str; 16] = [
    "records",
    "block",
    "delimiter",
    "threshold",
    "count",
    "schema",
    "entity",
    "index",
    "format",
    "section",
    "total",
    "pattern",
    "field",
    "offset",
    "label",
    "value",
];

pub fn random_text(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words.max(1));
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random well-formed item set: up to `max_items` items spread over random
/// sections with distinct serials, random scores and ages.
pub fn random_items(rng: &mut ChaCha8Rng, max_items: usize) -> Vec<SpecItem> {
    let count = rng.random_range(0..=max_items);
    let mut serial_counters = [0u32; 6];
    let mut items = Vec::with_capacity(count);
    for _ in 0..count {
        let idx = rng.random_range(0..6);
        serial_counters[idx] += 1;
        items.push(SpecItem {
            section: SECTION_NAMES[idx],
            serial: serial_counters[idx],
            text: random_text(rng, 12),
            created_seq: rng.random_range(0..=6),
            modified_seq: 0,
            score: rng.random_range(-5..=5),
        });
    }
    // created_seq must be non-decreasing in serial order within a section,
    // and modified_seq at least created_seq
    for idx in 0..6 {
        let mut in_section: Vec<&mut SpecItem> = items
            .iter_mut()
            .filter(|item| section_index(item.section) == idx)
            .collect();
        in_section.sort_by_key(|item| item.serial);
        let mut seqs: Vec<u64> = in_section.iter().map(|item| item.created_seq).collect();
        seqs.sort_unstable();
        for (item, seq) in in_section.iter_mut().zip(seqs) {
            item.created_seq = seq;
            item.modified_seq = seq + u64::from(item.serial % 2);
        }
    }
    items
}

pub fn default_tokens(map: &ContextMap) -> usize {
    map.tokens(&CharEstimateCounter)
}

/// Section list as library values, render order.
pub fn all_kinds() -> [SectionKind; 6] {
    SectionKind::ALL
}

/// Builds the replay fixture entries one update cycle will consume when the
/// distiller (and optionally the cartographer) should answer with the given
/// raw texts. Mirrors the pipeline's own request construction.
pub fn cycle_fixture_entries(
    map: &ContextMap,
    trajectory: &peek::trajectory::Trajectory,
    config: &peek::policy::PolicyConfig,
    distiller_text: &str,
    cartographer_text: Option<&str>,
) -> Vec<peek::provider::FixtureEntry> {
    use peek::provider::{request_fingerprint, ChatMessage, ChatRequest, FixtureEntry};

    let options = peek::distiller::DistillOptions {
        step_char_limit: config.step_char_limit,
        retry_on_parse_error: config.retry_on_parse_error,
        ..peek::distiller::DistillOptions::default()
    };
    let user_request = |prompt: String| ChatRequest {
        model: config.llm.model.clone(),
        messages: vec![ChatMessage::user(prompt)],
        temperature: config.llm.temperature,
    };
    let mut entries = vec![FixtureEntry {
        fingerprint: request_fingerprint(&user_request(peek::distiller::build_distiller_prompt(
            trajectory, map, &options,
        ))),
        response: distiller_text.to_string(),
    }];
    if let Some(text) = cartographer_text {
        let report = peek::distiller::parse_distiller_response(distiller_text)
            .expect("cartographer fixture needs a parseable distiller response");
        let mut working = map.clone();
        working.increment_update_seq();
        let (tagged, _) = peek::evict::apply_tags(&working, &report.item_tags, &config.tag_delta);
        let input = peek::cartographer::CartographerInput {
            report: &report,
            map: &tagged,
            question_text: &trajectory.task_text,
            budget: map.budget(),
            current_tokens: tagged.tokens(&CharEstimateCounter),
        };
        entries.push(FixtureEntry {
            fingerprint: request_fingerprint(&user_request(
                peek::cartographer::build_cartographer_prompt(&input),
            )),
            response: text.to_string(),
        });
    }
    entries
}
