//! Context map data model: sectioned items with stable IDs, token accounting,
//! deterministic rendering, and versioned JSON persistence.
//!
//! A [`ContextMap`] is an immutable-snapshot value: every mutating operation in
//! this crate clones the map and returns a new one, so snapshots can be shared
//! freely across threads.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Version tag written into every persisted map document.
pub const SCHEMA_VERSION: u32 = 1;

/// Highest serial an ID prefix can reach before allocation fails.
pub const MAX_SERIAL: u32 = 99_999;

/// The six fixed sections of a context map, in render order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    ContextRoadmap,
    ContextUnderstanding,
    DomainConstants,
    ParsingSchema,
    ErrorPatterns,
    ReusableResults,
}

impl SectionKind {
    /// All sections in their fixed render order.
    pub const ALL: [SectionKind; 6] = [
        SectionKind::ContextRoadmap,
        SectionKind::ContextUnderstanding,
        SectionKind::DomainConstants,
        SectionKind::ParsingSchema,
        SectionKind::ErrorPatterns,
        SectionKind::ReusableResults,
    ];

    /// Two-letter ID prefix (`cr-00001` style).
    pub fn prefix(self) -> &'static str {
        match self {
            SectionKind::ContextRoadmap => "cr",
            SectionKind::ContextUnderstanding => "cu",
            SectionKind::DomainConstants => "dc",
            SectionKind::ParsingSchema => "ps",
            SectionKind::ErrorPatterns => "ep",
            SectionKind::ReusableResults => "rr",
        }
    }

    /// Snake-case name used in JSON documents and LLM output.
    pub fn name(self) -> &'static str {
        match self {
            SectionKind::ContextRoadmap => "context_roadmap",
            SectionKind::ContextUnderstanding => "context_understanding",
            SectionKind::DomainConstants => "domain_constants",
            SectionKind::ParsingSchema => "parsing_schema",
            SectionKind::ErrorPatterns => "error_patterns",
            SectionKind::ReusableResults => "reusable_results",
        }
    }

    pub fn heading(self) -> &'static str {
        match self {
            SectionKind::ContextRoadmap => "## CONTEXT ROADMAP",
            SectionKind::ContextUnderstanding => "## CONTEXT UNDERSTANDING",
            SectionKind::DomainConstants => "## DOMAIN CONSTANTS",
            SectionKind::ParsingSchema => "## PARSING SCHEMA",
            SectionKind::ErrorPatterns => "## ERROR PATTERNS",
            SectionKind::ReusableResults => "## REUSABLE RESULTS",
        }
    }

    /// Parenthetical description line rendered while the section is empty.
    pub fn placeholder(self) -> &'static str {
        match self {
            SectionKind::ContextRoadmap => {
                "(Index of what the context contains and where to find it)"
            }
            SectionKind::ContextUnderstanding => {
                "(High-level understanding of the context: what it is, how it's organized, and what matters)"
            }
            SectionKind::DomainConstants => {
                "(Exact parameters, formulas, thresholds, reference values, enum sets, and output field requirements defined by the context.)"
            }
            SectionKind::ParsingSchema => "(How to parse and navigate the context's format)",
            SectionKind::ErrorPatterns => {
                "(Concrete, factual failure modes observed while processing the context)"
            }
            SectionKind::ReusableResults => "(Reusable knowledge about the context)",
        }
    }

    pub fn from_prefix(prefix: &str) -> Option<SectionKind> {
        SectionKind::ALL
            .iter()
            .copied()
            .find(|k| k.prefix() == prefix)
    }

    pub fn from_name(name: &str) -> Option<SectionKind> {
        SectionKind::ALL.iter().copied().find(|k| k.name() == name)
    }

    /// Position in [`SectionKind::ALL`]; doubles as the render-order index.
    pub fn index(self) -> usize {
        match self {
            SectionKind::ContextRoadmap => 0,
            SectionKind::ContextUnderstanding => 1,
            SectionKind::DomainConstants => 2,
            SectionKind::ParsingSchema => 3,
            SectionKind::ErrorPatterns => 4,
            SectionKind::ReusableResults => 5,
        }
    }
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Stable item identifier: section prefix plus a never-reused serial,
/// rendered as e.g. `cr-00001`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId {
    section: SectionKind,
    serial: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed item id {0:?} (expected e.g. \"cr-00001\")")]
pub struct IdParseError(pub String);

impl ItemId {
    pub fn new(section: SectionKind, serial: u32) -> ItemId {
        debug_assert!((1..=MAX_SERIAL).contains(&serial));
        ItemId { section, serial }
    }

    pub fn section(self) -> SectionKind {
        self.section
    }

    pub fn serial(self) -> u32 {
        self.serial
    }

    /// Parses the rendered form `<prefix>-<5 digits>`, serial 1..=99999.
    pub fn parse(s: &str) -> Result<ItemId, IdParseError> {
        let err = || IdParseError(s.to_string());
        let (prefix, digits) = s.split_once('-').ok_or_else(err)?;
        let section = SectionKind::from_prefix(prefix).ok_or_else(err)?;
        if digits.len() != 5 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let serial: u32 = digits.parse().map_err(|_| err())?;
        if serial == 0 {
            return Err(err());
        }
        Ok(ItemId { section, serial })
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{:05}", self.section.prefix(), self.serial)
    }
}

impl std::str::FromStr for ItemId {
    type Err = IdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ItemId::parse(s)
    }
}

impl Serialize for ItemId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ItemId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ItemId::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// One cached knowledge entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapItem {
    pub id: ItemId,
    pub text: String,
    /// Update cycle in which the item was created.
    pub created_seq: u64,
    /// Update cycle of the last content change.
    pub modified_seq: u64,
    /// Accumulated tag score; moves only via tag application or replacement reset.
    pub score: i64,
}

/// Pure text -> token-count contract. Implementations must be deterministic,
/// return 0 for the empty string, and be monotone under concatenation.
pub trait TokenCounter {
    fn count(&self, text: &str) -> usize;
}

/// Default counter: ceil(chars / 4). A rough but dependency-free estimate;
/// swap in a real tokenizer via the [`TokenCounter`] trait where it matters.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharEstimateCounter;

impl CharEstimateCounter {
    pub const CHARS_PER_TOKEN: usize = 4;
}

impl TokenCounter for CharEstimateCounter {
    fn count(&self, text: &str) -> usize {
        text.chars().count().div_ceil(Self::CHARS_PER_TOKEN)
    }
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("budget {budget} tokens is below the empty-map rendering ({required} tokens)")]
    BudgetTooSmall { budget: usize, required: usize },
    #[error("serial counter for prefix \"{prefix}\" exhausted (max {MAX_SERIAL})")]
    SerialOverflow { prefix: &'static str },
    #[error("malformed map document: {0}")]
    Malformed(String),
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    UnknownSchemaVersion { found: u32 },
    #[error("duplicate id \"{id}\" in sections.{section}")]
    DuplicateId { id: String, section: &'static str },
    #[error("invalid field {field}: {reason}")]
    InvalidField { field: String, reason: String },
}

/// The sectioned, ID-stable cache artifact rendered into the agent's prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextMap {
    budget: usize,
    update_seq: u64,
    next_serial: [u32; 6],
    sections: [Vec<MapItem>; 6],
}

impl ContextMap {
    /// Creates an empty map. Fails if `budget` cannot even hold the section
    /// headers under the default counter.
    pub fn new(budget: usize) -> Result<ContextMap, MapError> {
        let map = ContextMap {
            budget,
            update_seq: 0,
            next_serial: [1; 6],
            sections: Default::default(),
        };
        let required = map.tokens(&CharEstimateCounter);
        if budget < required {
            return Err(MapError::BudgetTooSmall { budget, required });
        }
        Ok(map)
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Re-targets the hard budget. Feasibility is enforced by eviction, not here.
    pub fn set_budget(&mut self, budget: usize) {
        self.budget = budget;
    }

    /// Count of completed update cycles.
    pub fn update_seq(&self) -> u64 {
        self.update_seq
    }

    /// Advances the cycle counter; called once at the start of an update cycle
    /// so items created in cycle `i` carry `created_seq = i`.
    pub fn increment_update_seq(&mut self) {
        self.update_seq += 1;
    }

    pub fn items(&self, section: SectionKind) -> &[MapItem] {
        &self.sections[section.index()]
    }

    pub fn all_items(&self) -> impl Iterator<Item = &MapItem> {
        self.sections.iter().flatten()
    }

    pub fn item_count(&self) -> usize {
        self.sections.iter().map(Vec::len).sum()
    }

    pub fn get(&self, id: ItemId) -> Option<&MapItem> {
        self.sections[id.section().index()]
            .iter()
            .find(|item| item.id == id)
    }

    pub fn contains(&self, id: ItemId) -> bool {
        self.get(id).is_some()
    }

    /// Next serial that `allocate_id` would hand out for the section.
    pub fn next_serial(&self, section: SectionKind) -> u32 {
        self.next_serial[section.index()]
    }

    /// Issues a fresh ID for `section` and advances that section's counter.
    /// Serials are never reused, including after deletion.
    pub fn allocate_id(&mut self, section: SectionKind) -> Result<ItemId, MapError> {
        let serial = self.next_serial[section.index()];
        if serial > MAX_SERIAL {
            return Err(MapError::SerialOverflow {
                prefix: section.prefix(),
            });
        }
        self.next_serial[section.index()] = serial + 1;
        Ok(ItemId::new(section, serial))
    }

    pub(crate) fn push_item(&mut self, item: MapItem) {
        self.sections[item.id.section().index()].push(item);
    }

    pub(crate) fn remove_item(&mut self, id: ItemId) -> Option<MapItem> {
        let section = &mut self.sections[id.section().index()];
        let pos = section.iter().position(|item| item.id == id)?;
        Some(section.remove(pos))
    }

    pub(crate) fn get_mut(&mut self, id: ItemId) -> Option<&mut MapItem> {
        self.sections[id.section().index()]
            .iter_mut()
            .find(|item| item.id == id)
    }

    /// Deterministic rendering: six headings in fixed order; non-empty
    /// sections list items as `- [<id>] <text>` lines, empty ones show their
    /// parenthetical description. `\n` newlines only, no trailing newline.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, kind) in SectionKind::ALL.into_iter().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
            }
            out.push_str(kind.heading());
            let items = self.items(kind);
            if items.is_empty() {
                out.push('\n');
                out.push_str(kind.placeholder());
            } else {
                for item in items {
                    out.push('\n');
                    out.push_str("- [");
                    out.push_str(&item.id.to_string());
                    out.push_str("] ");
                    out.push_str(&item.text);
                }
            }
        }
        out
    }

    pub fn tokens(&self, counter: &dyn TokenCounter) -> usize {
        counter.count(&self.render())
    }

    /// Serializes to the versioned JSON document, pretty-printed with a fixed
    /// field order so equal maps produce byte-identical documents.
    pub fn to_json(&self) -> String {
        let doc = MapDocument::from_map(self);
        let mut text = serde_json::to_string_pretty(&doc).expect("map serialization cannot fail");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<ContextMap, MapError> {
        let doc: MapDocument =
            serde_json::from_str(text).map_err(|e| MapError::Malformed(e.to_string()))?;
        doc.into_map()
    }

    /// Structural self-check used for atomicity guarantees in the edit engine.
    pub fn check_invariants(&self) -> Result<(), MapError> {
        let mut seen = BTreeSet::new();
        for kind in SectionKind::ALL {
            let mut last_created = 0u64;
            for (i, item) in self.items(kind).iter().enumerate() {
                let field = format!("sections.{}[{}]", kind.name(), i);
                if item.id.section() != kind {
                    return Err(MapError::InvalidField {
                        field: format!("{field}.id"),
                        reason: format!("prefix does not match section {}", kind.name()),
                    });
                }
                if !seen.insert(item.id) {
                    return Err(MapError::DuplicateId {
                        id: item.id.to_string(),
                        section: kind.name(),
                    });
                }
                if item.text.trim().is_empty() {
                    return Err(MapError::InvalidField {
                        field: format!("{field}.text"),
                        reason: "empty after trimming".into(),
                    });
                }
                if item.created_seq > item.modified_seq {
                    return Err(MapError::InvalidField {
                        field: format!("{field}.created_seq"),
                        reason: "created_seq exceeds modified_seq".into(),
                    });
                }
                if item.modified_seq > self.update_seq {
                    return Err(MapError::InvalidField {
                        field: format!("{field}.modified_seq"),
                        reason: format!(
                            "modified_seq {} exceeds update_seq {}",
                            item.modified_seq, self.update_seq
                        ),
                    });
                }
                if item.created_seq < last_created {
                    return Err(MapError::InvalidField {
                        field: format!("{field}.created_seq"),
                        reason: "items not ordered by created_seq".into(),
                    });
                }
                last_created = item.created_seq;
                if item.id.serial() >= self.next_serial[kind.index()] {
                    return Err(MapError::InvalidField {
                        field: format!("{field}.id"),
                        reason: format!(
                            "serial {} not below next_serial.{} = {}",
                            item.id.serial(),
                            kind.prefix(),
                            self.next_serial[kind.index()]
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

// --- persistence document (schema v1) ---

#[derive(Serialize, Deserialize)]
struct MapDocument {
    schema_version: u32,
    budget: usize,
    update_seq: u64,
    next_serial: SerialCounters,
    sections: SectionTable,
}

#[derive(Serialize, Deserialize)]
struct SerialCounters {
    cr: u32,
    cu: u32,
    dc: u32,
    ps: u32,
    ep: u32,
    rr: u32,
}

#[derive(Serialize, Deserialize)]
struct SectionTable {
    context_roadmap: Vec<MapItem>,
    context_understanding: Vec<MapItem>,
    domain_constants: Vec<MapItem>,
    parsing_schema: Vec<MapItem>,
    error_patterns: Vec<MapItem>,
    reusable_results: Vec<MapItem>,
}

impl MapDocument {
    fn from_map(map: &ContextMap) -> MapDocument {
        let s = |k: SectionKind| map.items(k).to_vec();
        MapDocument {
            schema_version: SCHEMA_VERSION,
            budget: map.budget,
            update_seq: map.update_seq,
            next_serial: SerialCounters {
                cr: map.next_serial[0],
                cu: map.next_serial[1],
                dc: map.next_serial[2],
                ps: map.next_serial[3],
                ep: map.next_serial[4],
                rr: map.next_serial[5],
            },
            sections: SectionTable {
                context_roadmap: s(SectionKind::ContextRoadmap),
                context_understanding: s(SectionKind::ContextUnderstanding),
                domain_constants: s(SectionKind::DomainConstants),
                parsing_schema: s(SectionKind::ParsingSchema),
                error_patterns: s(SectionKind::ErrorPatterns),
                reusable_results: s(SectionKind::ReusableResults),
            },
        }
    }

    fn into_map(self) -> Result<ContextMap, MapError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(MapError::UnknownSchemaVersion {
                found: self.schema_version,
            });
        }
        let map = ContextMap {
            budget: self.budget,
            update_seq: self.update_seq,
            next_serial: [
                self.next_serial.cr,
                self.next_serial.cu,
                self.next_serial.dc,
                self.next_serial.ps,
                self.next_serial.ep,
                self.next_serial.rr,
            ],
            sections: [
                self.sections.context_roadmap,
                self.sections.context_understanding,
                self.sections.domain_constants,
                self.sections.parsing_schema,
                self.sections.error_patterns,
                self.sections.reusable_results,
            ],
        };
        map.check_invariants()?;
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Frozen fixture: the six-section skeleton. 559 chars, so 140 tokens
    /// under the default counter (computed independently on the fixture text).
    pub(crate) const SKELETON: &str = "## CONTEXT ROADMAP\n(Index of what the context contains and where to find it)\n\n## CONTEXT UNDERSTANDING\n(High-level understanding of the context: what it is, how it's organized, and what matters)\n\n## DOMAIN CONSTANTS\n(Exact parameters, formulas, thresholds, reference values, enum sets, and output field requirements defined by the context.)\n\n## PARSING SCHEMA\n(How to parse and navigate the context's format)\n\n## ERROR PATTERNS\n(Concrete, factual failure modes observed while processing the context)\n\n## REUSABLE RESULTS\n(Reusable knowledge about the context)";

    pub(crate) const SKELETON_TOKENS: usize = 140;

    fn item(id: ItemId, text: &str, seq: u64) -> MapItem {
        MapItem {
            id,
            text: text.to_string(),
            created_seq: seq,
            modified_seq: seq,
            score: 0,
        }
    }

    #[test]
    fn empty_map_renders_the_skeleton() {
        let map = ContextMap::new(1024).unwrap();
        assert_eq!(map.render(), SKELETON);
        assert_eq!(map.item_count(), 0);
        assert_eq!(map.update_seq(), 0);
        for kind in SectionKind::ALL {
            assert_eq!(map.next_serial(kind), 1);
        }
    }

    #[test]
    fn budget_is_recorded() {
        assert_eq!(ContextMap::new(512).unwrap().budget(), 512);
        assert_eq!(ContextMap::new(2048).unwrap().budget(), 2048);
    }

    #[test]
    fn tiny_budget_is_a_configuration_error() {
        match ContextMap::new(10) {
            Err(MapError::BudgetTooSmall {
                budget: 10,
                required,
            }) => {
                assert_eq!(required, SKELETON_TOKENS)
            }
            other => panic!("expected BudgetTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn empty_map_token_count_matches_golden() {
        let map = ContextMap::new(1024).unwrap();
        assert_eq!(map.render().chars().count(), 559);
        assert_eq!(map.tokens(&CharEstimateCounter), SKELETON_TOKENS);
    }

    #[test]
    fn allocation_starts_at_one_and_never_repeats() {
        let mut map = ContextMap::new(1024).unwrap();
        let id = map.allocate_id(SectionKind::ContextRoadmap).unwrap();
        assert_eq!(id.to_string(), "cr-00001");

        for _ in 0..3 {
            map.allocate_id(SectionKind::ReusableResults).unwrap();
        }
        let id = map.allocate_id(SectionKind::ReusableResults).unwrap();
        assert_eq!(id.to_string(), "rr-00004");
    }

    #[test]
    fn deleted_serials_are_not_reissued() {
        let mut map = ContextMap::new(1024).unwrap();
        let first = map.allocate_id(SectionKind::ContextRoadmap).unwrap();
        map.push_item(item(first, "entry", 0));
        map.remove_item(first).unwrap();
        let second = map.allocate_id(SectionKind::ContextRoadmap).unwrap();
        assert_eq!(second.to_string(), "cr-00002");
        assert_ne!(first, second);
    }

    #[test]
    fn serial_overflow_is_a_capacity_error() {
        let mut map = ContextMap::new(1024).unwrap();
        map.next_serial[SectionKind::ParsingSchema.index()] = MAX_SERIAL;
        assert_eq!(
            map.allocate_id(SectionKind::ParsingSchema)
                .unwrap()
                .to_string(),
            "ps-99999"
        );
        match map.allocate_id(SectionKind::ParsingSchema) {
            Err(MapError::SerialOverflow { prefix: "ps" }) => {}
            other => panic!("expected SerialOverflow, got {other:?}"),
        }
    }

    #[test]
    fn roadmap_item_renders_fig3_style() {
        let mut map = ContextMap::new(1024).unwrap();
        let id = map.allocate_id(SectionKind::ContextRoadmap).unwrap();
        map.push_item(item(
            id,
            "Single text block (~38k chars) containing 388 records",
            1,
        ));
        let rendered = map.render();
        assert!(rendered.contains(
            "## CONTEXT ROADMAP\n- [cr-00001] Single text block (~38k chars) containing 388 records"
        ));
        // the placeholder line disappears once the section has items
        assert!(!rendered.contains("(Index of what the context contains"));
        assert_eq!(map.tokens(&CharEstimateCounter), 142);
    }

    #[test]
    fn adding_an_item_strictly_increases_tokens() {
        // Once a section is non-empty, every added item appends a line and the
        // count strictly grows. The first item of a section instead swaps out
        // the placeholder line, so its delta can have either sign.
        let mut map = ContextMap::new(1024).unwrap();
        let id = map.allocate_id(SectionKind::DomainConstants).unwrap();
        map.push_item(item(id, "score formula: 0.75^|y-yhat|", 1));
        let before = map.tokens(&CharEstimateCounter);
        let id = map.allocate_id(SectionKind::DomainConstants).unwrap();
        map.push_item(item(id, "388 records per block", 1));
        assert!(map.tokens(&CharEstimateCounter) > before);
    }

    #[test]
    fn first_item_swaps_placeholder_and_can_shrink_the_render() {
        let mut map = ContextMap::new(1024).unwrap();
        let before = map.tokens(&CharEstimateCounter);
        // shorter than the DOMAIN CONSTANTS placeholder line
        let id = map.allocate_id(SectionKind::DomainConstants).unwrap();
        map.push_item(item(id, "k=3", 1));
        assert!(map.tokens(&CharEstimateCounter) < before);
    }

    #[test]
    fn id_parse_round_trip_and_rejects() {
        let id = ItemId::parse("cu-00042").unwrap();
        assert_eq!(id.section(), SectionKind::ContextUnderstanding);
        assert_eq!(id.serial(), 42);
        assert_eq!(id.to_string(), "cu-00042");

        for bad in [
            "zz-00001",
            "cr-1",
            "cr-000001",
            "cr-0000a",
            "cr-00000",
            "cr00001",
            "",
        ] {
            assert!(ItemId::parse(bad).is_err(), "{bad:?} should not parse");
        }
    }

    #[test]
    fn serialize_round_trips_fresh_map() {
        let map = ContextMap::new(1024).unwrap();
        let loaded = ContextMap::from_json(&map.to_json()).unwrap();
        assert_eq!(map, loaded);
        assert_eq!(map.render(), loaded.render());
    }

    #[test]
    fn serialize_round_trips_populated_map() {
        let mut map = ContextMap::new(2048).unwrap();
        map.increment_update_seq();
        for (kind, text) in [
            (
                SectionKind::ContextRoadmap,
                "two files: intro.md and data.csv",
            ),
            (SectionKind::DomainConstants, "threshold = 0.75"),
            (SectionKind::ReusableResults, "388 records total"),
        ] {
            let id = map.allocate_id(kind).unwrap();
            let mut it = item(id, text, 1);
            it.score = -2;
            map.push_item(it);
        }
        let loaded = ContextMap::from_json(&map.to_json()).unwrap();
        assert_eq!(map, loaded);
    }

    #[test]
    fn duplicate_id_in_document_is_rejected() {
        let map_json = ContextMap::new(1024).unwrap().to_json();
        let mut doc: serde_json::Value = serde_json::from_str(&map_json).unwrap();
        let entry = serde_json::json!({
            "id": "cr-00001", "text": "x", "created_seq": 1, "modified_seq": 1, "score": 0
        });
        doc["sections"]["context_roadmap"] = serde_json::json!([entry, entry]);
        doc["next_serial"]["cr"] = serde_json::json!(2);
        doc["update_seq"] = serde_json::json!(1);
        match ContextMap::from_json(&doc.to_string()) {
            Err(MapError::DuplicateId { id, section }) => {
                assert_eq!(id, "cr-00001");
                assert_eq!(section, "context_roadmap");
            }
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn unknown_schema_version_is_rejected() {
        let mut doc: serde_json::Value =
            serde_json::from_str(&ContextMap::new(1024).unwrap().to_json()).unwrap();
        doc["schema_version"] = serde_json::json!(9);
        match ContextMap::from_json(&doc.to_string()) {
            Err(MapError::UnknownSchemaVersion { found: 9 }) => {}
            other => panic!("expected UnknownSchemaVersion, got {other:?}"),
        }
    }

    #[test]
    fn prefix_mismatch_is_rejected_with_field_name() {
        let mut doc: serde_json::Value =
            serde_json::from_str(&ContextMap::new(1024).unwrap().to_json()).unwrap();
        doc["sections"]["context_roadmap"] = serde_json::json!([{
            "id": "rr-00001", "text": "x", "created_seq": 0, "modified_seq": 0, "score": 0
        }]);
        match ContextMap::from_json(&doc.to_string()) {
            Err(MapError::InvalidField { field, .. }) => {
                assert_eq!(field, "sections.context_roadmap[0].id")
            }
            other => panic!("expected InvalidField, got {other:?}"),
        }
    }

    #[test]
    fn malformed_document_is_a_load_error() {
        assert!(matches!(
            ContextMap::from_json("{not json"),
            Err(MapError::Malformed(_))
        ));
        assert!(matches!(
            ContextMap::from_json("[]"),
            Err(MapError::Malformed(_))
        ));
    }

    #[test]
    fn counter_contract_holds() {
        let c = CharEstimateCounter;
        assert_eq!(c.count(""), 0);
        assert_eq!(c.count("abcd"), 1);
        assert_eq!(c.count("abcde"), 2);
        let (a, b) = ("hello ", "world");
        let joined = format!("{a}{b}");
        assert!(c.count(&joined) >= c.count(a).max(c.count(b)));
    }
}
