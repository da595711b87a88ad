//! peek: a fixed-token-budget context map for LLM agents that repeatedly
//! query the same external context.
//!
//! The map is a small, prompt-resident artifact holding orientation knowledge
//! (what the context contains, how it is organized, which constants and
//! schemas matter). After an agent run, a three-stage pipeline maintains it:
//! a Distiller turns the execution trajectory into a diagnosis, per-item tags,
//! and cache candidates; a Cartographer converts those into structured
//! ADD/DELETE/REPLACE edits; a deterministic Evictor enforces the hard token
//! budget by removing whole items in priority order.

pub mod cartographer;
pub mod cli;
pub mod distiller;
pub mod edit;
pub mod evict;
pub mod json_extract;
pub mod map;
pub mod policy;
pub mod provider;
pub mod runner;
pub mod trajectory;
pub mod workspace;

mod prompt;

pub use edit::{apply_edits, dedup_candidates, validate_edit, EditOp, EditOutcome, EditSet};
pub use evict::{apply_tags, evict_to_budget, eviction_order, Tag, TagDelta};
pub use map::{
    CharEstimateCounter, ContextMap, ItemId, MapError, MapItem, SectionKind, TokenCounter,
};
