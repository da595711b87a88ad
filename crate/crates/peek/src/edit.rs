//! Edit engine: validates and atomically applies Cartographer edit sets
//! (ADD/DELETE/REPLACE) to a context map, with engine-side deduplication.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{ContextMap, ItemId, MapError, MapItem, SectionKind, TokenCounter};

/// Hard per-item token cap; enforcement is rejection, never truncation.
pub const DEFAULT_ITEM_CAP: usize = 80;

/// One structured mutation against the map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "UPPERCASE")]
pub enum EditOp {
    Add {
        section: SectionKind,
        content: String,
    },
    Delete {
        item_id: ItemId,
    },
    Replace {
        item_id: ItemId,
        content: String,
    },
}

impl EditOp {
    /// Short form for logs and CLI summaries, e.g. `ADD context_roadmap` or
    /// `REPLACE cr-00001`.
    pub fn describe(&self) -> String {
        match self {
            EditOp::Add { section, .. } => format!("ADD {section}"),
            EditOp::Delete { item_id } => format!("DELETE {item_id}"),
            EditOp::Replace { item_id, .. } => format!("REPLACE {item_id}"),
        }
    }
}

/// An ordered batch of operations plus the model's stated reasoning.
/// An empty operations list is a valid "nothing worth keeping" outcome.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSet {
    pub reasoning: String,
    pub operations: Vec<EditOp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    UnknownItemId,
    EmptyContent,
    ExceedsItemCap { tokens: usize, cap: usize },
    Duplicate { existing: ItemId },
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::UnknownItemId => write!(f, "unknown item id"),
            RejectReason::EmptyContent => write!(f, "empty content"),
            RejectReason::ExceedsItemCap { tokens, cap } => {
                write!(f, "exceeds per-item cap ({tokens} > {cap} tokens)")
            }
            RejectReason::Duplicate { existing } => {
                write!(f, "duplicate of existing item {existing}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AppliedEdit {
    pub op: EditOp,
    /// The ID created (ADD), removed (DELETE) or rewritten (REPLACE).
    pub item_id: ItemId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedEdit {
    pub op: EditOp,
    pub reason: RejectReason,
}

/// Result of applying an edit set: every input op lands in exactly one of
/// `applied` or `rejected`, in input order within each list.
#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub applied: Vec<AppliedEdit>,
    pub rejected: Vec<RejectedEdit>,
    pub map_after: ContextMap,
}

#[derive(Debug, Error)]
pub enum EditError {
    #[error("edit application aborted, map unchanged: {0}")]
    InvariantViolation(#[from] MapError),
}

/// Equality key for dedup: lowercased, whitespace runs collapsed to one space.
pub fn normalize(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Item content as stored: trimmed, internal line breaks flattened to spaces
/// so the line-oriented rendering stays intact.
fn sanitize_content(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn section_has_normalized(map: &ContextMap, section: SectionKind, needle: &str) -> Option<ItemId> {
    map.items(section)
        .iter()
        .find(|item| normalize(&item.text) == needle)
        .map(|item| item.id)
}

/// Checks one op against the current map. Returns a rejection reason rather
/// than an error; validation never aborts.
pub fn validate_edit(
    map: &ContextMap,
    op: &EditOp,
    counter: &dyn TokenCounter,
    item_cap: usize,
) -> Result<(), RejectReason> {
    match op {
        EditOp::Add { section, content } => {
            let content = sanitize_content(content);
            if content.is_empty() {
                return Err(RejectReason::EmptyContent);
            }
            let tokens = counter.count(&content);
            if tokens > item_cap {
                return Err(RejectReason::ExceedsItemCap {
                    tokens,
                    cap: item_cap,
                });
            }
            if let Some(existing) = section_has_normalized(map, *section, &normalize(&content)) {
                return Err(RejectReason::Duplicate { existing });
            }
            Ok(())
        }
        EditOp::Delete { item_id } => {
            if !map.contains(*item_id) {
                return Err(RejectReason::UnknownItemId);
            }
            Ok(())
        }
        EditOp::Replace { item_id, content } => {
            if !map.contains(*item_id) {
                return Err(RejectReason::UnknownItemId);
            }
            let content = sanitize_content(content);
            if content.is_empty() {
                return Err(RejectReason::EmptyContent);
            }
            let tokens = counter.count(&content);
            if tokens > item_cap {
                return Err(RejectReason::ExceedsItemCap {
                    tokens,
                    cap: item_cap,
                });
            }
            Ok(())
        }
    }
}

/// Applies an edit set in order. Invalid ops are skipped and recorded, never
/// aborting the rest; each op is validated against the map as edited so far,
/// so a REPLACE after a DELETE of the same id is rejected as unknown. The
/// whole application is atomic: on an internal invariant violation the caller
/// keeps the original map.
pub fn apply_edits(
    map: &ContextMap,
    edits: &EditSet,
    counter: &dyn TokenCounter,
    item_cap: usize,
) -> Result<EditOutcome, EditError> {
    let mut working = map.clone();
    let mut applied = Vec::new();
    let mut rejected = Vec::new();
    let seq = working.update_seq();

    for op in &edits.operations {
        if let Err(reason) = validate_edit(&working, op, counter, item_cap) {
            rejected.push(RejectedEdit {
                op: op.clone(),
                reason,
            });
            continue;
        }
        match op {
            EditOp::Add { section, content } => {
                let id = match working.allocate_id(*section) {
                    Ok(id) => id,
                    Err(e) => return Err(EditError::InvariantViolation(e)),
                };
                working.push_item(MapItem {
                    id,
                    text: sanitize_content(content),
                    created_seq: seq,
                    modified_seq: seq,
                    score: 0,
                });
                applied.push(AppliedEdit {
                    op: op.clone(),
                    item_id: id,
                });
            }
            EditOp::Delete { item_id } => {
                working.remove_item(*item_id);
                applied.push(AppliedEdit {
                    op: op.clone(),
                    item_id: *item_id,
                });
            }
            EditOp::Replace { item_id, content } => {
                let item = working.get_mut(*item_id).expect("validated existing id");
                item.text = sanitize_content(content);
                item.modified_seq = seq;
                item.score = 0;
                applied.push(AppliedEdit {
                    op: op.clone(),
                    item_id: *item_id,
                });
            }
        }
    }

    working.check_invariants()?;
    Ok(EditOutcome {
        applied,
        rejected,
        map_after: working,
    })
}

/// Drops candidates whose normalized text matches an existing item in the
/// same section or an earlier surviving candidate for that section. Order is
/// preserved.
pub fn dedup_candidates(
    map: &ContextMap,
    candidates: &[(SectionKind, String)],
) -> Vec<(SectionKind, String)> {
    let mut kept: Vec<(SectionKind, String)> = Vec::new();
    for (section, text) in candidates {
        let key = normalize(text);
        if key.is_empty() {
            continue;
        }
        if section_has_normalized(map, *section, &key).is_some() {
            continue;
        }
        if kept
            .iter()
            .any(|(s, t)| s == section && normalize(t) == key)
        {
            continue;
        }
        kept.push((*section, text.clone()));
    }
    kept
}
