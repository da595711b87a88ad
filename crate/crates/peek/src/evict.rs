//! Evictor: accumulates per-run tags into item scores and enforces the hard
//! token budget by removing whole items in priority order.
//!
//! Eviction follows the inverse of the section-value hierarchy: parsing
//! schema goes first, then error patterns, reusable results and domain
//! constants; context roadmap and context understanding are protected until
//! last. Within a tier, lower scores go first, ties broken by age (older
//! first), then serial.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{ContextMap, ItemId, MapItem, SectionKind, TokenCounter};

/// Per-run verdict the Distiller assigns to a map item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Helpful,
    Harmful,
    Neutral,
    Stale,
}

impl Tag {
    pub fn parse(s: &str) -> Option<Tag> {
        match s.to_ascii_lowercase().as_str() {
            "helpful" => Some(Tag::Helpful),
            "harmful" => Some(Tag::Harmful),
            "neutral" => Some(Tag::Neutral),
            "stale" => Some(Tag::Stale),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::Helpful => "helpful",
            Tag::Harmful => "harmful",
            Tag::Neutral => "neutral",
            Tag::Stale => "stale",
        }
    }
}

/// Score increment per tag. Helpful must be positive, harmful negative,
/// stale at most harmful, neutral exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagDelta {
    pub helpful: i64,
    pub harmful: i64,
    pub neutral: i64,
    pub stale: i64,
}

impl Default for TagDelta {
    fn default() -> TagDelta {
        TagDelta {
            helpful: 1,
            harmful: -1,
            neutral: 0,
            stale: -2,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TagDeltaError {
    #[error("tag_delta.helpful must be positive (got {0})")]
    Helpful(i64),
    #[error("tag_delta.harmful must be negative (got {0})")]
    Harmful(i64),
    #[error("tag_delta.neutral must be zero (got {0})")]
    Neutral(i64),
    #[error("tag_delta.stale ({stale}) must not exceed tag_delta.harmful ({harmful})")]
    Stale { stale: i64, harmful: i64 },
}

impl TagDelta {
    pub fn validate(&self) -> Result<(), TagDeltaError> {
        if self.helpful <= 0 {
            return Err(TagDeltaError::Helpful(self.helpful));
        }
        if self.harmful >= 0 {
            return Err(TagDeltaError::Harmful(self.harmful));
        }
        if self.neutral != 0 {
            return Err(TagDeltaError::Neutral(self.neutral));
        }
        if self.stale > self.harmful {
            return Err(TagDeltaError::Stale {
                stale: self.stale,
                harmful: self.harmful,
            });
        }
        Ok(())
    }

    pub fn for_tag(&self, tag: Tag) -> i64 {
        match tag {
            Tag::Helpful => self.helpful,
            Tag::Harmful => self.harmful,
            Tag::Neutral => self.neutral,
            Tag::Stale => self.stale,
        }
    }
}

/// Eviction tier per section; lower tiers are evicted earlier. Context
/// roadmap and context understanding share the top (most protected) tier.
pub fn section_tier(kind: SectionKind) -> u8 {
    match kind {
        SectionKind::ParsingSchema => 0,
        SectionKind::ErrorPatterns => 1,
        SectionKind::ReusableResults => 2,
        SectionKind::DomainConstants => 3,
        SectionKind::ContextRoadmap | SectionKind::ContextUnderstanding => 4,
    }
}

/// Total eviction key: (tier, score, created_seq, serial, section order).
/// The trailing section index only disambiguates same-tier sections whose
/// items tie on everything else (possible for roadmap vs understanding).
fn eviction_key(item: &MapItem) -> (u8, i64, u64, u32, usize) {
    (
        section_tier(item.id.section()),
        item.score,
        item.created_seq,
        item.id.serial(),
        item.id.section().index(),
    )
}

/// Adds each tag's delta to the matching item's score. Tags for IDs not in
/// the map are reported as warnings and ignored.
pub fn apply_tags(
    map: &ContextMap,
    tags: &BTreeMap<ItemId, Tag>,
    delta: &TagDelta,
) -> (ContextMap, Vec<String>) {
    let mut working = map.clone();
    let mut warnings = Vec::new();
    for (&id, &tag) in tags {
        match working.get_mut(id) {
            Some(item) => item.score += delta.for_tag(tag),
            None => warnings.push(format!("tag {} for unknown item {id} ignored", tag.name())),
        }
    }
    (working, warnings)
}

/// Deterministic total order in which items leave the map under pressure.
pub fn eviction_order(map: &ContextMap) -> Vec<ItemId> {
    let mut items: Vec<&MapItem> = map.all_items().collect();
    items.sort_by_key(|item| eviction_key(item));
    items.into_iter().map(|item| item.id).collect()
}

#[derive(Debug, Error)]
pub enum EvictError {
    #[error("budget {budget} is infeasible: headers alone render to {header_tokens} tokens")]
    InfeasibleBudget { budget: usize, header_tokens: usize },
}

/// Removes items in eviction order until the rendered map fits the budget.
/// Returns the surviving map and the evicted items in removal order. Errors
/// only when even the empty map exceeds the budget.
pub fn evict_to_budget(
    map: &ContextMap,
    counter: &dyn TokenCounter,
) -> Result<(ContextMap, Vec<MapItem>), EvictError> {
    let budget = map.budget();
    let mut working = map.clone();
    let mut evicted = Vec::new();

    if working.tokens(counter) <= budget {
        return Ok((working, evicted));
    }

    for id in eviction_order(map) {
        let item = working.remove_item(id).expect("order lists live items");
        evicted.push(item);
        if working.tokens(counter) <= budget {
            return Ok((working, evicted));
        }
    }

    Err(EvictError::InfeasibleBudget {
        budget,
        header_tokens: working.tokens(counter),
    })
}
