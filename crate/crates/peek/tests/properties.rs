//! Property tests for the spec-level invariants that make sense as random
//! laws rather than counted acceptance criteria.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::{build_map, SpecItem, SECTION_NAMES};
use peek::cartographer::{dedup_edit_set, parse_cartographer_response};
use peek::distiller::parse_distiller_response;
use peek::edit::{apply_edits, normalize, EditOp, EditSet};
use peek::evict::evict_to_budget;
use peek::map::{CharEstimateCounter, ContextMap, SectionKind, TokenCounter};

const COUNTER: CharEstimateCounter = CharEstimateCounter;

/// Raw ingredients for one item; the builder assigns serials and fixes
/// sequence ordering.
fn raw_items() -> impl Strategy<Value = Vec<(usize, String, i64, u64)>> {
    proptest::collection::vec((0usize..6, "[a-z][a-z ]{0,30}", -5i64..=5, 0u64..=5), 0..14)
}

fn items_from_raw(raw: &[(usize, String, i64, u64)]) -> Vec<SpecItem> {
    let mut serials = [0u32; 6];
    let mut items: Vec<SpecItem> = raw
        .iter()
        .map(|(idx, text, score, seq)| {
            serials[*idx] += 1;
            SpecItem {
                section: SECTION_NAMES[*idx],
                serial: serials[*idx],
                text: text.clone(),
                created_seq: *seq,
                modified_seq: *seq,
                score: *score,
            }
        })
        .collect();
    // created_seq non-decreasing in serial order within each section
    for idx in 0..6 {
        let mut seqs: Vec<u64> = items
            .iter()
            .filter(|item| common::section_index(item.section) == idx)
            .map(|item| item.created_seq)
            .collect();
        seqs.sort_unstable();
        let mut it = seqs.into_iter();
        for item in items.iter_mut() {
            if common::section_index(item.section) == idx {
                let seq = it.next().unwrap();
                item.created_seq = seq;
                item.modified_seq = seq;
            }
        }
    }
    items
}

fn ops_strategy() -> impl Strategy<Value = Vec<EditOp>> {
    let op = prop_oneof![
        (0usize..6, "[a-z][a-z ]{0,30}").prop_map(|(idx, content)| EditOp::Add {
            section: SectionKind::ALL[idx],
            content,
        }),
        (0usize..6, 1u32..8).prop_map(|(idx, serial)| EditOp::Delete {
            item_id: peek::map::ItemId::new(SectionKind::ALL[idx], serial),
        }),
        (0usize..6, 1u32..8, "[a-z][a-z ]{0,30}").prop_map(|(idx, serial, content)| {
            EditOp::Replace {
                item_id: peek::map::ItemId::new(SectionKind::ALL[idx], serial),
                content,
            }
        }),
    ];
    proptest::collection::vec(op, 0..8)
}

proptest! {
    /// Equal maps render byte-identically, however the items arrived.
    #[test]
    fn render_is_a_pure_function_of_map_state(raw in raw_items()) {
        let items = items_from_raw(&raw);
        let a = build_map(&items, 4096, 5);
        let b = build_map(&items, 4096, 5);
        prop_assert_eq!(a.render(), b.render());
        prop_assert_eq!(a.to_json(), b.to_json());
    }

    /// Every item's prefix agrees with its section after arbitrary edits.
    #[test]
    fn section_prefix_agreement_survives_edits(raw in raw_items(), ops in ops_strategy()) {
        let map = build_map(&items_from_raw(&raw), 4096, 5);
        let set = EditSet { reasoning: String::new(), operations: ops };
        let outcome = apply_edits(&map, &set, &COUNTER, 80).unwrap();
        for kind in SectionKind::ALL {
            for item in outcome.map_after.items(kind) {
                prop_assert_eq!(item.id.section(), kind);
            }
        }
        prop_assert!(outcome.map_after.check_invariants().is_ok());
        // every input op landed in exactly one bucket
        prop_assert_eq!(
            outcome.applied.len() + outcome.rejected.len(),
            set.operations.len()
        );
    }

    /// Removing an item from a section that keeps at least one other item
    /// never increases the token count (the placeholder-swap edge needs the
    /// section to go empty, which this property excludes).
    #[test]
    fn removal_is_token_monotone_while_section_stays_non_empty(raw in raw_items()) {
        let items = items_from_raw(&raw);
        let map = build_map(&items, 4096, 5);
        let before = map.tokens(&COUNTER);
        for kind in SectionKind::ALL {
            if map.items(kind).len() < 2 {
                continue;
            }
            for item in map.items(kind) {
                let mut smaller = map.clone();
                let set = EditSet {
                    reasoning: String::new(),
                    operations: vec![EditOp::Delete { item_id: item.id }],
                };
                smaller = apply_edits(&smaller, &set, &COUNTER, 80).unwrap().map_after;
                prop_assert!(smaller.tokens(&COUNTER) <= before);
            }
        }
    }

    /// After apply_edits, nothing in the map exceeds the per-item cap
    /// (given the inputs respected it).
    #[test]
    fn per_item_cap_holds_after_edits(ops in ops_strategy()) {
        let map = ContextMap::new(2048).unwrap();
        let set = EditSet { reasoning: String::new(), operations: ops };
        let outcome = apply_edits(&map, &set, &COUNTER, 80).unwrap();
        for item in outcome.map_after.all_items() {
            prop_assert!(COUNTER.count(&item.text) <= 80);
        }
    }

    /// Edit sets over disjoint sections commute up to ADD ids: the final
    /// (section, text, score) multiset is order-independent.
    #[test]
    fn disjoint_edit_sets_commute(
        raw in raw_items(),
        ops_a in ops_strategy(),
        ops_b in ops_strategy(),
    ) {
        let map = build_map(&items_from_raw(&raw), 4096, 5);
        // restrict A to the first three sections, B to the last three
        let keep = |ops: Vec<EditOp>, low: bool| -> Vec<EditOp> {
            ops.into_iter()
                .filter(|op| {
                    let idx = match op {
                        EditOp::Add { section, .. } => section.index(),
                        EditOp::Delete { item_id } => item_id.section().index(),
                        EditOp::Replace { item_id, .. } => item_id.section().index(),
                    };
                    if low { idx < 3 } else { idx >= 3 }
                })
                .collect()
        };
        let set_a = EditSet { reasoning: String::new(), operations: keep(ops_a, true) };
        let set_b = EditSet { reasoning: String::new(), operations: keep(ops_b, false) };

        let ab = apply_edits(
            &apply_edits(&map, &set_a, &COUNTER, 80).unwrap().map_after,
            &set_b,
            &COUNTER,
            80,
        )
        .unwrap()
        .map_after;
        let ba = apply_edits(
            &apply_edits(&map, &set_b, &COUNTER, 80).unwrap().map_after,
            &set_a,
            &COUNTER,
            80,
        )
        .unwrap()
        .map_after;

        let signature = |m: &ContextMap| -> BTreeMap<(usize, String), (usize, i64)> {
            let mut sig = BTreeMap::new();
            for item in m.all_items() {
                let entry = sig
                    .entry((item.id.section().index(), item.text.clone()))
                    .or_insert((0usize, 0i64));
                entry.0 += 1;
                entry.1 += item.score;
            }
            sig
        };
        prop_assert_eq!(signature(&ab), signature(&ba));
    }

    /// Eviction is deterministic and always lands at or under budget when the
    /// skeleton fits.
    #[test]
    fn eviction_is_deterministic(raw in raw_items(), budget in 140usize..1200) {
        let map = build_map(&items_from_raw(&raw), budget, 5);
        let (after_1, evicted_1) = evict_to_budget(&map, &COUNTER).unwrap();
        let (after_2, evicted_2) = evict_to_budget(&map, &COUNTER).unwrap();
        prop_assert_eq!(after_1.render(), after_2.render());
        prop_assert_eq!(
            evicted_1.iter().map(|i| i.id).collect::<Vec<_>>(),
            evicted_2.iter().map(|i| i.id).collect::<Vec<_>>()
        );
        prop_assert!(after_1.tokens(&COUNTER) <= budget);
    }

    /// No ADD surviving dedup normalizes equal to an existing same-section
    /// item, and dedup is idempotent.
    #[test]
    fn dedup_is_sound_and_idempotent(raw in raw_items(), ops in ops_strategy()) {
        let map = build_map(&items_from_raw(&raw), 4096, 5);
        let set = EditSet { reasoning: String::new(), operations: ops };
        let deduped = dedup_edit_set(&map, &set);
        for op in &deduped.operations {
            if let EditOp::Add { section, content } = op {
                let key = normalize(content);
                for item in map.items(*section) {
                    prop_assert_ne!(normalize(&item.text), key.clone());
                }
            }
        }
        prop_assert_eq!(dedup_edit_set(&map, &deduped), deduped);
    }

    /// The response parsers are total: arbitrary text returns a value or a
    /// typed error, never a panic.
    #[test]
    fn parsers_are_total_on_arbitrary_text(text in ".*") {
        let _ = parse_distiller_response(&text);
        let _ = parse_cartographer_response(&text);
    }

    /// Serialization round trip preserves rendering on arbitrary maps.
    #[test]
    fn round_trip_preserves_render(raw in raw_items(), budget in 140usize..4096) {
        let map = build_map(&items_from_raw(&raw), budget, 5);
        let loaded = ContextMap::from_json(&map.to_json()).unwrap();
        prop_assert_eq!(loaded.render(), map.render());
        prop_assert_eq!(loaded, map);
    }
}
