//! Property tests for structural invariants: overlay lifecycle bookkeeping,
//! ranking-metric bounds, configuration round-trips, and seed aggregation.

use std::collections::BTreeSet;

use proptest::prelude::*;

use cpl_core::config::ConfigMap;
use cpl_core::eval::{aggregate_seeds, hits_at_k, mrr};
use cpl_core::graph::{EntityId, KnowledgeGraph, RelationId, Triple, Vocabulary};

fn arb_triple(n_ent: u32, n_rel: u32) -> impl Strategy<Value = Triple> {
    (0..n_ent, 0..n_rel, 0..n_ent)
        .prop_map(|(s, r, o)| Triple::new(EntityId(s), RelationId(r), EntityId(o)))
}

fn graph_with(n_ent: u32, n_rel: u32, triples: &[Triple]) -> KnowledgeGraph {
    let mut entities = Vocabulary::new();
    for i in 0..n_ent {
        entities.intern(&format!("e{i}"));
    }
    let mut relations = Vocabulary::new();
    for i in 0..n_rel {
        relations.intern(&format!("r{i}"));
    }
    KnowledgeGraph::from_triples(entities, relations, triples.iter().copied())
}

proptest! {
    /// Resolving an episode with no positives removes exactly the edges the
    /// handle added; resolving with every added edge positive retains them
    /// all and keeps them visible.
    #[test]
    fn overlay_resolution_restores_or_retains(
        base in proptest::collection::vec(arb_triple(8, 3), 0..20),
        suggested in proptest::collection::vec(arb_triple(8, 3), 1..10),
        keep_all in any::<bool>(),
    ) {
        let mut kg = graph_with(8, 3, &base);
        let before_visible = kg.num_visible_edges();
        let before_retained = kg.num_retained_edges();

        let mut handle = kg.augment_temporary(&suggested).unwrap();
        prop_assert_eq!(
            kg.num_visible_edges(),
            before_visible + handle.added.len()
        );
        for t in &handle.added {
            prop_assert!(kg.contains_overlay(t));
        }
        // Everything skipped was already visible.
        for t in &handle.skipped {
            prop_assert!(kg.contains_base(t) || kg.contains_overlay(t));
        }

        let positives: BTreeSet<Triple> = if keep_all {
            handle.added.iter().copied().collect()
        } else {
            BTreeSet::new()
        };
        let added = handle.added.clone();
        kg.resolve_episode(&mut handle, &positives).unwrap();
        if keep_all {
            prop_assert_eq!(kg.num_visible_edges(), before_visible + added.len());
            prop_assert_eq!(kg.num_retained_edges(), before_retained + added.len());
            for t in &added {
                prop_assert!(kg.contains_overlay(t));
            }
        } else {
            prop_assert_eq!(kg.num_visible_edges(), before_visible);
            prop_assert_eq!(kg.num_retained_edges(), before_retained);
            for t in &added {
                prop_assert!(!kg.contains_overlay(t));
            }
        }
    }

    /// Hits@k is monotone in k, bounded by [0, 1], and never exceeds MRR's
    /// upper bound relationships: hits@1 <= mrr <= hits@large-k's limit 1.
    #[test]
    fn ranking_metrics_are_bounded_and_monotone(
        ranks in proptest::collection::vec(
            proptest::option::of(0usize..50), 1..40
        ),
    ) {
        let h1 = hits_at_k(&ranks, 1).unwrap();
        let h5 = hits_at_k(&ranks, 5).unwrap();
        let h10 = hits_at_k(&ranks, 10).unwrap();
        let m = mrr(&ranks).unwrap();
        prop_assert!((0.0..=1.0).contains(&h1));
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!(h1 <= h5 + 1e-12);
        prop_assert!(h5 <= h10 + 1e-12);
        prop_assert!(h1 <= m + 1e-12);
        prop_assert!(m <= 1.0 + 1e-12);
    }

    /// Dumping a config and parsing the dump preserves every entry and the
    /// content hash.
    #[test]
    fn config_round_trip_preserves_hash(
        entries in proptest::collection::btree_map(
            "[a-z][a-z0-9_]{0,12}", "[A-Za-z0-9._-]{1,12}", 0..12
        ),
    ) {
        let text: String = entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let map = ConfigMap::parse_str(&text).unwrap();
        let reparsed = ConfigMap::parse_str(&map.dump()).unwrap();
        prop_assert_eq!(map.hash(), reparsed.hash());
        for (k, v) in &entries {
            prop_assert_eq!(reparsed.get(k), Some(v.as_str()));
        }
    }

    /// The aggregate mean lies between the extremes and a constant series
    /// has zero spread.
    #[test]
    fn seed_aggregation_is_sane(
        values in proptest::collection::vec(-1e3..1e3f64, 1..20),
    ) {
        let (mean, std) = aggregate_seeds(&values).unwrap();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(mean >= min - 1e-9 && mean <= max + 1e-9);
        prop_assert!(std >= 0.0);
        let constant = vec![values[0]; values.len()];
        let (cmean, cstd) = aggregate_seeds(&constant).unwrap();
        prop_assert!((cmean - values[0]).abs() < 1e-9);
        prop_assert!(cstd.abs() < 1e-9);
    }

    /// Interning is idempotent and preserves first-seen id order.
    #[test]
    fn vocabulary_intern_is_stable(
        names in proptest::collection::vec("[a-z]{1,6}", 1..30),
    ) {
        let mut vocab = Vocabulary::new();
        let ids: Vec<u32> = names.iter().map(|n| vocab.intern(n)).collect();
        for (name, id) in names.iter().zip(&ids) {
            prop_assert_eq!(vocab.intern(name), *id);
            prop_assert_eq!(vocab.id(name), Some(*id));
            prop_assert_eq!(vocab.name(*id), Some(name.as_str()));
        }
    }
}
