//! Knowledge graph storage: an immutable base edge set plus a mutable
//! augmentation overlay with add/retain/remove episode semantics.
//!
//! Base edges come from the triple file and never change after load. Edges
//! suggested from the corpus live in the overlay; at the end of an episode
//! they are either promoted to the retained set (permanently visible) or
//! rolled back.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexSet;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;

use crate::error::{CplError, Result};

/// Suffix appended to a relation name to form its inverse.
pub const INVERSE_SUFFIX: &str = "~inv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        Self {
            subject,
            relation,
            object,
        }
    }
}

/// Dense string ↔ id map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    names: IndexSet<String>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(idx) = self.names.get_index_of(name) {
            idx as u32
        } else {
            let (idx, _) = self.names.insert_full(name.to_string());
            idx as u32
        }
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.names.get_index_of(name).map(|i| i as u32)
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get_index(id as usize).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u32, s.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    Base,
    Overlay,
}

/// One out-edge of an entity, with where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutEdge {
    pub relation: RelationId,
    pub object: EntityId,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub enum VocabMode {
    Build,
    Reuse {
        entities: Vocabulary,
        relations: Vocabulary,
    },
}

/// Records the overlay edges added in one episode so they can be selectively
/// retained or rolled back.
#[derive(Debug)]
pub struct AugmentationHandle {
    /// Suggested edges actually added to the overlay.
    pub added: Vec<Triple>,
    /// Suggestions that duplicated an existing edge and were skipped.
    pub skipped: Vec<Triple>,
    resolved: bool,
}

impl AugmentationHandle {
    pub fn is_resolved(&self) -> bool {
        self.resolved
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    pub entities: Vocabulary,
    pub relations: Vocabulary,
    /// Per-entity sorted out-edge lists.
    base_edges: Vec<Vec<(RelationId, EntityId)>>,
    /// Live corpus-suggested edges, including retained ones.
    overlay: BTreeSet<Triple>,
    /// Overlay edges promoted to persistent status.
    retained: BTreeSet<Triple>,
    base_triple_count: usize,
    inverses_added: bool,
    /// Mirror overlay edges with their inverses when inverses are enabled.
    pub mirror_overlay: bool,
}

impl KnowledgeGraph {
    pub fn empty() -> Self {
        Self {
            entities: Vocabulary::new(),
            relations: Vocabulary::new(),
            base_edges: Vec::new(),
            overlay: BTreeSet::new(),
            retained: BTreeSet::new(),
            base_triple_count: 0,
            inverses_added: false,
            mirror_overlay: true,
        }
    }

    /// Build a graph from triples over existing vocabularies.
    pub fn from_triples(
        entities: Vocabulary,
        relations: Vocabulary,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Self {
        let mut kg = Self {
            base_edges: vec![Vec::new(); entities.len()],
            entities,
            relations,
            overlay: BTreeSet::new(),
            retained: BTreeSet::new(),
            base_triple_count: 0,
            inverses_added: false,
            mirror_overlay: true,
        };
        let mut seen = BTreeSet::new();
        for t in triples {
            if seen.insert(t) {
                kg.base_edges[t.subject.0 as usize].push((t.relation, t.object));
            }
        }
        for edges in &mut kg.base_edges {
            edges.sort_unstable();
        }
        kg.base_triple_count = seen.len();
        kg
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_base_triples(&self) -> usize {
        self.base_triple_count
    }

    pub fn num_overlay_edges(&self) -> usize {
        self.overlay.len()
    }

    pub fn num_retained_edges(&self) -> usize {
        self.retained.len()
    }

    /// Total edges currently visible (base + live overlay).
    pub fn num_visible_edges(&self) -> usize {
        self.base_triple_count + self.overlay.len()
    }

    pub fn has_inverses(&self) -> bool {
        self.inverses_added
    }

    pub fn base_triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.base_edges
            .iter()
            .enumerate()
            .flat_map(|(s, edges)| {
                edges
                    .iter()
                    .map(move |&(r, o)| Triple::new(EntityId(s as u32), r, o))
            })
    }

    pub fn retained_triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.retained.iter().copied()
    }

    pub fn contains_overlay(&self, t: &Triple) -> bool {
        self.overlay.contains(t)
    }

    pub fn contains_base(&self, t: &Triple) -> bool {
        self.base_edges
            .get(t.subject.0 as usize)
            .map(|edges| edges.binary_search(&(t.relation, t.object)).is_ok())
            .unwrap_or(false)
    }

    fn check_entity(&self, e: EntityId) -> Result<()> {
        if (e.0 as usize) < self.entities.len() {
            Ok(())
        } else {
            Err(CplError::Lookup(format!("entity id {} out of range", e.0)))
        }
    }

    /// Inverse of `r` once inverses are enabled. Self-inverse pairing: the
    /// first half maps up, the second half maps back down.
    pub fn inverse_relation(&self, r: RelationId) -> RelationId {
        let half = (self.relations.len() / 2) as u32;
        if r.0 < half {
            RelationId(r.0 + half)
        } else {
            RelationId(r.0 - half)
        }
    }

    /// Doubles the relation vocabulary and adds a reversed edge for every
    /// base triple.
    pub fn add_inverse_edges(&mut self) -> Result<()> {
        if self.inverses_added {
            return Err(CplError::Lifecycle(
                "inverse edges already added".to_string(),
            ));
        }
        for (_, name) in self.relations.iter() {
            if name.ends_with(INVERSE_SUFFIX) {
                return Err(CplError::Vocab(format!(
                    "relation '{name}' already carries the inverse marker"
                )));
            }
        }
        let original: Vec<String> = self
            .relations
            .iter()
            .map(|(_, name)| name.to_string())
            .collect();
        for name in &original {
            self.relations.intern(&format!("{name}{INVERSE_SUFFIX}"));
        }
        let half = original.len() as u32;
        let forward: Vec<Triple> = self.base_triples().collect();
        for t in forward {
            self.base_edges[t.object.0 as usize].push((RelationId(t.relation.0 + half), t.subject));
        }
        for edges in &mut self.base_edges {
            edges.sort_unstable();
        }
        self.base_triple_count *= 2;
        self.inverses_added = true;
        Ok(())
    }

    /// Out-edges of `e`: base edges first, then overlay edges, each sorted by
    /// (relation, object).
    pub fn out_edges(&self, e: EntityId) -> Result<Vec<OutEdge>> {
        self.check_entity(e)?;
        let mut out: Vec<OutEdge> = self.base_edges[e.0 as usize]
            .iter()
            .map(|&(relation, object)| OutEdge {
                relation,
                object,
                provenance: Provenance::Base,
            })
            .collect();
        let lo = Triple::new(e, RelationId(0), EntityId(0));
        let hi = Triple::new(EntityId(e.0 + 1), RelationId(0), EntityId(0));
        for t in self.overlay.range(lo..hi) {
            out.push(OutEdge {
                relation: t.relation,
                object: t.object,
                provenance: Provenance::Overlay,
            });
        }
        Ok(out)
    }

    /// Add corpus-suggested edges to the overlay for the current episode.
    /// Suggestions that duplicate a base or live overlay edge are skipped.
    pub fn augment_temporary(&mut self, edges: &[Triple]) -> Result<AugmentationHandle> {
        let mut handle = AugmentationHandle {
            added: Vec::new(),
            skipped: Vec::new(),
            resolved: false,
        };
        for &t in edges {
            self.check_entity(t.subject)?;
            self.check_entity(t.object)?;
            if self.contains_base(&t) || self.overlay.contains(&t) {
                handle.skipped.push(t);
                continue;
            }
            self.overlay.insert(t);
            handle.added.push(t);
            if self.mirror_overlay && self.inverses_added {
                let mirror = Triple::new(t.object, self.inverse_relation(t.relation), t.subject);
                if !self.contains_base(&mirror) {
                    self.overlay.insert(mirror);
                }
            }
        }
        Ok(handle)
    }

    /// Promote the episode's positively-rewarded overlay edges to the
    /// retained set and roll back the rest.
    pub fn resolve_episode(
        &mut self,
        handle: &mut AugmentationHandle,
        positive_edges: &BTreeSet<Triple>,
    ) -> Result<()> {
        if handle.resolved {
            return Err(CplError::Lifecycle("handle already resolved".to_string()));
        }
        for &t in &handle.added {
            let mirror = (self.mirror_overlay && self.inverses_added)
                .then(|| Triple::new(t.object, self.inverse_relation(t.relation), t.subject));
            if positive_edges.contains(&t) {
                self.retained.insert(t);
                if let Some(m) = mirror {
                    if self.overlay.contains(&m) {
                        self.retained.insert(m);
                    }
                }
            } else {
                if !self.retained.contains(&t) {
                    self.overlay.remove(&t);
                }
                if let Some(m) = mirror {
                    if !self.retained.contains(&m) {
                        self.overlay.remove(&m);
                    }
                }
            }
        }
        handle.resolved = true;
        Ok(())
    }

    /// Drop all overlay edges, retained included. Used to reset a graph
    /// between independent runs.
    pub fn clear_overlay(&mut self) {
        self.overlay.clear();
        self.retained.clear();
    }
}

/// Load a TSV triple file: `subject\trelation\tobject`, one per line.
pub fn load_triples(path: &Path, mode: VocabMode) -> Result<KnowledgeGraph> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let (mut entities, mut relations, reuse) = match mode {
        VocabMode::Build => (Vocabulary::new(), Vocabulary::new(), false),
        VocabMode::Reuse {
            entities,
            relations,
        } => (entities, relations, true),
    };
    let mut triples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (s, r, o) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(r), Some(o), None) => (s, r, o),
            _ => {
                return Err(CplError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: "expected 3 tab-separated fields".to_string(),
                })
            }
        };
        let resolve = |vocab: &mut Vocabulary, name: &str, kind: &str| -> Result<u32> {
            if reuse {
                vocab.id(name).ok_or_else(|| {
                    CplError::Vocab(format!("unknown {kind} '{name}' at line {}", lineno + 1))
                })
            } else {
                Ok(vocab.intern(name))
            }
        };
        let s = EntityId(resolve(&mut entities, s, "entity")?);
        let r = RelationId(resolve(&mut relations, r, "relation")?);
        let o = EntityId(resolve(&mut entities, o, "entity")?);
        triples.push(Triple::new(s, r, o));
    }
    Ok(KnowledgeGraph::from_triples(entities, relations, triples))
}

/// Write triples back out in the TSV format `load_triples` reads.
pub fn write_triples(path: &Path, kg: &KnowledgeGraph, triples: &[Triple]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for t in triples {
        let s = kg.entities.name(t.subject.0).ok_or_else(|| {
            CplError::Lookup(format!("entity id {} not in vocabulary", t.subject.0))
        })?;
        let r = kg
            .relations
            .name(t.relation.0)
            .ok_or_else(|| CplError::Lookup(format!("relation id {} not in vocabulary", t.relation.0)))?;
        let o = kg.entities.name(t.object.0).ok_or_else(|| {
            CplError::Lookup(format!("entity id {} not in vocabulary", t.object.0))
        })?;
        writeln!(file, "{s}\t{r}\t{o}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRatios {
    pub train: u32,
    pub valid: u32,
    pub test: u32,
}

impl SplitRatios {
    pub const EIGHT_ONE_ONE: Self = Self {
        train: 8,
        valid: 1,
        test: 1,
    };
}

#[derive(Debug)]
pub struct DatasetSplit {
    pub train: KnowledgeGraph,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

/// Randomly partition the base triples into train/valid/test, then restrict
/// valid and test to the evaluation relations. Triples dropped from valid
/// and test for carrying other relations go back to train, so the three
/// parts always cover the original set.
pub fn split_dataset(
    kg: &KnowledgeGraph,
    ratios: SplitRatios,
    eval_relations: &BTreeSet<RelationId>,
    seed: u64,
) -> Result<DatasetSplit> {
    if eval_relations.is_empty() {
        return Err(CplError::Config("eval_relations is empty".to_string()));
    }
    for r in eval_relations {
        if kg.relations.name(r.0).is_none() {
            return Err(CplError::Config(format!(
                "eval relation id {} absent from graph",
                r.0
            )));
        }
    }
    let total = ratios.train + ratios.valid + ratios.test;
    if total == 0 {
        return Err(CplError::Config("split ratios sum to zero".to_string()));
    }
    let mut triples: Vec<Triple> = kg.base_triples().collect();
    let mut rng = crate::rng::Rng::seed_from_u64(seed);
    triples.shuffle(&mut rng);
    let n = triples.len();
    let n_valid = n * ratios.valid as usize / total as usize;
    let n_test = n * ratios.test as usize / total as usize;
    let n_train = n - n_valid - n_test;

    let mut train: Vec<Triple> = triples[..n_train].to_vec();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for &t in &triples[n_train..n_train + n_valid] {
        if eval_relations.contains(&t.relation) {
            valid.push(t);
        } else {
            train.push(t);
        }
    }
    for &t in &triples[n_train + n_valid..] {
        if eval_relations.contains(&t.relation) {
            test.push(t);
        } else {
            train.push(t);
        }
    }
    Ok(DatasetSplit {
        train: KnowledgeGraph::from_triples(kg.entities.clone(), kg.relations.clone(), train),
        valid,
        test,
    })
}

/// Keep a random `ratio` fraction of the training triples; vocabulary is
/// unchanged.
pub fn subsample_train(train: &KnowledgeGraph, ratio: f64, seed: u64) -> Result<KnowledgeGraph> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(CplError::Config(format!(
            "subsample ratio {ratio} outside (0, 1]"
        )));
    }
    let mut triples: Vec<Triple> = train.base_triples().collect();
    let keep = (ratio * triples.len() as f64).round() as usize;
    let mut rng = crate::rng::Rng::seed_from_u64(seed);
    triples.shuffle(&mut rng);
    triples.truncate(keep);
    Ok(KnowledgeGraph::from_triples(
        train.entities.clone(),
        train.relations.clone(),
        triples,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_graph(lines: &[&str]) -> KnowledgeGraph {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        load_triples(file.path(), VocabMode::Build).unwrap()
    }

    #[test]
    fn load_builds_vocab_and_adjacency() {
        let kg = tiny_graph(&["a\tr1\tb", "b\tr2\tc", "a\tr1\tc"]);
        assert_eq!(kg.num_base_triples(), 3);
        assert_eq!(kg.num_entities(), 3);
        assert_eq!(kg.num_relations(), 2);
        let a = EntityId(kg.entities.id("a").unwrap());
        assert_eq!(kg.out_edges(a).unwrap().len(), 2);
    }

    #[test]
    fn load_empty_file() {
        let kg = tiny_graph(&[]);
        assert_eq!(kg.num_base_triples(), 0);
        assert_eq!(kg.num_entities(), 0);
    }

    #[test]
    fn load_dedups_lines() {
        let kg = tiny_graph(&["a\tr\tb", "a\tr\tb"]);
        assert_eq!(kg.num_base_triples(), 1);
    }

    #[test]
    fn malformed_line_reports_number() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "a\tr\tb").unwrap();
        writeln!(file, "broken line").unwrap();
        let err = load_triples(file.path(), VocabMode::Build).unwrap_err();
        assert!(err.to_string().contains(":2"), "{err}");
    }

    #[test]
    fn reuse_mode_rejects_unknown_entity() {
        let kg = tiny_graph(&["a\tr\tb"]);
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "zzz\tr\tb").unwrap();
        let err = load_triples(
            file.path(),
            VocabMode::Reuse {
                entities: kg.entities.clone(),
                relations: kg.relations.clone(),
            },
        )
        .unwrap_err();
        assert!(matches!(err, CplError::Vocab(_)));
    }

    #[test]
    fn inverse_edges_double_counts() {
        let mut kg = tiny_graph(&[
            "a\tr1\tb",
            "b\tr2\tc",
            "c\tr1\td",
            "d\tr2\te",
            "e\tr1\ta",
        ]);
        kg.add_inverse_edges().unwrap();
        assert_eq!(kg.num_base_triples(), 10);
        assert_eq!(kg.num_relations(), 4);
    }

    #[test]
    fn inverse_edge_present_and_involutive() {
        let mut kg = tiny_graph(&["a\tr\tb"]);
        kg.add_inverse_edges().unwrap();
        let a = EntityId(kg.entities.id("a").unwrap());
        let b = EntityId(kg.entities.id("b").unwrap());
        let r = RelationId(kg.relations.id("r").unwrap());
        let inv = kg.inverse_relation(r);
        assert_eq!(kg.inverse_relation(inv), r);
        let edges = kg.out_edges(b).unwrap();
        assert!(edges.iter().any(|e| e.relation == inv && e.object == a));
    }

    #[test]
    fn inverse_twice_errors() {
        let mut kg = tiny_graph(&["a\tr\tb"]);
        kg.add_inverse_edges().unwrap();
        assert!(matches!(
            kg.add_inverse_edges(),
            Err(CplError::Lifecycle(_))
        ));
    }

    #[test]
    fn out_edges_isolated_entity() {
        let kg = tiny_graph(&["a\tr\tb"]);
        let b = EntityId(kg.entities.id("b").unwrap());
        assert!(kg.out_edges(b).unwrap().is_empty());
    }

    #[test]
    fn out_edges_invalid_id() {
        let kg = tiny_graph(&["a\tr\tb"]);
        assert!(kg.out_edges(EntityId(99)).is_err());
    }

    #[test]
    fn overlay_union_and_provenance() {
        let mut kg = tiny_graph(&["a\tr1\tb", "a\tr2\tc"]);
        kg.mirror_overlay = false;
        let a = EntityId(kg.entities.id("a").unwrap());
        let c = EntityId(kg.entities.id("c").unwrap());
        let r1 = RelationId(kg.relations.id("r1").unwrap());
        kg.augment_temporary(&[Triple::new(a, r1, c)]).unwrap();
        let edges = kg.out_edges(a).unwrap();
        assert_eq!(edges.len(), 3);
        assert_eq!(
            edges
                .iter()
                .filter(|e| e.provenance == Provenance::Overlay)
                .count(),
            1
        );
    }

    #[test]
    fn duplicate_suggestion_is_skipped() {
        let mut kg = tiny_graph(&["a\tr\tb"]);
        let a = EntityId(kg.entities.id("a").unwrap());
        let b = EntityId(kg.entities.id("b").unwrap());
        let r = RelationId(kg.relations.id("r").unwrap());
        let handle = kg.augment_temporary(&[Triple::new(a, r, b)]).unwrap();
        assert!(handle.added.is_empty());
        assert_eq!(handle.skipped.len(), 1);
        assert_eq!(kg.num_overlay_edges(), 0);
    }

    #[test]
    fn resolve_full_rollback() {
        let mut kg = tiny_graph(&["a\tr1\tb", "b\tr1\tc", "c\tr1\td"]);
        kg.mirror_overlay = false;
        let before = kg.num_visible_edges();
        let ids = |s: &str| EntityId(kg.entities.id(s).unwrap());
        let r = RelationId(kg.relations.id("r1").unwrap());
        let suggested = vec![
            Triple::new(ids("a"), r, ids("c")),
            Triple::new(ids("a"), r, ids("d")),
            Triple::new(ids("b"), r, ids("d")),
        ];
        let mut handle = kg.augment_temporary(&suggested).unwrap();
        assert_eq!(kg.num_visible_edges(), before + 3);
        kg.resolve_episode(&mut handle, &BTreeSet::new()).unwrap();
        assert_eq!(kg.num_visible_edges(), before);
    }

    #[test]
    fn resolve_selective_retention_and_persistence() {
        let mut kg = tiny_graph(&["a\tr1\tb", "b\tr1\tc", "c\tr1\td"]);
        kg.mirror_overlay = false;
        let before = kg.num_visible_edges();
        let a = EntityId(kg.entities.id("a").unwrap());
        let b = EntityId(kg.entities.id("b").unwrap());
        let c = EntityId(kg.entities.id("c").unwrap());
        let d = EntityId(kg.entities.id("d").unwrap());
        let r = RelationId(kg.relations.id("r1").unwrap());
        let keep = Triple::new(a, r, c);
        let suggested = vec![keep, Triple::new(a, r, d), Triple::new(b, r, d)];
        let mut handle = kg.augment_temporary(&suggested).unwrap();
        let positives: BTreeSet<Triple> = [keep].into_iter().collect();
        kg.resolve_episode(&mut handle, &positives).unwrap();
        assert_eq!(kg.num_visible_edges(), before + 1);
        assert_eq!(kg.num_retained_edges(), 1);

        // Retained edge still visible in a later episode.
        let mut handle2 = kg.augment_temporary(&[]).unwrap();
        let edges = kg.out_edges(a).unwrap();
        assert!(edges
            .iter()
            .any(|e| e.object == c && e.provenance == Provenance::Overlay));
        kg.resolve_episode(&mut handle2, &BTreeSet::new()).unwrap();
        assert_eq!(kg.num_visible_edges(), before + 1);
    }

    #[test]
    fn double_resolve_errors() {
        let mut kg = tiny_graph(&["a\tr\tb"]);
        let mut handle = kg.augment_temporary(&[]).unwrap();
        kg.resolve_episode(&mut handle, &BTreeSet::new()).unwrap();
        assert!(matches!(
            kg.resolve_episode(&mut handle, &BTreeSet::new()),
            Err(CplError::Lifecycle(_))
        ));
    }

    #[test]
    fn split_is_deterministic_and_sound() {
        let lines: Vec<String> = (0..10)
            .map(|i| format!("e{i}\trq\te{}", (i + 1) % 10))
            .collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let kg = tiny_graph(&refs);
        let rq = RelationId(kg.relations.id("rq").unwrap());
        let eval: BTreeSet<RelationId> = [rq].into_iter().collect();
        let s1 = split_dataset(&kg, SplitRatios::EIGHT_ONE_ONE, &eval, 7).unwrap();
        let s2 = split_dataset(&kg, SplitRatios::EIGHT_ONE_ONE, &eval, 7).unwrap();
        assert_eq!(s1.valid, s2.valid);
        assert_eq!(s1.test, s2.test);
        let n = s1.train.num_base_triples() + s1.valid.len() + s1.test.len();
        assert_eq!(n, 10);
        // Disjointness.
        let train: BTreeSet<Triple> = s1.train.base_triples().collect();
        assert!(s1.valid.iter().all(|t| !train.contains(t)));
        assert!(s1.test.iter().all(|t| !train.contains(t)));
    }

    #[test]
    fn split_filters_eval_relations() {
        let kg = tiny_graph(&[
            "a\trq\tb", "b\trq\tc", "c\trq\td", "d\trq\te", "e\trq\tf", "a\tr2\tc", "b\tr2\td",
            "c\tr2\te", "d\tr2\tf", "e\tr2\ta",
        ]);
        let rq = RelationId(kg.relations.id("rq").unwrap());
        let eval: BTreeSet<RelationId> = [rq].into_iter().collect();
        let split = split_dataset(&kg, SplitRatios::EIGHT_ONE_ONE, &eval, 3).unwrap();
        assert!(split.valid.iter().chain(&split.test).all(|t| t.relation == rq));
    }

    #[test]
    fn split_all_train_boundary() {
        let kg = tiny_graph(&["a\trq\tb", "b\trq\tc"]);
        let rq = RelationId(kg.relations.id("rq").unwrap());
        let eval: BTreeSet<RelationId> = [rq].into_iter().collect();
        let split = split_dataset(
            &kg,
            SplitRatios {
                train: 10,
                valid: 0,
                test: 0,
            },
            &eval,
            1,
        )
        .unwrap();
        assert!(split.valid.is_empty());
        assert!(split.test.is_empty());
        assert_eq!(split.train.num_base_triples(), 2);
    }

    #[test]
    fn split_missing_eval_relation_errors() {
        let kg = tiny_graph(&["a\tr\tb"]);
        let eval: BTreeSet<RelationId> = [RelationId(9)].into_iter().collect();
        assert!(split_dataset(&kg, SplitRatios::EIGHT_ONE_ONE, &eval, 1).is_err());
    }

    #[test]
    fn subsample_identity_and_fraction() {
        let lines: Vec<String> = (0..1000)
            .map(|i| format!("e{}\tr\te{}", i % 50, (i * 7) % 50))
            .collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let kg = tiny_graph(&refs);
        let n = kg.num_base_triples();
        let full = subsample_train(&kg, 1.0, 1).unwrap();
        assert_eq!(full.num_base_triples(), n);
        let fifth = subsample_train(&kg, 0.2, 1).unwrap();
        assert_eq!(fifth.num_base_triples(), (0.2 * n as f64).round() as usize);
        assert_eq!(fifth.num_entities(), kg.num_entities());
    }

    #[test]
    fn subsample_bad_ratio() {
        let kg = tiny_graph(&["a\tr\tb"]);
        assert!(subsample_train(&kg, 0.0, 1).is_err());
        assert!(subsample_train(&kg, 1.5, 1).is_err());
    }
}
