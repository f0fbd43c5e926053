//! Synthetic dataset generator: plants a two-hop composition pattern
//! (`query(s, o)` holds when `rel0(s, m)` and `rel1(m, o)` do), then moves a
//! fraction of the first-hop bridge edges out of the graph and into the
//! sentence corpus. Queries are classified by a reachability check into
//! graph-answerable and corpus-dependent sets, so the gap between a joint
//! run and a graph-only run is attributable to extraction.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{CplError, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple, Vocabulary};
use crate::reasoner::bfs_reachable;
use crate::rng::SeedHierarchy;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_entities: usize,
    /// Relation vocabulary size including the query relation. The first two
    /// relations form the planted composition; any further ones are noise.
    pub n_relations: usize,
    /// Number of planted chains `s -> m -> o`, each with a distinct subject.
    pub n_chains: usize,
    /// Fraction of bridge edges expressed only in the corpus.
    pub corpus_only_fraction: f64,
    /// Random noise edges over the distractor relations.
    pub distractor_edges: usize,
    /// Sentence bags over entity pairs that hold no relation.
    pub distractor_bags: usize,
    /// Bags that reuse the bridge relation's keyword pattern over pairs that
    /// hold no relation. These model noisy distant supervision: a
    /// confidence-thresholded extract-everything pass must either skip the
    /// corpus-only bridges or flood the graph with these.
    pub noise_bags: usize,
    pub sentences_per_bag: usize,
    /// Size of the filler-word pool.
    pub filler_words: usize,
    /// Horizon used by the reachability classifier.
    pub horizon: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_entities: 200,
            n_relations: 4,
            n_chains: 60,
            corpus_only_fraction: 0.5,
            distractor_edges: 40,
            distractor_bags: 30,
            noise_bags: 400,
            sentences_per_bag: 2,
            filler_words: 20,
            horizon: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    /// Forward-only graph: kept bridges, second hops, distractor edges. The
    /// query relation is interned but carries no base edges.
    pub kg: KnowledgeGraph,
    /// JSON-lines corpus text, loadable with the corpus parser.
    pub corpus_jsonl: String,
    pub query_relation: RelationId,
    /// Queries whose chain survives in the graph.
    pub kg_answerable: Vec<Triple>,
    /// Queries that need a corpus-only bridge edge.
    pub corpus_dependent: Vec<Triple>,
    /// The bridge edges that exist only as sentences.
    pub removed_bridges: Vec<Triple>,
}

fn sentence_json(head: &str, tail: &str, middle: &[String]) -> String {
    // Entity mentions are masked with a shared placeholder token, a standard
    // relation-extraction practice. It forces the sentence classifier to rely
    // on the context pattern instead of memorizing which pairs carried which
    // distant label, so corpus-only facts score like their in-graph twins.
    let mut tokens = vec!["ent".to_string()];
    tokens.extend(middle.iter().cloned());
    tokens.push("ent".to_string());
    let tail_pos = tokens.len() - 1;
    format!(
        "{{\"sentence\": \"{}\", \"head\": \"{}\", \"tail\": \"{}\", \"head_pos\": 0, \"tail_pos\": {}}}",
        tokens.join(" "),
        head,
        tail,
        tail_pos
    )
}

pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    if spec.n_relations < 3 {
        return Err(CplError::Generation(
            "need at least two pattern relations plus the query relation".to_string(),
        ));
    }
    if spec.n_entities < 9 {
        return Err(CplError::Generation("need at least 9 entities".to_string()));
    }
    if !(0.0..=1.0).contains(&spec.corpus_only_fraction) {
        return Err(CplError::Generation(format!(
            "corpus-only fraction {} outside [0, 1]",
            spec.corpus_only_fraction
        )));
    }
    let pool = spec.n_entities / 3;
    if spec.n_chains > pool {
        return Err(CplError::Generation(format!(
            "{} chains need distinct subjects but the subject pool has {}",
            spec.n_chains, pool
        )));
    }
    if spec.horizon < 2 {
        return Err(CplError::Generation(
            "the planted pattern needs a horizon of at least 2".to_string(),
        ));
    }

    let seeds = SeedHierarchy::new(seed);
    let mut entities = Vocabulary::new();
    for i in 0..spec.n_entities {
        entities.intern(&format!("e{i}"));
    }
    let mut relations = Vocabulary::new();
    for r in 0..spec.n_relations - 1 {
        relations.intern(&format!("rel{r}"));
    }
    relations.intern("query");
    let rel0 = RelationId(0);
    let rel1 = RelationId(1);
    let query_relation = RelationId(spec.n_relations as u32 - 1);

    // Disjoint subject / middle / object pools keep the planted chains from
    // colliding with each other.
    let subjects: Vec<EntityId> = (0..pool as u32).map(EntityId).collect();
    let middles: Vec<EntityId> = (pool as u32..2 * pool as u32).map(EntityId).collect();
    let objects: Vec<EntityId> = (2 * pool as u32..spec.n_entities as u32)
        .map(EntityId)
        .collect();

    let mut rng = seeds.stream("chains");
    let mut chain_subjects = subjects.clone();
    chain_subjects.shuffle(&mut rng);
    chain_subjects.truncate(spec.n_chains);
    let chains: Vec<(EntityId, EntityId, EntityId)> = chain_subjects
        .iter()
        .map(|&s| {
            let m = middles[rng.gen_range(0..middles.len())];
            let o = objects[rng.gen_range(0..objects.len())];
            (s, m, o)
        })
        .collect();

    let n_removed = (spec.corpus_only_fraction * spec.n_chains as f64).round() as usize;
    let mut order: Vec<usize> = (0..chains.len()).collect();
    order.shuffle(&mut rng);
    let removed_set: BTreeSet<usize> = order.into_iter().take(n_removed).collect();

    let mut triples = Vec::new();
    let mut removed_bridges = Vec::new();
    for (i, &(s, m, o)) in chains.iter().enumerate() {
        let bridge = Triple::new(s, rel0, m);
        if removed_set.contains(&i) {
            removed_bridges.push(bridge);
        } else {
            triples.push(bridge);
        }
        triples.push(Triple::new(m, rel1, o));
    }

    let mut rng = seeds.stream("distractors");
    let occupied: BTreeSet<(EntityId, EntityId)> = chains
        .iter()
        .flat_map(|&(s, m, o)| [(s, m), (m, o), (s, o)])
        .collect();
    for _ in 0..spec.distractor_edges {
        if spec.n_relations < 4 {
            break;
        }
        let r = RelationId(rng.gen_range(2..spec.n_relations as u32 - 1));
        for _ in 0..50 {
            let a = EntityId(rng.gen_range(0..spec.n_entities as u32));
            let b = EntityId(rng.gen_range(0..spec.n_entities as u32));
            if a != b && !occupied.contains(&(a, b)) {
                triples.push(Triple::new(a, r, b));
                break;
            }
        }
    }

    let kg = KnowledgeGraph::from_triples(entities, relations, triples);

    // Sentences: every bridge and second-hop edge gets a bag with
    // relation-specific keyword tokens; distractor bags get filler only.
    let mut rng = seeds.stream("sentences");
    let fillers: Vec<String> = (0..spec.filler_words.max(1))
        .map(|i| format!("w{i}"))
        .collect();
    let filler = |rng: &mut crate::rng::Rng| fillers[rng.gen_range(0..fillers.len())].clone();
    let mut lines = Vec::new();
    let mut corpus_pairs: BTreeSet<(EntityId, EntityId)> = BTreeSet::new();
    // Only bridge pairs get bags. Second-hop edges are always in the base
    // graph, so bags over them would add nothing the walker needs while
    // widening the pool of suggestible junk variants.
    for &(s, m, _) in &chains {
        if !corpus_pairs.insert((s, m)) {
            continue;
        }
        let head = kg.entities.name(s.0).unwrap().to_string();
        let tail = kg.entities.name(m.0).unwrap().to_string();
        for _ in 0..spec.sentences_per_bag {
            let middle = vec![
                filler(&mut rng),
                format!("kw{}a", rel0.0),
                format!("kw{}b", rel0.0),
                filler(&mut rng),
            ];
            lines.push(sentence_json(&head, &tail, &middle));
        }
    }
    let forbidden: BTreeSet<(EntityId, EntityId)> = kg
        .base_triples()
        .map(|t| (t.subject, t.object))
        .chain(removed_bridges.iter().map(|t| (t.subject, t.object)))
        .chain(chains.iter().map(|&(s, _, o)| (s, o)))
        .collect();
    let mut placed = 0;
    let mut attempts = 0;
    while placed < spec.distractor_bags && attempts < spec.distractor_bags * 100 {
        attempts += 1;
        let a = EntityId(rng.gen_range(0..spec.n_entities as u32));
        let b = EntityId(rng.gen_range(0..spec.n_entities as u32));
        if a == b || forbidden.contains(&(a, b)) || !corpus_pairs.insert((a, b)) {
            continue;
        }
        let head = kg.entities.name(a.0).unwrap().to_string();
        let tail = kg.entities.name(b.0).unwrap().to_string();
        for _ in 0..spec.sentences_per_bag {
            let middle = vec![
                filler(&mut rng),
                filler(&mut rng),
                filler(&mut rng),
                filler(&mut rng),
            ];
            lines.push(sentence_json(&head, &tail, &middle));
        }
        placed += 1;
    }
    // Noise bags: bridge-pattern sentences over background entities that no
    // planted chain touches. They stand in for true but query-irrelevant
    // corpus facts: a thresholded extract-everything pass cannot tell them
    // from the real corpus-only bridges (entity mentions are masked and the
    // pattern is identical), so recovering the bridges means also ingesting
    // all of these, while path-driven extraction never reaches them.
    let used: BTreeSet<EntityId> = chains
        .iter()
        .flat_map(|&(s, m, o)| [s, m, o])
        .collect();
    let background: Vec<EntityId> = (0..spec.n_entities as u32)
        .map(EntityId)
        .filter(|e| !used.contains(e))
        .collect();
    if spec.noise_bags > 0 && background.len() < 2 {
        return Err(CplError::Generation(
            "noise bags need at least two entities outside the planted chains".to_string(),
        ));
    }
    let mut placed = 0;
    let mut attempts = 0;
    while placed < spec.noise_bags && attempts < spec.noise_bags * 100 {
        attempts += 1;
        let a = background[rng.gen_range(0..background.len())];
        let b = background[rng.gen_range(0..background.len())];
        if a == b || forbidden.contains(&(a, b)) || !corpus_pairs.insert((a, b)) {
            continue;
        }
        let head = kg.entities.name(a.0).unwrap().to_string();
        let tail = kg.entities.name(b.0).unwrap().to_string();
        for _ in 0..spec.sentences_per_bag {
            let middle = vec![
                filler(&mut rng),
                format!("kw{}a", rel0.0),
                format!("kw{}b", rel0.0),
                filler(&mut rng),
            ];
            lines.push(sentence_json(&head, &tail, &middle));
        }
        placed += 1;
    }

    // Classify queries on the graph the walker actually sees (with inverse
    // edges) and verify feasibility once corpus facts are available.
    let mut walkable = kg.clone();
    walkable.add_inverse_edges()?;
    let mut full = KnowledgeGraph::from_triples(
        kg.entities.clone(),
        kg.relations.clone(),
        kg.base_triples().chain(removed_bridges.iter().copied()),
    );
    full.add_inverse_edges()?;
    let mut kg_answerable = Vec::new();
    let mut corpus_dependent = Vec::new();
    for &(s, _, o) in &chains {
        let q = Triple::new(s, query_relation, o);
        if bfs_reachable(&walkable, s, o, spec.horizon) {
            kg_answerable.push(q);
        } else if bfs_reachable(&full, s, o, spec.horizon) {
            corpus_dependent.push(q);
        } else {
            return Err(CplError::Generation(format!(
                "planted query {s} -> {o} unreachable even with corpus facts"
            )));
        }
    }

    Ok(SynthDataset {
        kg,
        corpus_jsonl: lines.join("\n") + "\n",
        query_relation,
        kg_answerable,
        corpus_dependent,
        removed_bridges,
    })
}

/// Write `graph.tsv`, `corpus.jsonl`, `queries_kg.tsv`, `queries_corpus.tsv`,
/// `entities.tsv`, and `relations.tsv` under `dir`. The vocabulary files pin
/// the id order for entities and relations that no base triple mentions, such
/// as query relations and subjects whose only edge lives in the corpus.
pub fn write_dataset(dir: &Path, ds: &SynthDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let base: Vec<Triple> = ds.kg.base_triples().collect();
    crate::graph::write_triples(&dir.join("graph.tsv"), &ds.kg, &base)?;
    for (file, vocab) in [
        ("entities.tsv", &ds.kg.entities),
        ("relations.tsv", &ds.kg.relations),
    ] {
        let mut f = std::fs::File::create(dir.join(file))?;
        for (_, name) in vocab.iter() {
            writeln!(f, "{name}")?;
        }
    }
    let mut f = std::fs::File::create(dir.join("corpus.jsonl"))?;
    f.write_all(ds.corpus_jsonl.as_bytes())?;
    crate::graph::write_triples(&dir.join("queries_kg.tsv"), &ds.kg, &ds.kg_answerable)?;
    crate::graph::write_triples(
        &dir.join("queries_corpus.tsv"),
        &ds.kg,
        &ds.corpus_dependent,
    )?;
    Ok(())
}
