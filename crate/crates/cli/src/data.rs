//! Shared loading and settings plumbing for the run commands.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use cpl_core::config::{resolve_settings, ConfigMap, RunManifest, RunSettings};
use cpl_core::corpus::{
    corpus_entity_names, distant_supervision_labels, load_corpus, BagLabel, Corpus,
};
use cpl_core::diff::{load_checkpoint, save_checkpoint, ParameterStore};
use cpl_core::graph::{load_triples, VocabMode, Vocabulary};
use cpl_core::reasoner::Query;
use cpl_core::{CplError, KnowledgeGraph, Result};

/// One run's resolved configuration plus the manifest it will emit.
pub struct RunContext {
    pub map: ConfigMap,
    pub settings: RunSettings,
    pub seed: u64,
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunContext {
    /// Resolves the config file (or defaults), creates the run directory,
    /// and starts a manifest. Run commands own a seed-<n> subdirectory of
    /// `out`; dataset-producing commands own `out` itself.
    pub fn new(config: Option<&Path>, seed: u64, out: &Path, per_seed: bool) -> Result<Self> {
        let map = match config {
            Some(path) => ConfigMap::load(path)?,
            None => ConfigMap::parse_str("")?,
        };
        let settings = resolve_settings(&map)?;
        let dir = if per_seed {
            out.join(format!("seed-{seed}"))
        } else {
            out.to_path_buf()
        };
        std::fs::create_dir_all(&dir)?;
        let mut manifest = RunManifest::new(&map, seed);
        if let Some(path) = config {
            manifest.record_input(path)?;
        }
        Ok(Self {
            map,
            settings,
            seed,
            dir,
            manifest,
        })
    }

    pub fn config_hash(&self) -> [u8; 32] {
        self.map.hash()
    }

    pub fn save_store(&mut self, role: &str, file: &str, store: &ParameterStore) -> Result<()> {
        let path = self.dir.join(file);
        save_checkpoint(&path, store, &self.config_hash())?;
        self.manifest.record_output(role, &path);
        Ok(())
    }

    pub fn load_store(&mut self, dir: &Path, file: &str) -> Result<ParameterStore> {
        let path = dir.join(file);
        let store = load_checkpoint(&path, Some(&self.config_hash()))?;
        self.manifest.record_input(&path)?;
        Ok(store)
    }

    pub fn finish(&self) -> Result<()> {
        self.manifest.save(&self.dir.join("manifest.json"))
    }
}

/// The base graph as loaded plus a walk graph with inverse edges added.
pub struct LoadedGraph {
    pub base: KnowledgeGraph,
    pub walk: KnowledgeGraph,
}

/// Loads the graph with a vocabulary covering every entity and relation the
/// run can mention. Query relations and corpus-only entities are legitimate
/// vocabulary members even when no base triple uses them, and every command
/// in a pipeline must assign them the same ids for checkpoints to stay
/// shape-compatible.
///
/// When `entities.tsv` and `relations.tsv` sit beside the graph file they
/// pin the id order outright. Otherwise the vocabulary starts from the graph
/// file and extends with the names found in the query files and corpus, in
/// sorted order so the result does not depend on argument order.
pub fn load_graph(
    ctx: &mut RunContext,
    path: &Path,
    query_paths: &[&Path],
    corpus_path: Option<&Path>,
) -> Result<LoadedGraph> {
    let (mut entities, mut relations, loaded) = match load_vocab_files(ctx, path)? {
        Some((entities, relations)) => {
            let kg = load_triples(
                path,
                VocabMode::Reuse {
                    entities: entities.clone(),
                    relations: relations.clone(),
                },
            )?;
            (entities, relations, kg)
        }
        None => {
            let kg = load_triples(path, VocabMode::Build)?;
            (kg.entities.clone(), kg.relations.clone(), kg)
        }
    };
    ctx.manifest.record_input(path)?;
    let mut extra_entities = BTreeSet::new();
    let mut extra_relations = BTreeSet::new();
    for qp in query_paths {
        let extra = load_triples(qp, VocabMode::Build)?;
        for (_, name) in extra.entities.iter() {
            extra_entities.insert(name.to_string());
        }
        for (_, name) in extra.relations.iter() {
            extra_relations.insert(name.to_string());
        }
    }
    if let Some(cp) = corpus_path {
        extra_entities.extend(corpus_entity_names(cp)?);
    }
    for name in &extra_entities {
        entities.intern(name);
    }
    for name in &extra_relations {
        relations.intern(name);
    }
    let base = KnowledgeGraph::from_triples(entities, relations, loaded.base_triples());
    let mut walk = base.clone();
    walk.add_inverse_edges()?;
    Ok(LoadedGraph { base, walk })
}

/// Reads `entities.tsv` and `relations.tsv` next to the graph file when both
/// exist, returning vocabularies in file order.
fn load_vocab_files(
    ctx: &mut RunContext,
    graph_path: &Path,
) -> Result<Option<(Vocabulary, Vocabulary)>> {
    let dir = graph_path.parent().unwrap_or(Path::new("."));
    let ent_path = dir.join("entities.tsv");
    let rel_path = dir.join("relations.tsv");
    if !ent_path.is_file() || !rel_path.is_file() {
        return Ok(None);
    }
    let mut vocabs = Vec::new();
    for path in [&ent_path, &rel_path] {
        let mut vocab = Vocabulary::new();
        for line in std::fs::read_to_string(path)?.lines() {
            let name = line.trim();
            if !name.is_empty() {
                vocab.intern(name);
            }
        }
        ctx.manifest.record_input(path)?;
        vocabs.push(vocab);
    }
    let relations = vocabs.pop().unwrap();
    let entities = vocabs.pop().unwrap();
    Ok(Some((entities, relations)))
}

pub fn load_queries(ctx: &mut RunContext, path: &Path, kg: &KnowledgeGraph) -> Result<Vec<Query>> {
    let parsed = load_triples(
        path,
        VocabMode::Reuse {
            entities: kg.entities.clone(),
            relations: kg.relations.clone(),
        },
    )?;
    ctx.manifest.record_input(path)?;
    Ok(parsed.base_triples().map(Query::from).collect())
}

/// Loads the corpus against the base (pre-inverse) graph and computes
/// distant-supervision labels over its forward relations.
pub fn load_corpus_and_labels(
    ctx: &mut RunContext,
    path: &Path,
    base: &KnowledgeGraph,
) -> Result<(Corpus, Vec<BagLabel>)> {
    let corpus = load_corpus(path, base, ctx.settings.max_sentence_len)?;
    ctx.manifest.record_input(path)?;
    let labels = distant_supervision_labels(&corpus, base);
    Ok((corpus, labels))
}

pub fn require<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| CplError::Config(format!("{what} is required")))
}
