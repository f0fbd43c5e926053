//! Inference and evaluation: beam search over the graph plus extractor
//! suggestions, Hits@K and mean reciprocal rank, multi-seed aggregation,
//! and the static two-step extract-then-reason baseline.
//!
//! Inference is side-effect free: suggested edges widen the action space of
//! a beam entry but are never written to the graph overlay and never earn
//! rewards.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;

use crate::corpus::Corpus;
use crate::error::{CplError, Result};
use crate::extractor::{suggest_edges, ExtractorModel, SuggestMode};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::reasoner::{Action, JointActionSpace, Query, ReasonerModel, ReasonerState};
use crate::rng::Rng;
use crate::trainer::EpochMetrics;

/// Seeds used for reported multi-seed runs.
pub const DEFAULT_SEEDS: [u64; 3] = [55, 83, 5583];

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub beam_width: usize,
    pub horizon: usize,
    pub suggestions_per_step: usize,
    pub action_cap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            beam_width: 50,
            horizon: 3,
            suggestions_per_step: 5,
            action_cap: 200,
        }
    }
}

/// One edge of a decoded path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStep {
    pub relation: RelationId,
    pub entity: EntityId,
    pub suggested: bool,
}

/// A partial or complete path kept on the beam.
#[derive(Debug, Clone)]
pub struct BeamEntry {
    pub location: EntityId,
    /// Cumulative log-probability of the path.
    pub log_prob: f64,
    pub path: Vec<PathStep>,
    state: ReasonerState,
}

/// Decode the `beam_width` highest-probability paths of length `horizon`
/// from the query subject. Candidate expansions are ordered by
/// log-probability with a deterministic (parent, action) tie-break, so the
/// result is a pure function of the model, graph, and corpus.
pub fn beam_search(
    model: &ReasonerModel,
    kg: &KnowledgeGraph,
    subject: EntityId,
    relation: RelationId,
    extractor: Option<(&ExtractorModel, &Corpus)>,
    cfg: &EvalConfig,
) -> Result<Vec<BeamEntry>> {
    let mut tape = crate::diff::Tape::new();
    let state = model.init_state(&mut tape, subject, relation)?;
    let mut beam = vec![BeamEntry {
        location: subject,
        log_prob: 0.0,
        path: Vec::new(),
        state,
    }];
    // Top-k suggestion mode consumes no randomness; the generator is only
    // here to satisfy the shared sampling interface.
    let mut rng = Rng::seed_from_u64(0);
    let mut suggestion_cache: BTreeMap<EntityId, Vec<Triple>> = BTreeMap::new();
    let mut space_cache: BTreeMap<EntityId, JointActionSpace> = BTreeMap::new();

    for _ in 0..cfg.horizon {
        // (log_prob, parent index, action index) per candidate expansion.
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        let mut spaces: Vec<JointActionSpace> = Vec::with_capacity(beam.len());
        for (parent, entry) in beam.iter().enumerate() {
            let space = match space_cache.get(&entry.location) {
                Some(space) => space.clone(),
                None => {
                    let space = inference_action_space(
                        model,
                        kg,
                        entry.location,
                        extractor,
                        cfg,
                        &mut suggestion_cache,
                        &mut rng,
                    )?;
                    space_cache.insert(entry.location, space.clone());
                    space
                }
            };
            let probs = model.policy_distribution(&mut tape, &entry.state, &space)?;
            for (i, &p) in probs.iter().enumerate() {
                candidates.push((entry.log_prob + p.max(1e-300).ln(), parent, i));
            }
            spaces.push(space);
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        candidates.truncate(cfg.beam_width);
        let mut next = Vec::with_capacity(candidates.len());
        for (log_prob, parent, action_idx) in candidates {
            let entry = &beam[parent];
            let action = spaces[parent].actions[action_idx];
            let state =
                model.advance_history(&mut tape, &entry.state, (action.relation, action.object))?;
            let mut path = entry.path.clone();
            path.push(PathStep {
                relation: action.relation,
                entity: action.object,
                suggested: action.suggested,
            });
            next.push(BeamEntry {
                location: action.object,
                log_prob,
                path,
                state,
            });
        }
        beam = next;
    }
    Ok(beam)
}

fn inference_action_space(
    model: &ReasonerModel,
    kg: &KnowledgeGraph,
    location: EntityId,
    extractor: Option<(&ExtractorModel, &Corpus)>,
    cfg: &EvalConfig,
    suggestion_cache: &mut BTreeMap<EntityId, Vec<Triple>>,
    rng: &mut Rng,
) -> Result<JointActionSpace> {
    let mut actions: Vec<Action> = Vec::new();
    for edge in kg.out_edges(location)? {
        actions.push(Action {
            relation: edge.relation,
            object: edge.object,
            suggested: false,
        });
    }
    actions.sort_unstable_by_key(|a| (a.relation, a.object));
    actions.truncate(cfg.action_cap);
    if let Some((ex, corpus)) = extractor {
        let suggested = suggestion_cache.entry(location).or_insert_with(|| {
            suggest_edges(
                ex,
                corpus,
                location,
                cfg.suggestions_per_step,
                SuggestMode::Top,
                rng,
            )
            .map(|v| v.into_iter().map(|s| s.triple).collect())
            .unwrap_or_default()
        });
        let mut extra: Vec<Action> = suggested
            .iter()
            .filter(|t| {
                !actions
                    .iter()
                    .any(|a| a.relation == t.relation && a.object == t.object)
            })
            .map(|t| Action {
                relation: t.relation,
                object: t.object,
                suggested: true,
            })
            .collect();
        extra.sort_unstable_by_key(|a| (a.relation, a.object));
        actions.extend(extra);
    }
    actions.push(Action {
        relation: model.self_loop_relation(),
        object: location,
        suggested: false,
    });
    Ok(JointActionSpace { actions })
}

/// Per-entity answer scores: the best path log-probability ending at each
/// entity, sorted by score descending with an ascending entity-id
/// tie-break.
pub fn score_answers(beam: &[BeamEntry]) -> Vec<(EntityId, f64)> {
    let mut best: BTreeMap<EntityId, f64> = BTreeMap::new();
    for entry in beam {
        let score = best.entry(entry.location).or_insert(f64::NEG_INFINITY);
        if entry.log_prob > *score {
            *score = entry.log_prob;
        }
    }
    let mut scored: Vec<(EntityId, f64)> = best.into_iter().collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    scored
}

/// Zero-based rank of the gold answer among the scored entities, or `None`
/// when no surviving path reaches it.
pub fn rank_answer(scored: &[(EntityId, f64)], gold: EntityId) -> Option<usize> {
    scored.iter().position(|&(e, _)| e == gold)
}

/// Fraction of queries whose gold rank is strictly below `k`. An absent
/// rank never counts as a hit.
pub fn hits_at_k(ranks: &[Option<usize>], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(CplError::UndefinedMetric(
            "Hits@K over an empty query set".to_string(),
        ));
    }
    let hits = ranks.iter().filter(|r| matches!(r, Some(x) if *x < k)).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Mean reciprocal rank; an unreached gold answer contributes 0.
pub fn mrr(ranks: &[Option<usize>]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(CplError::UndefinedMetric(
            "MRR over an empty query set".to_string(),
        ));
    }
    let total: f64 = ranks
        .iter()
        .map(|r| r.map_or(0.0, |x| 1.0 / (x + 1) as f64))
        .sum();
    Ok(total / ranks.len() as f64)
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    pub query: Query,
    pub rank: Option<usize>,
    /// Entities and best-path log-probabilities, best first.
    pub scored: Vec<(EntityId, f64)>,
    /// Beam paths kept for reporting, best first.
    pub paths: Vec<BeamEntry>,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub hits1: f64,
    pub hits5: f64,
    pub hits10: f64,
    pub mrr: f64,
    pub results: Vec<QueryResult>,
}

/// Beam-search every query and aggregate ranking metrics.
pub fn evaluate_queries(
    model: &ReasonerModel,
    kg: &KnowledgeGraph,
    extractor: Option<(&ExtractorModel, &Corpus)>,
    queries: &[Query],
    cfg: &EvalConfig,
) -> Result<EvalSummary> {
    let mut results = Vec::with_capacity(queries.len());
    for &query in queries {
        let beam = beam_search(model, kg, query.subject, query.relation, extractor, cfg)?;
        let scored = score_answers(&beam);
        let rank = rank_answer(&scored, query.answer);
        results.push(QueryResult {
            query,
            rank,
            scored,
            paths: beam,
        });
    }
    let ranks: Vec<Option<usize>> = results.iter().map(|r| r.rank).collect();
    Ok(EvalSummary {
        hits1: hits_at_k(&ranks, 1)?,
        hits5: hits_at_k(&ranks, 5)?,
        hits10: hits_at_k(&ranks, 10)?,
        mrr: mrr(&ranks)?,
        results,
    })
}

/// The static baseline's extraction pass: every bag whose most confident
/// non-NA relation clears `threshold` becomes a permanent edge. Returns the
/// edges actually added (duplicates of base edges are skipped).
pub fn two_step_augment(
    kg: &mut KnowledgeGraph,
    extractor: &ExtractorModel,
    corpus: &Corpus,
    threshold: f64,
) -> Result<Vec<Triple>> {
    let mut edges = Vec::new();
    for (key, bag) in &corpus.bags {
        let probs = extractor.bag_class_probs(bag)?;
        let (mut best, mut best_p) = (0, f64::NEG_INFINITY);
        for (r, &p) in probs.iter().enumerate().take(probs.len() - 1) {
            if p > best_p {
                best = r;
                best_p = p;
            }
        }
        if best_p > threshold {
            edges.push(Triple::new(key.0, RelationId(best as u32), key.1));
        }
    }
    let mut handle = kg.augment_temporary(&edges)?;
    let added = handle.added.clone();
    let positives = added.iter().copied().collect();
    kg.resolve_episode(&mut handle, &positives)?;
    Ok(added)
}

#[derive(Debug, Clone)]
pub struct TwoStepOutcome {
    pub threshold: f64,
    pub edges_added: usize,
    pub valid_hits1: f64,
    /// (threshold, edges added, validation Hits@1) for every scanned value.
    pub scanned: Vec<(f64, usize, f64)>,
}

/// The full static extract-then-reason baseline: for each candidate
/// threshold, add the confident corpus edges to a fresh copy of the graph,
/// train a graph-only walker on it, and keep the threshold with the best
/// validation Hits@1.
#[allow(clippy::too_many_arguments)]
pub fn two_step_baseline(
    base_kg: &KnowledgeGraph,
    corpus: &Corpus,
    extractor: &ExtractorModel,
    train_queries: &[Query],
    valid_queries: &[Query],
    thresholds: &[f64],
    cfg: &crate::trainer::TrainerConfig,
    reasoner_cfg: &crate::reasoner::ReasonerConfig,
    train_epochs: usize,
    seeds: &crate::rng::SeedHierarchy,
) -> Result<TwoStepOutcome> {
    if thresholds.is_empty() {
        return Err(CplError::Config("no thresholds to scan".to_string()));
    }
    let mut best: Option<TwoStepOutcome> = None;
    let mut scanned = Vec::new();
    for (i, &threshold) in thresholds.iter().enumerate() {
        let mut kg = base_kg.clone();
        kg.add_inverse_edges()?;
        let added = two_step_augment(&mut kg, extractor, corpus, threshold)?.len();
        let mut reasoner = ReasonerModel::new(
            kg.num_entities(),
            kg.num_relations(),
            reasoner_cfg.clone(),
            &mut seeds.substream("two-step-init", i as u64),
        );
        crate::trainer::pretrain_reasoner(
            &mut reasoner,
            &mut kg,
            train_queries,
            train_epochs,
            cfg,
            seeds,
        )?;
        let eval_cfg = EvalConfig {
            beam_width: cfg.beam_width,
            horizon: cfg.horizon,
            suggestions_per_step: 0,
            action_cap: cfg.action_cap,
        };
        let summary = evaluate_queries(&reasoner, &kg, None, valid_queries, &eval_cfg)?;
        scanned.push((threshold, added, summary.hits1));
        let better = match &best {
            None => true,
            Some(b) => summary.hits1 > b.valid_hits1,
        };
        if better {
            best = Some(TwoStepOutcome {
                threshold,
                edges_added: added,
                valid_hits1: summary.hits1,
                scanned: Vec::new(),
            });
        }
    }
    let mut out = best.expect("thresholds is non-empty");
    out.scanned = scanned;
    Ok(out)
}

/// Mean and population standard deviation across per-seed metric values.
pub fn aggregate_seeds(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(CplError::UndefinedMetric(
            "aggregate over zero seeds".to_string(),
        ));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    Ok((mean, var.sqrt()))
}

/// Write the per-epoch training metrics series as CSV.
pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(
        file,
        "epoch,split,hits1,hits5,hits10,mrr,sug_edge_pos_path,boosted"
    )?;
    for row in rows {
        writeln!(
            file,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            row.epoch,
            row.split,
            row.hits1,
            row.hits5,
            row.hits10,
            row.mrr,
            row.sug_edge_pos_path,
            row.boosted
        )?;
    }
    Ok(())
}

/// Write labeled evaluation summaries (one row per run) as CSV.
pub fn write_eval_csv(path: &Path, rows: &[(String, EvalSummary)]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "run,queries,hits1,hits5,hits10,mrr")?;
    for (label, summary) in rows {
        writeln!(
            file,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            label,
            summary.results.len(),
            summary.hits1,
            summary.hits5,
            summary.hits10,
            summary.mrr
        )?;
    }
    Ok(())
}

/// Human-readable report of a query's best paths: one line per path with
/// per-edge provenance and, for corpus-suggested edges, one supporting
/// sentence.
pub fn render_paths(
    kg: &KnowledgeGraph,
    corpus: Option<&Corpus>,
    result: &QueryResult,
    limit: usize,
) -> String {
    let ent = |e: EntityId| {
        kg.entities
            .name(e.0)
            .map(str::to_string)
            .unwrap_or_else(|| format!("{e}"))
    };
    let rel = |r: RelationId| {
        kg.relations
            .name(r.0)
            .map(str::to_string)
            .unwrap_or_else(|| format!("{r}"))
    };
    let mut out = format!(
        "query: {} --{}--> ? (gold {}, rank {})\n",
        ent(result.query.subject),
        rel(result.query.relation),
        ent(result.query.answer),
        result
            .rank
            .map(|r| (r + 1).to_string())
            .unwrap_or_else(|| "unreached".to_string()),
    );
    for entry in result.paths.iter().take(limit) {
        let mut line = format!("  {:>9.4}  {}", entry.log_prob, ent(result.query.subject));
        let mut location = result.query.subject;
        let mut sentences = Vec::new();
        for step in &entry.path {
            let tag = if step.suggested { " [corpus]" } else { "" };
            line.push_str(&format!(
                " --{}{}--> {}",
                rel(step.relation),
                tag,
                ent(step.entity)
            ));
            if step.suggested {
                if let Some(corpus) = corpus {
                    if let Some(bag) = corpus.bags.get(&(location, step.entity)) {
                        if let Some(sentence) = bag.sentences.first() {
                            let words: Vec<&str> = sentence
                                .tokens
                                .iter()
                                .map(|&w| corpus.word_vocab.name(w).unwrap_or("<unk>"))
                                .collect();
                            sentences.push(format!(
                                "      \"{}\" supports {} --{}--> {}",
                                words.join(" "),
                                ent(location),
                                rel(step.relation),
                                ent(step.entity)
                            ));
                        }
                    }
                }
            }
            location = step.entity;
        }
        out.push_str(&line);
        out.push('\n');
        for s in sentences {
            out.push_str(&s);
            out.push('\n');
        }
    }
    out
}
