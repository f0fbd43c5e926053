//! Path-reasoning agent: walks the graph for a fixed horizon, one out-edge
//! per step, and earns a terminal reward of 1 only if it stops on the
//! query's answer entity.
//!
//! The policy scores each action embedding `[r, e]` against
//! `W2·relu(W1·[e_s, r_q, h^t])`, where `h^t` is an LSTM encoding of the
//! edges walked so far.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::corpus::BagKey;
use crate::diff::{ParameterStore, Tape, Var};
use crate::error::{CplError, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReasonerConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            embed_dim: 50,
            hidden_dim: 50,
            ff_dim: 50,
        }
    }
}

/// A query triple with the object hidden from the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub subject: EntityId,
    pub relation: RelationId,
    pub answer: EntityId,
}

impl From<Triple> for Query {
    fn from(t: Triple) -> Self {
        Self {
            subject: t.subject,
            relation: t.relation,
            answer: t.object,
        }
    }
}

/// One entry of the joint action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    pub relation: RelationId,
    pub object: EntityId,
    /// True when the edge was suggested by the extractor in this episode.
    pub suggested: bool,
}

#[derive(Debug, Clone)]
pub struct JointActionSpace {
    pub actions: Vec<Action>,
}

impl JointActionSpace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// An edge proposed by the extractor, with the sentence bag it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Suggestion {
    pub triple: Triple,
    pub bag: BagKey,
}

/// Source of suggested edges during a rollout.
pub trait Suggester {
    fn suggest(&mut self, entity: EntityId, k: usize, rng: &mut Rng) -> Vec<Suggestion>;
}

/// The reasoner-only ablation: no corpus, no suggestions.
pub struct NoSuggestions;

impl Suggester for NoSuggestions {
    fn suggest(&mut self, _entity: EntityId, _k: usize, _rng: &mut Rng) -> Vec<Suggestion> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReasonerState {
    pub subject: EntityId,
    pub query_relation: RelationId,
    pub location: EntityId,
    pub hidden: Var,
    pub cell: Var,
}

#[derive(Debug, Clone)]
pub enum SamplingMode {
    /// Sample from the policy, with an additive logit bonus on suggested
    /// actions (0 disables the bonus).
    Stochastic { boost: f64 },
    /// Argmax decoding.
    Greedy,
    /// Follow a fixed action index sequence; test hook.
    Forced(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Location before taking the action.
    pub location: EntityId,
    pub actions: Vec<Action>,
    pub chosen: usize,
    /// Log-probability under the distribution actually sampled from.
    pub log_prob: f64,
    /// Additive logit bonus that was live when sampling (0 when none).
    pub boost: f64,
    /// Edges the extractor suggested at this step.
    pub suggestions: Vec<Suggestion>,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub query: Query,
    pub steps: Vec<StepRecord>,
    pub terminal_reward: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Suggested edges chosen on a successful path; empty on failure.
    pub fn positive_suggested_edges(&self) -> BTreeSet<Triple> {
        let mut out = BTreeSet::new();
        if self.terminal_reward == 0.0 {
            return out;
        }
        let mut location = self.query.subject;
        for step in &self.steps {
            let action = step.actions[step.chosen];
            if action.suggested {
                out.insert(Triple::new(location, action.relation, action.object));
            }
            location = action.object;
        }
        out
    }
}

/// Rollout-time knobs shared by training and inference.
#[derive(Debug, Clone)]
pub struct RolloutOptions {
    pub horizon: usize,
    pub dropout_rate: f64,
    pub action_cap: usize,
    pub suggestions_per_step: usize,
    /// Edge dropout only applies while training.
    pub training: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            horizon: 3,
            dropout_rate: 0.0,
            action_cap: 200,
            suggestions_per_step: 5,
            training: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReasonerModel {
    pub store: ParameterStore,
    pub cfg: ReasonerConfig,
    n_entities: usize,
    n_graph_relations: usize,
}

impl ReasonerModel {
    pub fn new(
        n_entities: usize,
        n_graph_relations: usize,
        cfg: ReasonerConfig,
        rng: &mut Rng,
    ) -> Self {
        let d = cfg.embed_dim;
        let nh = cfg.hidden_dim;
        let ff = cfg.ff_dim;
        let mut store = ParameterStore::new();
        store.add_uniform("ent", &[n_entities, d], rng);
        // Two reserved rows: the start token and the self-loop relation.
        store.add_uniform("rel", &[n_graph_relations + 2, d], rng);
        store.add_uniform("lstm_w", &[4 * nh, 2 * d + nh], rng);
        store.add_zeros("lstm_b", &[4 * nh]);
        store.add_uniform("w1", &[ff, 2 * d + nh], rng);
        store.add_zeros("b1", &[ff]);
        store.add_uniform("w2", &[2 * d, ff], rng);
        Self {
            store,
            cfg,
            n_entities,
            n_graph_relations,
        }
    }

    /// Rebind loaded parameters to a model shell.
    pub fn from_store(
        store: ParameterStore,
        cfg: ReasonerConfig,
        n_entities: usize,
        n_graph_relations: usize,
    ) -> Self {
        Self {
            store,
            cfg,
            n_entities,
            n_graph_relations,
        }
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_graph_relations(&self) -> usize {
        self.n_graph_relations
    }

    pub fn start_relation(&self) -> RelationId {
        RelationId(self.n_graph_relations as u32)
    }

    pub fn self_loop_relation(&self) -> RelationId {
        RelationId(self.n_graph_relations as u32 + 1)
    }

    fn check_ids(&self, e: EntityId, r: RelationId) -> Result<()> {
        if e.0 as usize >= self.n_entities {
            return Err(CplError::Lookup(format!("entity id {} out of range", e.0)));
        }
        if r.0 as usize >= self.n_graph_relations + 2 {
            return Err(CplError::Lookup(format!("relation id {} out of range", r.0)));
        }
        Ok(())
    }

    pub fn init_state(
        &self,
        tape: &mut Tape,
        subject: EntityId,
        query_relation: RelationId,
    ) -> Result<ReasonerState> {
        self.check_ids(subject, query_relation)?;
        let hidden = tape.constant(vec![0.0; self.cfg.hidden_dim]);
        let cell = tape.constant(vec![0.0; self.cfg.hidden_dim]);
        Ok(ReasonerState {
            subject,
            query_relation,
            location: subject,
            hidden,
            cell,
        })
    }

    /// Advance the history LSTM with the chosen edge `[r, e]`.
    pub fn advance_history(
        &self,
        tape: &mut Tape,
        state: &ReasonerState,
        chosen: (RelationId, EntityId),
    ) -> Result<ReasonerState> {
        let (r, e) = chosen;
        self.check_ids(e, r)?;
        let re = tape.embed_lookup(&self.store, "rel", r.0 as usize);
        let ee = tape.embed_lookup(&self.store, "ent", e.0 as usize);
        let x = tape.concat(&[re, ee]);
        let w = tape.param(&self.store, "lstm_w");
        let b = tape.param(&self.store, "lstm_b");
        let (hidden, cell) =
            tape.lstm_step(w, b, x, state.hidden, state.cell, self.cfg.hidden_dim)?;
        Ok(ReasonerState {
            subject: state.subject,
            query_relation: state.query_relation,
            location: e,
            hidden,
            cell,
        })
    }

    /// Policy logits over the action space: `A · W2·relu(W1·[e_s, r_q, h])`.
    pub fn action_logits(
        &self,
        tape: &mut Tape,
        state: &ReasonerState,
        space: &JointActionSpace,
    ) -> Result<Var> {
        if space.is_empty() {
            return Err(CplError::Lookup("empty action space".to_string()));
        }
        let d = self.cfg.embed_dim;
        let nh = self.cfg.hidden_dim;
        let ff = self.cfg.ff_dim;
        let es = tape.embed_lookup(&self.store, "ent", state.subject.0 as usize);
        let rq = tape.embed_lookup(&self.store, "rel", state.query_relation.0 as usize);
        let s = tape.concat(&[es, rq, state.hidden]);
        let w1 = tape.param(&self.store, "w1");
        let b1 = tape.param(&self.store, "b1");
        let u = tape.affine(w1, b1, s, ff, 2 * d + nh)?;
        let u = tape.relu(u);
        let w2 = tape.param(&self.store, "w2");
        let v = tape.matvec(w2, u, 2 * d, ff)?;
        let mut scores = Vec::with_capacity(space.len());
        for action in &space.actions {
            let re = tape.embed_lookup(&self.store, "rel", action.relation.0 as usize);
            let ee = tape.embed_lookup(&self.store, "ent", action.object.0 as usize);
            let a = tape.concat(&[re, ee]);
            scores.push(tape.dot(a, v));
        }
        Ok(tape.concat(&scores))
    }

    /// Probability distribution over the space (no boost).
    pub fn policy_distribution(
        &self,
        tape: &mut Tape,
        state: &ReasonerState,
        space: &JointActionSpace,
    ) -> Result<Vec<f64>> {
        let logits = self.action_logits(tape, state, space)?;
        let probs = tape.softmax(logits);
        Ok(tape.value(probs).to_vec())
    }
}

/// Assemble the joint action space at `location`: graph out-edges (base plus
/// retained and live overlay), flagged suggested when they belong to this
/// episode's suggestion set, with training-time edge dropout on graph edges,
/// a size cap applied to graph edges only, and a trailing self-loop.
pub fn build_action_space(
    model: &ReasonerModel,
    kg: &KnowledgeGraph,
    location: EntityId,
    episode_suggested: &BTreeSet<Triple>,
    opts: &RolloutOptions,
    rng: &mut Rng,
) -> Result<JointActionSpace> {
    let mut graph_actions = Vec::new();
    let mut suggested_actions = Vec::new();
    for edge in kg.out_edges(location)? {
        let triple = Triple::new(location, edge.relation, edge.object);
        if episode_suggested.contains(&triple) {
            suggested_actions.push(Action {
                relation: edge.relation,
                object: edge.object,
                suggested: true,
            });
        } else {
            if opts.training && opts.dropout_rate > 0.0 && rng.gen::<f64>() < opts.dropout_rate {
                continue;
            }
            graph_actions.push(Action {
                relation: edge.relation,
                object: edge.object,
                suggested: false,
            });
        }
    }
    if graph_actions.len() > opts.action_cap {
        graph_actions.shuffle(rng);
        graph_actions.truncate(opts.action_cap);
    }
    graph_actions.sort_unstable_by_key(|a| (a.relation, a.object));
    suggested_actions.sort_unstable_by_key(|a| (a.relation, a.object));
    let mut actions = graph_actions;
    actions.extend(suggested_actions);
    actions.push(Action {
        relation: model.self_loop_relation(),
        object: location,
        suggested: false,
    });
    Ok(JointActionSpace { actions })
}

fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Pick an action. Suggested actions receive an additive logit `boost`
/// before renormalization; the returned log-prob is taken from the boosted
/// distribution, which is the distribution actually sampled from.
pub fn select_action(
    model: &ReasonerModel,
    tape: &mut Tape,
    state: &ReasonerState,
    space: &JointActionSpace,
    mode: &SamplingMode,
    step: usize,
    rng: &mut Rng,
) -> Result<(usize, f64)> {
    let logits = model.action_logits(tape, state, space)?;
    let boost = match mode {
        SamplingMode::Stochastic { boost } => *boost,
        _ => 0.0,
    };
    let logits = if boost != 0.0 {
        let mask: Vec<f64> = space
            .actions
            .iter()
            .map(|a| if a.suggested { boost } else { 0.0 })
            .collect();
        let mask = tape.constant(mask);
        tape.add(logits, mask)
    } else {
        logits
    };
    let log_probs = tape.log_softmax(logits);
    let lp = tape.value(log_probs);
    let chosen = match mode {
        SamplingMode::Stochastic { .. } => {
            let probs: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
            sample_index(&probs, rng)
        }
        SamplingMode::Greedy => {
            // Deterministic tie-break: first maximum.
            let mut best = 0;
            for (i, &x) in lp.iter().enumerate() {
                if x > lp[best] {
                    best = i;
                }
            }
            best
        }
        SamplingMode::Forced(indices) => *indices.get(step).ok_or_else(|| {
            CplError::Config(format!("forced action sequence too short at step {step}"))
        })?,
    };
    if chosen >= space.len() {
        return Err(CplError::Config(format!(
            "forced action index {chosen} outside space of {}",
            space.len()
        )));
    }
    Ok((chosen, lp[chosen]))
}

/// Run one episode: `horizon` steps, suggestions fetched at each frontier
/// entity, terminal reward 1 iff the walk ends on the answer entity.
/// Suggested edges live in the graph overlay for the duration of the episode
/// and are resolved at the end under the positive-path rule.
pub fn rollout(
    model: &ReasonerModel,
    kg: &mut KnowledgeGraph,
    query: Query,
    suggester: &mut dyn Suggester,
    mode: &SamplingMode,
    opts: &RolloutOptions,
    rng: &mut Rng,
) -> Result<Trajectory> {
    if opts.horizon == 0 {
        return Err(CplError::Config("rollout horizon must be >= 1".to_string()));
    }
    let mut tape = Tape::new();
    let mut state = model.init_state(&mut tape, query.subject, query.relation)?;
    let mut steps: Vec<StepRecord> = Vec::with_capacity(opts.horizon);
    let mut episode_suggested: BTreeSet<Triple> = BTreeSet::new();
    let mut handles = Vec::new();

    for step in 0..opts.horizon {
        let raw = suggester.suggest(state.location, opts.suggestions_per_step, rng);
        let edges: Vec<Triple> = raw.iter().map(|s| s.triple).collect();
        let handle = kg.augment_temporary(&edges)?;
        episode_suggested.extend(handle.added.iter().copied());
        handles.push(handle);
        let space = build_action_space(model, kg, state.location, &episode_suggested, opts, rng)?;
        let (chosen, log_prob) = select_action(model, &mut tape, &state, &space, mode, step, rng)?;
        let action = space.actions[chosen];
        let boost = match mode {
            SamplingMode::Stochastic { boost } if space.actions.iter().any(|a| a.suggested) => {
                *boost
            }
            _ => 0.0,
        };
        steps.push(StepRecord {
            location: state.location,
            actions: space.actions.clone(),
            chosen,
            log_prob,
            boost,
            suggestions: raw,
            reward: 0.0,
        });
        state = model.advance_history(&mut tape, &state, (action.relation, action.object))?;
    }

    let terminal_reward = if state.location == query.answer { 1.0 } else { 0.0 };
    if let Some(last) = steps.last_mut() {
        last.reward = terminal_reward;
    }
    let mut trajectory = Trajectory {
        query,
        steps,
        terminal_reward,
    };
    let positives = trajectory.positive_suggested_edges();
    for handle in handles.iter_mut() {
        kg.resolve_episode(handle, &positives)?;
    }
    // The trajectory keeps the per-step rewards of the reasoner MDP:
    // intermediate 0, terminal at the last step.
    trajectory.terminal_reward = terminal_reward;
    Ok(trajectory)
}

/// Recompute the log-probabilities of a stored trajectory under the current
/// parameters, re-applying each step's recorded boost so the gradient is
/// taken on the behavior distribution.
pub fn trajectory_log_probs(
    model: &ReasonerModel,
    tape: &mut Tape,
    trajectory: &Trajectory,
) -> Result<Vec<Var>> {
    let mut state = model.init_state(tape, trajectory.query.subject, trajectory.query.relation)?;
    let mut out = Vec::with_capacity(trajectory.steps.len());
    for step in &trajectory.steps {
        let space = JointActionSpace {
            actions: step.actions.clone(),
        };
        let logits = model.action_logits(tape, &state, &space)?;
        let logits = if step.boost != 0.0 {
            let mask: Vec<f64> = space
                .actions
                .iter()
                .map(|a| if a.suggested { step.boost } else { 0.0 })
                .collect();
            let mask = tape.constant(mask);
            tape.add(logits, mask)
        } else {
            logits
        };
        out.push(tape.categorical_log_prob(logits, step.chosen)?);
        let action = space.actions[step.chosen];
        state = model.advance_history(tape, &state, (action.relation, action.object))?;
    }
    Ok(out)
}

/// Breadth-first reachability over the currently visible edges; used as an
/// independent cross-check that a reward-1 trajectory had a real path.
pub fn bfs_reachable(kg: &KnowledgeGraph, from: EntityId, to: EntityId, max_hops: usize) -> bool {
    let mut frontier = vec![from];
    let mut seen: BTreeSet<EntityId> = frontier.iter().copied().collect();
    for _ in 0..max_hops {
        let mut next = Vec::new();
        for e in frontier {
            if let Ok(edges) = kg.out_edges(e) {
                for edge in edges {
                    if edge.object == to {
                        return true;
                    }
                    if seen.insert(edge.object) {
                        next.push(edge.object);
                    }
                }
            }
        }
        frontier = next;
    }
    from == to
}
