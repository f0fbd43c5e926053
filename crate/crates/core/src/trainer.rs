//! Joint training: pre-training for both agents, alternating REINFORCE
//! updates with per-agent discount factors, adaptive sampling of suggested
//! edges, and dual replay memories.

use rand::Rng as _;

use crate::corpus::{BagLabel, Corpus};
use crate::diff::{ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::error::{CplError, Result};
use crate::eval::{evaluate_queries, EvalConfig};
use crate::extractor::{
    assign_extractor_rewards, ExtractorModel, ExtractorRecord, PolicySuggester, SuggestMode,
};
use crate::graph::{KnowledgeGraph, Triple};
use crate::reasoner::{
    rollout, trajectory_log_probs, NoSuggestions, Query, ReasonerModel, RolloutOptions,
    SamplingMode, Suggester, Trajectory,
};
use crate::rng::{Rng, SeedHierarchy};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    /// Reasoner batches per alternation (b_r).
    pub reasoner_batches: usize,
    /// Extractor batches per alternation (b_e).
    pub extractor_batches: usize,
    /// Epochs with adaptive sampling (e_a).
    pub adaptive_epochs: usize,
    /// Maximum epochs (e_m).
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub horizon: usize,
    pub rollouts_per_query: usize,
    pub gamma_reasoner: f64,
    pub gamma_extractor: f64,
    pub dropout_rate: f64,
    pub suggestions_per_step: usize,
    /// Additive logit bonus on suggested actions during adaptive epochs.
    pub adaptive_boost: f64,
    pub replay_capacity_reasoner: usize,
    pub replay_capacity_extractor: usize,
    pub action_cap: usize,
    pub beam_width: usize,
    /// Ablation: keep extractor parameters fixed through joint training.
    pub freeze_extractor: bool,
    /// Off by default: subtract the batch-mean return in REINFORCE.
    pub use_baseline: bool,
    /// Stop early once validation Hits@1 reaches this value.
    pub early_stop_hits1: Option<f64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            reasoner_batches: 1,
            extractor_batches: 1,
            adaptive_epochs: 10,
            max_epochs: 100,
            learning_rate: 0.001,
            batch_size: 64,
            horizon: 3,
            rollouts_per_query: 20,
            gamma_reasoner: 1.0,
            gamma_extractor: 0.0,
            dropout_rate: 0.0,
            suggestions_per_step: 5,
            adaptive_boost: 2.0,
            replay_capacity_reasoner: 10_000,
            replay_capacity_extractor: 10_000,
            action_cap: 200,
            beam_width: 50,
            freeze_extractor: false,
            use_baseline: false,
            early_stop_hits1: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.adaptive_epochs > self.max_epochs {
            return Err(CplError::Config(format!(
                "adaptive epochs {} exceed max epochs {}",
                self.adaptive_epochs, self.max_epochs
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(CplError::Config("learning rate must be > 0".to_string()));
        }
        if !(0.0..=1.0).contains(&self.gamma_reasoner)
            || !(0.0..=1.0).contains(&self.gamma_extractor)
        {
            return Err(CplError::Config("gamma outside [0, 1]".to_string()));
        }
        Ok(())
    }

    pub fn rollout_options(&self, training: bool) -> RolloutOptions {
        RolloutOptions {
            horizon: self.horizon,
            dropout_rate: self.dropout_rate,
            action_cap: self.action_cap,
            suggestions_per_step: self.suggestions_per_step,
            training,
        }
    }
}

/// Bounded uniform-sampling replay buffer with oldest-first eviction.
#[derive(Debug, Clone)]
pub struct ReplayMemory<T> {
    items: Vec<T>,
    capacity: usize,
    next: usize,
    inserted: u64,
}

impl<T: Clone> ReplayMemory<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Vec::new(),
            capacity,
            next: 0,
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, item: T) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
            self.next = (self.next + 1) % self.capacity;
        }
        self.inserted += 1;
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<T> {
        (0..n)
            .map(|_| self.items[rng.gen_range(0..self.items.len())].clone())
            .collect()
    }
}

/// Discounted suffix sums `G^t = Σ_{k≥t} γ^{k-t} r^k`.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Sample an action index from a distribution, optionally boosting the
/// logits of suggested actions first. Returns the index and its
/// log-probability under the distribution actually sampled from.
pub fn adaptive_sample(
    probs: &[f64],
    suggested: &[bool],
    boost: f64,
    active: bool,
    rng: &mut Rng,
) -> (usize, f64) {
    let boosted: Vec<f64> = if active && boost != 0.0 {
        let logits: Vec<f64> = probs
            .iter()
            .zip(suggested)
            .map(|(&p, &s)| p.max(1e-300).ln() + if s { boost } else { 0.0 })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    } else {
        probs.to_vec()
    };
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    let mut idx = boosted.len() - 1;
    for (i, &p) in boosted.iter().enumerate() {
        acc += p;
        if draw < acc {
            idx = i;
            break;
        }
    }
    (idx, boosted[idx].max(1e-300).ln())
}

/// One REINFORCE step on a batch of reasoner trajectories. Steps with zero
/// return contribute nothing; if every return is zero the parameters are
/// left untouched. Returns whether an optimizer step was taken.
pub fn reinforce_update_reasoner(
    model: &mut ReasonerModel,
    batch: &[Trajectory],
    gamma: f64,
    lr: f64,
    use_baseline: bool,
) -> Result<bool> {
    let mut tape = crate::diff::Tape::new();
    let mut terms = Vec::new();
    let mut all_returns = Vec::new();
    let mut per_traj = Vec::new();
    for traj in batch {
        let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
        let returns = compute_returns(&rewards, gamma);
        all_returns.extend(returns.iter().copied());
        per_traj.push(returns);
    }
    let baseline = if use_baseline && !all_returns.is_empty() {
        all_returns.iter().sum::<f64>() / all_returns.len() as f64
    } else {
        0.0
    };
    for (traj, returns) in batch.iter().zip(&per_traj) {
        if returns.iter().all(|&g| g - baseline == 0.0) {
            continue;
        }
        let log_probs = trajectory_log_probs(model, &mut tape, traj)?;
        for (lp, &g) in log_probs.iter().zip(returns) {
            let advantage = g - baseline;
            if advantage != 0.0 {
                terms.push(tape.scale(*lp, -advantage));
            }
        }
    }
    if terms.is_empty() {
        return Ok(false);
    }
    let loss = tape.sum_scalars(&terms);
    tape.backward(loss, 1.0, &mut model.store)?;
    model
        .store
        .adam_update(lr, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)?;
    Ok(true)
}

/// One REINFORCE step on extractor records. With the extractor's γ = 0 the
/// return of a record is its own reward, so zero-reward records induce no
/// update at all.
pub fn reinforce_update_extractor(
    model: &mut ExtractorModel,
    corpus: &Corpus,
    batch: &[ExtractorRecord],
    lr: f64,
) -> Result<bool> {
    let mut tape = crate::diff::Tape::new();
    let mut terms = Vec::new();
    for record in batch {
        if record.reward == 0.0 {
            continue;
        }
        let lp = model.record_log_prob(&mut tape, corpus, record)?;
        terms.push(tape.scale(lp, -record.reward));
    }
    if terms.is_empty() {
        return Ok(false);
    }
    let loss = tape.sum_scalars(&terms);
    tape.backward(loss, 1.0, &mut model.store)?;
    model
        .store
        .adam_update(lr, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)?;
    Ok(true)
}

/// REINFORCE pre-training of the reasoner on the base graph only (no
/// suggestions).
pub fn pretrain_reasoner(
    model: &mut ReasonerModel,
    kg: &mut KnowledgeGraph,
    queries: &[Query],
    epochs: usize,
    cfg: &TrainerConfig,
    seeds: &SeedHierarchy,
) -> Result<()> {
    let opts = cfg.rollout_options(true);
    for epoch in 0..epochs {
        let mut rng = seeds.substream("pretrain-reasoner", epoch as u64);
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for &query in queries {
            for _ in 0..cfg.rollouts_per_query {
                let traj = rollout(
                    model,
                    kg,
                    query,
                    &mut NoSuggestions,
                    &SamplingMode::Stochastic { boost: 0.0 },
                    &opts,
                    &mut rng,
                )?;
                batch.push(traj);
                if batch.len() == cfg.batch_size {
                    reinforce_update_reasoner(
                        model,
                        &batch,
                        cfg.gamma_reasoner,
                        cfg.learning_rate,
                        cfg.use_baseline,
                    )?;
                    batch.clear();
                }
            }
        }
        if !batch.is_empty() {
            reinforce_update_reasoner(
                model,
                &batch,
                cfg.gamma_reasoner,
                cfg.learning_rate,
                cfg.use_baseline,
            )?;
        }
    }
    Ok(())
}

/// Supervised pre-training of the extractor: cross-entropy of each bag's
/// class distribution against its distant-supervision labels, no-relation
/// class included. Bags with a non-NA label also train the suggestion
/// policy toward the labeled (bag, relation) action, so the policy starts
/// joint training concentrated on facts the corpus supports rather than
/// uniform over every relation variant.
pub fn pretrain_extractor(
    model: &mut ExtractorModel,
    corpus: &Corpus,
    labels: &[BagLabel],
    epochs: usize,
    cfg: &TrainerConfig,
    seeds: &SeedHierarchy,
) -> Result<Vec<f64>> {
    use rand::seq::SliceRandom;
    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = seeds.substream("pretrain-extractor", epoch as u64);
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = crate::diff::Tape::new();
            let mut terms = Vec::new();
            for &i in chunk {
                let label = &labels[i];
                let bag = &corpus.bags[&label.bag];
                let log_probs = model.bag_class_log_probs(&mut tape, bag)?;
                let lp = tape.index(log_probs, label.relation.0 as usize)?;
                terms.push(tape.scale(lp, -1.0));
                if label.relation != model.no_relation() {
                    if let Some((actions, logits)) =
                        model.policy_logits(&mut tape, corpus, label.bag.0)?
                    {
                        if let Some(idx) = actions
                            .iter()
                            .position(|a| a.bag == label.bag && a.relation == label.relation)
                        {
                            let plp = tape.categorical_log_prob(logits, idx)?;
                            terms.push(tape.scale(plp, -1.0));
                        }
                    }
                }
            }
            let loss = tape.sum_scalars(&terms);
            total_loss += tape.scalar(loss);
            tape.backward(loss, 1.0, &mut model.store)?;
            model
                .store
                .adam_update(cfg.learning_rate, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)?;
        }
        epoch_losses.push(total_loss / labels.len().max(1) as f64);
    }
    Ok(epoch_losses)
}

/// Per-epoch training metrics, including the ratio of suggested edges on
/// positive paths to positive paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub hits1: f64,
    pub hits5: f64,
    pub hits10: f64,
    pub mrr: f64,
    pub sug_edge_pos_path: f64,
    pub boosted: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub best_reasoner: crate::diff::ParameterStore,
    pub best_extractor: Option<crate::diff::ParameterStore>,
    pub best_epoch: usize,
    pub best_valid_hits1: f64,
    pub skipped_updates: usize,
    /// Whether any epoch sampled with a live boost.
    pub any_boosted_epoch: bool,
}

/// The full alternating training loop: generate experiences (with adaptive
/// sampling during the first `adaptive_epochs`), store them in the two
/// replay memories, then alternately update the reasoner for b_r batches
/// and the extractor for b_e batches, validating each epoch.
pub fn train(
    cfg: &TrainerConfig,
    kg: &mut KnowledgeGraph,
    corpus: Option<&Corpus>,
    train_queries: &[Query],
    valid_queries: &[Query],
    reasoner: &mut ReasonerModel,
    mut extractor: Option<&mut ExtractorModel>,
    seeds: &SeedHierarchy,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut reasoner_memory: ReplayMemory<Trajectory> =
        ReplayMemory::new(cfg.replay_capacity_reasoner);
    let mut extractor_memory: ReplayMemory<ExtractorRecord> =
        ReplayMemory::new(cfg.replay_capacity_extractor);
    let mut metrics = Vec::new();
    let mut best_reasoner = reasoner.store.clone();
    let mut best_extractor = extractor.as_ref().map(|m| m.store.clone());
    let mut best_epoch = 0;
    let mut best_valid_hits1 = f64::NEG_INFINITY;
    let mut skipped_updates = 0;
    let mut any_boosted_epoch = false;

    for epoch in 0..cfg.max_epochs {
        let adaptive = epoch < cfg.adaptive_epochs && corpus.is_some() && extractor.is_some();
        let boost = if adaptive { cfg.adaptive_boost } else { 0.0 };
        if adaptive && cfg.adaptive_boost != 0.0 {
            any_boosted_epoch = true;
        }
        let mut rng = seeds.substream("train-epoch", epoch as u64);
        let opts = cfg.rollout_options(true);

        // Experience generation: one pass over the training queries.
        let mut positive_paths = 0usize;
        let mut suggested_on_positive = 0usize;
        {
            let mut suggester: Box<dyn Suggester + '_> = match (extractor.as_deref(), corpus) {
                (Some(model), Some(corpus)) => {
                    Box::new(PolicySuggester::new(model, corpus, SuggestMode::Sample))
                }
                _ => Box::new(NoSuggestions),
            };
            for &query in train_queries {
                for _ in 0..cfg.rollouts_per_query {
                    let traj = rollout(
                        reasoner,
                        kg,
                        query,
                        suggester.as_mut(),
                        &SamplingMode::Stochastic { boost },
                        &opts,
                        &mut rng,
                    )?;
                    if traj.terminal_reward == 1.0 {
                        positive_paths += 1;
                        // Corpus-derived edges on the successful path: both
                        // fresh suggestions and previously retained edges.
                        let mut location = traj.query.subject;
                        for step in &traj.steps {
                            let action = step.actions[step.chosen];
                            let triple =
                                Triple::new(location, action.relation, action.object);
                            if action.suggested || kg.contains_overlay(&triple) {
                                suggested_on_positive += 1;
                            }
                            location = action.object;
                        }
                    }
                    for (_, records) in assign_extractor_rewards(&traj) {
                        for record in records {
                            extractor_memory.push(record);
                        }
                    }
                    reasoner_memory.push(traj);
                }
            }
        }

        // Reasoner updates (extractor frozen).
        for _ in 0..cfg.reasoner_batches {
            if reasoner_memory.is_empty() {
                skipped_updates += 1;
                continue;
            }
            let batch = reasoner_memory.sample(cfg.batch_size, &mut rng);
            reinforce_update_reasoner(
                reasoner,
                &batch,
                cfg.gamma_reasoner,
                cfg.learning_rate,
                cfg.use_baseline,
            )?;
        }
        // Extractor updates (reasoner frozen).
        if let (Some(model), Some(corpus)) = (extractor.as_deref_mut(), corpus) {
            if !cfg.freeze_extractor {
                for _ in 0..cfg.extractor_batches {
                    if extractor_memory.is_empty() {
                        skipped_updates += 1;
                        continue;
                    }
                    let batch = extractor_memory.sample(cfg.batch_size, &mut rng);
                    reinforce_update_extractor(model, corpus, &batch, cfg.learning_rate)?;
                }
            }
        }

        // Validation.
        let eval_cfg = EvalConfig {
            beam_width: cfg.beam_width,
            horizon: cfg.horizon,
            suggestions_per_step: cfg.suggestions_per_step,
            action_cap: cfg.action_cap,
        };
        let summary = evaluate_queries(
            reasoner,
            kg,
            extractor.as_deref().zip(corpus),
            valid_queries,
            &eval_cfg,
        )?;
        let ratio = if positive_paths > 0 {
            suggested_on_positive as f64 / positive_paths as f64
        } else {
            0.0
        };
        metrics.push(EpochMetrics {
            epoch,
            split: "valid".to_string(),
            hits1: summary.hits1,
            hits5: summary.hits5,
            hits10: summary.hits10,
            mrr: summary.mrr,
            sug_edge_pos_path: ratio,
            boosted: adaptive && cfg.adaptive_boost != 0.0,
        });
        if summary.hits1 > best_valid_hits1 {
            best_valid_hits1 = summary.hits1;
            best_epoch = epoch;
            best_reasoner = reasoner.store.clone();
            best_extractor = extractor.as_ref().map(|m| m.store.clone());
        }
        if let Some(target) = cfg.early_stop_hits1 {
            if epoch >= cfg.adaptive_epochs && summary.hits1 >= target {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        metrics,
        best_reasoner,
        best_extractor,
        best_epoch,
        best_valid_hits1,
        skipped_updates,
        any_boosted_epoch,
    })
}
