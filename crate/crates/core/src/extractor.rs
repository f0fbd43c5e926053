//! Fact-extraction agent: a piecewise-convolutional sentence encoder with
//! selective attention over sentence bags, a policy over (relation, object)
//! candidates, edge suggestion, and the step-wise delayed reward rule.

use rand::Rng as _;

use crate::corpus::{BagKey, Corpus, Sentence, SentenceBag};
use crate::diff::{ParameterStore, Tape, Var};
use crate::error::{CplError, Result};
use crate::graph::{EntityId, RelationId, Triple};
use crate::reasoner::{Suggester, Suggestion, Trajectory};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractorConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    /// Relative offsets are clipped to ±pos_window.
    pub pos_window: usize,
    pub n_filters: usize,
    pub kernel_width: usize,
    /// Dimension of the relation embeddings in the action policy.
    pub rel_dim: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            word_dim: 50,
            pos_dim: 5,
            pos_window: 30,
            n_filters: 230,
            kernel_width: 3,
            rel_dim: 50,
        }
    }
}

impl ExtractorConfig {
    /// Sentence encoding dimension: three pooled segments of filter outputs.
    pub fn sentence_dim(&self) -> usize {
        3 * self.n_filters
    }
}

/// Per-bag relation attention outputs.
pub struct BagEncoding {
    /// One attended bag vector per relation class.
    pub attended: Vec<Var>,
    /// Probability distribution over relation classes (NA included).
    pub relation_scores: Var,
}

/// A candidate extraction: the relation/object pair plus its source bag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractionAction {
    pub relation: RelationId,
    pub object: EntityId,
    pub bag: BagKey,
}

/// A record of one suggestion taken during an episode, for replay training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractorRecord {
    pub subject: EntityId,
    pub bag: BagKey,
    pub relation: RelationId,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct ExtractorModel {
    pub store: ParameterStore,
    pub cfg: ExtractorConfig,
    n_words: usize,
    /// Relation classes including the trailing no-relation class.
    n_classes: usize,
}

impl ExtractorModel {
    /// `n_classes` must count the reserved no-relation class.
    pub fn new(n_words: usize, n_classes: usize, cfg: ExtractorConfig, rng: &mut Rng) -> Self {
        let mut store = ParameterStore::new();
        let pos_rows = 2 * cfg.pos_window + 1;
        let input_dim = cfg.word_dim + 2 * cfg.pos_dim;
        let sd = cfg.sentence_dim();
        store.add_uniform("word", &[n_words, cfg.word_dim], rng);
        store.add_uniform("pos_head", &[pos_rows, cfg.pos_dim], rng);
        store.add_uniform("pos_tail", &[pos_rows, cfg.pos_dim], rng);
        store.add_uniform("conv_w", &[cfg.n_filters, cfg.kernel_width * input_dim], rng);
        store.add_zeros("conv_b", &[cfg.n_filters]);
        store.add_uniform("rel_query", &[n_classes, sd], rng);
        store.add_zeros("cls_b", &[n_classes]);
        store.add_uniform("rel_act", &[n_classes, cfg.rel_dim], rng);
        store.add_uniform("w_policy", &[cfg.rel_dim, sd], rng);
        Self {
            store,
            cfg,
            n_words,
            n_classes,
        }
    }

    pub fn from_store(
        store: ParameterStore,
        cfg: ExtractorConfig,
        n_words: usize,
        n_classes: usize,
    ) -> Self {
        Self {
            store,
            cfg,
            n_words,
            n_classes,
        }
    }

    pub fn n_words(&self) -> usize {
        self.n_words
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Id of the reserved no-relation class.
    pub fn no_relation(&self) -> RelationId {
        RelationId(self.n_classes as u32 - 1)
    }

    fn position_row(&self, token_idx: usize, mention_idx: usize) -> usize {
        let w = self.cfg.pos_window as isize;
        let offset = (token_idx as isize - mention_idx as isize).clamp(-w, w);
        (offset + w) as usize
    }

    /// Encode one sentence: word + two relative-position channels, 1-D
    /// convolution with zero padding, piecewise max pooling over the three
    /// spans delimited by the entity mentions, tanh.
    pub fn encode_sentence(&self, tape: &mut Tape, sentence: &Sentence) -> Result<Var> {
        let cfg = &self.cfg;
        let n = sentence.tokens.len();
        if n == 0 {
            return Err(CplError::Dimension {
                expected: 1,
                got: 0,
                context: "sentence tokens".to_string(),
            });
        }
        let input_dim = cfg.word_dim + 2 * cfg.pos_dim;
        let mut inputs = Vec::with_capacity(n);
        for (i, &tok) in sentence.tokens.iter().enumerate() {
            if tok as usize >= self.n_words {
                return Err(CplError::Lookup(format!("token id {tok} out of range")));
            }
            let w = tape.embed_lookup(&self.store, "word", tok as usize);
            let ph = tape.embed_lookup(
                &self.store,
                "pos_head",
                self.position_row(i, sentence.head_pos),
            );
            let pt = tape.embed_lookup(
                &self.store,
                "pos_tail",
                self.position_row(i, sentence.tail_pos),
            );
            inputs.push(tape.concat(&[w, ph, pt]));
        }
        let conv_w = tape.param(&self.store, "conv_w");
        let conv_b = tape.param(&self.store, "conv_b");
        let pad = (cfg.kernel_width - 1) / 2;
        let zero = tape.constant(vec![0.0; input_dim]);
        let mut conv_out = Vec::with_capacity(n);
        for p in 0..n {
            let window: Vec<Var> = (0..cfg.kernel_width)
                .map(|u| {
                    let q = p as isize + u as isize - pad as isize;
                    if q < 0 || q as usize >= n {
                        zero
                    } else {
                        inputs[q as usize]
                    }
                })
                .collect();
            let x = tape.concat(&window);
            conv_out.push(tape.affine(
                conv_w,
                conv_b,
                x,
                cfg.n_filters,
                cfg.kernel_width * input_dim,
            )?);
        }
        // Inclusive segment boundaries keep every piece nonempty.
        let pmin = sentence.head_pos.min(sentence.tail_pos).min(n - 1);
        let pmax = sentence.head_pos.max(sentence.tail_pos).min(n - 1);
        let seg1 = tape.max_over(&conv_out[0..=pmin]);
        let seg2 = tape.max_over(&conv_out[pmin..=pmax]);
        let seg3 = tape.max_over(&conv_out[pmax..n]);
        let pooled = tape.concat(&[seg1, seg2, seg3]);
        Ok(tape.tanh(pooled))
    }

    /// Shared bag forward pass: per-class attended vectors and class logits.
    fn bag_forward(&self, tape: &mut Tape, bag: &SentenceBag) -> Result<(Vec<Var>, Var)> {
        if bag.sentences.is_empty() {
            return Err(CplError::Dimension {
                expected: 1,
                got: 0,
                context: "sentence bag".to_string(),
            });
        }
        let encodings: Vec<Var> = bag
            .sentences
            .iter()
            .map(|s| self.encode_sentence(tape, s))
            .collect::<Result<_>>()?;
        let cls_b = tape.param(&self.store, "cls_b");
        let mut attended = Vec::with_capacity(self.n_classes);
        let mut logits = Vec::with_capacity(self.n_classes);
        for r in 0..self.n_classes {
            let query = tape.embed_lookup(&self.store, "rel_query", r);
            let scores: Vec<Var> = encodings.iter().map(|&e| tape.dot(e, query)).collect();
            let scores = tape.concat(&scores);
            let weights = tape.softmax(scores);
            let bag_vec = tape.weighted_sum(weights, &encodings);
            let score = tape.dot(bag_vec, query);
            let bias = tape.slice(cls_b, r, 1);
            logits.push(tape.add(score, bias));
            attended.push(bag_vec);
        }
        Ok((attended, tape.concat(&logits)))
    }

    /// Selective attention over a bag, per relation class: attention weights
    /// from compatibility with the relation's query embedding, attended
    /// vector as the weighted sentence-encoding sum, and a distribution over
    /// relation classes.
    pub fn encode_bag(&self, tape: &mut Tape, bag: &SentenceBag) -> Result<BagEncoding> {
        let (attended, logits) = self.bag_forward(tape, bag)?;
        let relation_scores = tape.softmax(logits);
        Ok(BagEncoding {
            attended,
            relation_scores,
        })
    }

    /// Class log-probabilities of a bag; the pre-training objective is the
    /// negative log-probability of the distant-supervision label.
    pub fn bag_class_log_probs(&self, tape: &mut Tape, bag: &SentenceBag) -> Result<Var> {
        let (_, logits) = self.bag_forward(tape, bag)?;
        Ok(tape.log_softmax(logits))
    }

    /// Forward-only class distribution of a bag.
    pub fn bag_class_probs(&self, bag: &SentenceBag) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (_, logits) = self.bag_forward(&mut tape, bag)?;
        let probs = tape.softmax(logits);
        Ok(tape.value(probs).to_vec())
    }

    /// Candidate actions at `subject`: every (bag, non-NA relation) pair,
    /// flattened in deterministic order (bags sorted by object, relations
    /// ascending). Empty when the entity has no bags.
    pub fn candidate_actions(&self, corpus: &Corpus, subject: EntityId) -> Vec<ExtractionAction> {
        let mut out = Vec::new();
        for bag in corpus.bags_for_subject(subject) {
            for r in 0..self.n_classes - 1 {
                out.push(ExtractionAction {
                    relation: RelationId(r as u32),
                    object: bag.pair.1,
                    bag: bag.pair,
                });
            }
        }
        out
    }

    /// Policy logits over the flattened (bag, relation) table: the bilinear
    /// form of the relation action embedding against the bag's per-relation
    /// attended vector through `w_policy`. Returns `None` when the entity
    /// has no bags (no-suggestion signal, not an error).
    pub fn policy_logits(
        &self,
        tape: &mut Tape,
        corpus: &Corpus,
        subject: EntityId,
    ) -> Result<Option<(Vec<ExtractionAction>, Var)>> {
        let bags = corpus.bags_for_subject(subject);
        if bags.is_empty() {
            return Ok(None);
        }
        let sd = self.cfg.sentence_dim();
        let dr = self.cfg.rel_dim;
        let w_policy = tape.param(&self.store, "w_policy");
        let mut actions = Vec::new();
        let mut scores = Vec::new();
        for bag in bags {
            let encoding = self.encode_bag(tape, bag)?;
            for r in 0..self.n_classes - 1 {
                let projected = tape.matvec(w_policy, encoding.attended[r], dr, sd)?;
                let rel = tape.embed_lookup(&self.store, "rel_act", r);
                scores.push(tape.dot(rel, projected));
                actions.push(ExtractionAction {
                    relation: RelationId(r as u32),
                    object: bag.pair.1,
                    bag: bag.pair,
                });
            }
        }
        Ok(Some((actions, tape.concat(&scores))))
    }

    /// Forward-only action distribution at `subject`.
    pub fn action_distribution(
        &self,
        corpus: &Corpus,
        subject: EntityId,
    ) -> Result<Option<(Vec<ExtractionAction>, Vec<f64>)>> {
        let mut tape = Tape::new();
        match self.policy_logits(&mut tape, corpus, subject)? {
            None => Ok(None),
            Some((actions, logits)) => {
                let probs = tape.softmax(logits);
                let probs = tape.value(probs).to_vec();
                Ok(Some((actions, probs)))
            }
        }
    }

    /// Log-probability node for one recorded (bag, relation) choice under
    /// the current parameters.
    pub fn record_log_prob(
        &self,
        tape: &mut Tape,
        corpus: &Corpus,
        record: &ExtractorRecord,
    ) -> Result<Var> {
        let (actions, logits) = self
            .policy_logits(tape, corpus, record.subject)?
            .ok_or_else(|| {
                CplError::Lookup(format!("no bags for subject {}", record.subject))
            })?;
        let index = actions
            .iter()
            .position(|a| a.bag == record.bag && a.relation == record.relation)
            .ok_or_else(|| {
                CplError::Lookup(format!(
                    "recorded action ({:?}, {:?}) not in current candidate table",
                    record.bag, record.relation
                ))
            })?;
        tape.categorical_log_prob(logits, index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuggestMode {
    /// Sample without replacement from the action distribution (training).
    Sample,
    /// Deterministic top-k by probability (inference).
    Top,
}

/// Pick `k` distinct action indices: without-replacement sampling or top-k
/// by probability with deterministic index tie-break.
fn pick_indices(probs: &[f64], k: usize, mode: SuggestMode, rng: &mut Rng) -> Vec<usize> {
    let k = k.min(probs.len());
    let mut picked = Vec::with_capacity(k);
    match mode {
        SuggestMode::Top => {
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| {
                probs[b]
                    .partial_cmp(&probs[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            picked.extend(order.into_iter().take(k));
        }
        SuggestMode::Sample => {
            let mut weights = probs.to_vec();
            for _ in 0..k {
                let total: f64 = weights.iter().sum();
                if total <= 0.0 {
                    break;
                }
                let mut draw = rng.gen::<f64>() * total;
                let mut idx = weights.len() - 1;
                for (i, &w) in weights.iter().enumerate() {
                    if w <= 0.0 {
                        continue;
                    }
                    draw -= w;
                    if draw < 0.0 {
                        idx = i;
                        break;
                    }
                }
                picked.push(idx);
                weights[idx] = 0.0;
            }
        }
    }
    picked
}

fn to_suggestions(
    subject: EntityId,
    actions: &[ExtractionAction],
    picked: Vec<usize>,
) -> Vec<Suggestion> {
    picked
        .into_iter()
        .map(|i| {
            let a = actions[i];
            Suggestion {
                triple: Triple::new(subject, a.relation, a.object),
                bag: a.bag,
            }
        })
        .collect()
}

/// Draw `k` distinct suggestions from the policy at `subject`.
pub fn suggest_edges(
    model: &ExtractorModel,
    corpus: &Corpus,
    subject: EntityId,
    k: usize,
    mode: SuggestMode,
    rng: &mut Rng,
) -> Result<Vec<Suggestion>> {
    let Some((actions, probs)) = model.action_distribution(corpus, subject)? else {
        return Ok(Vec::new());
    };
    let picked = pick_indices(&probs, k, mode, rng);
    Ok(to_suggestions(subject, &actions, picked))
}

/// Step-wise delayed rewards: one record per suggestion per step; reward 1
/// iff the episode succeeded and the suggested edge was walked on the
/// successful path. This is exactly the retention rule, so the rewarded
/// edge set and the newly retained edge set coincide.
pub fn assign_extractor_rewards(trajectory: &Trajectory) -> Vec<(usize, Vec<ExtractorRecord>)> {
    let positives = trajectory.positive_suggested_edges();
    let mut out = Vec::new();
    for (t, step) in trajectory.steps.iter().enumerate() {
        if step.suggestions.is_empty() {
            continue;
        }
        let records: Vec<ExtractorRecord> = step
            .suggestions
            .iter()
            .map(|s| ExtractorRecord {
                subject: step.location,
                bag: s.bag,
                relation: s.triple.relation,
                reward: if positives.contains(&s.triple) { 1.0 } else { 0.0 },
            })
            .collect();
        out.push((t, records));
    }
    out
}

/// Live suggester backed by the extractor policy, with per-entity caching of
/// the action distribution within one parameter snapshot.
pub struct PolicySuggester<'a> {
    model: &'a ExtractorModel,
    corpus: &'a Corpus,
    mode: SuggestMode,
    cache: std::collections::BTreeMap<EntityId, Option<(Vec<ExtractionAction>, Vec<f64>)>>,
}

impl<'a> PolicySuggester<'a> {
    pub fn new(model: &'a ExtractorModel, corpus: &'a Corpus, mode: SuggestMode) -> Self {
        Self {
            model,
            corpus,
            mode,
            cache: std::collections::BTreeMap::new(),
        }
    }
}

impl Suggester for PolicySuggester<'_> {
    fn suggest(&mut self, entity: EntityId, k: usize, rng: &mut Rng) -> Vec<Suggestion> {
        let dist = self
            .cache
            .entry(entity)
            .or_insert_with(|| {
                self.model
                    .action_distribution(self.corpus, entity)
                    .ok()
                    .flatten()
            })
            .clone();
        let Some((actions, probs)) = dist else {
            return Vec::new();
        };
        let picked = pick_indices(&probs, k, self.mode, rng);
        to_suggestions(entity, &actions, picked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn small_cfg() -> ExtractorConfig {
        ExtractorConfig {
            word_dim: 4,
            pos_dim: 2,
            pos_window: 5,
            n_filters: 3,
            kernel_width: 3,
            rel_dim: 4,
        }
    }

    fn sentence(tokens: &[u32], head: usize, tail: usize) -> Sentence {
        Sentence {
            tokens: tokens.to_vec(),
            head_pos: head,
            tail_pos: tail,
            pair: (EntityId(0), EntityId(1)),
        }
    }

    fn model(n_words: usize, n_classes: usize, seed: u64) -> ExtractorModel {
        let mut rng = Rng::seed_from_u64(seed);
        ExtractorModel::new(n_words, n_classes, small_cfg(), &mut rng)
    }

    #[test]
    fn encoding_is_deterministic_with_expected_dim() {
        let m = model(10, 3, 1);
        let s = sentence(&[1, 2, 3, 4, 5], 0, 3);
        let mut tape = Tape::new();
        let a = m.encode_sentence(&mut tape, &s).unwrap();
        let b = m.encode_sentence(&mut tape, &s).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        assert_eq!(tape.value(a).len(), 3 * m.cfg.n_filters);
    }

    #[test]
    fn swapping_mentions_changes_encoding() {
        let m = model(10, 3, 2);
        let a = sentence(&[1, 2, 3, 4, 5], 0, 3);
        let b = sentence(&[1, 2, 3, 4, 5], 3, 0);
        let mut tape = Tape::new();
        let ea = m.encode_sentence(&mut tape, &a).unwrap();
        let eb = m.encode_sentence(&mut tape, &b).unwrap();
        assert_ne!(tape.value(ea), tape.value(eb));
    }

    #[test]
    fn short_sentence_is_padded_not_rejected() {
        let m = model(10, 3, 3);
        let s = sentence(&[1, 2], 0, 1);
        let mut tape = Tape::new();
        let e = m.encode_sentence(&mut tape, &s).unwrap();
        assert_eq!(tape.value(e).len(), 3 * m.cfg.n_filters);
    }

    #[test]
    fn single_sentence_bag_attention_is_identity() {
        let m = model(10, 3, 4);
        let s = sentence(&[1, 2, 3], 0, 2);
        let bag = SentenceBag {
            pair: s.pair,
            sentences: vec![s.clone()],
        };
        let mut tape = Tape::new();
        let enc = m.encode_bag(&mut tape, &bag).unwrap();
        let direct = m.encode_sentence(&mut tape, &s).unwrap();
        for v in &enc.attended {
            for (a, b) in tape.value(*v).iter().zip(tape.value(direct)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let probs = tape.value(enc.relation_scores);
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identical_sentences_share_attention_equally() {
        let m = model(10, 3, 5);
        let s = sentence(&[1, 2, 3], 0, 2);
        let bag = SentenceBag {
            pair: s.pair,
            sentences: vec![s.clone(), s.clone()],
        };
        let mut tape = Tape::new();
        let enc = m.encode_bag(&mut tape, &bag).unwrap();
        // Attended vector of two identical members equals either encoding.
        let direct = m.encode_sentence(&mut tape, &s).unwrap();
        for (a, b) in tape.value(enc.attended[0]).iter().zip(tape.value(direct)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rewards_follow_the_positive_path_rule() {
        use crate::reasoner::{Action, Query, StepRecord};
        let subject = EntityId(0);
        let mid = EntityId(1);
        let answer = EntityId(2);
        let sug = Suggestion {
            triple: Triple::new(mid, RelationId(1), answer),
            bag: (mid, answer),
        };
        let make_traj = |terminal: f64, use_suggested: bool| Trajectory {
            query: Query {
                subject,
                relation: RelationId(0),
                answer,
            },
            steps: vec![
                StepRecord {
                    location: subject,
                    actions: vec![Action {
                        relation: RelationId(0),
                        object: mid,
                        suggested: false,
                    }],
                    chosen: 0,
                    log_prob: 0.0,
                    boost: 0.0,
                    suggestions: vec![],
                    reward: 0.0,
                },
                StepRecord {
                    location: mid,
                    actions: vec![
                        Action {
                            relation: RelationId(1),
                            object: answer,
                            suggested: true,
                        },
                        Action {
                            relation: RelationId(2),
                            object: mid,
                            suggested: false,
                        },
                    ],
                    chosen: if use_suggested { 0 } else { 1 },
                    log_prob: 0.0,
                    boost: 0.0,
                    suggestions: vec![sug],
                    reward: terminal,
                },
            ],
            terminal_reward: terminal,
        };

        // Failure: all rewards zero.
        let rewards = assign_extractor_rewards(&make_traj(0.0, true));
        assert!(rewards.iter().all(|(_, rs)| rs.iter().all(|r| r.reward == 0.0)));
        // Success via base edges only: still zero.
        let rewards = assign_extractor_rewards(&make_traj(1.0, false));
        assert!(rewards.iter().all(|(_, rs)| rs.iter().all(|r| r.reward == 0.0)));
        // Success through the suggested edge at step 1: rewarded there.
        let rewards = assign_extractor_rewards(&make_traj(1.0, true));
        assert_eq!(rewards.len(), 1);
        assert_eq!(rewards[0].0, 1);
        assert_eq!(rewards[0].1[0].reward, 1.0);
    }
}
