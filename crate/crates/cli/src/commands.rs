//! Implementations of the CLI subcommands.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use cpl_core::config::{ConfigMap, RunManifest, TypedReader};
use cpl_core::corpus::Corpus;
use cpl_core::diff::{check_gradients, ParameterStore, Tape, Var};
use cpl_core::eval::{aggregate_seeds, evaluate_queries, hits_at_k, mrr, two_step_baseline, write_metrics_csv, EvalConfig, EvalSummary};
use cpl_core::extractor::{ExtractorConfig, ExtractorModel};
use cpl_core::graph::{write_triples, Vocabulary};
use cpl_core::reasoner::{
    build_action_space, select_action, ReasonerConfig, ReasonerModel, RolloutOptions, SamplingMode,
};
use cpl_core::rng::{Rng, SeedHierarchy};
use cpl_core::synth::{generate, write_dataset, SynthSpec};
use cpl_core::{CplError, EntityId, KnowledgeGraph, RelationId, Result, Triple};

use crate::data::{load_corpus_and_labels, load_graph, load_queries, require, RunContext};
use crate::{
    AblateArgs, AblationMode, BaselineTwoStepArgs, EvaluateArgs, GenSyntheticArgs, GradCheckArgs,
    PretrainExtractorArgs, PretrainReasonerArgs, TrainArgs, EXIT_CHECK_FAILURE,
};

const REASONER_CKPT: &str = "reasoner.ckpt";
const EXTRACTOR_CKPT: &str = "extractor.ckpt";

pub fn gen_synthetic(args: &GenSyntheticArgs) -> Result<u8> {
    let map = match &args.config {
        Some(path) => ConfigMap::load(path)?,
        None => ConfigMap::parse_str("")?,
    };
    let d = SynthSpec::default();
    let mut r = TypedReader::new(&map);
    let mut spec = SynthSpec {
        n_entities: r.usize("n_entities", d.n_entities)?,
        n_relations: r.usize("n_relations", d.n_relations)?,
        n_chains: r.usize("n_chains", d.n_chains)?,
        corpus_only_fraction: r.f64("corpus_only_fraction", d.corpus_only_fraction)?,
        distractor_edges: r.usize("distractor_edges", d.distractor_edges)?,
        distractor_bags: r.usize("distractor_bags", d.distractor_bags)?,
        noise_bags: r.usize("noise_bags", d.noise_bags)?,
        sentences_per_bag: r.usize("sentences_per_bag", d.sentences_per_bag)?,
        filler_words: r.usize("filler_words", d.filler_words)?,
        horizon: r.usize("horizon", d.horizon)?,
    };
    r.finish()?;
    if let Some(ratio) = args.ratio {
        spec.corpus_only_fraction = ratio;
    }
    let ds = generate(&spec, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    write_dataset(&args.out, &ds)?;
    let mut manifest = RunManifest::new(&map, args.seed);
    if let Some(path) = &args.config {
        manifest.record_input(path)?;
    }
    for file in [
        "graph.tsv",
        "corpus.jsonl",
        "queries_kg.tsv",
        "queries_corpus.tsv",
        "entities.tsv",
        "relations.tsv",
    ] {
        manifest.record_output(file, &args.out.join(file));
    }
    manifest.save(&args.out.join("manifest.json"))?;
    println!(
        "generated {} entities, {} base triples, {} graph-answerable and {} corpus-dependent queries",
        ds.kg.num_entities(),
        ds.kg.num_base_triples(),
        ds.kg_answerable.len(),
        ds.corpus_dependent.len()
    );
    Ok(0)
}

pub fn pretrain_reasoner(args: &PretrainReasonerArgs) -> Result<u8> {
    let mut ctx = RunContext::new(args.config.as_deref(), args.seed, &args.out, true)?;
    let g = load_graph(&mut ctx, &args.kg, &[&args.train_queries], None)?;
    let queries = load_queries(&mut ctx, &args.train_queries, &g.walk)?;
    let seeds = SeedHierarchy::new(ctx.seed);
    let mut kg = g.walk;
    let mut model = ReasonerModel::new(
        kg.num_entities(),
        kg.num_relations(),
        ctx.settings.reasoner.clone(),
        &mut seeds.stream("reasoner-init"),
    );
    cpl_core::trainer::pretrain_reasoner(
        &mut model,
        &mut kg,
        &queries,
        ctx.settings.pretrain_reasoner_epochs,
        &ctx.settings.trainer,
        &seeds,
    )?;
    ctx.save_store("reasoner-checkpoint", REASONER_CKPT, &model.store)?;
    ctx.finish()?;
    println!(
        "pre-trained reasoner for {} epochs over {} queries",
        ctx.settings.pretrain_reasoner_epochs,
        queries.len()
    );
    Ok(0)
}

pub fn pretrain_extractor(args: &PretrainExtractorArgs) -> Result<u8> {
    let mut ctx = RunContext::new(args.config.as_deref(), args.seed, &args.out, true)?;
    let g = load_graph(&mut ctx, &args.kg, &[], Some(&args.corpus))?;
    let (corpus, labels) = load_corpus_and_labels(&mut ctx, &args.corpus, &g.base)?;
    let seeds = SeedHierarchy::new(ctx.seed);
    let mut model = ExtractorModel::new(
        corpus.word_vocab.len(),
        g.base.num_relations() + 1,
        ctx.settings.extractor.clone(),
        &mut seeds.stream("extractor-init"),
    );
    let losses = cpl_core::trainer::pretrain_extractor(
        &mut model,
        &corpus,
        &labels,
        ctx.settings.pretrain_extractor_epochs,
        &ctx.settings.trainer,
        &seeds,
    )?;
    ctx.save_store("extractor-checkpoint", EXTRACTOR_CKPT, &model.store)?;
    ctx.finish()?;
    println!(
        "pre-trained extractor over {} bags; final epoch loss {:.4}",
        labels.len(),
        losses.last().copied().unwrap_or(0.0)
    );
    Ok(0)
}

pub fn train(args: &TrainArgs) -> Result<u8> {
    run_training(
        args.config.as_deref(),
        args.seed,
        &args.kg,
        Some(args.corpus.as_path()),
        &args.train_queries,
        &args.valid_queries,
        args.checkpoint.as_deref(),
        &args.out,
        None,
    )
}

pub fn ablate(args: &AblateArgs) -> Result<u8> {
    let corpus = match args.mode {
        AblationMode::ReasonerOnly => None,
        _ => Some(require(args.corpus.as_deref(), "--corpus")?),
    };
    run_training(
        args.config.as_deref(),
        args.seed,
        &args.kg,
        corpus,
        &args.train_queries,
        &args.valid_queries,
        args.checkpoint.as_deref(),
        &args.out,
        Some(args.mode),
    )
}

/// Checkpoint roots may hold per-seed subdirectories or bare files.
fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    let per_seed = root.join(format!("seed-{seed}"));
    if per_seed.is_dir() {
        per_seed
    } else {
        root.to_path_buf()
    }
}

#[allow(clippy::too_many_arguments)]
fn run_training(
    config: Option<&Path>,
    seed: u64,
    kg_path: &Path,
    corpus_path: Option<&Path>,
    train_path: &Path,
    valid_path: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
    mode: Option<AblationMode>,
) -> Result<u8> {
    let mut ctx = RunContext::new(config, seed, out, true)?;
    let mut cfg = ctx.settings.trainer.clone();
    match mode {
        Some(AblationMode::FrozenExtractor) => cfg.freeze_extractor = true,
        Some(AblationMode::NoAdaptive) => cfg.adaptive_epochs = 0,
        Some(AblationMode::ReasonerOnly) | None => {}
    }

    let g = load_graph(&mut ctx, kg_path, &[train_path, valid_path], corpus_path)?;
    let corpus_labels = match corpus_path {
        Some(path) => Some(load_corpus_and_labels(&mut ctx, path, &g.base)?),
        None => None,
    };
    let train_q = load_queries(&mut ctx, train_path, &g.walk)?;
    let valid_q = load_queries(&mut ctx, valid_path, &g.walk)?;
    let seeds = SeedHierarchy::new(ctx.seed);
    let mut kg = g.walk;

    let mut reasoner = match checkpoint {
        Some(root) => {
            let store = ctx.load_store(&seed_dir(root, seed), REASONER_CKPT)?;
            ReasonerModel::from_store(
                store,
                ctx.settings.reasoner.clone(),
                kg.num_entities(),
                kg.num_relations(),
            )
        }
        None => {
            let mut model = ReasonerModel::new(
                kg.num_entities(),
                kg.num_relations(),
                ctx.settings.reasoner.clone(),
                &mut seeds.stream("reasoner-init"),
            );
            cpl_core::trainer::pretrain_reasoner(
                &mut model,
                &mut kg,
                &train_q,
                ctx.settings.pretrain_reasoner_epochs,
                &cfg,
                &seeds,
            )?;
            model
        }
    };

    let mut extractor = match &corpus_labels {
        None => None,
        Some((corpus, labels)) => {
            let n_classes = g.base.num_relations() + 1;
            let model = match checkpoint {
                Some(root) => {
                    let store = ctx.load_store(&seed_dir(root, seed), EXTRACTOR_CKPT)?;
                    ExtractorModel::from_store(
                        store,
                        ctx.settings.extractor.clone(),
                        corpus.word_vocab.len(),
                        n_classes,
                    )
                }
                None => {
                    let mut model = ExtractorModel::new(
                        corpus.word_vocab.len(),
                        n_classes,
                        ctx.settings.extractor.clone(),
                        &mut seeds.stream("extractor-init"),
                    );
                    cpl_core::trainer::pretrain_extractor(
                        &mut model,
                        corpus,
                        labels,
                        ctx.settings.pretrain_extractor_epochs,
                        &cfg,
                        &seeds,
                    )?;
                    model
                }
            };
            Some(model)
        }
    };

    let outcome = cpl_core::trainer::train(
        &cfg,
        &mut kg,
        corpus_labels.as_ref().map(|(c, _)| c),
        &train_q,
        &valid_q,
        &mut reasoner,
        extractor.as_mut(),
        &seeds,
    )?;
    for m in &outcome.metrics {
        println!(
            "epoch {:>3} {} hits@1 {:.4} mrr {:.4} sug_edge/pos_path {:.4}{}",
            m.epoch,
            m.split,
            m.hits1,
            m.mrr,
            m.sug_edge_pos_path,
            if m.boosted { " [boosted]" } else { "" }
        );
    }

    let metrics_path = ctx.dir.join("metrics.csv");
    write_metrics_csv(&metrics_path, &outcome.metrics)?;
    ctx.manifest.record_output("metrics", &metrics_path);
    ctx.save_store("reasoner-checkpoint", REASONER_CKPT, &outcome.best_reasoner)?;
    if let Some(store) = &outcome.best_extractor {
        ctx.save_store("extractor-checkpoint", EXTRACTOR_CKPT, store)?;
    }
    let retained: Vec<Triple> = kg.retained_triples().collect();
    let retained_path = ctx.dir.join("retained_edges.tsv");
    write_triples(&retained_path, &kg, &retained)?;
    ctx.manifest.record_output("retained-edges", &retained_path);
    ctx.finish()?;
    println!(
        "best validation hits@1 {:.4} at epoch {}; {} corpus edges retained",
        outcome.best_valid_hits1,
        outcome.best_epoch,
        retained.len()
    );
    Ok(0)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<u8> {
    let first_seed = *args.seeds.first().unwrap_or(&55);
    let mut ctx = RunContext::new(args.config.as_deref(), first_seed, &args.out, false)?;
    let g = load_graph(
        &mut ctx,
        &args.kg,
        &[&args.test_queries],
        args.corpus.as_deref(),
    )?;
    let queries = load_queries(&mut ctx, &args.test_queries, &g.walk)?;
    let corpus = match &args.corpus {
        Some(path) => Some(load_corpus_and_labels(&mut ctx, path, &g.base)?.0),
        None => None,
    };
    let eval_cfg = EvalConfig {
        beam_width: args.beam_width.unwrap_or(ctx.settings.trainer.beam_width),
        horizon: ctx.settings.trainer.horizon,
        suggestions_per_step: ctx.settings.trainer.suggestions_per_step,
        action_cap: ctx.settings.trainer.action_cap,
    };

    let mut csv_rows: Vec<(String, usize, [f64; 4])> = Vec::new();
    let mut overall: Vec<[f64; 4]> = Vec::new();
    println!(
        "{:<10} {:<16} {:>7} {:>8} {:>8} {:>8} {:>8}",
        "seed", "relation", "queries", "hits@1", "hits@5", "hits@10", "mrr"
    );
    for &seed in &args.seeds {
        let dir = seed_dir(&args.checkpoint, seed);
        let store = ctx.load_store(&dir, REASONER_CKPT)?;
        let reasoner = ReasonerModel::from_store(
            store,
            ctx.settings.reasoner.clone(),
            g.walk.num_entities(),
            g.walk.num_relations(),
        );
        let extractor = match &corpus {
            Some(corpus) if dir.join(EXTRACTOR_CKPT).is_file() => {
                let store = ctx.load_store(&dir, EXTRACTOR_CKPT)?;
                Some(ExtractorModel::from_store(
                    store,
                    ctx.settings.extractor.clone(),
                    corpus.word_vocab.len(),
                    g.base.num_relations() + 1,
                ))
            }
            _ => None,
        };
        let pair = extractor.as_ref().and_then(|e| corpus.as_ref().map(|c| (e, c)));
        let summary = evaluate_queries(&reasoner, &g.walk, pair, &queries, &eval_cfg)?;
        for (relation, metrics, n) in per_relation_rows(&g.walk, &summary)? {
            println!(
                "{:<10} {:<16} {:>7} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                seed, relation, n, metrics[0], metrics[1], metrics[2], metrics[3]
            );
            csv_rows.push((format!("seed-{seed}/{relation}"), n, metrics));
        }
        let row = [summary.hits1, summary.hits5, summary.hits10, summary.mrr];
        println!(
            "{:<10} {:<16} {:>7} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            seed,
            "overall",
            queries.len(),
            row[0],
            row[1],
            row[2],
            row[3]
        );
        csv_rows.push((format!("seed-{seed}/overall"), queries.len(), row));
        overall.push(row);
    }
    let mut means = [0.0; 4];
    let mut stds = [0.0; 4];
    for i in 0..4 {
        let values: Vec<f64> = overall.iter().map(|r| r[i]).collect();
        (means[i], stds[i]) = aggregate_seeds(&values)?;
    }
    println!(
        "{:<10} {:<16} {:>7} {:>8.4} {:>8.4} {:>8.4} {:>8.4}  (std {:.4} {:.4} {:.4} {:.4})",
        "aggregate",
        "overall",
        queries.len(),
        means[0],
        means[1],
        means[2],
        means[3],
        stds[0],
        stds[1],
        stds[2],
        stds[3]
    );
    csv_rows.push(("aggregate-mean/overall".to_string(), queries.len(), means));
    csv_rows.push(("aggregate-std/overall".to_string(), queries.len(), stds));

    let csv_path = ctx.dir.join("eval.csv");
    let mut file = std::fs::File::create(&csv_path)?;
    writeln!(file, "run,queries,hits1,hits5,hits10,mrr")?;
    for (label, n, m) in &csv_rows {
        writeln!(
            file,
            "{label},{n},{:.6},{:.6},{:.6},{:.6}",
            m[0], m[1], m[2], m[3]
        )?;
    }
    ctx.manifest.record_output("eval", &csv_path);
    ctx.finish()?;
    Ok(0)
}

/// Metric rows grouped by query relation, sorted by relation name.
fn per_relation_rows(
    kg: &KnowledgeGraph,
    summary: &EvalSummary,
) -> Result<Vec<(String, [f64; 4], usize)>> {
    let mut grouped: std::collections::BTreeMap<String, Vec<Option<usize>>> = Default::default();
    for result in &summary.results {
        let name = kg
            .relations
            .name(result.query.relation.0)
            .unwrap_or("?")
            .to_string();
        grouped.entry(name).or_default().push(result.rank);
    }
    let mut rows = Vec::new();
    for (name, ranks) in grouped {
        let metrics = [
            hits_at_k(&ranks, 1)?,
            hits_at_k(&ranks, 5)?,
            hits_at_k(&ranks, 10)?,
            mrr(&ranks)?,
        ];
        rows.push((name, metrics, ranks.len()));
    }
    Ok(rows)
}

pub fn baseline_two_step(args: &BaselineTwoStepArgs) -> Result<u8> {
    let mut ctx = RunContext::new(args.config.as_deref(), args.seed, &args.out, true)?;
    let g = load_graph(
        &mut ctx,
        &args.kg,
        &[&args.train_queries, &args.valid_queries],
        Some(&args.corpus),
    )?;
    let (corpus, labels) = load_corpus_and_labels(&mut ctx, &args.corpus, &g.base)?;
    let train_q = load_queries(&mut ctx, &args.train_queries, &g.base)?;
    let valid_q = load_queries(&mut ctx, &args.valid_queries, &g.base)?;
    let seeds = SeedHierarchy::new(ctx.seed);
    let n_classes = g.base.num_relations() + 1;
    let extractor = match &args.checkpoint {
        Some(root) => {
            let store = ctx.load_store(&seed_dir(root, ctx.seed), EXTRACTOR_CKPT)?;
            ExtractorModel::from_store(
                store,
                ctx.settings.extractor.clone(),
                corpus.word_vocab.len(),
                n_classes,
            )
        }
        None => {
            let mut model = ExtractorModel::new(
                corpus.word_vocab.len(),
                n_classes,
                ctx.settings.extractor.clone(),
                &mut seeds.stream("extractor-init"),
            );
            cpl_core::trainer::pretrain_extractor(
                &mut model,
                &corpus,
                &labels,
                ctx.settings.pretrain_extractor_epochs,
                &ctx.settings.trainer,
                &seeds,
            )?;
            model
        }
    };
    let grid = match args.threshold {
        Some(t) => vec![t],
        None => vec![0.02, 0.05, 0.1, 0.2, 0.35, 0.5, 0.7, ctx.settings.two_step_threshold],
    };
    let outcome = two_step_baseline(
        &g.base,
        &corpus,
        &extractor,
        &train_q,
        &valid_q,
        &grid,
        &ctx.settings.trainer,
        &ctx.settings.reasoner,
        ctx.settings.pretrain_reasoner_epochs,
        &seeds,
    )?;
    println!("{:>10} {:>12} {:>8}", "threshold", "edges added", "hits@1");
    for (t, added, hits1) in &outcome.scanned {
        println!("{t:>10.3} {added:>12} {hits1:>8.4}");
    }
    println!(
        "best threshold {:.3}: {} edges added, validation hits@1 {:.4}",
        outcome.threshold, outcome.edges_added, outcome.valid_hits1
    );
    let csv_path = ctx.dir.join("two_step.csv");
    let mut file = std::fs::File::create(&csv_path)?;
    writeln!(file, "threshold,edges_added,valid_hits1")?;
    for (t, added, hits1) in &outcome.scanned {
        writeln!(file, "{t:.6},{added},{hits1:.6}")?;
    }
    ctx.manifest.record_output("two-step-scan", &csv_path);
    ctx.finish()?;
    Ok(0)
}

pub fn grad_check(args: &GradCheckArgs) -> Result<u8> {
    let tol = 1e-4;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let seeds = SeedHierarchy::new(args.seed);

    for t in 0..args.trials {
        let mut r = seeds.substream("grad-reasoner", t);
        match reasoner_policy_worst_error(&mut r, tol) {
            Ok(err) => worst = worst.max(err),
            Err(msg) => failures.push(format!("reasoner policy trial {t}: {msg}")),
        }
        let mut r = seeds.substream("grad-extractor", t);
        match extractor_policy_worst_error(&mut r, tol) {
            Ok(err) => worst = worst.max(err),
            Err(msg) => failures.push(format!("extractor policy trial {t}: {msg}")),
        }
    }

    let report = if failures.is_empty() {
        format!(
            "OK: {} trials per policy, worst relative error {worst:.3e} (tolerance {tol:.0e})",
            args.trials
        )
    } else {
        format!("FAILED:\n{}", failures.join("\n"))
    };
    println!("{report}");
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let report_path = out.join("grad_check.txt");
        std::fs::write(&report_path, &report)?;
        let map = ConfigMap::parse_str("")?;
        let mut manifest = RunManifest::new(&map, args.seed);
        manifest.record_output("report", &report_path);
        manifest.save(&out.join("manifest.json"))?;
    }
    Ok(if failures.is_empty() {
        0
    } else {
        EXIT_CHECK_FAILURE
    })
}

/// Finite differences with step-size retry: a sample near a non-smooth
/// point (pooling tie) passes once the step stops straddling it, while a
/// wrong gradient fails at every step.
fn retry_check<F>(store: &ParameterStore, build: F, tol: f64) -> std::result::Result<f64, String>
where
    F: Fn(&ParameterStore, &mut Tape) -> Result<Var>,
{
    let mut last = f64::INFINITY;
    for step in [1e-3, 1e-4, 1e-5] {
        let report = check_gradients(store, &build, step).map_err(|e| e.to_string())?;
        last = report.max_rel_error;
        if report.passes(tol) {
            return Ok(last);
        }
    }
    Err(format!("relative error {last:.3e} at every step size"))
}

/// Log-probability of a forced two-step walk on a fixed four-entity graph,
/// differentiated through the full reasoner policy.
fn reasoner_policy_worst_error(r: &mut Rng, tol: f64) -> std::result::Result<f64, String> {
    let entities = 4;
    let relations = 2;
    let model = ReasonerModel::new(
        entities,
        relations,
        ReasonerConfig {
            embed_dim: 3,
            hidden_dim: 3,
            ff_dim: 3,
        },
        r,
    );
    let kg = {
        let mut ev = Vocabulary::new();
        let mut rv = Vocabulary::new();
        for i in 0..entities {
            ev.intern(&format!("e{i}"));
        }
        for i in 0..relations {
            rv.intern(&format!("r{i}"));
        }
        KnowledgeGraph::from_triples(
            ev,
            rv,
            vec![
                Triple::new(EntityId(0), RelationId(0), EntityId(1)),
                Triple::new(EntityId(0), RelationId(1), EntityId(2)),
                Triple::new(EntityId(1), RelationId(1), EntityId(3)),
                Triple::new(EntityId(1), RelationId(0), EntityId(2)),
            ],
        )
    };
    let forced = vec![r.gen_range(0..2usize), 0];
    retry_check(
        &model.store,
        |s, tape| {
            let m = ReasonerModel::from_store(s.clone(), model.cfg.clone(), entities, relations);
            let mut state = m.init_state(tape, EntityId(0), RelationId(1))?;
            let opts = RolloutOptions {
                horizon: 2,
                ..RolloutOptions::default()
            };
            let mut terms = Vec::new();
            let mut dummy = seeds_dummy();
            for (step, &want) in forced.iter().enumerate() {
                let space =
                    build_action_space(&m, &kg, state.location, &BTreeSet::new(), &opts, &mut dummy)?;
                let idx = want.min(space.len() - 1);
                let (chosen, _) = select_action(
                    &m,
                    tape,
                    &state,
                    &space,
                    &SamplingMode::Forced(vec![idx, idx]),
                    step,
                    &mut dummy,
                )?;
                let logits = m.action_logits(tape, &state, &space)?;
                terms.push(tape.categorical_log_prob(logits, chosen)?);
                let action = space.actions[chosen];
                state = m.advance_history(tape, &state, (action.relation, action.object))?;
            }
            Ok(tape.sum_scalars(&terms))
        },
        tol,
    )
}

/// Log-probability of one (bag, relation) choice through the sentence
/// encoder, attention, and bilinear policy head.
fn extractor_policy_worst_error(r: &mut Rng, tol: f64) -> std::result::Result<f64, String> {
    let corpus = tiny_corpus(r);
    let n_words = corpus.word_vocab.len();
    let model = ExtractorModel::new(
        n_words,
        3,
        ExtractorConfig {
            word_dim: 3,
            pos_dim: 2,
            pos_window: 4,
            n_filters: 2,
            kernel_width: 3,
            rel_dim: 3,
        },
        r,
    );
    let pick = r.gen_range(0..2usize);
    retry_check(
        &model.store,
        |s, tape| {
            let m = ExtractorModel::from_store(s.clone(), model.cfg.clone(), n_words, 3);
            let (_, logits) = m
                .policy_logits(tape, &corpus, EntityId(0))?
                .ok_or_else(|| CplError::Lookup("entity 0 has no bags".to_string()))?;
            tape.categorical_log_prob(logits, pick)
        },
        tol,
    )
}

fn seeds_dummy() -> Rng {
    SeedHierarchy::new(0).stream("dummy")
}

/// A two-bag in-memory corpus with random filler sentences.
fn tiny_corpus(rng: &mut Rng) -> Corpus {
    use cpl_core::corpus::{Sentence, SentenceBag};
    use std::collections::BTreeMap;
    let mut word_vocab = Vocabulary::new();
    word_vocab.intern("<unk>");
    for i in 0..6 {
        word_vocab.intern(&format!("w{i}"));
    }
    let mut bags = BTreeMap::new();
    let mut num_sentences = 0;
    for &(a, b) in &[(0u32, 1u32), (0, 2)] {
        let pair = (EntityId(a), EntityId(b));
        let n = rng.gen_range(1..3usize);
        let sentences = (0..n)
            .map(|_| {
                let len = rng.gen_range(4..7usize);
                let tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(1..7u32)).collect();
                num_sentences += 1;
                Sentence {
                    tokens,
                    head_pos: 0,
                    tail_pos: len - 1,
                    pair,
                }
            })
            .collect();
        bags.insert(pair, SentenceBag { pair, sentences });
    }
    let mut subject_index: BTreeMap<EntityId, Vec<(EntityId, EntityId)>> = BTreeMap::new();
    for key in bags.keys() {
        subject_index.entry(key.0).or_default().push(*key);
    }
    Corpus {
        bags,
        subject_index,
        word_vocab,
        num_sentences,
    }
}
