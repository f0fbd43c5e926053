//! Criterion benchmarks for the per-step hot paths: action-space assembly,
//! policy rollouts, beam-search decoding, and sentence-bag scoring.

use std::collections::BTreeSet;
use std::io::Write as _;

use criterion::{criterion_group, criterion_main, Criterion};

use cpl_core::corpus::{load_corpus, Corpus};
use cpl_core::eval::{beam_search, EvalConfig};
use cpl_core::extractor::{ExtractorConfig, ExtractorModel};
use cpl_core::reasoner::{
    build_action_space, rollout, NoSuggestions, Query, ReasonerConfig, ReasonerModel,
    RolloutOptions, SamplingMode,
};
use cpl_core::rng::SeedHierarchy;
use cpl_core::synth::{generate, SynthSpec};
use cpl_core::{KnowledgeGraph, Triple};

struct Fixture {
    walk: KnowledgeGraph,
    corpus: Corpus,
    reasoner: ReasonerModel,
    extractor: ExtractorModel,
    queries: Vec<Triple>,
}

fn fixture() -> Fixture {
    let spec = SynthSpec {
        n_entities: 120,
        n_chains: 30,
        noise_bags: 50,
        ..SynthSpec::default()
    };
    let ds = generate(&spec, 17).expect("generate dataset");
    let mut corpus_file = tempfile::NamedTempFile::new().expect("temp corpus");
    corpus_file
        .write_all(ds.corpus_jsonl.as_bytes())
        .expect("write corpus");
    let corpus = load_corpus(corpus_file.path(), &ds.kg, 120).expect("load corpus");
    let mut walk = ds.kg.clone();
    walk.add_inverse_edges().expect("add inverses");
    let seeds = SeedHierarchy::new(17);
    let reasoner = ReasonerModel::new(
        walk.num_entities(),
        walk.num_relations(),
        ReasonerConfig::default(),
        &mut seeds.stream("reasoner"),
    );
    let extractor = ExtractorModel::new(
        corpus.word_vocab.len(),
        ds.kg.num_relations() + 1,
        ExtractorConfig::default(),
        &mut seeds.stream("extractor"),
    );
    Fixture {
        walk,
        corpus,
        reasoner,
        extractor,
        queries: ds.kg_answerable.clone(),
    }
}

fn bench_hot_paths(c: &mut Criterion) {
    let fx = fixture();
    let seeds = SeedHierarchy::new(99);
    let opts = RolloutOptions::default();

    c.bench_function("action_space", |b| {
        let mut rng = seeds.stream("space");
        let none = BTreeSet::new();
        let mut i = 0usize;
        b.iter(|| {
            let q = fx.queries[i % fx.queries.len()];
            i += 1;
            build_action_space(&fx.reasoner, &fx.walk, q.subject, &none, &opts, &mut rng)
                .expect("action space")
        });
    });

    c.bench_function("rollout", |b| {
        let mut rng = seeds.stream("rollout");
        let mut kg = fx.walk.clone();
        let mode = SamplingMode::Stochastic { boost: 0.0 };
        let mut i = 0usize;
        b.iter(|| {
            let q = Query::from(fx.queries[i % fx.queries.len()]);
            i += 1;
            rollout(
                &fx.reasoner,
                &mut kg,
                q,
                &mut NoSuggestions,
                &mode,
                &opts,
                &mut rng,
            )
            .expect("rollout")
        });
    });

    c.bench_function("beam_search_w20", |b| {
        let cfg = EvalConfig {
            beam_width: 20,
            ..EvalConfig::default()
        };
        let mut i = 0usize;
        b.iter(|| {
            let q = fx.queries[i % fx.queries.len()];
            i += 1;
            beam_search(&fx.reasoner, &fx.walk, q.subject, q.relation, None, &cfg)
                .expect("beam search")
        });
    });

    c.bench_function("bag_scoring", |b| {
        let bags: Vec<_> = fx.corpus.bags.values().collect();
        let mut i = 0usize;
        b.iter(|| {
            let bag = bags[i % bags.len()];
            i += 1;
            fx.extractor.bag_class_probs(bag).expect("bag probs")
        });
    });

    c.bench_function("suggestion_logits", |b| {
        let subjects: Vec<_> = fx.corpus.subject_index.keys().copied().collect();
        let mut i = 0usize;
        b.iter(|| {
            let subject = subjects[i % subjects.len()];
            i += 1;
            let mut tape = cpl_core::diff::Tape::new();
            fx.extractor
                .policy_logits(&mut tape, &fx.corpus, subject)
                .expect("policy logits")
        });
    });
}

criterion_group!(benches, bench_hot_paths);
criterion_main!(benches);
