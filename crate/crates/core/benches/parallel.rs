use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dmsrec_core::backbone::{BackboneConfig, BackboneParams};
use dmsrec_core::candidates::extract_candidates;
use dmsrec_core::corpus::{preprocess, PreparedCorpus, PreprocessConfig, Session};
use dmsrec_core::eval::{evaluate, DEFAULT_KS};
use dmsrec_core::synth::{rule_corpus, SynthConfig};
use dmsrec_core::trainer::{batch_loss_and_grad, Model, TrainConfig};
use dmsrec_core::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn setup() -> (PreparedCorpus, BackboneParams) {
    let events = rule_corpus(&SynthConfig {
        n_sessions: 600,
        seed: 1,
        ..SynthConfig::default()
    });
    let corpus = preprocess(&events, &PreprocessConfig::default()).unwrap();
    let backbone = BackboneParams::init(BackboneConfig {
        d: 64,
        n_items: corpus.catalog.n_items(),
        steps: 1,
        seed: 2,
    })
    .unwrap();
    (corpus, backbone)
}

fn bench(c: &mut Criterion) {
    let (corpus, backbone) = setup();
    let model = Model {
        backbone: backbone.clone(),
        fusion: None,
    };
    let batch: Vec<&Session> = corpus.train.iter().take(100).collect();

    let mut g = c.benchmark_group("batch_loss_and_grad");
    for (name, exec) in MODES {
        let cfg = TrainConfig {
            exec,
            ..TrainConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| black_box(batch_loss_and_grad(&model, &batch, None, cfg).unwrap()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("extract_candidates");
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| black_box(extract_candidates(&corpus.train, &backbone, &corpus.catalog, 50, exec).unwrap()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("evaluate");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| black_box(evaluate(&backbone, &corpus.train, &DEFAULT_KS, exec).unwrap())));
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench
}
criterion_main!(benches);
