use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use groupact::backbone::{plan_windows, Backbone, BackboneConfig, LayerSpec, SkeletonGraph};
use groupact::numerics::ParamStore;
use groupact::par::Parallelism;
use groupact::synthgen::{generate_corpus, load_corpus, CorpusKind, GenParams};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn corpus(c: &mut Criterion) {
    let params = GenParams {
        seed: 1,
        category_weights: GenParams::uniform_weights(6),
        ..Default::default()
    };
    let mut group = c.benchmark_group("corpus");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new("generate_16_rounds", name), |b| {
            b.iter(|| {
                let dir = tempfile::tempdir().unwrap();
                generate_corpus(&params, CorpusKind::Tgal, 16, 3, dir.path(), mode).unwrap()
            })
        });
    }
    let dir = tempfile::tempdir().unwrap();
    generate_corpus(&params, CorpusKind::Tgal, 16, 3, dir.path(), Parallelism::Sequential).unwrap();
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new("load_16_rounds", name), |b| {
            b.iter(|| load_corpus(dir.path(), mode).unwrap())
        });
    }
    group.finish();
}

fn backbone(c: &mut Criterion) {
    let params = GenParams {
        seed: 2,
        category_weights: GenParams::uniform_weights(6),
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    generate_corpus(&params, CorpusKind::Gar, 1, 1, dir.path(), Parallelism::Sequential).unwrap();
    let (_, rounds) = load_corpus(dir.path(), Parallelism::Sequential).unwrap();
    let seq = rounds[0].sequence.padded(400).unwrap();

    let cfg = BackboneConfig {
        window_len: 200,
        window_stride: 200,
        temporal_kernel: 9,
        layers: vec![LayerSpec { channels: 16, stride: 2 }, LayerSpec { channels: 32, stride: 2 }],
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bb = Backbone::new(&mut store, cfg.clone(), SkeletonGraph::default(), seq.channels(), &mut rng).unwrap();
    let plan = plan_windows(400, &cfg).unwrap();

    let mut group = c.benchmark_group("backbone");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new("extract_clip", name), |b| {
            b.iter(|| bb.extract(&store, &seq, &plan, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, corpus, backbone);
criterion_main!(benches);
