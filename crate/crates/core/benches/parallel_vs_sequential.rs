use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use leadkin::corpus::{param_corpus, raw_corpus, RawCorpusSpec};
use leadkin::mvdist::{build_model, ModelConfig};
use leadkin::pwl_fit::{fit_events, FitConfig};
use leadkin::synth::{generate, SynthConfig};
use leadkin::validate::compare;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let build = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool");
    vec![("sequential", build(1)), ("parallel", build(0))]
}

fn bench(c: &mut Criterion) {
    let pools = pools();
    let events = raw_corpus(
        &RawCorpusSpec {
            n_ciss: 20,
            n_shrp2_sc: 10,
            n_shrp2_nsc: 30,
            n_shrp2_nc: 40,
            ..Default::default()
        },
        1,
    );
    let fit_cfg = FitConfig::default();
    let train = param_corpus(300, 2);
    let model = build_model(&train, &ModelConfig::default()).expect("model");
    let syn = generate(&model, 5000, 3, &SynthConfig::default()).expect("synthetic");

    let mut g = c.benchmark_group("fit_events");
    g.sample_size(10);
    for (name, pool) in &pools {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| fit_events(&events, &fit_cfg)))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("build_model");
    g.sample_size(10);
    for (name, pool) in &pools {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| build_model(&train, &ModelConfig::default())))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("validate");
    g.sample_size(10);
    for (name, pool) in &pools {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| compare(&train.events, &syn.events, 0.1, 500, 4)))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
