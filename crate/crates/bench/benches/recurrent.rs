use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hateid_bench::token_batch;
use hateid_core::{build_model, HyperParams, Level, ModelInput, ModelSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lstm(c: &mut Criterion) {
    let mut g = c.benchmark_group("lstm_batch32");
    g.sample_size(20);
    let cases = [
        (
            "char_e50_h16",
            HyperParams::char_lstm(50, 16, 0.5),
            Level::Char,
            280,
        ),
        (
            "char_e50_h128",
            HyperParams::char_lstm(50, 128, 0.5),
            Level::Char,
            280,
        ),
        (
            "word_e100_h32",
            HyperParams::word_lstm(100, 32, 0.25),
            Level::Word,
            64,
        ),
    ];
    for (name, hp, level, max_len) in cases {
        let (inputs, vocab) = token_batch(32, level, max_len);
        let model = build_model(&ModelSpec::for_tokens(hp, vocab), None, 42).unwrap();
        let batch: Vec<&ModelInput> = inputs.iter().collect();
        let targets: Vec<usize> = (0..32).map(|i| i % 2).collect();
        g.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| black_box(model.forward(black_box(&batch)).unwrap()))
        });
        g.bench_function(BenchmarkId::new("forward_backward", name), |b| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            b.iter(|| black_box(model.forward_backward(&batch, &targets, &mut rng).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, lstm);
criterion_main!(benches);
