use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use num_complex::Complex32;
use qpburst_bench::event_train;
use qpburst_core::burst::BurstParams;
use qpburst_core::synth::{IqSynthesizer, ResonatorParams};
use qpburst_core::Seed;

const GRAL_GAP_UEV: f64 = 334.42;

fn iq_fill(c: &mut Criterion) {
    let mut group = c.benchmark_group("iq_fill");
    for &n in &[1usize << 14, 1 << 18] {
        let synth = IqSynthesizer::new(
            event_train(4, 50.0, 500.0),
            ResonatorParams::default(),
            BurstParams::default(),
            GRAL_GAP_UEV,
            1000,
            Seed(7),
        )
        .unwrap();
        let mut buf = vec![Complex32::new(0.0, 0.0); n];
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| synth.fill(0, &mut buf));
        });
    }
    group.finish();
}

criterion_group!(benches, iq_fill);
criterion_main!(benches);
