use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use qpburst_bench::event_train;
use qpburst_core::burst::BurstParams;
use qpburst_core::synth::{synth_iq_stream, ResonatorParams};
use qpburst_core::trigger::{offline_detect, TriggerConfig};
use qpburst_core::Seed;

fn offline(c: &mut Criterion) {
    let stream = synth_iq_stream(
        &event_train(5, 40.0, 200.0),
        &ResonatorParams::default(),
        &BurstParams::default(),
        334.42,
        1000,
        0.2,
        Seed(11),
    )
    .unwrap();
    let cfg = TriggerConfig::default();
    let mut group = c.benchmark_group("offline_detect");
    group.throughput(Throughput::Elements(stream.len() as u64));
    group.sample_size(20);
    group.bench_function("200ms", |b| b.iter(|| offline_detect(&stream, &cfg, "bench").unwrap()));
    group.finish();
}

criterion_group!(benches, offline);
criterion_main!(benches);
