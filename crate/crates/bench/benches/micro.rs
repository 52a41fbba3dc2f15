//! Criterion micro-benchmarks for the hot paths: wire codec, derivation
//! solve, and the sorting algorithms used by the use-case harness.

use std::collections::BTreeSet;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use eacof_core::bench::generate_values;
use eacof_core::model::ProbeId;
use eacof_core::solve::derive_plan;
use eacof_core::sort::{run_sort, Algorithm};
use eacof_core::wire::{decode, encode, WireMessage};

fn wire_codec(c: &mut Criterion) {
    let msg = WireMessage::SampleAdd { req_id: 42, probe_id: ProbeId(7), joules: 0.123456789 };
    let frame = encode(&msg).unwrap();
    let mut group = c.benchmark_group("wire");
    group.throughput(Throughput::Bytes(frame.len() as u64));
    group.bench_function("encode_sample", |b| b.iter(|| encode(black_box(&msg)).unwrap()));
    group.bench_function("decode_sample", |b| {
        b.iter(|| decode(black_box(&frame)).unwrap().unwrap())
    });
    group.finish();
}

fn derivation(c: &mut Criterion) {
    // 16 leaves, 8 probes with overlapping coverage
    let leaf_count = 16usize;
    let sets: Vec<BTreeSet<usize>> = (0..8)
        .map(|i| (0..leaf_count).filter(|l| (l + i) % 3 != 0).collect())
        .collect();
    let probes: Vec<(ProbeId, &BTreeSet<usize>)> =
        sets.iter().enumerate().map(|(i, s)| (ProbeId(i as u64 + 1), s)).collect();
    let request: BTreeSet<usize> = (0..4).collect();
    c.bench_function("derive_plan_16x8", |b| {
        b.iter(|| derive_plan(black_box(&request), black_box(&probes), leaf_count))
    });
}

fn sorting(c: &mut Criterion) {
    let mut group = c.benchmark_group("sort_u64_10k");
    let base = generate_values(1, 0, 10_000);
    for algorithm in Algorithm::ALL {
        group.bench_with_input(
            BenchmarkId::from_parameter(algorithm),
            &algorithm,
            |b, &algorithm| {
                b.iter_batched_ref(
                    || base.iter().map(|&v| v as u64).collect::<Vec<u64>>(),
                    |data| run_sort(algorithm, data),
                    criterion::BatchSize::LargeInput,
                )
            },
        );
    }
    group.finish();
}

criterion_group!(benches, wire_codec, derivation, sorting);
criterion_main!(benches);
