use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tcgen_bench::{grid_scores, model_response, reports, submission_pool, test_cases};
use tcgen_core::dataset::infer_total_tests;
use tcgen_core::metrics::{aggregate, bin_by_true_score, Grouping};
use tcgen_core::prompts::{parse_test_cases, Origin};
use tcgen_core::refine::dedup;
use tcgen_core::selection::select_pairs;
use tcgen_core::{MethodSignature, ValueKind};

fn selection(c: &mut Criterion) {
    let mut group = c.benchmark_group("select_pairs");
    for n in [20usize, 200, 2000] {
        let pool = submission_pool(n, 10, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &pool, |b, pool| {
            b.iter(|| select_pairs(black_box(pool), 10, 7).unwrap())
        });
    }
    group.finish();
}

fn q_inference(c: &mut Criterion) {
    let mut group = c.benchmark_group("infer_total_tests");
    for q in [4u32, 17, 29] {
        let scores = grid_scores(500, q, 2);
        group.bench_with_input(BenchmarkId::from_parameter(q), &scores, |b, s| {
            b.iter(|| infer_total_tests(black_box(s), 30, 1e-6).unwrap())
        });
    }
    group.finish();
}

fn dedup_suites(c: &mut Criterion) {
    let tests = test_cases(300, 3);
    c.bench_function("dedup/300", |b| b.iter(|| dedup(black_box(tests.clone()))));
}

fn parse_response(c: &mut Criterion) {
    let sig = MethodSignature {
        method_name: "sum67".into(),
        param_types: vec![ValueKind::IntArray],
        return_type: ValueKind::Int,
    };
    let response = model_response(30, 4);
    c.bench_function("parse_test_cases/30", |b| {
        b.iter(|| {
            parse_test_cases(
                black_box(&response),
                &sig,
                30,
                Origin {
                    pair_index: 1,
                    iteration: 0,
                },
            )
            .unwrap()
        })
    });
}

fn metrics(c: &mut Criterion) {
    let rows = reports(10_000, 5);
    c.bench_function("bin_by_true_score/10k", |b| {
        b.iter(|| bin_by_true_score(black_box(&rows), 10).unwrap())
    });
    c.bench_function("aggregate_by_problem/10k", |b| {
        b.iter(|| aggregate(black_box(&rows), Grouping::Problem))
    });
}

criterion_group!(benches, selection, q_inference, dedup_suites, parse_response, metrics);
criterion_main!(benches);
