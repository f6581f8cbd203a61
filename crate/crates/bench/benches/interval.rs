use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ivgp_bench::{keijzer10, ramped_trees, rng, unit_square_env};
use ivgp_core::{compute_interval, EvalSemantics, Interval, OperatorId, SafetyMode};
use rand::Rng;

fn bench_compute_interval(c: &mut Criterion) {
    let mut r = rng(1);
    let iv = |r: &mut rand_chacha::ChaCha8Rng| {
        let a: f64 = r.random_range(-10.0..10.0);
        let b: f64 = r.random_range(-10.0..10.0);
        Interval::new(a.min(b), a.max(b))
    };
    let cases: Vec<(OperatorId, Interval, Option<Interval>)> = (0..1024)
        .map(|i| {
            let op = OperatorId::ALL[i % OperatorId::ALL.len()];
            let left = iv(&mut r);
            let right = op.is_binary().then(|| iv(&mut r));
            (op, left, right)
        })
        .collect();
    c.bench_function("interval/compute_1024_mixed_ops", |b| {
        b.iter(|| {
            let mut defined = 0usize;
            for &(op, left, right) in &cases {
                if compute_interval(op, left, right).is_defined() {
                    defined += 1;
                }
            }
            black_box(defined)
        })
    });
}

fn bench_propagate(c: &mut Criterion) {
    let env = unit_square_env();
    let mut trees = ramped_trees(256, SafetyMode::Protected, 7);
    c.bench_function("interval/propagate_256_trees", |b| {
        b.iter(|| {
            let mut valid = 0usize;
            for tree in &mut trees {
                if tree.propagate_intervals(&env) {
                    valid += 1;
                }
            }
            black_box(valid)
        })
    });
}

fn bench_evaluate(c: &mut Criterion) {
    let problem = keijzer10(3);
    let trees = ramped_trees(32, SafetyMode::Protected, 9);
    let data = &problem.train;
    c.bench_function("interval/evaluate_32_trees_20_rows", |b| {
        b.iter(|| {
            let mut acc = 0.0f64;
            let mut scratch = Vec::new();
            for tree in &trees {
                for i in 0..data.num_rows() {
                    let v = tree.evaluate_into(data.row(i), EvalSemantics::Protected, &mut scratch);
                    if v.is_finite() {
                        acc += v;
                    }
                }
            }
            black_box(acc)
        })
    });
}

criterion_group!(benches, bench_compute_interval, bench_propagate, bench_evaluate);
criterion_main!(benches);
