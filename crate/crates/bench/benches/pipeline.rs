use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use defunc_core::check::{check_entry, CheckConfig};
use defunc_core::corpus::{corpus_dir, load_corpus, CorpusEntry};
use defunc_core::defunc::defunctionalize_program;
use defunc_core::emit::{emit, EmitConfig};
use defunc_core::eval::{eval_source, eval_target, EvalConfig, Value};
use defunc_core::parser::parse;

fn corpus() -> Vec<CorpusEntry> {
    load_corpus(&corpus_dir()).expect("corpus")
}

fn transform(c: &mut Criterion) {
    let mut g = c.benchmark_group("transform");
    for e in corpus() {
        g.bench_function(&e.name, |b| {
            b.iter(|| defunctionalize_program(parse(black_box(&e.source)).unwrap()).unwrap())
        });
    }
    g.finish();
}

fn printing(c: &mut Criterion) {
    let mut g = c.benchmark_group("emit");
    for e in corpus() {
        let p = parse(&e.golden).unwrap();
        g.bench_function(&e.name, |b| {
            b.iter(|| emit(black_box(&p), &EmitConfig::default()))
        });
    }
    g.finish();
}

/// One 50-node input through the source and the target interpreter.
fn interpreters(c: &mut Criterion) {
    let mut g = c.benchmark_group("run");
    let cfg = EvalConfig::default();
    for e in corpus() {
        let (tp, d) = defunctionalize_program(parse(&e.source).unwrap()).unwrap();
        let input = e.input(0, 50, 50);
        let f = e.meta.entry.clone();
        g.bench_function(BenchmarkId::new("source", &e.name), |b| {
            b.iter(|| eval_source(&tp, &d, &f, vec![input.clone()], &cfg))
        });
        g.bench_function(BenchmarkId::new("target", &e.name), |b| {
            b.iter(|| eval_target(&d.program, &f, vec![input.clone()], &cfg))
        });
    }
    g.finish();
}

/// `Sub (Sub (.. (Const 1) ..) (Const 1)) (Const 1)` with `n` subtractions:
/// every step re-decomposes from the root, so `red` is quadratic in `n`.
fn left_chain(n: usize) -> Value {
    let one = || Value::con("Const", vec![Value::Int(1)]);
    (0..n).fold(one(), |acc, _| Value::con("Sub", vec![acc, one()]))
}

fn small_step_cost(c: &mut Criterion) {
    let e = corpus()
        .into_iter()
        .find(|e| e.name == "interp")
        .expect("interp entry");
    let (_, d) = defunctionalize_program(parse(&e.source).unwrap()).unwrap();
    let cfg = EvalConfig {
        check_contracts: false,
        ..EvalConfig::default()
    };
    let mut g = c.benchmark_group("red_left_chain");
    for n in [8, 16, 32, 64] {
        let input = left_chain(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &input, |b, input| {
            b.iter(|| eval_target(&d.program, "red", vec![input.clone()], &cfg))
        });
    }
    g.finish();
}

fn check_small(c: &mut Criterion) {
    let e = corpus()
        .into_iter()
        .find(|e| e.name == "height")
        .expect("height entry");
    let cfg = CheckConfig {
        runs: Some(20),
        ..CheckConfig::default()
    };
    c.bench_function("check/height_20_runs", |b| {
        b.iter(|| check_entry(&e, None, &cfg))
    });
}

criterion_group!(
    benches,
    transform,
    printing,
    interpreters,
    small_step_cost,
    check_small
);
criterion_main!(benches);
