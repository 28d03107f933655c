//! Benchmarks for the hot paths: logic solving, answer list scoring, and
//! document parsing.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use condqa::dataset::ConditionedAnswer;
use condqa::document::parse_document;
use condqa::eval::{conditional_scores, list_scores};
use condqa::solve;
use condqa_bench::{random_case, synthetic_document_lines};

fn bench_solver(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cases: Vec<_> = (0..1000).map(|_| random_case(&mut rng, 4, 5)).collect();
    c.bench_function("solve/1000_random_expressions", |b| {
        b.iter(|| {
            for (expression, verdicts) in &cases {
                black_box(solve(expression, verdicts).expect("generated expressions are valid"));
            }
        })
    });
}

fn bench_scoring(c: &mut Criterion) {
    let preds = ["up to 120000 dollars", "a weekly allowance", "nothing at all"];
    let golds = ["up to $120,000", "the weekly allowance", "no support"];
    c.bench_function("score/list_3x3", |b| {
        b.iter(|| black_box(list_scores(&preds, &golds).unwrap()))
    });

    let wide: Vec<String> = (0..8).map(|i| format!("answer option number {i}")).collect();
    c.bench_function("score/list_8x8_assignment", |b| {
        b.iter(|| black_box(list_scores(&wide, &wide).unwrap()))
    });

    let conditioned: Vec<ConditionedAnswer> = (0..4)
        .map(|i| ConditionedAnswer {
            text: format!("you can claim option {i}"),
            conditions: vec![
                format!("<li>you are over {} years old</li>", 18 + i),
                "<li>you live in the UK</li>".to_string(),
            ],
        })
        .collect();
    c.bench_function("score/conditional_4x4", |b| {
        b.iter(|| black_box(conditional_scores(&conditioned, &conditioned).unwrap()))
    });
}

fn bench_parse_document(c: &mut Criterion) {
    let lines = synthetic_document_lines(500);
    c.bench_function("document/parse_500_lines", |b| {
        b.iter(|| black_box(parse_document(&lines)))
    });
}

criterion_group!(benches, bench_solver, bench_scoring, bench_parse_document);
criterion_main!(benches);
