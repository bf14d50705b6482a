use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fedgnn_bench::{client_subgraph, rng};
use fedgnn_core::sampler::{full_computation_graph, sample_computation_graph, RemotePolicy};
use fedgnn_core::scoring::frequency_scores;

fn sampler(c: &mut Criterion) {
    let sg = client_subgraph(1200);
    let seeds: Vec<usize> = sg.train_nodes().into_iter().take(64).collect();
    let mut r = rng(2);
    for fanout in [2, 5, 10] {
        c.bench_function(&format!("sample/b64_l3_f{fanout}"), |b| {
            b.iter(|| sample_computation_graph(&sg, black_box(&seeds), fanout, 3, &mut r).unwrap())
        });
    }
    let push: Vec<usize> = sg.push_nodes().iter().map(|&g| sg.local_index(g).unwrap()).collect();
    c.bench_function("full/push_nodes_l2", |b| {
        b.iter(|| full_computation_graph(&sg, black_box(&push), 2, RemotePolicy::Truncate).unwrap())
    });
    c.bench_function("frequency_scores/l3", |b| b.iter(|| frequency_scores(black_box(&sg), 3)));
}

criterion_group!(benches, sampler);
criterion_main!(benches);
