use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use fedgnn_bench::{random_rows, rng};
use fedgnn_core::embed::{EmbeddingClient, EmbeddingServer, EmbeddingStore, InProcTransport, TcpServerHandle, TcpTransport};

fn store(c: &mut Criterion) {
    let mut r = rng(4);
    let ids: Vec<u64> = (0..1024).collect();
    let data = random_rows(&mut r, ids.len(), 32);

    let mut s = EmbeddingStore::new(2, 32);
    c.bench_function("store/set_1024", |b| b.iter(|| s.set(1, black_box(&ids), 32, &data).unwrap()));
    c.bench_function("store/get_1024", |b| b.iter(|| s.get(1, black_box(&ids)).unwrap()));

    let server = Arc::new(EmbeddingServer::new(3, 32));
    let mut inproc = EmbeddingClient::new(Box::new(InProcTransport::new(server.clone())));
    inproc.set_batch(1, ids.clone(), 32, data.clone()).unwrap();
    c.bench_function("inproc/get_1024", |b| b.iter(|| inproc.get_batch(1, black_box(ids.clone())).unwrap()));

    let handle = TcpServerHandle::bind(server, "127.0.0.1:0").unwrap();
    let mut tcp = EmbeddingClient::new(Box::new(TcpTransport::connect(handle.local_addr()).unwrap()));
    c.bench_function("tcp/get_1024", |b| b.iter(|| tcp.get_batch(1, black_box(ids.clone())).unwrap()));
    c.bench_function("tcp/get_many_2x1024", |b| {
        b.iter(|| tcp.get_many(vec![(1, ids.clone()), (2, ids.clone())]).unwrap())
    });
    drop(tcp);
    handle.shutdown();
}

criterion_group!(benches, store);
criterion_main!(benches);
