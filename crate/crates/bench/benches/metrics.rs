use cellpilot_bench::{clustered, label_pair};
use cellpilot_core::metrics::trajectory::{cor_dist, edgeflip, CorDistOptions, Trajectory};
use cellpilot_core::metrics::{ari, asw, knn_graph, nmi, score_batch, AswFlavor, BatchInputs, BatchWeights};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn partitions(c: &mut Criterion) {
    let mut g = c.benchmark_group("partition");
    for n in [1_000, 10_000, 100_000] {
        let (a, b) = label_pair(n, 20, 7);
        g.bench_with_input(BenchmarkId::new("ari", n), &n, |bench, _| bench.iter(|| ari(black_box(&a), black_box(&b))));
        g.bench_with_input(BenchmarkId::new("nmi", n), &n, |bench, _| bench.iter(|| nmi(black_box(&a), black_box(&b))));
    }
    g.finish();
}

fn embedding_metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("embedding");
    g.sample_size(10);
    for n in [500, 2_000] {
        let (emb, types, batches) = clustered(n, 10, 8, 3);
        g.bench_with_input(BenchmarkId::new("asw_cell", n), &n, |bench, _| {
            bench.iter(|| asw(black_box(&emb), &types, AswFlavor::Cell, None))
        });
        g.bench_with_input(BenchmarkId::new("knn_graph_k15", n), &n, |bench, _| {
            bench.iter(|| knn_graph(black_box(&emb), 15))
        });
        let inputs = BatchInputs {
            embedding: Some(emb.clone()),
            embedding_before: Some(emb.clone()),
            batches: Some(batches.clone()),
            cell_types: Some(types.clone()),
            clusters: Some(types.clone()),
            k: 15,
        };
        g.bench_with_input(BenchmarkId::new("score_batch", n), &n, |bench, _| {
            bench.iter(|| score_batch(black_box(&inputs), BatchWeights::default()))
        });
    }
    g.finish();
}

fn linear_trajectory(milestones: usize, cells_per_edge: usize) -> Trajectory {
    let names: Vec<String> = (0..milestones).map(|i| format!("M{i}")).collect();
    let edges: Vec<(String, String, f64)> =
        names.windows(2).map(|w| (w[0].clone(), w[1].clone(), 1.0)).collect();
    let mut positions = Vec::new();
    for (e, w) in names.windows(2).enumerate() {
        for j in 0..cells_per_edge {
            let p = (j as f64 + 0.5) / cells_per_edge as f64;
            positions.push((format!("c{e}_{j}"), vec![(w[0].clone(), 1.0 - p), (w[1].clone(), p)]));
        }
    }
    Trajectory::new(&edges, &positions).expect("valid trajectory")
}

fn trajectories(c: &mut Criterion) {
    let mut g = c.benchmark_group("trajectory");
    g.sample_size(10);
    for m in [4, 6, 8] {
        let t = linear_trajectory(m, 5);
        g.bench_with_input(BenchmarkId::new("edgeflip", m), &m, |bench, _| bench.iter(|| edgeflip(black_box(&t), &t)));
    }
    for cells in [50, 1_000] {
        let t = linear_trajectory(5, cells / 4);
        g.bench_with_input(BenchmarkId::new("cor_dist", cells), &cells, |bench, _| {
            bench.iter(|| cor_dist(black_box(&t), &t, CorDistOptions::default()))
        });
    }
    g.finish();
}

criterion_group!(benches, partitions, embedding_metrics, trajectories);
criterion_main!(benches);
