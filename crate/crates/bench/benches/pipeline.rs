use criterion::{black_box, criterion_group, criterion_main, Criterion};
use voidd_bench::Fixture;
use voidd_core::matching::extract_feature_pairs;
use voidd_core::mintree::build_min_tree;
use voidd_core::pipeline;
use voidd_core::tracker::run_voidd;
use voidd_core::vesselmap::extract_vessel_graph;

fn stages(c: &mut Criterion) {
    let fx = Fixture::default_scene();
    let nav = &fx.scene.navigation[10];
    let reference = &fx.scene.reference[0];

    c.bench_function("min_tree_512", |b| {
        b.iter(|| build_min_tree(black_box(nav), fx.cfg.segmentation.connectivity))
    });
    c.bench_function("extract_tips_frame", |b| {
        b.iter(|| pipeline::extract_tips(black_box(nav), 10, &fx.cfg))
    });
    c.bench_function("vessel_graph_frame", |b| {
        b.iter(|| extract_vessel_graph(black_box(reference), 0, &fx.cfg.vessels))
    });
    c.bench_function("matching_frame", |b| {
        b.iter(|| extract_feature_pairs(black_box(&fx.tips[10]), &fx.graphs[fx.phases[10]], &fx.cfg.matching))
    });
    c.bench_function("track_assignment_sequence", |b| {
        b.iter(|| run_voidd(&fx.phases, fx.spec.frame_interval_s, &fx.graphs, black_box(&fx.pairs), &fx.cfg.tracker))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = stages
}
criterion_main!(benches);
