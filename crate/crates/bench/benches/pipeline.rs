use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use mapcount::model::{fit_gbt, fit_linear_quadratic, GbtParams};
use mapcount::palette::{assign_standard, kmeans, KmeansParams, StandardPalette};
use mapcount::raster::{clip_grids, GridSpec};
use mapcount::synth::{generate_corpus, SynthSpec};
use mapcount_bench::{color_points, count_table};

fn bench_kmeans(c: &mut Criterion) {
    let pts = color_points(2000, 1);
    c.bench_function("kmeans 2000 colors k=12", |b| {
        b.iter(|| kmeans(black_box(&pts), &KmeansParams::new(12, 7)).unwrap())
    });
}

fn bench_assign(c: &mut Criterion) {
    let spec = SynthSpec { tile_size: 400, cells_per_tile: 1, jitter: 6, ..SynthSpec::default() };
    let corpus = generate_corpus(&spec, 1).unwrap();
    let grid = GridSpec { cell_size: spec.cell_size, ..GridSpec::default() };
    let cell = clip_grids(&corpus.tiles[0], &grid).unwrap().remove(0);
    let palette = kmeans(&color_points(500, 2), &KmeansParams::new(12, 3)).unwrap();
    let std = StandardPalette { palette, provenance: 500, weighted: true };
    c.bench_function("assign_standard 400x400", |b| b.iter(|| assign_standard(black_box(&cell), &std)));
}

fn bench_models(c: &mut Criterion) {
    let (table, y) = count_table(800, 12, 5);
    c.bench_function("linear-quadratic fit 800x12", |b| {
        b.iter(|| fit_linear_quadratic(black_box(&table), &y, 1e-8).unwrap())
    });
    let params = GbtParams { n_rounds: 50, ..GbtParams::default() };
    c.bench_function("gbt 50 rounds 800x13", |b| {
        b.iter(|| fit_gbt(black_box(&table.rows), &y, &params).unwrap())
    });
}

criterion_group!(benches, bench_kmeans, bench_assign, bench_models);
criterion_main!(benches);
