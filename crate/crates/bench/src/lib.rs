//! Seeded fixtures shared by the benchmarks.

use mapcount::features::FeatureTable;
use mapcount::palette::ColorPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` distinct-ish colors with integer multiplicities.
pub fn color_points(n: usize, seed: u64) -> Vec<ColorPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let rgb = [rng.random(), rng.random(), rng.random()];
            ColorPoint::from_rgb(rgb, f64::from(rng.random_range(1u32..500)))
        })
        .collect()
}

/// Single-epoch table of random counts plus a target linear in the counts.
pub fn count_table(rows: usize, k: usize, seed: u64) -> (FeatureTable, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut table_rows = Vec::with_capacity(rows);
    let mut targets = Vec::with_capacity(rows);
    for _ in 0..rows {
        let counts: Vec<f64> = (0..k).map(|_| f64::from(rng.random_range(0u32..10_000))).collect();
        let total: f64 = counts.iter().sum::<f64>().max(1.0);
        let hhi = counts.iter().map(|c| (c / total).powi(2)).sum::<f64>();
        targets.push(counts.iter().zip(&coef).map(|(c, a)| c * a).sum::<f64>() / 1e4);
        let mut row = counts;
        row.push(hhi);
        table_rows.push(row);
    }
    let table = FeatureTable {
        k_std: k,
        epochs: vec!["2015".into()],
        grid_ids: (0..rows).map(|i| format!("g{i}")).collect(),
        rows: table_rows,
    };
    (table, targets)
}
