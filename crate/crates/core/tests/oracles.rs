mod common;

use std::collections::HashMap;

use image::{Rgb, RgbImage};
use mapcount::eval::class_accuracies;
use mapcount::features::count_colors;
use mapcount::interpret::{diverging_ramp, render_heatmap};
use mapcount::labels::{disaggregate_all, disaggregate_uniform, polygon_area, RegionalRecord};
use mapcount::model::{design_row, fit_gbt, fit_linear_quadratic, GbtParams, Node};
use mapcount::palette::{assign_standard, kmeans, simplify_grid, ColorPoint, KmeansParams, Palette, StandardPalette};
use mapcount::raster::{clip_grids, BBox, GeoTransform, GridCell, GridSpec, MapTile};
use mapcount::synth::{generate_corpus, SynthSpec};
use mapcount::FeatureTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cell_of(img: RgbImage) -> GridCell {
    let tile = MapTile::new("t", img, GeoTransform::north_up(0.0, 0.0, 1.0), "2015").unwrap();
    GridCell::from_tile(tile, &GridSpec::default(), "r0c0")
}

fn standard(centers: &[[f64; 3]]) -> StandardPalette {
    StandardPalette {
        palette: Palette {
            k: centers.len(),
            seed: 0,
            inertia: 0.0,
            centroids: centers.iter().map(|c| ColorPoint::new(c[0], c[1], c[2], 1.0)).collect(),
        },
        provenance: centers.len(),
        weighted: true,
    }
}

#[test]
fn assignment_matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let img = RgbImage::from_fn(32, 32, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
        let centers: Vec<[f64; 3]> = (0..9)
            .map(|_| [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)])
            .collect();
        let cell = cell_of(img.clone());
        let got = assign_standard(&cell, &standard(&centers));
        for (p, &g) in img.pixels().zip(&got) {
            let x = p.0.map(f64::from);
            assert_eq!(usize::from(g), common::brute_nearest(&centers, x));
        }
    }
}

#[test]
fn assignment_ties_go_to_lowest_index() {
    let centers = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [200.0, 200.0, 200.0], [250.0, 0.0, 0.0], [30.0, 0.0, 0.0]];
    let cell = cell_of(RgbImage::from_pixel(2, 1, Rgb([20, 0, 0])));
    assert_eq!(assign_standard(&cell, &standard(&centers)), vec![1, 1]);
    let exact = cell_of(RgbImage::from_pixel(1, 1, Rgb([250, 0, 0])));
    assert_eq!(assign_standard(&exact, &standard(&centers)), vec![3]);
}

#[test]
fn counts_match_independent_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let assignment: Vec<u16> = (0..5000).map(|_| rng.random_range(0..7)).collect();
    let mut tally: HashMap<u16, u64> = HashMap::new();
    for &a in &assignment {
        *tally.entry(a).or_default() += 1;
    }
    let counts = count_colors(&assignment, 9);
    for (j, &c) in counts.iter().enumerate() {
        assert_eq!(c, tally.get(&(j as u16)).copied().unwrap_or(0));
    }
    assert_eq!(counts.iter().sum::<u64>(), 5000);
}

#[test]
fn weighted_kmeans_equals_expanded_multiset() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..10 {
        let pts: Vec<ColorPoint> = (0..8)
            .map(|_| ColorPoint::from_rgb([rng.random(), rng.random(), rng.random()], f64::from(rng.random_range(1u8..5))))
            .collect();
        let expanded: Vec<ColorPoint> = pts
            .iter()
            .flat_map(|p| std::iter::repeat_n(ColorPoint { weight: 1.0, ..*p }, p.weight as usize))
            .collect();
        let params = KmeansParams::new(3, trial);
        let a = kmeans(&pts, &params).unwrap();
        let b = kmeans(&expanded, &params).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn simplify_two_color_checkerboard_is_exact() {
    let img = RgbImage::from_fn(16, 16, |x, y| if (x + y) % 2 == 0 { Rgb([10, 200, 30]) } else { Rgb([250, 5, 90]) });
    let (p, assignment) = simplify_grid(&cell_of(img.clone()), 2, 4, &KmeansParams::new(2, 0)).unwrap();
    assert_eq!(p.inertia, 0.0);
    assert_eq!(p.centroids.iter().map(ColorPoint::rgb8).collect::<Vec<_>>(), vec![[10, 200, 30], [250, 5, 90]]);
    for (px, a) in img.pixels().zip(&assignment) {
        assert_eq!(p.centroids[usize::from(*a)].rgb8(), px.0);
    }
}

#[test]
fn clipped_blocks_tile_the_raster() {
    let img = RgbImage::from_fn(40, 40, |x, y| Rgb([x as u8, y as u8, (x * y % 251) as u8]));
    let tile = MapTile::new("t", img.clone(), GeoTransform::north_up(0.0, 0.0, 10.0), "2015").unwrap();
    let cells = clip_grids(&tile, &GridSpec { cell_size: 200.0, ..GridSpec::default() }).unwrap();
    assert_eq!(cells.len(), 4);
    let mut seen = vec![0u8; 40 * 40];
    for c in &cells {
        assert!(c.is_usable());
        let (ox, oy) = c.pixel_offset;
        for (x, y, p) in c.pixels.enumerate_pixels() {
            assert_eq!(*p, *img.get_pixel(ox + x, oy + y));
            seen[((oy + y) * 40 + ox + x) as usize] += 1;
        }
    }
    assert!(seen.iter().all(|&s| s == 1));
}

fn lattice(n: i32, size: f64) -> Vec<(String, BBox)> {
    let mut v = Vec::new();
    for r in 0..n {
        for c in 0..n {
            let bbox = BBox {
                min_x: f64::from(c) * size,
                max_x: f64::from(c + 1) * size,
                min_y: -f64::from(r + 1) * size,
                max_y: -f64::from(r) * size,
            };
            v.push((format!("r{r}c{c}"), bbox));
        }
    }
    v
}

#[test]
fn disaggregation_matches_sampled_overlap() {
    let cells = lattice(3, 10.0);
    let poly = vec![(2.0, -3.0), (27.0, -6.0), (22.0, -28.0), (4.0, -21.0)];
    let rec = RegionalRecord { region_id: "a".into(), value: 1000.0, geometry: poly.clone() };
    let labels = disaggregate_uniform(&rec, &cells, "population").unwrap();
    let area = polygon_area(&poly);
    let total: f64 = labels.iter().map(|l| l.raw_value).sum();
    assert!((total - 1000.0).abs() < 1e-9);
    for l in &labels {
        let bbox = &cells.iter().find(|c| c.0 == l.grid_id).unwrap().1;
        let expect = 1000.0 * common::sampled_overlap(&poly, bbox, 400) / area;
        assert!((l.raw_value - expect).abs() < 2.0, "{}: {} vs {expect}", l.grid_id, l.raw_value);
    }
}

#[test]
fn disaggregation_of_adjacent_regions_sums_per_cell() {
    let cells = lattice(2, 10.0);
    let west = RegionalRecord { region_id: "w".into(), value: 100.0, geometry: vec![(0.0, 0.0), (0.0, -20.0), (5.0, -20.0), (5.0, 0.0)] };
    let east = RegionalRecord { region_id: "e".into(), value: 300.0, geometry: vec![(5.0, 0.0), (5.0, -20.0), (20.0, -20.0), (20.0, 0.0)] };
    let labels = disaggregate_all(&[west, east], &cells, "population").unwrap();
    let get = |id: &str| labels.iter().find(|l| l.grid_id == id).unwrap().raw_value;
    // west half of column 0 gets 50 from "w"; east half gets 300 * 50/300 = 50
    assert!((get("r0c0") - 100.0).abs() < 1e-9);
    assert!((get("r0c1") - 100.0).abs() < 1e-9);
}

#[test]
fn linear_fit_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = 3;
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|_| {
            let c: Vec<f64> = (0..k).map(|_| f64::from(rng.random_range(1u32..50))).collect();
            let t: f64 = c.iter().sum();
            let hhi = c.iter().map(|v| (v / t).powi(2)).sum();
            [c, vec![hhi]].concat()
        })
        .collect();
    let y: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..5.0)).collect();
    let table = FeatureTable { k_std: k, epochs: vec!["e".into()], grid_ids: (0..60).map(|i| i.to_string()).collect(), rows };
    let (m, _) = fit_linear_quadratic(&table, &y, 0.0).unwrap();
    let x: Vec<Vec<f64>> = table.rows.iter().map(|r| [design_row(r, k, 1), vec![1.0]].concat()).collect();
    let oracle = common::normal_equations(&x, &y);
    let mut got = m.coefficients();
    got.push(m.intercept);
    for (g, o) in got.iter().zip(&oracle) {
        assert!((g - o).abs() <= 1e-6 * o.abs().max(1e-12), "{g} vs {o}");
    }
}

#[test]
fn stump_split_is_brute_force_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| f64::from(rng.random_range(0u8..20))).collect()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r[1] * 0.3 + rng.random_range(-1.0..1.0)).collect();
    let params = GbtParams { max_depth: 1, n_rounds: 1, learning_rate: 1.0, min_leaf: 1, ..GbtParams::default() };
    let (model, _) = fit_gbt(&rows, &y, &params).unwrap();
    let mean = y.iter().sum::<f64>() / 40.0;
    let r: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let sse = |idx: &[usize]| {
        if idx.is_empty() {
            return 0.0;
        }
        let m = idx.iter().map(|&i| r[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (r[i] - m).powi(2)).sum::<f64>()
    };
    let mut best = f64::INFINITY;
    #[allow(clippy::needless_range_loop)]
    for f in 0..3 {
        for t in 0..20 {
            let t = f64::from(t) + 0.5;
            let (l, rr): (Vec<usize>, Vec<usize>) = (0..40).partition(|&i| rows[i][f] <= t);
            if !l.is_empty() && !rr.is_empty() {
                best = best.min(sse(&l) + sse(&rr));
            }
        }
    }
    let fitted_sse: f64 = rows.iter().zip(&y).map(|(row, v)| (model.predict_row(row) - v).powi(2)).sum();
    assert!((fitted_sse - best).abs() < 1e-9 * best.max(1.0), "{fitted_sse} vs {best}");
}

fn walk(nodes: &[Node], i: usize, row: &[f64]) -> f64 {
    match &nodes[i] {
        Node::Leaf { value } => *value,
        Node::Split { feature, threshold, left, right } => {
            if row[*feature] <= *threshold {
                walk(nodes, *left, row)
            } else {
                walk(nodes, *right, row)
            }
        }
    }
}

#[test]
fn ensemble_prediction_matches_recursive_walker() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<Vec<f64>> = (0..120).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let y: Vec<f64> = rows.iter().map(|r| (r[0] * 6.0).sin() + r[2] * r[3]).collect();
    let (model, _) = fit_gbt(&rows, &y, &GbtParams { n_rounds: 30, subsample: 0.7, ..GbtParams::default() }).unwrap();
    for row in &rows {
        let oracle = model.base_score + model.learning_rate * model.trees.iter().map(|t| walk(&t.nodes, 0, row)).sum::<f64>();
        assert_eq!(model.predict_row(row), oracle);
    }
}

#[test]
fn per_class_recall_matches_confusion_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let truth: Vec<bool> = (0..50).map(|_| rng.random_bool(0.4)).collect();
        let pred: Vec<bool> = (0..50).map(|_| rng.random_bool(0.5)).collect();
        let (mut tn, mut fp, mut fn_, mut tp) = (0.0, 0.0, 0.0, 0.0);
        for (p, t) in pred.iter().zip(&truth) {
            match (p, t) {
                (false, false) => tn += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                (true, true) => tp += 1.0,
            }
        }
        let (u, i) = class_accuracies(&pred, &truth).unwrap();
        assert_eq!(u, Some(tn / (tn + fp)));
        assert_eq!(i, Some(tp / (tp + fn_)));
    }
}

#[test]
fn heatmap_regions_coincide_with_assignment() {
    let spec = SynthSpec { tile_size: 120, cells_per_tile: 1, seed: 9, ..SynthSpec::default() };
    let corpus = generate_corpus(&spec, 1).unwrap();
    let assignment: Vec<u16> = corpus.class_maps[0].iter().map(|&c| u16::from(c)).collect();
    let effects = [3.0, 2.5, 2.0, 1.5, -0.5, -1.0, -2.0, -3.0];
    let img = render_heatmap(120, 120, &assignment, &effects).unwrap();
    let colors: Vec<[u8; 3]> = effects.iter().map(|e| diverging_ramp(e / 3.0)).collect();
    for (i, &a) in assignment.iter().enumerate() {
        let (x, y) = ((i % 120) as u32, (i / 120) as u32);
        assert_eq!(img.get_pixel(x, y).0, colors[usize::from(a)]);
    }
    // distinct effects give distinct colors, so the color partition is the assignment partition
    let mut uniq = colors.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), colors.len());
}
