use std::fs;
use std::path::Path;

use mapcount::pipeline::{self, PipelineConfig, Stage};
use mapcount::raster::read_manifest;

fn small(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    for (k, v) in [
        ("synth_tiles", "2"),
        ("synth_tile_size", "200"),
        ("synth_cells_per_tile", "4"),
        ("k_local", "6"),
        ("k_std", "6"),
        ("gbt_n_rounds", "30"),
        ("train_fraction", "0.5"),
        ("jobs", "2"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.set("out_dir", out.to_str().unwrap()).unwrap();
    cfg
}

#[test]
fn labelize_from_regions_and_landcover() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    pipeline::run_stage(&cfg, Stage::Synth).unwrap();
    pipeline::run_stage(&cfg, Stage::Clip).unwrap();

    let rows = read_manifest(&cfg.out("manifest.csv")).unwrap();
    let min_x = rows.iter().map(|r| r.min_x).fold(f64::INFINITY, f64::min);
    let max_x = rows.iter().map(|r| r.max_x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = rows.iter().map(|r| r.min_y).fold(f64::INFINITY, f64::min);
    let max_y = rows.iter().map(|r| r.max_y).fold(f64::NEG_INFINITY, f64::max);
    let mid = (min_x + max_x) / 2.0;
    fs::write(dir.path().join("values.csv"), "region_id,value\nwest,1000\neast,3000\n").unwrap();
    fs::write(
        dir.path().join("regions.txt"),
        format!(
            "west {min_x},{min_y} {mid},{min_y} {mid},{max_y} {min_x},{max_y}\neast {mid},{min_y} {max_x},{min_y} {max_x},{max_y} {mid},{max_y}\n"
        ),
    )
    .unwrap();
    cfg.set("region_values", dir.path().join("values.csv").to_str().unwrap()).unwrap();
    cfg.set("region_polygons", dir.path().join("regions.txt").to_str().unwrap()).unwrap();

    let labels = pipeline::labelize(&cfg).unwrap();
    assert_eq!(labels.len(), rows.len());
    let total: f64 = labels.iter().map(|l| l.raw_value).sum();
    assert!((total - 4000.0).abs() < 1e-6, "{total}");

    cfg.set("landcover", cfg.synth_dir().join("landcover.csv").to_str().unwrap()).unwrap();
    cfg.set("water_threshold", "0.99").unwrap();
    let with_zero = pipeline::labelize(&cfg).unwrap();
    let lc = fs::read_to_string(cfg.synth_dir().join("landcover.csv")).unwrap();
    let all_water: Vec<&str> = lc
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",water,1") || l.ends_with(",water,1.0"))
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert!(!all_water.is_empty());
    for l in &with_zero {
        if all_water.contains(&l.grid_id.as_str()) {
            assert!(l.is_zero && l.raw_value == 0.0);
        }
    }
    assert!(with_zero.iter().filter(|l| l.is_zero).count() >= all_water.len());
}

#[test]
fn two_epochs_join_side_by_side() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    pipeline::run_stage(&cfg, Stage::Synth).unwrap();
    let prev = dir.path().join("prev_tiles");
    fs::create_dir_all(&prev).unwrap();
    for e in fs::read_dir(cfg.tiles_dir()).unwrap() {
        let p = e.unwrap().path();
        fs::copy(&p, prev.join(p.file_name().unwrap())).unwrap();
    }
    cfg.set("prev_tiles_dir", prev.to_str().unwrap()).unwrap();
    cfg.set("prev_epoch", "2000").unwrap();
    pipeline::run_stage(&cfg, Stage::Run).unwrap();

    let manifest = read_manifest(&cfg.out("manifest.csv")).unwrap();
    assert_eq!(manifest.iter().filter(|r| r.epoch == "2000").count(), 32);
    assert_eq!(manifest.iter().filter(|r| r.epoch == "2015").count(), 32);

    let vectors = mapcount::features::read_features(&cfg.out("features.csv")).unwrap();
    let table = pipeline::model_table(&cfg, &vectors).unwrap();
    assert_eq!(table.len(), 32);
    assert_eq!(table.rows[0].len(), 2 * (6 + 1));
    assert_eq!(table.rows[0][..7], table.rows[0][7..]);
    assert!(cfg.out("report.csv").is_file());
}

#[test]
fn sweep_matches_staged_pipeline_at_same_k() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.set("sweep_min", "6").unwrap();
    cfg.set("sweep_max", "7").unwrap();
    pipeline::run_stage(&cfg, Stage::Synth).unwrap();
    pipeline::run_stage(&cfg, Stage::Run).unwrap();
    let reports = pipeline::evaluate(&cfg).unwrap();
    let rows = pipeline::sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].k_std, 6);
    for r in &reports {
        let swept = match r.model_kind.as_str() {
            "linear_quadratic" => rows[0].r2_linear_quadratic,
            _ => rows[0].r2_gbt,
        };
        assert!((swept.unwrap() - r.r2_pred_on_actual).abs() < 1e-12, "{} {swept:?} {}", r.model_kind, r.r2_pred_on_actual);
    }
}
