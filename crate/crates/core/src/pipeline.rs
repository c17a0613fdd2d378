//! File-based pipeline stages driven by a flat `key = value` configuration.
//!
//! Every stage reads the files written by earlier stages under `out_dir` and
//! writes its own; nothing else is shared between stages.
//!
//! | stage        | reads                                   | writes                                  |
//! |--------------|-----------------------------------------|-----------------------------------------|
//! | `synth`      | config                                  | `synth_dir/{tiles/,labels.csv,...}`     |
//! | `clip`       | `tiles_dir` (+ `prev_tiles_dir`)        | `cells/<epoch>_<grid_id>.png`, `manifest.csv` |
//! | `simplify`   | manifest, cells                         | `local_palettes.json`                   |
//! | `standardize`| local palettes                          | `standard_palette.json`                 |
//! | `featurize`  | manifest, cells, standard palette       | `features.csv`                          |
//! | `labelize`   | manifest, regions and/or land cover     | `labels.csv`                            |
//! | `train`      | features, labels                        | `split.csv`, `models/<kind>.json`       |
//! | `predict`    | features, models                        | `predictions_<kind>.csv`                |
//! | `evaluate`   | split, labels, predictions              | `report.csv`, `report.txt`              |
//! | `interpret`  | linear model, features, split, palette  | `effects.csv`, `heatmaps/*.png`         |
//! | `sweep`      | manifest, cells, local palettes, labels | `sweep.csv`                             |

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{write_reports, EvalReport};
use crate::features::{count_colors, write_features, read_features, FeatureTable, FeatureVector, HhiMode};
use crate::interpret::{combined_effects, mean_counts, render_cell_heatmap, write_effects};
use crate::labels::{
    disaggregate_all, landcover_zero_rule, read_labels, read_landcover, read_regions, sample_training,
    write_labels, GridLabel, Split,
};
use crate::model::{
    fit_gbt, fit_linear_quadratic, predict_with, read_predictions, write_predictions, GbtParams,
    TargetTransform, TrainedModel,
};
use crate::palette::{
    assign_standard, build_standard_palette, color_histogram, nearest, simplify_grid, KmeansParams, Palette,
    StandardPalette,
};
use crate::raster::{
    cell_file_name, clip_grids, load_tile, read_manifest, save_raster, write_manifest, GridCell, GridSpec,
    ManifestRow,
};
use crate::synth::{generate_corpus, write_corpus, SynthSpec};

/// Environment variable that overrides `out_dir` from the config file.
pub const OUT_DIR_ENV: &str = "MAPCOUNT_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Both,
    LinearQuadratic,
    Gbt,
}

impl ModelChoice {
    pub fn kinds(self) -> &'static [&'static str] {
        match self {
            ModelChoice::Both => &["linear_quadratic", "gbt"],
            ModelChoice::LinearQuadratic => &["linear_quadratic"],
            ModelChoice::Gbt => &["gbt"],
        }
    }
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(ModelChoice::Both),
            "linear_quadratic" => Ok(ModelChoice::LinearQuadratic),
            "gbt" => Ok(ModelChoice::Gbt),
            other => Err(Error::Config(format!(
                "models must be both|linear_quadratic|gbt, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    /// Defaults to `<synth_dir>/tiles`.
    pub tiles_dir: Option<PathBuf>,
    pub epoch: String,
    pub prev_tiles_dir: Option<PathBuf>,
    pub prev_epoch: Option<String>,
    /// Defaults to `<out_dir>/labels.csv` when present, else `<synth_dir>/labels.csv`.
    pub labels: Option<PathBuf>,
    pub region_values: Option<PathBuf>,
    pub region_polygons: Option<PathBuf>,
    pub landcover: Option<PathBuf>,
    pub target_name: String,

    pub grid: GridSpec,
    pub k_local: usize,
    pub k_std: usize,
    pub sweep_min: usize,
    pub sweep_max: usize,
    pub seed: u64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub weighted_standardize: bool,
    pub hhi_mode: HhiMode,

    pub models: ModelChoice,
    pub ridge: f64,
    pub gbt: GbtParams,
    pub target_transform: TargetTransform,
    pub train_fraction: f64,
    pub zero_keep_fraction: f64,
    pub classify_threshold: f64,
    pub water_threshold: f64,
    pub savanna_threshold: f64,
    pub heatmap_limit: usize,

    /// Defaults to `<out_dir>/synth`.
    pub synth_dir: Option<PathBuf>,
    pub synth_tiles: usize,
    pub synth: SynthSpec,

    pub jobs: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            out_dir: PathBuf::from("out"),
            tiles_dir: None,
            epoch: "2015".into(),
            prev_tiles_dir: None,
            prev_epoch: None,
            labels: None,
            region_values: None,
            region_polygons: None,
            landcover: None,
            target_name: "population".into(),
            grid: GridSpec::default(),
            k_local: 12,
            k_std: 12,
            sweep_min: 6,
            sweep_max: 24,
            seed: 0,
            kmeans_restarts: 5,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-4,
            weighted_standardize: true,
            hhi_mode: HhiMode::Shares,
            models: ModelChoice::Both,
            ridge: 1e-8,
            gbt: GbtParams::default(),
            target_transform: TargetTransform::Log1p,
            train_fraction: 0.2,
            zero_keep_fraction: 1.0,
            classify_threshold: 0.5,
            water_threshold: 0.7,
            savanna_threshold: 0.8,
            heatmap_limit: 4,
            synth_dir: None,
            synth_tiles: 5,
            synth: SynthSpec::default(),
            jobs: None,
        }
    }
}

const PATH_KEYS: &[&str] = &[
    "out_dir",
    "tiles_dir",
    "prev_tiles_dir",
    "labels",
    "region_values",
    "region_polygons",
    "landcover",
    "synth_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value for {key}: {value:?}"))),
    }
}

fn parse_rgb(key: &str, value: &str) -> Result<Option<[u8; 3]>> {
    if value.is_empty() || value == "none" {
        return Ok(None);
    }
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("{key} must be r,g,b or none")));
    }
    Ok(Some([parse(key, parts[0])?, parse(key, parts[1])?, parse(key, parts[2])?]))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Split a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "out_dir" => self.out_dir = PathBuf::from(value),
            "tiles_dir" => self.tiles_dir = opt_path(value),
            "epoch" => self.epoch = value.to_string(),
            "prev_tiles_dir" => self.prev_tiles_dir = opt_path(value),
            "prev_epoch" => self.prev_epoch = (!value.is_empty()).then(|| value.to_string()),
            "labels" => self.labels = opt_path(value),
            "region_values" => self.region_values = opt_path(value),
            "region_polygons" => self.region_polygons = opt_path(value),
            "landcover" => self.landcover = opt_path(value),
            "target_name" => self.target_name = value.to_string(),
            "cell_size" => self.grid.cell_size = parse(key, value)?,
            "origin_x" => self.grid.origin.0 = parse(key, value)?,
            "origin_y" => self.grid.origin.1 = parse(key, value)?,
            "exclusion_margin" => self.grid.exclusion_margin = parse(key, value)?,
            "distortion_tolerance" => self.grid.distortion_tolerance = parse(key, value)?,
            "nodata" => self.grid.nodata = parse_rgb(key, value)?,
            "k_local" => self.k_local = parse(key, value)?,
            "k_std" => self.k_std = parse(key, value)?,
            "sweep_min" => self.sweep_min = parse(key, value)?,
            "sweep_max" => self.sweep_max = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "kmeans_restarts" => self.kmeans_restarts = parse(key, value)?,
            "kmeans_max_iter" => self.kmeans_max_iter = parse(key, value)?,
            "kmeans_tol" => self.kmeans_tol = parse(key, value)?,
            "weighted_standardize" => self.weighted_standardize = parse_bool(key, value)?,
            "hhi_mode" => self.hhi_mode = value.parse()?,
            "models" => self.models = value.parse()?,
            "ridge" => self.ridge = parse(key, value)?,
            "gbt_max_depth" => self.gbt.max_depth = parse(key, value)?,
            "gbt_n_rounds" => self.gbt.n_rounds = parse(key, value)?,
            "gbt_learning_rate" => self.gbt.learning_rate = parse(key, value)?,
            "gbt_min_leaf" => self.gbt.min_leaf = parse(key, value)?,
            "gbt_subsample" => self.gbt.subsample = parse(key, value)?,
            "target_transform" => self.target_transform = value.parse()?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "zero_keep_fraction" => self.zero_keep_fraction = parse(key, value)?,
            "classify_threshold" => self.classify_threshold = parse(key, value)?,
            "water_threshold" => self.water_threshold = parse(key, value)?,
            "savanna_threshold" => self.savanna_threshold = parse(key, value)?,
            "heatmap_limit" => self.heatmap_limit = parse(key, value)?,
            "synth_dir" => self.synth_dir = opt_path(value),
            "synth_tiles" => self.synth_tiles = parse(key, value)?,
            "synth_tile_size" => self.synth.tile_size = parse(key, value)?,
            "synth_cells_per_tile" => self.synth.cells_per_tile = parse(key, value)?,
            "synth_noise_sd" => self.synth.noise_sd = parse(key, value)?,
            "synth_jitter" => self.synth.jitter = parse(key, value)?,
            "synth_water_fraction" => self.synth.water_cell_fraction = parse(key, value)?,
            "synth_urban_min" => self.synth.urbanization.0 = parse(key, value)?,
            "synth_urban_max" => self.synth.urbanization.1 = parse(key, value)?,
            "jobs" => self.jobs = Some(parse(key, value)?),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Config file, then the output-dir environment variable, then overrides.
    /// Relative paths in the file are resolved against the file's directory.
    pub fn load(file: Option<&Path>, env_out_dir: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = file {
            if !path.is_file() {
                return Err(Error::Config(format!("config file {} not found", path.display())));
            }
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let base = path.parent().unwrap_or(Path::new(""));
            for (k, v) in parse_config_text(&text)? {
                let v = if PATH_KEYS.contains(&k.as_str()) && !v.is_empty() && Path::new(&v).is_relative() {
                    base.join(&v).to_string_lossy().into_owned()
                } else {
                    v
                };
                cfg.set(&k, &v)?;
            }
        }
        if let Some(out) = env_out_dir.filter(|s| !s.is_empty()) {
            cfg.out_dir = PathBuf::from(out);
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let need = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.to_string())) };
        self.grid.validate()?;
        need(self.k_local >= 1, "k_local must be >= 1")?;
        need(self.k_std >= 1, "k_std must be >= 1")?;
        need(self.k_std <= usize::from(u16::MAX), "k_std is too large")?;
        need(self.sweep_min >= 1, "sweep_min must be >= 1")?;
        need(self.sweep_min <= self.sweep_max, "sweep_min must be <= sweep_max")?;
        need(self.kmeans_restarts >= 1, "kmeans_restarts must be >= 1")?;
        need(self.kmeans_max_iter >= 1, "kmeans_max_iter must be >= 1")?;
        need(self.kmeans_tol >= 0.0, "kmeans_tol must be >= 0")?;
        need(self.ridge.is_finite() && self.ridge >= 0.0, "ridge must be >= 0")?;
        self.gbt.validate()?;
        need(
            self.train_fraction > 0.0 && self.train_fraction <= 1.0,
            "train_fraction must be in (0,1]",
        )?;
        need(
            (0.0..=1.0).contains(&self.zero_keep_fraction),
            "zero_keep_fraction must be in [0,1]",
        )?;
        need(self.classify_threshold >= 0.0, "classify_threshold must be >= 0")?;
        need(self.jobs != Some(0), "jobs must be >= 1")?;
        need(self.synth_tiles >= 1, "synth_tiles must be >= 1")?;
        need(!self.epoch.is_empty(), "epoch must not be empty")?;
        need(
            self.prev_tiles_dir.is_some() == self.prev_epoch.is_some(),
            "prev_tiles_dir and prev_epoch must be set together",
        )?;
        need(
            self.prev_epoch.as_deref() != Some(self.epoch.as_str()),
            "prev_epoch must differ from epoch",
        )?;
        need(
            self.region_values.is_some() == self.region_polygons.is_some(),
            "region_values and region_polygons must be set together",
        )?;
        self.synth_spec().validate()
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.synth_dir.clone().unwrap_or_else(|| self.out("synth"))
    }

    pub fn tiles_dir(&self) -> PathBuf {
        self.tiles_dir.clone().unwrap_or_else(|| self.synth_dir().join("tiles"))
    }

    pub fn labels_path(&self) -> PathBuf {
        if let Some(p) = &self.labels {
            return p.clone();
        }
        let own = self.out("labels.csv");
        if own.is_file() {
            own
        } else {
            self.synth_dir().join("labels.csv")
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            cell_size: self.grid.cell_size,
            seed: self.seed,
            epoch_tag: self.epoch.clone(),
            target_name: self.target_name.clone(),
            ..self.synth.clone()
        }
    }

    fn kmeans_base(&self) -> KmeansParams {
        KmeansParams {
            max_iter: self.kmeans_max_iter,
            tol: self.kmeans_tol,
            ..KmeansParams::new(1, self.seed).with_restarts(self.kmeans_restarts)
        }
    }

    fn gbt_params(&self) -> GbtParams {
        GbtParams {
            seed: self.seed,
            ..self.gbt.clone()
        }
    }

    fn epochs(&self) -> Vec<(String, PathBuf)> {
        let mut v = vec![(self.epoch.clone(), self.tiles_dir())];
        if let (Some(e), Some(d)) = (&self.prev_epoch, &self.prev_tiles_dir) {
            v.push((e.clone(), d.clone()));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Clip,
    Simplify,
    Standardize,
    Featurize,
    Labelize,
    Train,
    Predict,
    Evaluate,
    Interpret,
    Synth,
    Sweep,
    /// clip through interpret, skipping labelize unless label sources are configured.
    Run,
}

impl Stage {
    pub const ALL: [Stage; 12] = [
        Stage::Clip,
        Stage::Simplify,
        Stage::Standardize,
        Stage::Featurize,
        Stage::Labelize,
        Stage::Train,
        Stage::Predict,
        Stage::Evaluate,
        Stage::Interpret,
        Stage::Synth,
        Stage::Sweep,
        Stage::Run,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Clip => "clip",
            Stage::Simplify => "simplify",
            Stage::Standardize => "standardize",
            Stage::Featurize => "featurize",
            Stage::Labelize => "labelize",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
            Stage::Interpret => "interpret",
            Stage::Synth => "synth",
            Stage::Sweep => "sweep",
            Stage::Run => "run",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown subcommand {s:?}")))
    }
}

/// Run one stage inside a thread pool capped at `cfg.jobs` threads.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| dispatch(cfg, stage))
}

fn dispatch(cfg: &PipelineConfig, stage: Stage) -> Result<()> {
    log::info!("stage {stage}");
    match stage {
        Stage::Clip => clip(cfg).map(drop),
        Stage::Simplify => simplify(cfg).map(drop),
        Stage::Standardize => standardize(cfg).map(drop),
        Stage::Featurize => featurize(cfg).map(drop),
        Stage::Labelize => labelize(cfg).map(drop),
        Stage::Train => train(cfg).map(drop),
        Stage::Predict => predict(cfg).map(drop),
        Stage::Evaluate => evaluate(cfg).map(drop),
        Stage::Interpret => interpret(cfg),
        Stage::Synth => synth(cfg),
        Stage::Sweep => sweep(cfg).map(drop),
        Stage::Run => {
            let has_label_sources = cfg.region_values.is_some() || cfg.landcover.is_some();
            for s in [
                Stage::Clip,
                Stage::Simplify,
                Stage::Standardize,
                Stage::Featurize,
                Stage::Labelize,
                Stage::Train,
                Stage::Predict,
                Stage::Evaluate,
                Stage::Interpret,
            ] {
                if s == Stage::Labelize && !has_label_sources {
                    continue;
                }
                if s == Stage::Interpret && !cfg.models.kinds().contains(&"linear_quadratic") {
                    continue;
                }
                dispatch(cfg, s)?;
            }
            Ok(())
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn list_tiles(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingInput(dir.to_path_buf()));
    }
    let mut tiles: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    tiles.sort();
    if tiles.is_empty() {
        return Err(Error::InvalidInput(format!("no .png tiles in {}", dir.display())));
    }
    Ok(tiles)
}

/// Clip every tile of every configured epoch; write usable cells and the manifest.
pub fn clip(cfg: &PipelineConfig) -> Result<Vec<ManifestRow>> {
    let cells_dir = cfg.out("cells");
    ensure_dir(&cells_dir)?;
    let mut all: Vec<(String, i64, i64, String, ManifestRow)> = Vec::new();
    for (epoch, dir) in cfg.epochs() {
        let tiles = list_tiles(&dir)?;
        let per_tile: Vec<Result<Vec<(i64, i64, ManifestRow)>>> = tiles
            .par_iter()
            .map(|path| {
                let tile = load_tile(path, &epoch)?;
                let cells = clip_grids(&tile, &cfg.grid)?;
                let mut rows = Vec::with_capacity(cells.len());
                for c in &cells {
                    if c.is_usable() {
                        let name = cell_file_name(&c.epoch_tag, &c.grid_id);
                        save_raster(&c.pixels, &c.geotransform, &cells_dir.join(name))?;
                    }
                    rows.push((c.row, c.col, ManifestRow::from(c)));
                }
                Ok(rows)
            })
            .collect();
        for rows in per_tile {
            for (r, c, m) in rows? {
                all.push((epoch.clone(), r, c, m.tile_id.clone(), m));
            }
        }
    }
    all.sort_by(|a, b| (&a.0, a.1, a.2, &a.3).cmp(&(&b.0, b.1, b.2, &b.3)));
    for w in all.windows(2) {
        let (a, b) = (&w[0].4, &w[1].4);
        if a.epoch == b.epoch && a.grid_id == b.grid_id && a.is_usable() && b.is_usable() {
            return Err(Error::Join(format!(
                "cell {} ({}) is fully covered by both {} and {}",
                a.grid_id, a.epoch, a.tile_id, b.tile_id
            )));
        }
    }
    let rows: Vec<ManifestRow> = all.into_iter().map(|t| t.4).collect();
    write_manifest(&cfg.out("manifest.csv"), &rows)?;
    log::info!(
        "clip: {} cells, {} usable",
        rows.len(),
        rows.iter().filter(|r| r.is_usable()).count()
    );
    Ok(rows)
}

fn usable_rows(cfg: &PipelineConfig) -> Result<Vec<ManifestRow>> {
    let rows: Vec<ManifestRow> = read_manifest(&cfg.out("manifest.csv"))?
        .into_iter()
        .filter(ManifestRow::is_usable)
        .collect();
    if rows.is_empty() {
        return Err(Error::InvalidInput("manifest has no usable cells".into()));
    }
    Ok(rows)
}

fn load_cell(cfg: &PipelineConfig, row: &ManifestRow) -> Result<GridCell> {
    let path = cfg.out("cells").join(cell_file_name(&row.epoch, &row.grid_id));
    let tile = load_tile(&path, &row.epoch)?;
    Ok(GridCell::from_tile(tile, &cfg.grid, row.grid_id.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPalette {
    pub grid_id: String,
    pub epoch: String,
    pub palette: Palette,
}

pub fn read_local_palettes(path: &Path) -> Result<Vec<LocalPalette>> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_standard_palette(path: &Path) -> Result<StandardPalette> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    StandardPalette::from_json(&text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-cell K-means to `k_local` colors.
pub fn simplify(cfg: &PipelineConfig) -> Result<Vec<LocalPalette>> {
    let rows = usable_rows(cfg)?;
    let base = cfg.kmeans_base();
    let locals = rows
        .par_iter()
        .map(|row| {
            let cell = load_cell(cfg, row)?;
            let (palette, _) = simplify_grid(&cell, cfg.k_local, cfg.seed, &base)?;
            Ok(LocalPalette {
                grid_id: row.grid_id.clone(),
                epoch: row.epoch.clone(),
                palette,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_text(&cfg.out("local_palettes.json"), &serde_json::to_string(&locals)?)?;
    log::info!("simplify: {} local palettes", locals.len());
    Ok(locals)
}

fn standard_palette_for(cfg: &PipelineConfig, locals: &[LocalPalette], k_std: usize) -> Result<StandardPalette> {
    let palettes: Vec<Palette> = locals.iter().map(|l| l.palette.clone()).collect();
    build_standard_palette(&palettes, k_std, cfg.seed, cfg.weighted_standardize, &cfg.kmeans_base())
}

/// One shared palette of `k_std` colors over all epochs' local centroids.
pub fn standardize(cfg: &PipelineConfig) -> Result<StandardPalette> {
    let locals = read_local_palettes(&cfg.out("local_palettes.json"))?;
    let std = standard_palette_for(cfg, &locals, cfg.k_std)?;
    write_text(&cfg.out("standard_palette.json"), &std.to_json()?)?;
    log::info!(
        "standardize: {} centroids -> {} colors",
        std.provenance,
        std.palette.centroids.len()
    );
    Ok(std)
}

/// Standardized color counts and HHI of every usable cell.
pub fn featurize(cfg: &PipelineConfig) -> Result<Vec<FeatureVector>> {
    let rows = usable_rows(cfg)?;
    let std = read_standard_palette(&cfg.out("standard_palette.json"))?;
    let vectors = rows
        .par_iter()
        .map(|row| {
            let cell = load_cell(cfg, row)?;
            let assignment = assign_standard(&cell, &std);
            let counts = count_colors(&assignment, std.k_std());
            FeatureVector::new(row.grid_id.clone(), row.epoch.clone(), counts, cfg.hhi_mode)
        })
        .collect::<Result<Vec<_>>>()?;
    write_features(&cfg.out("features.csv"), &vectors)?;
    log::info!("featurize: {} rows", vectors.len());
    Ok(vectors)
}

/// Labels from regional disaggregation and/or the land-cover zero rule.
pub fn labelize(cfg: &PipelineConfig) -> Result<Vec<GridLabel>> {
    let rows: Vec<ManifestRow> = usable_rows(cfg)?
        .into_iter()
        .filter(|r| r.epoch == cfg.epoch)
        .collect();
    let cells: Vec<(String, crate::raster::BBox)> = rows.iter().map(|r| (r.grid_id.clone(), r.bbox())).collect();

    let mut labels: Vec<GridLabel> = match (&cfg.region_values, &cfg.region_polygons) {
        (Some(v), Some(p)) => disaggregate_all(&read_regions(v, p)?, &cells, &cfg.target_name)?,
        _ if cfg.landcover.is_some() => {
            let path = cfg.labels_path();
            if path == cfg.out("labels.csv") {
                return Err(Error::Config(
                    "labelize with only landcover needs a separate labels file".into(),
                ));
            }
            read_labels(&path)?
        }
        _ => {
            return Err(Error::Config(
                "labelize needs region_values + region_polygons or landcover".into(),
            ))
        }
    };

    if let Some(lc) = &cfg.landcover {
        let zero: BTreeMap<String, bool> = read_landcover(lc)?
            .iter()
            .map(|c| (c.grid_id.clone(), landcover_zero_rule(c, cfg.water_threshold, cfg.savanna_threshold)))
            .collect();
        let mut by_id: BTreeMap<String, GridLabel> = labels.into_iter().map(|l| (l.grid_id.clone(), l)).collect();
        for (id, &z) in &zero {
            if z {
                by_id.insert(id.clone(), GridLabel::new(id.clone(), &cfg.target_name, 0.0)?);
            }
        }
        let order: HashMap<&str, usize> = cells.iter().enumerate().map(|(i, c)| (c.0.as_str(), i)).collect();
        labels = by_id
            .into_values()
            .filter(|l| order.contains_key(l.grid_id.as_str()))
            .collect();
        labels.sort_by_key(|l| order[l.grid_id.as_str()]);
    }
    write_labels(&cfg.out("labels.csv"), &labels)?;
    log::info!(
        "labelize: {} labels, {} zero",
        labels.len(),
        labels.iter().filter(|l| l.is_zero).count()
    );
    Ok(labels)
}

/// Model table from feature vectors: the configured epoch alone, or joined with the previous one.
pub fn model_table(cfg: &PipelineConfig, vectors: &[FeatureVector]) -> Result<FeatureTable> {
    let of = |e: &str| -> Vec<FeatureVector> { vectors.iter().filter(|v| v.epoch_tag == e).cloned().collect() };
    let current = of(&cfg.epoch);
    if current.is_empty() {
        return Err(Error::InvalidInput(format!("no features for epoch {}", cfg.epoch)));
    }
    match &cfg.prev_epoch {
        None => FeatureTable::from_vectors(&current),
        Some(prev) => {
            let (table, excluded) = FeatureTable::join_epochs(&current, &of(prev))?;
            if excluded > 0 {
                log::warn!("{excluded} cells present in only one epoch were left out");
            }
            if table.is_empty() {
                return Err(Error::Join("no cell is present in both epochs".into()));
            }
            Ok(table)
        }
    }
}

/// Labels that have a feature row and a defined transformed target, in table order.
fn usable_labels(cfg: &PipelineConfig, table: &FeatureTable, labels: &[GridLabel]) -> Vec<GridLabel> {
    let by_id: HashMap<&str, &GridLabel> = labels.iter().map(|l| (l.grid_id.as_str(), l)).collect();
    table
        .grid_ids
        .iter()
        .filter_map(|id| by_id.get(id.as_str()))
        .filter(|l| cfg.target_transform.forward(l.raw_value).is_some())
        .map(|l| (*l).clone())
        .collect()
}

fn targets_for(cfg: &PipelineConfig, ids: &[String], labels: &[GridLabel]) -> Vec<f64> {
    let by_id: HashMap<&str, &GridLabel> = labels.iter().map(|l| (l.grid_id.as_str(), l)).collect();
    ids.iter()
        .map(|id| {
            cfg.target_transform
                .forward(by_id[id.as_str()].raw_value)
                .expect("filtered by usable_labels")
        })
        .collect()
}

fn fit_models(cfg: &PipelineConfig, train_table: &FeatureTable, targets: &[f64]) -> Result<Vec<TrainedModel>> {
    let mut out = Vec::new();
    for kind in cfg.models.kinds() {
        let model = match *kind {
            "linear_quadratic" => {
                let (m, rep) = fit_linear_quadratic(train_table, targets, cfg.ridge)?;
                log::info!("linear_quadratic: in-sample R² {:.4}", rep.r2_in_sample);
                TrainedModel::LinearQuadratic(m)
            }
            _ => {
                let (m, _) = fit_gbt(&train_table.rows, targets, &cfg.gbt_params())?;
                TrainedModel::Gbt(m)
            }
        };
        out.push(model);
    }
    Ok(out)
}

fn write_split(path: &Path, split: &Split) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["grid_id", "set"])?;
    for (set, ids) in [("train", &split.train), ("holdout", &split.holdout), ("thinned", &split.thinned)] {
        for id in ids {
            w.write_record([id.as_str(), set])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<Split> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut split = Split {
        train: Vec::new(),
        holdout: Vec::new(),
        thinned: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec?;
        let id = rec[0].to_string();
        match rec.get(1) {
            Some("train") => split.train.push(id),
            Some("holdout") => split.holdout.push(id),
            Some("thinned") => split.thinned.push(id),
            _ => return Err(Error::Format(format!("{}: bad split row", path.display()))),
        }
    }
    Ok(split)
}

fn model_path(cfg: &PipelineConfig, kind: &str) -> PathBuf {
    cfg.out("models").join(format!("{kind}.json"))
}

/// Everything `train` and `sweep` need besides the palette.
struct TrainingData {
    table: FeatureTable,
    labels: Vec<GridLabel>,
    split: Split,
}

fn training_data(cfg: &PipelineConfig, vectors: &[FeatureVector]) -> Result<TrainingData> {
    let table = model_table(cfg, vectors)?;
    let path = cfg.labels_path();
    let all = read_labels(&path)?;
    let labels = usable_labels(cfg, &table, &all);
    if labels.is_empty() {
        return Err(Error::Join(format!(
            "no label in {} matches a feature row",
            path.display()
        )));
    }
    let split = sample_training(&labels, cfg.train_fraction, cfg.zero_keep_fraction, cfg.seed)?;
    Ok(TrainingData { table, labels, split })
}

/// Seeded split, then fit the configured models on the training cells.
pub fn train(cfg: &PipelineConfig) -> Result<Vec<TrainedModel>> {
    let vectors = read_features(&cfg.out("features.csv"))?;
    let data = training_data(cfg, &vectors)?;
    write_split(&cfg.out("split.csv"), &data.split)?;
    let train_table = data.table.select(&data.split.train);
    let targets = targets_for(cfg, &train_table.grid_ids, &data.labels);
    let models = fit_models(cfg, &train_table, &targets)?;
    ensure_dir(&cfg.out("models"))?;
    for m in &models {
        m.save(&model_path(cfg, m.kind()))?;
    }
    log::info!(
        "train: {} train / {} hold-out / {} thinned",
        data.split.train.len(),
        data.split.holdout.len(),
        data.split.thinned.len()
    );
    Ok(models)
}

/// Predict every feature row with every trained model.
pub fn predict(cfg: &PipelineConfig) -> Result<Vec<(String, Vec<crate::model::Prediction>)>> {
    let vectors = read_features(&cfg.out("features.csv"))?;
    let table = model_table(cfg, &vectors)?;
    let mut out = Vec::new();
    for kind in cfg.models.kinds() {
        let model = TrainedModel::load(&model_path(cfg, kind))?;
        let preds = predict_with(&model, &table, cfg.target_transform)?;
        write_predictions(&cfg.out(&format!("predictions_{kind}.csv")), &preds)?;
        out.push((kind.to_string(), preds));
    }
    Ok(out)
}

fn report_for(
    cfg: &PipelineConfig,
    kind: &str,
    holdout: &[String],
    labels: &[GridLabel],
    pred: &HashMap<&str, (f64, f64)>,
) -> Result<EvalReport> {
    let by_id: HashMap<&str, &GridLabel> = labels.iter().map(|l| (l.grid_id.as_str(), l)).collect();
    let (mut pl, mut al, mut pr, mut ar) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for id in holdout {
        let (Some(l), Some(&(vlog, vraw))) = (by_id.get(id.as_str()), pred.get(id.as_str())) else {
            return Err(Error::Join(format!("hold-out cell {id} lacks a label or a prediction")));
        };
        let Some(actual) = cfg.target_transform.forward(l.raw_value) else {
            continue;
        };
        pl.push(vlog);
        al.push(actual);
        pr.push(vraw);
        ar.push(l.raw_value);
    }
    EvalReport::compute(&cfg.target_name, kind, &pl, &al, &pr, &ar, cfg.classify_threshold)
}

/// Hold-out R² and per-class recall for each model.
pub fn evaluate(cfg: &PipelineConfig) -> Result<Vec<EvalReport>> {
    let split = read_split(&cfg.out("split.csv"))?;
    let labels = read_labels(&cfg.labels_path())?;
    let mut reports = Vec::new();
    for kind in cfg.models.kinds() {
        let preds = read_predictions(&cfg.out(&format!("predictions_{kind}.csv")))?;
        let map: HashMap<&str, (f64, f64)> = preds
            .iter()
            .map(|p| (p.grid_id.as_str(), (p.value_log, p.value_raw)))
            .collect();
        reports.push(report_for(cfg, kind, &split.holdout, &labels, &map)?);
    }
    write_reports(&cfg.out("report.csv"), &reports)?;
    let text: String = reports.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n");
    write_text(&cfg.out("report.txt"), &text)?;
    for r in &reports {
        log::info!("{}: R² {:.4}", r.model_kind, r.r2_pred_on_actual);
    }
    Ok(reports)
}

/// Per-color effects of the linear model and heatmaps of the first cells.
pub fn interpret(cfg: &PipelineConfig) -> Result<()> {
    let TrainedModel::LinearQuadratic(model) = TrainedModel::load(&model_path(cfg, "linear_quadratic"))? else {
        return Err(Error::Format("linear_quadratic.json holds a different model kind".into()));
    };
    let vectors = read_features(&cfg.out("features.csv"))?;
    let table = model_table(cfg, &vectors)?;
    let split = read_split(&cfg.out("split.csv"))?;
    let train_rows = table.select(&split.train).rows;
    let means = mean_counts(&train_rows, table.k_std, table.epochs.len());
    let std = read_standard_palette(&cfg.out("standard_palette.json"))?;
    let effects = combined_effects(&model, &means, Some(&std))?;
    write_effects(&cfg.out("effects.csv"), &effects)?;

    let block = table.epochs.iter().position(|e| *e == cfg.epoch).unwrap_or(0);
    let block_effects = &effects[block * table.k_std..(block + 1) * table.k_std];
    let heat_dir = cfg.out("heatmaps");
    ensure_dir(&heat_dir)?;
    let rows: Vec<ManifestRow> = usable_rows(cfg)?
        .into_iter()
        .filter(|r| r.epoch == cfg.epoch)
        .take(cfg.heatmap_limit)
        .collect();
    rows.par_iter().try_for_each(|row| {
        let cell = load_cell(cfg, row)?;
        let assignment = assign_standard(&cell, &std);
        let img = render_cell_heatmap(&cell, &assignment, block_effects)?;
        let path = heat_dir.join(cell_file_name(&row.epoch, &row.grid_id));
        img.save(&path)?;
        Ok(())
    })
}

/// Generate the synthetic corpus into `synth_dir`.
pub fn synth(cfg: &PipelineConfig) -> Result<()> {
    let spec = cfg.synth_spec();
    let corpus = generate_corpus(&spec, cfg.synth_tiles)?;
    let dir = cfg.synth_dir();
    ensure_dir(&dir)?;
    write_corpus(&spec, &corpus, &dir)?;
    log::info!("synth: {} tiles, {} cells", corpus.tiles.len(), corpus.labels.len());
    Ok(())
}

/// One row of the k sweep; `None` for models that were not run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k_std: usize,
    pub r2_linear_quadratic: Option<f64>,
    pub r2_gbt: Option<f64>,
}

/// Standardize, featurize, train and evaluate for every `k_std` in
/// `sweep_min..=sweep_max`; the split is shared across all k.
pub fn sweep(cfg: &PipelineConfig) -> Result<Vec<SweepRow>> {
    let rows = usable_rows(cfg)?;
    let locals = read_local_palettes(&cfg.out("local_palettes.json"))?;
    let hists = rows
        .par_iter()
        .map(|row| Ok(color_histogram(&load_cell(cfg, row)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for k in cfg.sweep_min..=cfg.sweep_max {
        let std = standard_palette_for(cfg, &locals, k)?;
        let centers = std.centers();
        let vectors = rows
            .iter()
            .zip(&hists)
            .map(|(row, hist)| {
                let mut counts = vec![0u64; std.k_std()];
                for (rgb, n) in hist {
                    let x = rgb.map(f64::from);
                    counts[nearest(&centers, &x)] += n;
                }
                FeatureVector::new(row.grid_id.clone(), row.epoch.clone(), counts, cfg.hhi_mode)
            })
            .collect::<Result<Vec<_>>>()?;
        let data = training_data(cfg, &vectors)?;
        let train_table = data.table.select(&data.split.train);
        let targets = targets_for(cfg, &train_table.grid_ids, &data.labels);
        let mut row = SweepRow {
            k_std: k,
            r2_linear_quadratic: None,
            r2_gbt: None,
        };
        for model in fit_models(cfg, &train_table, &targets)? {
            let preds = predict_with(&model, &data.table, cfg.target_transform)?;
            let map: HashMap<&str, (f64, f64)> = preds
                .iter()
                .map(|p| (p.grid_id.as_str(), (p.value_log, p.value_raw)))
                .collect();
            let rep = report_for(cfg, model.kind(), &data.split.holdout, &data.labels, &map)?;
            match model {
                TrainedModel::LinearQuadratic(_) => row.r2_linear_quadratic = Some(rep.r2_pred_on_actual),
                TrainedModel::Gbt(_) => row.r2_gbt = Some(rep.r2_pred_on_actual),
            }
        }
        log::info!("sweep k={k}: {:?} {:?}", row.r2_linear_quadratic, row.r2_gbt);
        out.push(row);
    }
    write_sweep(&cfg.out("sweep.csv"), &out)?;
    Ok(out)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k_std", "r2_linear_quadratic", "r2_gbt"])?;
    for r in rows {
        w.write_record([r.k_std.to_string(), opt(r.r2_linear_quadratic), opt(r.r2_gbt)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn config_text_parses_comments_and_blanks() {
        let p = parse_config_text("# c\nk_std = 8 # trailing\n\nseed=3\n").unwrap();
        assert_eq!(p, pairs(&[("k_std", "8"), ("seed", "3")]));
        assert!(parse_config_text("k_std 8").is_err());
    }

    #[test]
    fn invalid_k_std_names_field() {
        let err = PipelineConfig::load(None, None, &pairs(&[("k_std", "0")])).unwrap_err();
        assert!(err.is_usage());
        assert!(err.to_string().contains("k_std"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(PipelineConfig::load(None, None, &pairs(&[("kstd", "3")])).is_err());
    }

    #[test]
    fn env_then_overrides() {
        let c = PipelineConfig::load(None, Some("/tmp/a"), &[]).unwrap();
        assert_eq!(c.out_dir, PathBuf::from("/tmp/a"));
        let c = PipelineConfig::load(None, Some("/tmp/a"), &pairs(&[("out_dir", "/tmp/b")])).unwrap();
        assert_eq!(c.out_dir, PathBuf::from("/tmp/b"));
    }

    #[test]
    fn relative_paths_resolve_against_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "out_dir = results\ntiles_dir = /abs/tiles\n").unwrap();
        let c = PipelineConfig::load(Some(&path), None, &[]).unwrap();
        assert_eq!(c.out_dir, dir.path().join("results"));
        assert_eq!(c.tiles_dir(), PathBuf::from("/abs/tiles"));
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("cluster".parse::<Stage>().is_err());
    }

    #[test]
    fn nodata_parsing() {
        let mut c = PipelineConfig::default();
        c.set("nodata", "0, 0,0").unwrap();
        assert_eq!(c.grid.nodata, Some([0, 0, 0]));
        c.set("nodata", "none").unwrap();
        assert_eq!(c.grid.nodata, None);
        assert!(c.set("nodata", "1,2").is_err());
    }
}
