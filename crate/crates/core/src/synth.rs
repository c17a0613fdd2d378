//! Synthetic georeferenced map corpora with a planted color/density relationship.
//!
//! Every cell is painted with whole pixels from a small palette, so its exact
//! color shares are known. The true log density of a cell is a linear
//! function of those shares plus optional Gaussian noise; cells painted
//! entirely with water are uninhabited.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{write_labels, GridLabel};
use crate::raster::{grid_id, save_tile, GeoTransform, MapTile};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Urban,
    Road,
    Field,
    Forest,
    Water,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Urban => "urban",
            Tag::Road => "road",
            Tag::Field => "field",
            Tag::Forest => "forest",
            Tag::Water => "water",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthColor {
    pub name: String,
    pub rgb: [u8; 3],
    pub tag: Tag,
}

/// `log_density = intercept + Σ_c coefficients[c] * share_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRule {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub palette: Vec<SynthColor>,
    pub density_rule: DensityRule,
    /// Tile edge in pixels.
    pub tile_size: u32,
    /// Cells per tile edge.
    pub cells_per_tile: u32,
    /// Cell edge in map units.
    pub cell_size: f64,
    pub noise_sd: f64,
    pub seed: u64,
    /// Per-channel uniform jitter added to painted pixels (does not change classes).
    pub jitter: u8,
    /// Probability that a cell is painted entirely with water.
    pub water_cell_fraction: f64,
    /// Range of the latent urbanization level of non-water cells.
    pub urbanization: (f64, f64),
    pub epoch_tag: String,
    pub target_name: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let c = |name: &str, rgb: [u8; 3], tag| SynthColor { name: name.into(), rgb, tag };
        SynthSpec {
            palette: vec![
                c("urban_block", [220, 50, 47], Tag::Urban),
                c("building", [140, 30, 60], Tag::Urban),
                c("road_major", [250, 180, 30], Tag::Road),
                c("road_minor", [120, 120, 120], Tag::Road),
                c("paddy", [200, 230, 140], Tag::Field),
                c("meadow", [240, 240, 220], Tag::Field),
                c("forest", [60, 140, 70], Tag::Forest),
                c("water", [70, 130, 220], Tag::Water),
            ],
            density_rule: DensityRule {
                intercept: 0.0,
                coefficients: vec![10.0, 9.0, 7.0, 6.0, 3.0, 2.0, 1.0, 0.0],
            },
            tile_size: 1000,
            cells_per_tile: 10,
            cell_size: 5000.0,
            noise_sd: 0.0,
            seed: 0,
            jitter: 0,
            water_cell_fraction: 0.1,
            urbanization: (0.0, 1.0),
            epoch_tag: "2015".into(),
            target_name: "population".into(),
        }
    }
}

/// Minimum pairwise RGB distance between palette colors.
pub const MIN_SEPARATION: f64 = 30.0;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.palette.is_empty() {
            return Err(Error::Config("synth palette is empty".into()));
        }
        for (i, a) in self.palette.iter().enumerate() {
            for b in &self.palette[i + 1..] {
                let d = a
                    .rgb
                    .iter()
                    .zip(&b.rgb)
                    .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if d < MIN_SEPARATION {
                    return Err(Error::Config(format!(
                        "synth colors {} and {} are only {d:.1} apart",
                        a.name, b.name
                    )));
                }
            }
        }
        if self.density_rule.coefficients.len() != self.palette.len() {
            return Err(Error::Config("density_rule needs one coefficient per palette color".into()));
        }
        if self.cells_per_tile == 0 || self.tile_size == 0 || !self.tile_size.is_multiple_of(self.cells_per_tile) {
            return Err(Error::Config("tile_size must be a positive multiple of cells_per_tile".into()));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::Config("noise_sd must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.water_cell_fraction) {
            return Err(Error::Config("water_cell_fraction must be in [0,1]".into()));
        }
        let (lo, hi) = self.urbanization;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config("urbanization range must satisfy 0 <= lo <= hi <= 1".into()));
        }
        if self.cell_size.is_nan() || self.cell_size <= 0.0 {
            return Err(Error::Config("cell_size must be positive".into()));
        }
        Ok(())
    }

    pub fn cell_pixels(&self) -> u32 {
        self.tile_size / self.cells_per_tile
    }

    fn indices_of(&self, tags: &[Tag]) -> Vec<usize> {
        (0..self.palette.len())
            .filter(|&i| tags.contains(&self.palette[i].tag))
            .collect()
    }
}

/// Exact class composition and true target of one generated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTruth {
    pub grid_id: String,
    pub class_counts: Vec<u64>,
    pub log_density: f64,
}

impl CellTruth {
    pub fn shares(&self) -> Vec<f64> {
        let t: u64 = self.class_counts.iter().sum();
        self.class_counts.iter().map(|&c| c as f64 / t as f64).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub tiles: Vec<MapTile>,
    /// Palette index of every pixel, per tile, row-major.
    pub class_maps: Vec<Vec<u8>>,
    pub labels: Vec<GridLabel>,
    pub truth: Vec<CellTruth>,
}

struct Canvas<'a> {
    classes: &'a mut [u8],
    stride: usize,
    x0: usize,
    y0: usize,
    size: usize,
}

impl Canvas<'_> {
    fn set(&mut self, x: usize, y: usize, class: u8) {
        self.classes[(self.y0 + y) * self.stride + self.x0 + x] = class;
    }

    fn fill(&mut self, class: u8) {
        for y in 0..self.size {
            for x in 0..self.size {
                self.set(x, y, class);
            }
        }
    }

    fn rect(&mut self, rng: &mut ChaCha8Rng, class: u8, max_frac: f64) {
        let s = self.size;
        let max = ((s as f64 * max_frac) as usize).max(2);
        let (w, h) = (rng.random_range(1..=max), rng.random_range(1..=max));
        let (x, y) = (rng.random_range(0..s), rng.random_range(0..s));
        for yy in y..(y + h).min(s) {
            for xx in x..(x + w).min(s) {
                self.set(xx, yy, class);
            }
        }
    }

    fn ellipse(&mut self, rng: &mut ChaCha8Rng, class: u8, max_frac: f64) {
        let s = self.size as f64;
        let (cx, cy) = (rng.random::<f64>() * s, rng.random::<f64>() * s);
        let rx = 1.0 + rng.random::<f64>() * s * max_frac / 2.0;
        let ry = 1.0 + rng.random::<f64>() * s * max_frac / 2.0;
        for y in 0..self.size {
            for x in 0..self.size {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    self.set(x, y, class);
                }
            }
        }
    }

    fn stripe(&mut self, rng: &mut ChaCha8Rng, class: u8) {
        let s = self.size;
        let width = rng.random_range(1..=(s / 25).max(2));
        let at = rng.random_range(0..s);
        let horizontal = rng.random::<bool>();
        for a in 0..s {
            for b in at..(at + width).min(s) {
                if horizontal {
                    self.set(a, b, class);
                } else {
                    self.set(b, a, class);
                }
            }
        }
    }
}

fn pick(rng: &mut ChaCha8Rng, from: &[usize]) -> Option<u8> {
    (!from.is_empty()).then(|| from[rng.random_range(0..from.len())] as u8)
}

/// Paint one cell; returns true when the cell is all water.
fn paint_cell(spec: &SynthSpec, canvas: &mut Canvas<'_>, rng: &mut ChaCha8Rng) -> bool {
    let water = spec.indices_of(&[Tag::Water]);
    let urban = spec.indices_of(&[Tag::Urban]);
    let roads = spec.indices_of(&[Tag::Road]);
    let fields = spec.indices_of(&[Tag::Field]);
    let forest = spec.indices_of(&[Tag::Forest]);
    let nature = spec.indices_of(&[Tag::Field, Tag::Forest, Tag::Water]);

    if !water.is_empty() && rng.random::<f64>() < spec.water_cell_fraction {
        canvas.fill(pick(rng, &water).expect("non-empty"));
        return true;
    }
    let (lo, hi) = spec.urbanization;
    let u = lo + (hi - lo) * rng.random::<f64>();

    let background = if u < 0.35 {
        pick(rng, &forest).or_else(|| pick(rng, &fields))
    } else {
        pick(rng, &fields).or_else(|| pick(rng, &forest))
    }
    .unwrap_or(0);
    canvas.fill(background);

    for _ in 0..rng.random_range(0..=3) {
        if let Some(c) = pick(rng, &nature) {
            if rng.random::<bool>() {
                canvas.ellipse(rng, c, 0.5);
            } else {
                canvas.rect(rng, c, 0.4);
            }
        }
    }
    let n_urban = (u * 14.0).round() as usize;
    for _ in 0..n_urban {
        if let Some(c) = pick(rng, &urban) {
            canvas.rect(rng, c, 0.15 + 0.35 * u);
        }
    }
    let n_roads = (u * 6.0).round() as usize + usize::from(rng.random::<f64>() < 0.5);
    for _ in 0..n_roads {
        if let Some(c) = pick(rng, &roads) {
            canvas.stripe(rng, c);
        }
    }
    false
}

fn tile_layout(n_tiles: usize) -> usize {
    (n_tiles as f64).sqrt().ceil().max(1.0) as usize
}

/// Generate `n_tiles` tiles of `cells_per_tile²` cells each.
pub fn generate_corpus(spec: &SynthSpec, n_tiles: usize) -> Result<SynthCorpus> {
    spec.validate()?;
    if n_tiles == 0 {
        return Err(Error::Config("n_tiles must be >= 1".into()));
    }
    let per_row = tile_layout(n_tiles);
    let cpt = spec.cells_per_tile as usize;
    let cell_px = spec.cell_pixels() as usize;
    let pixel_size = spec.cell_size / cell_px as f64;
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Config(e.to_string()))?;

    type TileOut = (MapTile, Vec<u8>, Vec<GridLabel>, Vec<CellTruth>);
    let parts: Vec<Result<TileOut>> = (0..n_tiles)
        .into_par_iter()
        .map(|t| {
            let (tr, tc) = (t / per_row, t % per_row);
            let tile_id = format!("synth_{t:04}");
            let mut rng = seed::rng(seed::derive_seed(spec.seed, "synth", &tile_id));
            let size = spec.tile_size as usize;
            let mut classes = vec![0u8; size * size];
            let mut labels = Vec::with_capacity(cpt * cpt);
            let mut truth = Vec::with_capacity(cpt * cpt);

            for cr in 0..cpt {
                for cc in 0..cpt {
                    let mut canvas = Canvas {
                        classes: &mut classes,
                        stride: size,
                        x0: cc * cell_px,
                        y0: cr * cell_px,
                        size: cell_px,
                    };
                    let all_water = paint_cell(spec, &mut canvas, &mut rng);
                    let mut counts = vec![0u64; spec.palette.len()];
                    for y in 0..cell_px {
                        let row = &classes[(cr * cell_px + y) * size + cc * cell_px..][..cell_px];
                        for &c in row {
                            counts[usize::from(c)] += 1;
                        }
                    }
                    let total = (cell_px * cell_px) as f64;
                    let planted = spec.density_rule.intercept
                        + counts
                            .iter()
                            .zip(&spec.density_rule.coefficients)
                            .map(|(&n, c)| c * n as f64 / total)
                            .sum::<f64>();
                    let log_density = if all_water {
                        0.0
                    } else if spec.noise_sd > 0.0 {
                        (planted + noise.sample(&mut rng)).max(0.0)
                    } else {
                        planted.max(0.0)
                    };
                    let id = grid_id((tr * cpt + cr) as i64, (tc * cpt + cc) as i64);
                    labels.push(GridLabel::new(&id, &spec.target_name, log_density.exp_m1())?);
                    truth.push(CellTruth {
                        grid_id: id,
                        class_counts: counts,
                        log_density,
                    });
                }
            }

            let j = i16::from(spec.jitter);
            let img = RgbImage::from_fn(spec.tile_size, spec.tile_size, |x, y| {
                let base = spec.palette[usize::from(classes[y as usize * size + x as usize])].rgb;
                if j == 0 {
                    Rgb(base)
                } else {
                    Rgb(base.map(|c| (i16::from(c) + rng.random_range(-j..=j)).clamp(0, 255) as u8))
                }
            });
            let gt = GeoTransform::north_up(
                (tc * cpt) as f64 * spec.cell_size,
                -((tr * cpt) as f64) * spec.cell_size,
                pixel_size,
            );
            let tile = MapTile::new(tile_id, img, gt, spec.epoch_tag.clone())?;
            Ok((tile, classes, labels, truth))
        })
        .collect();

    let mut corpus = SynthCorpus {
        tiles: Vec::new(),
        class_maps: Vec::new(),
        labels: Vec::new(),
        truth: Vec::new(),
    };
    for part in parts {
        let (tile, classes, labels, truth) = part?;
        corpus.tiles.push(tile);
        corpus.class_maps.push(classes);
        corpus.labels.extend(labels);
        corpus.truth.extend(truth);
    }
    Ok(corpus)
}

/// Write `tiles/<tile_id>.png` (+ world files), `labels.csv`, `truth.csv`,
/// `landcover.csv` and `synth_spec.json` under `dir`.
pub fn write_corpus(spec: &SynthSpec, corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    let tiles = dir.join("tiles");
    fs::create_dir_all(&tiles).map_err(|e| Error::io(&tiles, e))?;
    for t in &corpus.tiles {
        save_tile(t, &tiles.join(format!("{}.png", t.tile_id)))?;
    }
    write_labels(&dir.join("labels.csv"), &corpus.labels)?;

    let mut w = csv::Writer::from_path(dir.join("truth.csv"))?;
    let mut header = vec!["grid_id".to_string(), "log_density".into()];
    header.extend(spec.palette.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for t in &corpus.truth {
        let mut rec = vec![t.grid_id.clone(), t.log_density.to_string()];
        rec.extend(t.class_counts.iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    let mut w = csv::Writer::from_path(dir.join("landcover.csv"))?;
    w.write_record(["grid_id", "class", "share"])?;
    for t in &corpus.truth {
        let shares = t.shares();
        for tag in [Tag::Urban, Tag::Road, Tag::Field, Tag::Forest, Tag::Water] {
            let s: f64 = spec
                .palette
                .iter()
                .zip(&shares)
                .filter(|(c, _)| c.tag == tag)
                .map(|(_, s)| s)
                .sum();
            if s > 0.0 {
                w.write_record([t.grid_id.clone(), tag.as_str().to_string(), s.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    let spec_path = dir.join("synth_spec.json");
    fs::write(&spec_path, serde_json::to_string_pretty(spec)?).map_err(|e| Error::io(&spec_path, e))
}
