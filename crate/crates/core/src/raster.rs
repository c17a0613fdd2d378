//! Georeferenced map tiles and their partition into lattice-aligned grid cells.
//!
//! A tile is an RGB raster plus an axis-aligned affine geotransform. Cells
//! are squares of a global lattice anchored at [`GridSpec::origin`]; a pixel
//! belongs to the cell that contains its center, so the cells of one tile
//! partition its pixels exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine transform from pixel (col, row) to map coordinates:
/// `x = origin_x + col * pixel_width + row * row_rotation`,
/// `y = origin_y + col * col_rotation + row * pixel_height`.
///
/// The origin is the outer corner of the upper-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub pixel_width: f64,
    pub row_rotation: f64,
    pub origin_y: f64,
    pub col_rotation: f64,
    pub pixel_height: f64,
}

impl GeoTransform {
    /// North-up transform with square pixels of `pixel_size` map units.
    pub fn north_up(origin_x: f64, origin_y: f64, pixel_size: f64) -> Self {
        GeoTransform {
            origin_x,
            pixel_width: pixel_size,
            row_rotation: 0.0,
            origin_y,
            col_rotation: 0.0,
            pixel_height: -pixel_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.origin_x,
            self.pixel_width,
            self.row_rotation,
            self.origin_y,
            self.col_rotation,
            self.pixel_height,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("geotransform has non-finite terms".into()));
        }
        if self.pixel_width <= 0.0 {
            return Err(Error::Config(format!(
                "pixel width must be positive, got {}",
                self.pixel_width
            )));
        }
        if self.pixel_height == 0.0 {
            return Err(Error::Config("pixel height must be nonzero".into()));
        }
        if self.row_rotation != 0.0 || self.col_rotation != 0.0 {
            return Err(Error::Config(
                "rotated geotransforms are not supported; reproject to an axis-aligned grid first"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Parse a 6-line world file. Lines are A (pixel width), D (y term per
    /// column), B (x term per row), E (pixel height), C and F (center of the
    /// upper-left pixel).
    pub fn from_world_file(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.len() != 6 {
            return Err(Error::Config(format!(
                "malformed world file: expected 6 lines, found {}",
                lines.len()
            )));
        }
        let mut v = [0.0f64; 6];
        for (slot, line) in v.iter_mut().zip(&lines) {
            *slot = line.parse().map_err(|_| {
                Error::Config(format!("malformed world file: cannot parse {line:?}"))
            })?;
        }
        let [a, d, b, e, c, f] = v;
        let gt = GeoTransform {
            origin_x: c - 0.5 * a - 0.5 * b,
            pixel_width: a,
            row_rotation: b,
            origin_y: f - 0.5 * d - 0.5 * e,
            col_rotation: d,
            pixel_height: e,
        };
        gt.validate()?;
        Ok(gt)
    }

    pub fn to_world_file(&self) -> String {
        let c = self.origin_x + 0.5 * self.pixel_width + 0.5 * self.row_rotation;
        let f = self.origin_y + 0.5 * self.col_rotation + 0.5 * self.pixel_height;
        format!(
            "{}\n{}\n{}\n{}\n{}\n{}\n",
            self.pixel_width, self.col_rotation, self.row_rotation, self.pixel_height, c, f
        )
    }

    /// Map-unit extent `(min_x, min_y, max_x, max_y)` of a `width` x `height` raster.
    pub fn extent(&self, width: u32, height: u32) -> BBox {
        let x0 = self.origin_x;
        let x1 = self.origin_x + f64::from(width) * self.pixel_width;
        let y0 = self.origin_y;
        let y1 = self.origin_y + f64::from(height) * self.pixel_height;
        BBox {
            min_x: x0.min(x1),
            min_y: y0.min(y1),
            max_x: x0.max(x1),
            max_y: y0.max(y1),
        }
    }
}

/// Axis-aligned rectangle in map units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

#[derive(Debug, Clone)]
pub struct MapTile {
    pub tile_id: String,
    pub pixels: RgbImage,
    pub geotransform: GeoTransform,
    pub epoch_tag: String,
}

impl MapTile {
    pub fn new(
        tile_id: impl Into<String>,
        pixels: RgbImage,
        geotransform: GeoTransform,
        epoch_tag: impl Into<String>,
    ) -> Result<Self> {
        geotransform.validate()?;
        if pixels.width() == 0 || pixels.height() == 0 {
            return Err(Error::Format("raster has zero width or height".into()));
        }
        Ok(MapTile {
            tile_id: tile_id.into(),
            pixels,
            geotransform,
            epoch_tag: epoch_tag.into(),
        })
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

const WORLD_FILE_EXTENSIONS: [&str; 4] = ["pgw", "pngw", "wld", "tfw"];

/// Locate the world file that sits next to `raster`.
pub fn world_file_for(raster: &Path) -> Option<PathBuf> {
    WORLD_FILE_EXTENSIONS
        .iter()
        .map(|ext| raster.with_extension(ext))
        .find(|p| p.is_file())
}

/// Load a lossless RGB raster and its sidecar world file.
pub fn load_tile(path: &Path, epoch_tag: &str) -> Result<MapTile> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let world = world_file_for(path).ok_or_else(|| {
        Error::Config(format!("no world file found next to {}", path.display()))
    })?;
    let text = fs::read_to_string(&world).map_err(|e| Error::io(&world, e))?;
    let geotransform = GeoTransform::from_world_file(&text)?;

    let img = image::open(path)?;
    if img.color() != ColorType::Rgb8 {
        return Err(Error::Format(format!(
            "{}: expected 8-bit RGB raster, found {:?}",
            path.display(),
            img.color()
        )));
    }
    let tile_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("tile")
        .to_string();
    MapTile::new(tile_id, img.into_rgb8(), geotransform, epoch_tag)
}

/// Write `tile` as PNG at `path` plus a `.pgw` world file.
pub fn save_tile(tile: &MapTile, path: &Path) -> Result<()> {
    save_raster(&tile.pixels, &tile.geotransform, path)
}

pub fn save_raster(pixels: &RgbImage, geotransform: &GeoTransform, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    pixels.save_with_format(path, image::ImageFormat::Png)?;
    let world = path.with_extension("pgw");
    fs::write(&world, geotransform.to_world_file()).map_err(|e| Error::io(&world, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cell edge length in map units.
    pub cell_size: f64,
    /// Lattice anchor; cell `(row, col)` has its upper-left corner at
    /// `(origin.0 + col * cell_size, origin.1 - row * cell_size)`.
    pub origin: (f64, f64),
    /// Pixels at each tile edge that unflagged cells may not touch.
    pub exclusion_margin: u32,
    /// Relative deviation from the modal valid-pixel count that marks a cell distorted.
    pub distortion_tolerance: f64,
    /// Fill color left behind by reprojection; such pixels do not count as valid.
    pub nodata: Option<[u8; 3]>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            cell_size: 5000.0,
            origin: (0.0, 0.0),
            exclusion_margin: 0,
            distortion_tolerance: 0.02,
            nodata: None,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::Config(format!(
                "cell_size must be positive, got {}",
                self.cell_size
            )));
        }
        if self.distortion_tolerance.is_nan() || self.distortion_tolerance < 0.0 {
            return Err(Error::Config("distortion_tolerance must be >= 0".into()));
        }
        Ok(())
    }

    fn col_left(&self, col: i64) -> f64 {
        self.origin.0 + col as f64 * self.cell_size
    }

    fn row_top(&self, row: i64) -> f64 {
        self.origin.1 - row as f64 * self.cell_size
    }

    pub fn cell_bbox(&self, row: i64, col: i64) -> BBox {
        BBox {
            min_x: self.col_left(col),
            max_x: self.col_left(col + 1),
            min_y: self.row_top(row + 1),
            max_y: self.row_top(row),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CellFlag {
    Border,
    Distorted,
    Partial,
}

impl fmt::Display for CellFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellFlag::Border => "BORDER",
            CellFlag::Distorted => "DISTORTED",
            CellFlag::Partial => "PARTIAL",
        })
    }
}

impl std::str::FromStr for CellFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "BORDER" => Ok(CellFlag::Border),
            "DISTORTED" => Ok(CellFlag::Distorted),
            "PARTIAL" => Ok(CellFlag::Partial),
            other => Err(Error::Format(format!("unknown cell flag {other:?}"))),
        }
    }
}

pub fn grid_id(row: i64, col: i64) -> String {
    format!("r{row}c{col}")
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub grid_id: String,
    pub row: i64,
    pub col: i64,
    pub bbox: BBox,
    pub pixels: RgbImage,
    /// Upper-left pixel of `pixels` within the source tile.
    pub pixel_offset: (u32, u32),
    /// Geotransform of `pixels` on their own.
    pub geotransform: GeoTransform,
    pub tile_id: String,
    pub epoch_tag: String,
    pub flags: BTreeSet<CellFlag>,
    /// Pixels that are not `nodata`.
    pub valid_pixels: u64,
}

impl GridCell {
    /// Unflagged cells are the only ones that feed feature extraction.
    pub fn is_usable(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn flag_string(&self) -> String {
        self.flags
            .iter()
            .map(|f| f.to_string())
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Build an unflagged cell directly from a raster, e.g. one written by the clip stage.
    pub fn from_tile(tile: MapTile, spec: &GridSpec, grid_id: impl Into<String>) -> Self {
        let (row, col) = lattice_index_of(&tile.geotransform, spec);
        let valid = count_valid(&tile.pixels, spec.nodata);
        let bbox = tile.geotransform.extent(tile.width(), tile.height());
        GridCell {
            grid_id: grid_id.into(),
            row,
            col,
            bbox,
            pixels: tile.pixels,
            pixel_offset: (0, 0),
            geotransform: tile.geotransform,
            tile_id: tile.tile_id,
            epoch_tag: tile.epoch_tag,
            flags: BTreeSet::new(),
            valid_pixels: valid,
        }
    }
}

fn lattice_index_of(gt: &GeoTransform, spec: &GridSpec) -> (i64, i64) {
    let cx = gt.origin_x + 0.5 * gt.pixel_width;
    let cy = gt.origin_y + 0.5 * gt.pixel_height;
    let col = ((cx - spec.origin.0) / spec.cell_size).floor() as i64;
    let row = ((spec.origin.1 - cy) / spec.cell_size).floor() as i64;
    (row, col)
}

fn count_valid(pixels: &RgbImage, nodata: Option<[u8; 3]>) -> u64 {
    match nodata {
        None => pixels.width() as u64 * pixels.height() as u64,
        Some(nd) => pixels.pixels().filter(|p| p.0 != nd).count() as u64,
    }
}

/// Half-open pixel index range along one axis whose pixel centers fall in
/// `[lo, hi)` of map coordinates, before clamping to the raster.
fn pixel_span(lo: f64, hi: f64, origin: f64, step: f64) -> (i64, i64) {
    if step > 0.0 {
        // center(i) = origin + (i + 0.5) * step; lo <= center < hi
        let start = ((lo - origin) / step - 0.5).ceil() as i64;
        let end = ((hi - origin) / step - 0.5).ceil() as i64;
        (start, end)
    } else {
        // decreasing coordinate: lo <= center < hi  <=>  (hi-origin)/step - 0.5 < i <= (lo-origin)/step - 0.5
        let start = ((hi - origin) / step - 0.5).floor() as i64 + 1;
        let end = ((lo - origin) / step - 0.5).floor() as i64 + 1;
        (start, end)
    }
}

fn floor_index(v: f64) -> i64 {
    let r = v.round();
    if (v - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as i64
    } else {
        v.floor() as i64
    }
}

fn ceil_index(v: f64) -> i64 {
    let r = v.round();
    if (v - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as i64
    } else {
        v.ceil() as i64
    }
}

/// Clip a tile into lattice cells.
///
/// Cells that extend past the tile carry `PARTIAL` and `BORDER`; cells that
/// reach into the exclusion margin carry `BORDER`; cells whose valid-pixel
/// count deviates from the modal count by more than the tolerance carry
/// `DISTORTED`. All cells are returned sorted by (row, col); callers filter
/// with [`GridCell::is_usable`].
pub fn clip_grids(tile: &MapTile, spec: &GridSpec) -> Result<Vec<GridCell>> {
    spec.validate()?;
    tile.geotransform.validate()?;
    let gt = &tile.geotransform;
    let (w, h) = (i64::from(tile.width()), i64::from(tile.height()));
    let ext = gt.extent(tile.width(), tile.height());
    let cs = spec.cell_size;

    let col_lo = floor_index((ext.min_x - spec.origin.0) / cs);
    let col_hi = ceil_index((ext.max_x - spec.origin.0) / cs);
    let row_lo = floor_index((spec.origin.1 - ext.max_y) / cs);
    let row_hi = ceil_index((spec.origin.1 - ext.min_y) / cs);

    let margin = i64::from(spec.exclusion_margin);
    let mut cells = Vec::new();
    for row in row_lo..row_hi {
        for col in col_lo..col_hi {
            let bbox = spec.cell_bbox(row, col);
            let (c0, c1) = pixel_span(bbox.min_x, bbox.max_x, gt.origin_x, gt.pixel_width);
            let (r0, r1) = pixel_span(bbox.min_y, bbox.max_y, gt.origin_y, gt.pixel_height);
            let (cc0, cc1) = (c0.clamp(0, w), c1.clamp(0, w));
            let (rc0, rc1) = (r0.clamp(0, h), r1.clamp(0, h));
            if cc1 <= cc0 || rc1 <= rc0 {
                continue;
            }

            let mut flags = BTreeSet::new();
            if (cc0, cc1, rc0, rc1) != (c0, c1, r0, r1) {
                flags.insert(CellFlag::Partial);
                flags.insert(CellFlag::Border);
            } else if cc0 < margin || rc0 < margin || cc1 > w - margin || rc1 > h - margin {
                flags.insert(CellFlag::Border);
            }

            let (x0, y0) = (cc0 as u32, rc0 as u32);
            let (cw, ch) = ((cc1 - cc0) as u32, (rc1 - rc0) as u32);
            let pixels = image::imageops::crop_imm(&tile.pixels, x0, y0, cw, ch).to_image();
            let geotransform = GeoTransform {
                origin_x: gt.origin_x + f64::from(x0) * gt.pixel_width,
                origin_y: gt.origin_y + f64::from(y0) * gt.pixel_height,
                ..*gt
            };
            let valid_pixels = count_valid(&pixels, spec.nodata);
            cells.push(GridCell {
                grid_id: grid_id(row, col),
                row,
                col,
                bbox,
                pixels,
                pixel_offset: (x0, y0),
                geotransform,
                tile_id: tile.tile_id.clone(),
                epoch_tag: tile.epoch_tag.clone(),
                flags,
                valid_pixels,
            });
        }
    }

    flag_distorted(&mut cells, spec.distortion_tolerance);
    Ok(cells)
}

fn flag_distorted(cells: &mut [GridCell], tolerance: f64) {
    let mut freq: BTreeMap<u64, usize> = BTreeMap::new();
    for c in cells.iter().filter(|c| !c.flags.contains(&CellFlag::Partial)) {
        *freq.entry(c.valid_pixels).or_default() += 1;
    }
    // most frequent count; ties go to the larger count
    let Some(mode) = freq
        .iter()
        .max_by_key(|(count, n)| (**n, **count))
        .map(|(count, _)| *count)
    else {
        return;
    };
    let limit = tolerance * mode as f64;
    for c in cells.iter_mut().filter(|c| !c.flags.contains(&CellFlag::Partial)) {
        if (c.valid_pixels as f64 - mode as f64).abs() > limit {
            c.flags.insert(CellFlag::Distorted);
        }
    }
}

/// One manifest row per clipped cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub grid_id: String,
    pub epoch: String,
    pub tile_id: String,
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
    pub flags: String,
    pub pixels: u64,
}

impl From<&GridCell> for ManifestRow {
    fn from(c: &GridCell) -> Self {
        ManifestRow {
            grid_id: c.grid_id.clone(),
            epoch: c.epoch_tag.clone(),
            tile_id: c.tile_id.clone(),
            min_x: c.bbox.min_x,
            min_y: c.bbox.min_y,
            max_x: c.bbox.max_x,
            max_y: c.bbox.max_y,
            flags: c.flag_string(),
            pixels: c.valid_pixels,
        }
    }
}

impl ManifestRow {
    pub fn bbox(&self) -> BBox {
        BBox {
            min_x: self.min_x,
            min_y: self.min_y,
            max_x: self.max_x,
            max_y: self.max_y,
        }
    }

    pub fn is_usable(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Manifest table: `grid_id,epoch,tile_id,min_x,min_y,max_x,max_y,flags,pixels`.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["grid_id", "epoch", "tile_id", "min_x", "min_y", "max_x", "max_y", "flags", "pixels"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?)
}

/// File name of a cell raster: `<epoch>_<grid_id>.png`.
pub fn cell_file_name(epoch: &str, grid_id: &str) -> String {
    format!("{epoch}_{grid_id}.png")
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn tile(w: u32, h: u32, pixel: f64) -> MapTile {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
        MapTile::new("t", img, GeoTransform::north_up(0.0, 0.0, pixel), "2015").unwrap()
    }

    fn spec(cell: f64) -> GridSpec {
        GridSpec {
            cell_size: cell,
            ..GridSpec::default()
        }
    }

    #[test]
    fn world_file_parses_pixel_width() {
        let gt = GeoTransform::from_world_file("30.0\n0\n0\n-30.0\n15.0\n-15.0\n").unwrap();
        assert_eq!(gt.pixel_width, 30.0);
        assert_eq!(gt.pixel_height, -30.0);
        assert_eq!(gt.origin_x, 0.0);
        assert_eq!(gt.origin_y, 0.0);
    }

    #[test]
    fn world_file_with_five_lines_is_malformed() {
        let err = GeoTransform::from_world_file("30\n0\n0\n-30\n0\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("malformed world file"));
    }

    #[test]
    fn world_file_rejects_garbage_and_rotation() {
        assert!(GeoTransform::from_world_file("a\n0\n0\n-30\n0\n0\n").is_err());
        assert!(GeoTransform::from_world_file("30\n1\n0\n-30\n0\n0\n").is_err());
        assert!(GeoTransform::from_world_file("-30\n0\n0\n-30\n0\n0\n").is_err());
        assert!(GeoTransform::from_world_file("30\n0\n0\n0\n0\n0\n").is_err());
    }

    #[test]
    fn world_file_round_trip() {
        let gt = GeoTransform::north_up(1000.0, 2000.0, 50.0);
        let back = GeoTransform::from_world_file(&gt.to_world_file()).unwrap();
        assert_eq!(gt, back);
    }

    #[test]
    fn single_cell_tile_yields_one_usable_cell() {
        // 1200 px at 5000/1200 m per pixel: one 5 km cell
        let t = tile(1200, 1200, 5000.0 / 1200.0);
        let cells = clip_grids(&t, &spec(5000.0)).unwrap();
        assert_eq!(cells.len(), 1);
        assert!(cells[0].is_usable());
        assert_eq!(cells[0].pixels.dimensions(), (1200, 1200));
    }

    #[test]
    fn half_cell_tile_has_no_usable_cells() {
        let t = tile(50, 100, 50.0);
        let cells = clip_grids(&t, &spec(5000.0)).unwrap();
        assert!(!cells.is_empty());
        assert!(cells.iter().all(|c| !c.is_usable()));
        assert!(cells.iter().all(|c| c.flags.contains(&CellFlag::Partial)));
    }

    #[test]
    fn two_by_two_tile_splits_by_index_arithmetic() {
        let t = tile(200, 200, 50.0);
        let cells = clip_grids(&t, &spec(5000.0)).unwrap();
        assert_eq!(cells.len(), 4);
        let expected = [("r0c0", 0, 0), ("r0c1", 100, 0), ("r1c0", 0, 100), ("r1c1", 100, 100)];
        for (cell, (id, x0, y0)) in cells.iter().zip(expected) {
            assert!(cell.is_usable());
            assert_eq!(cell.grid_id, id);
            assert_eq!(cell.pixel_offset, (x0, y0));
            for y in 0..100 {
                for x in 0..100 {
                    assert_eq!(cell.pixels.get_pixel(x, y), t.pixels.get_pixel(x0 + x, y0 + y));
                }
            }
        }
    }

    #[test]
    fn margin_flags_edge_cells() {
        let t = tile(300, 300, 50.0);
        let mut s = spec(5000.0);
        s.exclusion_margin = 1;
        let cells = clip_grids(&t, &s).unwrap();
        let usable: Vec<_> = cells.iter().filter(|c| c.is_usable()).map(|c| &c.grid_id).collect();
        assert_eq!(usable, vec!["r1c1"]);
    }

    #[test]
    fn offset_lattice_produces_partial_cells() {
        let img = RgbImage::new(200, 200);
        let t = MapTile::new("t", img, GeoTransform::north_up(2500.0, 0.0, 50.0), "x").unwrap();
        let cells = clip_grids(&t, &spec(5000.0)).unwrap();
        // cols -> 0,1,2 (middle one complete), rows 0,1
        assert_eq!(cells.len(), 6);
        let usable: Vec<_> = cells.iter().filter(|c| c.is_usable()).map(|c| &c.grid_id).collect();
        assert_eq!(usable, vec!["r0c1", "r1c1"]);
        let total: u64 = cells.iter().map(|c| c.valid_pixels).sum();
        assert_eq!(total, 200 * 200);
    }

    #[test]
    fn nodata_gaps_flag_distortion() {
        let mut img = RgbImage::from_pixel(300, 100, Rgb([10, 200, 10]));
        for y in 0..100 {
            for x in 200..220 {
                img.put_pixel(x, y, Rgb([0, 0, 0]));
            }
        }
        let t = MapTile::new("t", img, GeoTransform::north_up(0.0, 0.0, 50.0), "x").unwrap();
        let mut s = spec(5000.0);
        s.nodata = Some([0, 0, 0]);
        let cells = clip_grids(&t, &s).unwrap();
        let flagged: Vec<_> = cells
            .iter()
            .filter(|c| c.flags.contains(&CellFlag::Distorted))
            .map(|c| c.grid_id.as_str())
            .collect();
        assert_eq!(flagged, vec!["r0c2"]);
    }

    #[test]
    fn south_up_tiles_partition_too() {
        let img = RgbImage::new(100, 200);
        let gt = GeoTransform {
            pixel_height: 50.0,
            ..GeoTransform::north_up(0.0, -10000.0, 50.0)
        };
        let t = MapTile::new("t", img, gt, "x").unwrap();
        let cells = clip_grids(&t, &spec(5000.0)).unwrap();
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| c.is_usable() && c.valid_pixels == 100 * 100));
    }

    #[test]
    fn cell_round_trips_through_lattice_index() {
        let t = tile(200, 200, 50.0);
        let s = spec(5000.0);
        let cells = clip_grids(&t, &s).unwrap();
        for c in cells {
            let tile = MapTile::new("c", c.pixels.clone(), c.geotransform, "e").unwrap();
            let again = GridCell::from_tile(tile, &s, c.grid_id.clone());
            assert_eq!((again.row, again.col), (c.row, c.col));
            assert_eq!(again.bbox, c.bbox);
        }
    }
}
