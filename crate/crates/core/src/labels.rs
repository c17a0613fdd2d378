//! Ground-truth targets for grid cells.
//!
//! Regional totals are spread over grid cells in proportion to overlap area
//! (uniform density within a region). Land-cover shares mark cells that are
//! uninhabited by rule. Training sets are drawn by seeded sampling without
//! replacement after optionally thinning the zero-valued cells.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BBox;
use crate::seed;

pub type Point = (f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct RegionalRecord {
    pub region_id: String,
    pub value: f64,
    /// Simple polygon ring in map units; closing vertex optional.
    pub geometry: Vec<Point>,
}

impl RegionalRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.value.is_finite() && self.value >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "region {}: value must be finite and >= 0",
                self.region_id
            )));
        }
        if !is_simple_polygon(&self.geometry) {
            return Err(Error::InvalidInput(format!(
                "region {}: polygon is self-intersecting",
                self.region_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLabel {
    pub grid_id: String,
    pub target_name: String,
    pub raw_value: f64,
    /// `ln(raw_value + 1)`.
    pub log_value: f64,
    pub is_zero: bool,
}

impl GridLabel {
    pub fn new(grid_id: impl Into<String>, target_name: impl Into<String>, raw: f64) -> Result<Self> {
        let grid_id = grid_id.into();
        if !(raw.is_finite() && raw >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "label for {grid_id} must be finite and >= 0, got {raw}"
            )));
        }
        Ok(GridLabel {
            grid_id,
            target_name: target_name.into(),
            raw_value: raw,
            log_value: raw.ln_1p(),
            is_zero: raw == 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandCoverCell {
    pub grid_id: String,
    pub class_shares: BTreeMap<String, f64>,
}

impl LandCoverCell {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.class_shares.values().sum();
        let in_range = self.class_shares.values().all(|s| (0.0..=1.0).contains(s));
        if !in_range || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "land cover shares of {} must lie in [0,1] and sum to 1 (sum {sum})",
                self.grid_id
            )));
        }
        Ok(())
    }

    /// Share of a class, matched case-insensitively; 0 when absent.
    pub fn share(&self, class: &str) -> f64 {
        self.class_shares
            .iter()
            .filter(|(k, _)| k.eq_ignore_ascii_case(class))
            .map(|(_, v)| *v)
            .sum()
    }
}

/// Uninhabited iff water share exceeds `water_threshold` or savanna share
/// exceeds `savanna_threshold`. Both comparisons are strict.
pub fn landcover_zero_rule(cell: &LandCoverCell, water_threshold: f64, savanna_threshold: f64) -> bool {
    cell.share("water") > water_threshold || cell.share("savanna") > savanna_threshold
}

/// Shoelace area (absolute).
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        twice += x0 * y1 - x1 * y0;
    }
    (twice * 0.5).abs()
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let orient = |p: Point, q: Point, r: Point| (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0 && d3 != 0.0 && d4 != 0.0
}

/// No two non-adjacent edges properly cross.
pub fn is_simple_polygon(poly: &[Point]) -> bool {
    let mut ring = poly.to_vec();
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    let n = ring.len();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Sutherland-Hodgman clip of a polygon against an axis-aligned rectangle.
/// The rectangle is convex, so the clipped area is exact even for concave input.
pub fn clip_to_rect(poly: &[Point], rect: &BBox) -> Vec<Point> {
    let mut out: Vec<Point> = poly.to_vec();
    // (inside test, intersection with the boundary line)
    type Edge = (fn(Point, &BBox) -> bool, fn(Point, Point, &BBox) -> Point);
    let edges: [Edge; 4] = [
        (|p, r| p.0 >= r.min_x, |a, b, r| lerp_x(a, b, r.min_x)),
        (|p, r| p.0 <= r.max_x, |a, b, r| lerp_x(a, b, r.max_x)),
        (|p, r| p.1 >= r.min_y, |a, b, r| lerp_y(a, b, r.min_y)),
        (|p, r| p.1 <= r.max_y, |a, b, r| lerp_y(a, b, r.max_y)),
    ];
    for (inside, cut) in edges {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let mut prev = *input.last().expect("non-empty");
        for &cur in &input {
            match (inside(cur, rect), inside(prev, rect)) {
                (true, true) => out.push(cur),
                (true, false) => {
                    out.push(cut(prev, cur, rect));
                    out.push(cur);
                }
                (false, true) => out.push(cut(prev, cur, rect)),
                (false, false) => {}
            }
            prev = cur;
        }
    }
    out
}

fn lerp_x(a: Point, b: Point, x: f64) -> Point {
    let t = (x - a.0) / (b.0 - a.0);
    (x, a.1 + t * (b.1 - a.1))
}

fn lerp_y(a: Point, b: Point, y: f64) -> Point {
    let t = (y - a.1) / (b.1 - a.1);
    (a.0 + t * (b.0 - a.0), y)
}

/// Spread one region's value over the cells it overlaps, proportionally to overlap area.
///
/// Cells without overlap get no label. A zero-area region is skipped with a warning.
pub fn disaggregate_uniform(
    record: &RegionalRecord,
    cells: &[(String, BBox)],
    target_name: &str,
) -> Result<Vec<GridLabel>> {
    let area = polygon_area(&record.geometry);
    if area <= 0.0 {
        log::warn!("region {} has zero area; skipped", record.region_id);
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (id, bbox) in cells {
        let overlap = polygon_area(&clip_to_rect(&record.geometry, bbox));
        if overlap > 0.0 {
            out.push(GridLabel::new(id.clone(), target_name, record.value * overlap / area)?);
        }
    }
    Ok(out)
}

/// Disaggregate every region and sum contributions per cell. Output follows `cells` order.
pub fn disaggregate_all(
    records: &[RegionalRecord],
    cells: &[(String, BBox)],
    target_name: &str,
) -> Result<Vec<GridLabel>> {
    let mut acc: HashMap<String, f64> = HashMap::new();
    for r in records {
        r.validate()?;
        for l in disaggregate_uniform(r, cells, target_name)? {
            *acc.entry(l.grid_id).or_default() += l.raw_value;
        }
    }
    cells
        .iter()
        .filter_map(|(id, _)| acc.get(id.as_str()).map(|v| (id, *v)))
        .map(|(id, v)| GridLabel::new(id.clone(), target_name, v))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub holdout: Vec<String>,
    /// Zero-valued cells removed by thinning; in neither train nor holdout.
    pub thinned: Vec<String>,
}

/// `round(fraction * n)`, halves away from zero.
pub fn rounded_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Seeded train/hold-out split.
///
/// Zero-valued cells are first thinned to `round(zero_keep_fraction * n_zero)`,
/// then `round(fraction * pool)` cells of the remaining pool go to training.
/// Id lists keep the input order.
pub fn sample_training(
    labels: &[GridLabel],
    fraction: f64,
    zero_keep_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("no labels to sample from".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("train_fraction must be in (0,1], got {fraction}")));
    }
    if !(0.0..=1.0).contains(&zero_keep_fraction) {
        return Err(Error::Config(format!(
            "zero_keep_fraction must be in [0,1], got {zero_keep_fraction}"
        )));
    }

    let zeros: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_zero).collect();
    let mut shuffled = zeros.clone();
    shuffled.shuffle(&mut seed::rng(seed::derive_seed(seed, "sample", "zero-thinning")));
    let keep = rounded_count(zero_keep_fraction, zeros.len());
    let mut dropped = vec![false; labels.len()];
    for &i in &shuffled[keep..] {
        dropped[i] = true;
    }

    let pool: Vec<usize> = (0..labels.len()).filter(|&i| !dropped[i]).collect();
    let mut order = pool.clone();
    order.shuffle(&mut seed::rng(seed::derive_seed(seed, "sample", "split")));
    let n_train = rounded_count(fraction, pool.len());
    let mut in_train = vec![false; labels.len()];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }

    let ids = |pred: &dyn Fn(usize) -> bool| -> Vec<String> {
        (0..labels.len())
            .filter(|&i| pred(i))
            .map(|i| labels[i].grid_id.clone())
            .collect()
    };
    Ok(Split {
        train: ids(&|i| in_train[i]),
        holdout: ids(&|i| !dropped[i] && !in_train[i]),
        thinned: ids(&|i| dropped[i]),
    })
}

pub fn write_labels(path: &Path, labels: &[GridLabel]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["grid_id", "target_name", "raw_value", "log_value", "is_zero"])?;
    for l in labels {
        w.write_record([
            l.grid_id.clone(),
            l.target_name.clone(),
            l.raw_value.to_string(),
            l.log_value.to_string(),
            l.is_zero.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<GridLabel>> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::Format(format!("{}: short label row", path.display())));
        }
        let raw: f64 = rec[2]
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad raw_value {:?}", path.display(), &rec[2])))?;
        out.push(GridLabel::new(&rec[0], &rec[1], raw)?);
    }
    Ok(out)
}

/// Regional values: `region_id,value`.
pub fn read_regional_values(path: &Path) -> Result<Vec<(String, f64)>> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let v = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad value row", path.display())))?;
            Ok((rec[0].to_string(), v))
        })
        .collect()
}

/// Polygon file: one region per line, `region_id x1,y1 x2,y2 ...`; `#` starts a comment.
pub fn parse_polygons(text: &str) -> Result<Vec<(String, Vec<Point>)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().expect("non-empty line").to_string();
        let verts = parts
            .map(|v| {
                let (x, y) = v.split_once(',')?;
                Some((x.parse().ok()?, y.parse().ok()?))
            })
            .collect::<Option<Vec<Point>>>()
            .ok_or_else(|| Error::Format(format!("polygon line {}: bad vertex", n + 1)))?;
        if verts.len() < 3 {
            return Err(Error::Format(format!("polygon line {}: fewer than 3 vertices", n + 1)));
        }
        out.push((id, verts));
    }
    Ok(out)
}

pub fn format_polygons(polys: &[(String, Vec<Point>)]) -> String {
    let mut s = String::new();
    for (id, verts) in polys {
        s.push_str(id);
        for (x, y) in verts {
            s.push_str(&format!(" {x},{y}"));
        }
        s.push('\n');
    }
    s
}

/// Join regional values with polygons by region id.
pub fn read_regions(values: &Path, polygons: &Path) -> Result<Vec<RegionalRecord>> {
    let vals = read_regional_values(values)?;
    if !polygons.is_file() {
        return Err(Error::MissingInput(polygons.to_path_buf()));
    }
    let text = fs::read_to_string(polygons).map_err(|e| Error::io(polygons, e))?;
    let geoms: HashMap<String, Vec<Point>> = parse_polygons(&text)?.into_iter().collect();
    vals.into_iter()
        .map(|(id, value)| {
            let geometry = geoms
                .get(&id)
                .cloned()
                .ok_or_else(|| Error::Join(format!("region {id} has no polygon")))?;
            Ok(RegionalRecord {
                region_id: id,
                value,
                geometry,
            })
        })
        .collect()
}

/// Land cover: `grid_id,class,share`.
pub fn read_landcover(path: &Path) -> Result<Vec<LandCoverCell>> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut by_cell: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let share: f64 = rec
            .get(2)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{}: bad share", path.display())))?;
        *by_cell
            .entry(rec[0].to_string())
            .or_default()
            .entry(rec[1].to_string())
            .or_default() += share;
    }
    by_cell
        .into_iter()
        .map(|(grid_id, class_shares)| {
            let c = LandCoverCell { grid_id, class_shares };
            c.validate()?;
            Ok(c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point> {
        vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    }

    fn lattice(n: i32) -> Vec<(String, BBox)> {
        let mut v = Vec::new();
        for r in 0..n {
            for c in 0..n {
                v.push((
                    format!("r{r}c{c}"),
                    BBox {
                        min_x: f64::from(c),
                        max_x: f64::from(c + 1),
                        min_y: f64::from(n - r - 1),
                        max_y: f64::from(n - r),
                    },
                ));
            }
        }
        v
    }

    #[test]
    fn two_cell_region_splits_evenly() {
        let rec = RegionalRecord { region_id: "a".into(), value: 100.0, geometry: rect(0.0, 0.0, 2.0, 1.0) };
        let labels = disaggregate_uniform(&rec, &lattice(3), "population").unwrap();
        assert_eq!(labels.len(), 2);
        assert!(labels.iter().all(|l| l.raw_value == 50.0));
    }

    #[test]
    fn region_inside_one_cell_goes_entirely_there() {
        let rec = RegionalRecord {
            region_id: "a".into(),
            value: 42.0,
            geometry: vec![(1.2, 1.2), (1.8, 1.3), (1.5, 1.9)],
        };
        let labels = disaggregate_uniform(&rec, &lattice(3), "population").unwrap();
        assert_eq!(labels.len(), 1);
        assert_eq!(labels[0].grid_id, "r1c1");
        assert!((labels[0].raw_value - 42.0).abs() < 1e-12);
    }

    #[test]
    fn zero_area_region_is_skipped() {
        let rec = RegionalRecord {
            region_id: "a".into(),
            value: 5.0,
            geometry: vec![(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)],
        };
        assert!(disaggregate_uniform(&rec, &lattice(3), "p").unwrap().is_empty());
    }

    #[test]
    fn self_intersecting_region_rejected() {
        let bowtie = RegionalRecord {
            region_id: "b".into(),
            value: 1.0,
            geometry: vec![(0.0, 0.0), (2.0, 2.0), (2.0, 0.0), (0.0, 2.0)],
        };
        assert!(bowtie.validate().is_err());
        assert!(disaggregate_all(&[bowtie], &lattice(3), "p").is_err());
    }

    #[test]
    fn overlapping_regions_accumulate() {
        let a = RegionalRecord { region_id: "a".into(), value: 10.0, geometry: rect(0.0, 0.0, 1.0, 1.0) };
        let b = RegionalRecord { region_id: "b".into(), value: 6.0, geometry: rect(0.0, 0.0, 2.0, 1.0) };
        let labels = disaggregate_all(&[a, b], &lattice(3), "p").unwrap();
        let by: HashMap<_, _> = labels.iter().map(|l| (l.grid_id.as_str(), l.raw_value)).collect();
        assert_eq!(by["r2c0"], 13.0);
        assert_eq!(by["r2c1"], 3.0);
    }

    #[test]
    fn zero_rule_is_strict() {
        let mk = |w: f64, s: f64| LandCoverCell {
            grid_id: "g".into(),
            class_shares: [("water".to_string(), w), ("savanna".to_string(), s), ("forest".to_string(), 1.0 - w - s)]
                .into_iter()
                .collect(),
        };
        assert!(landcover_zero_rule(&mk(0.71, 0.0), 0.70, 0.80));
        assert!(!landcover_zero_rule(&mk(0.70, 0.0), 0.70, 0.80));
        assert!(landcover_zero_rule(&mk(0.1, 0.85), 0.70, 0.80));
        assert!(!landcover_zero_rule(&mk(0.0, 0.80), 0.70, 0.80));
        assert!(mk(0.3, 0.5).validate().is_ok());
    }

    #[test]
    fn label_transform_invariants() {
        let l = GridLabel::new("g", "p", 0.0).unwrap();
        assert!(l.is_zero && l.log_value == 0.0);
        let l = GridLabel::new("g", "p", 1047.0).unwrap();
        assert!(!l.is_zero);
        assert_eq!(l.log_value, 1048f64.ln());
        assert!(GridLabel::new("g", "p", -1.0).is_err());
    }

    #[test]
    fn sampling_basic_contract() {
        let labels: Vec<_> = (0..10).map(|i| GridLabel::new(format!("g{i}"), "p", i as f64).unwrap()).collect();
        let s = sample_training(&labels, 1.0, 1.0, 3).unwrap();
        assert_eq!(s.train.len(), 10);
        assert!(s.holdout.is_empty());
        assert!(sample_training(&[], 0.5, 1.0, 3).is_err());
        assert!(sample_training(&labels, 0.0, 1.0, 3).is_err());
        // one zero cell (g0); thinning to 0 drops it
        let s = sample_training(&labels, 0.5, 0.0, 3).unwrap();
        assert_eq!(s.thinned, vec!["g0"]);
        assert_eq!(s.train.len() + s.holdout.len(), 9);
    }

    #[test]
    fn polygon_text_round_trip() {
        let polys = vec![("a".to_string(), rect(0.0, 0.0, 2.5, 1.0))];
        let text = format_polygons(&polys);
        assert_eq!(parse_polygons(&text).unwrap(), polys);
        assert!(parse_polygons("a 0,0 1,1\n").is_err());
        assert!(parse_polygons("a 0,0 x 1,1\n").is_err());
    }
}
