//! Color counts and the Herfindahl-Hirschman index of standardized cells.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HhiMode {
    /// Sum of squared color shares; comparable across cells of different sizes.
    #[default]
    Shares,
    /// Sum of squared raw counts (scale-dependent, kept for ablations).
    Counts,
}

impl std::str::FromStr for HhiMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shares" => Ok(HhiMode::Shares),
            "counts" => Ok(HhiMode::Counts),
            other => Err(Error::Config(format!("hhi_mode must be shares|counts, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub grid_id: String,
    pub epoch_tag: String,
    /// Pixels per standardized color.
    pub counts: Vec<u64>,
    pub hhi: f64,
    pub total_pixels: u64,
}

impl FeatureVector {
    pub fn new(
        grid_id: impl Into<String>,
        epoch_tag: impl Into<String>,
        counts: Vec<u64>,
        mode: HhiMode,
    ) -> Result<Self> {
        let hhi = compute_hhi_with(&counts, mode)?;
        Ok(FeatureVector {
            grid_id: grid_id.into(),
            epoch_tag: epoch_tag.into(),
            total_pixels: counts.iter().sum(),
            counts,
            hhi,
        })
    }

    pub fn k_std(&self) -> usize {
        self.counts.len()
    }

    /// Model input block: counts followed by HHI.
    pub fn row(&self) -> Vec<f64> {
        let mut row: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        row.push(self.hhi);
        row
    }
}

/// Pixels per standardized color index.
///
/// Panics if an index is `>= k_std`: assignments are produced against a
/// palette of exactly `k_std` colors, so that is a broken invariant.
pub fn count_colors(assignment: &[u16], k_std: usize) -> Vec<u64> {
    let mut counts = vec![0u64; k_std];
    for &i in assignment {
        let i = usize::from(i);
        assert!(i < k_std, "color index {i} out of range for k_std = {k_std}");
        counts[i] += 1;
    }
    counts
}

/// Sum of squared color shares.
pub fn compute_hhi(counts: &[u64]) -> Result<f64> {
    compute_hhi_with(counts, HhiMode::Shares)
}

pub fn compute_hhi_with(counts: &[u64], mode: HhiMode) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Domain("HHI of an all-zero count vector".into()));
    }
    Ok(match mode {
        HhiMode::Shares => {
            let t = total as f64;
            counts.iter().map(|&c| (c as f64 / t).powi(2)).sum()
        }
        HhiMode::Counts => counts.iter().map(|&c| (c as f64).powi(2)).sum(),
    })
}

/// Order epoch tags oldest first: numerically when both parse as numbers, else lexically.
pub fn epoch_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

/// Joint row for growth prediction: both epochs' counts and HHIs, oldest epoch first.
pub fn concat_epochs(a: &FeatureVector, b: &FeatureVector) -> Result<Vec<f64>> {
    if a.grid_id != b.grid_id {
        return Err(Error::Join(format!(
            "grid ids differ: {} vs {}",
            a.grid_id, b.grid_id
        )));
    }
    if a.epoch_tag == b.epoch_tag {
        return Err(Error::Join(format!(
            "both vectors for {} come from epoch {}",
            a.grid_id, a.epoch_tag
        )));
    }
    if a.k_std() != b.k_std() {
        return Err(Error::Join("palette sizes differ between epochs".into()));
    }
    let (old, new) = if epoch_order(&a.epoch_tag, &b.epoch_tag) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let mut row = old.row();
    row.extend(new.row());
    Ok(row)
}

/// Sum count vectors of several grids (e.g. all grids of a region) and recompute HHI.
pub fn aggregate(
    id: impl Into<String>,
    parts: &[&FeatureVector],
    mode: HhiMode,
) -> Result<FeatureVector> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidInput("nothing to aggregate".into()))?;
    let mut counts = vec![0u64; first.k_std()];
    for p in parts {
        if p.k_std() != counts.len() {
            return Err(Error::InvalidInput("palette sizes differ".into()));
        }
        for (c, v) in counts.iter_mut().zip(&p.counts) {
            *c += v;
        }
    }
    FeatureVector::new(id, first.epoch_tag.clone(), counts, mode)
}

/// Model-ready design table. Each row is one block per epoch of
/// `[c0 .. c{k-1}, hhi]`, epochs in `epochs` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub k_std: usize,
    pub epochs: Vec<String>,
    pub grid_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn width(&self) -> usize {
        self.epochs.len() * (self.k_std + 1)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Single-epoch table in the given order.
    pub fn from_vectors(vectors: &[FeatureVector]) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::InvalidInput("empty feature set".into()))?;
        let k_std = first.k_std();
        if vectors.iter().any(|v| v.k_std() != k_std) {
            return Err(Error::InvalidInput("mixed palette sizes in feature set".into()));
        }
        Ok(FeatureTable {
            k_std,
            epochs: vec![first.epoch_tag.clone()],
            grid_ids: vectors.iter().map(|v| v.grid_id.clone()).collect(),
            rows: vectors.iter().map(FeatureVector::row).collect(),
        })
    }

    /// Join two epochs on grid id. Grids present in only one epoch are left
    /// out; their number is returned alongside the table.
    pub fn join_epochs(a: &[FeatureVector], b: &[FeatureVector]) -> Result<(Self, usize)> {
        let (ea, eb) = match (a.first(), b.first()) {
            (Some(x), Some(y)) => (x.epoch_tag.clone(), y.epoch_tag.clone()),
            _ => return Err(Error::InvalidInput("empty feature set".into())),
        };
        let (old, new, e_old, e_new) = if epoch_order(&ea, &eb) == Ordering::Greater {
            (b, a, eb, ea)
        } else {
            (a, b, ea, eb)
        };
        let new_by_id: BTreeMap<&str, &FeatureVector> =
            new.iter().map(|v| (v.grid_id.as_str(), v)).collect();
        let mut grid_ids = Vec::new();
        let mut rows = Vec::new();
        for v in old {
            if let Some(w) = new_by_id.get(v.grid_id.as_str()) {
                rows.push(concat_epochs(v, w)?);
                grid_ids.push(v.grid_id.clone());
            }
        }
        let excluded = old.len() + new.len() - 2 * rows.len();
        Ok((
            FeatureTable {
                k_std: old[0].k_std(),
                epochs: vec![e_old, e_new],
                grid_ids,
                rows,
            },
            excluded,
        ))
    }

    /// Sub-table restricted to `ids`, in that order; ids without a row are skipped.
    pub fn select(&self, ids: &[String]) -> FeatureTable {
        let pos: BTreeMap<&str, usize> = self
            .grid_ids
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        let picked: Vec<usize> = ids.iter().filter_map(|g| pos.get(g.as_str()).copied()).collect();
        FeatureTable {
            k_std: self.k_std,
            epochs: self.epochs.clone(),
            grid_ids: picked.iter().map(|&i| self.grid_ids[i].clone()).collect(),
            rows: picked.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

/// Write the feature store: `grid_id,epoch,total_pixels,c0..c{k-1},hhi`.
pub fn write_features(path: &Path, vectors: &[FeatureVector]) -> Result<()> {
    let k = vectors.first().map_or(0, FeatureVector::k_std);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["grid_id".to_string(), "epoch".into(), "total_pixels".into()];
    header.extend((0..k).map(|j| format!("c{j}")));
    header.push("hhi".into());
    w.write_record(&header)?;
    for v in vectors {
        let mut rec = vec![v.grid_id.clone(), v.epoch_tag.clone(), v.total_pixels.to_string()];
        rec.extend(v.counts.iter().map(u64::to_string));
        rec.push(v.hhi.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureVector>> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let n = header.len();
    if n < 4 || &header[0] != "grid_id" || &header[n - 1] != "hhi" {
        return Err(Error::Format(format!("{}: not a feature table", path.display())));
    }
    let k = n - 4;
    let bad = |what: &str| Error::Format(format!("{}: bad {what}", path.display()));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let counts = (0..k)
            .map(|j| rec[3 + j].parse::<u64>().map_err(|_| bad("count")))
            .collect::<Result<Vec<_>>>()?;
        let total_pixels = rec[2].parse().map_err(|_| bad("total_pixels"))?;
        if counts.iter().sum::<u64>() != total_pixels {
            return Err(bad("row: counts do not sum to total_pixels"));
        }
        out.push(FeatureVector {
            grid_id: rec[0].to_string(),
            epoch_tag: rec[1].to_string(),
            counts,
            hhi: rec[n - 1].parse().map_err(|_| bad("hhi"))?,
            total_pixels,
        });
    }
    Ok(out)
}
