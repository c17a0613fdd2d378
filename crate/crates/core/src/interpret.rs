//! Per-color effects of the linear-quadratic model and coefficient heatmaps.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LinearQuadModel;
use crate::palette::StandardPalette;
use crate::raster::GridCell;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorEffect {
    pub color_index: usize,
    pub centroid_rgb: [u8; 3],
    pub alpha: f64,
    pub beta: f64,
    /// Marginal effect of one more pixel, `alpha + 2 * beta * evaluation_count`.
    pub combined_coefficient: f64,
    /// Count at which the marginal effect is evaluated (training mean).
    pub evaluation_count: f64,
}

/// Marginal effect of each count column at the given mean counts.
///
/// For multi-epoch models the effects of every epoch block are returned in
/// column order; `color_index` is the index within the block.
pub fn combined_effects(
    model: &LinearQuadModel,
    mean_counts: &[f64],
    palette: Option<&StandardPalette>,
) -> Result<Vec<ColorEffect>> {
    if mean_counts.len() != model.alpha.len() {
        return Err(Error::InvalidInput(format!(
            "model has {} count columns, got {} means",
            model.alpha.len(),
            mean_counts.len()
        )));
    }
    let rgb = |j: usize| {
        palette
            .and_then(|p| p.palette.centroids.get(j))
            .map_or([0, 0, 0], |c| c.rgb8())
    };
    Ok(model
        .alpha
        .iter()
        .zip(&model.beta)
        .zip(mean_counts)
        .enumerate()
        .map(|(col, ((&a, &b), &n))| {
            let j = col % model.k_std;
            ColorEffect {
                color_index: j,
                centroid_rgb: rgb(j),
                alpha: a,
                beta: b,
                combined_coefficient: a + 2.0 * b * n,
                evaluation_count: n,
            }
        })
        .collect())
}

/// Column means of the count block(s) of a feature table.
pub fn mean_counts(rows: &[Vec<f64>], k_std: usize, n_epochs: usize) -> Vec<f64> {
    let block = k_std + 1;
    let n = rows.len().max(1) as f64;
    (0..n_epochs)
        .flat_map(|e| (0..k_std).map(move |j| e * block + j))
        .map(|col| rows.iter().map(|r| r[col]).sum::<f64>() / n)
        .collect()
}

/// Symmetric diverging ramp: `t` in [-1, 1], blue at -1, white at 0, red at +1.
/// `ramp(-t)` is `ramp(t)` with red and blue swapped.
pub fn diverging_ramp(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(-1.0, 1.0) } else { 0.0 };
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        [255, fade, fade]
    } else {
        [fade, fade, 255]
    }
}

/// Height of the legend strip appended below a heatmap.
pub fn legend_height(image_height: u32) -> u32 {
    (image_height / 10).max(4)
}

/// Recolor each pixel by its color's combined coefficient.
///
/// The ramp is scaled to the largest absolute effect so sign stays legible.
/// A legend strip running from `-max` (left) to `+max` (right) is appended
/// below the map.
pub fn render_heatmap(
    width: u32,
    height: u32,
    assignment: &[u16],
    effects: &[f64],
) -> Result<RgbImage> {
    if assignment.len() != width as usize * height as usize {
        return Err(Error::InvalidInput(format!(
            "assignment has {} entries for a {width}x{height} cell",
            assignment.len()
        )));
    }
    if let Some(&bad) = assignment.iter().find(|&&i| usize::from(i) >= effects.len()) {
        return Err(Error::InvalidInput(format!("color index {bad} has no effect")));
    }
    let scale = effects.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let colors: Vec<[u8; 3]> = effects
        .iter()
        .map(|&e| diverging_ramp(if scale > 0.0 { e / scale } else { 0.0 }))
        .collect();
    let legend = legend_height(height);
    let mut img = RgbImage::new(width, height + legend);
    for (i, &c) in assignment.iter().enumerate() {
        let (x, y) = (i as u32 % width, i as u32 / width);
        img.put_pixel(x, y, Rgb(colors[usize::from(c)]));
    }
    for x in 0..width {
        let t = if width > 1 {
            2.0 * f64::from(x) / f64::from(width - 1) - 1.0
        } else {
            0.0
        };
        for y in height..height + legend {
            img.put_pixel(x, y, Rgb(diverging_ramp(t)));
        }
    }
    Ok(img)
}

/// Heatmap of one cell from its standardized assignment and per-color effects.
pub fn render_cell_heatmap(cell: &GridCell, assignment: &[u16], effects: &[ColorEffect]) -> Result<RgbImage> {
    let values: Vec<f64> = effects.iter().map(|e| e.combined_coefficient).collect();
    render_heatmap(cell.pixels.width(), cell.pixels.height(), assignment, &values)
}

/// Effects table: `color_index,r,g,b,alpha,beta,combined,mean_count`.
pub fn write_effects(path: &Path, effects: &[ColorEffect]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["color_index", "r", "g", "b", "alpha", "beta", "combined", "mean_count"])?;
    for e in effects {
        w.write_record([
            e.color_index.to_string(),
            e.centroid_rgb[0].to_string(),
            e.centroid_rgb[1].to_string(),
            e.centroid_rgb[2].to_string(),
            e.alpha.to_string(),
            e.beta.to_string(),
            e.combined_coefficient.to_string(),
            e.evaluation_count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
