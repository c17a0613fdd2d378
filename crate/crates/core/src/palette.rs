//! Weighted K-means over RGB colors and the two-stage palette reduction.
//!
//! Stage one ("simplification") clusters the pixels of a single cell into
//! `k_local` colors. Stage two ("standardization") clusters the local
//! centroids of every cell into one shared palette of `k_std` colors, which
//! all cells are then re-expressed in.
//!
//! K-means runs on distinct colors weighted by multiplicity, which is exactly
//! equivalent to running it on the expanded pixel multiset but much cheaper.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GridCell;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorPoint {
    pub r: f64,
    pub g: f64,
    pub b: f64,
    /// Pixel multiplicity. On palette centroids this holds the cluster's total mass.
    pub weight: f64,
}

impl ColorPoint {
    pub fn new(r: f64, g: f64, b: f64, weight: f64) -> Self {
        ColorPoint { r, g, b, weight }
    }

    pub fn from_rgb(rgb: [u8; 3], weight: f64) -> Self {
        ColorPoint::new(f64::from(rgb[0]), f64::from(rgb[1]), f64::from(rgb[2]), weight)
    }

    pub fn rgb(&self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    /// Channels rounded to the nearest byte.
    pub fn rgb8(&self) -> [u8; 3] {
        [self.r, self.g, self.b].map(|c| c.round().clamp(0.0, 255.0) as u8)
    }

    pub fn dist2(&self, other: &[f64; 3]) -> f64 {
        dist2(&self.rgb(), other)
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.r
            .total_cmp(&other.r)
            .then(self.g.total_cmp(&other.g))
            .then(self.b.total_cmp(&other.b))
    }
}

#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dr = a[0] - b[0];
    let dg = a[1] - b[1];
    let db = a[2] - b[2];
    dr * dr + dg * dg + db * db
}

/// Index of the nearest centroid in squared RGB distance; ties go to the lowest index.
#[inline]
pub fn nearest(centroids: &[[f64; 3]], p: &[f64; 3]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves by more than this (RGB units).
    pub tol: f64,
    /// Independent k-means++ starts; the lowest-inertia run wins.
    pub restarts: usize,
}

impl KmeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KmeansParams {
            k,
            seed,
            max_iter: 100,
            tol: 1e-4,
            restarts: 5,
        }
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }
}

/// K centroid colors, sorted canonically by (r, g, b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    /// Requested cluster count; `centroids` is shorter only when the input had fewer distinct colors.
    pub k: usize,
    pub seed: u64,
    pub inertia: f64,
    pub centroids: Vec<ColorPoint>,
}

impl Palette {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn centers(&self) -> Vec<[f64; 3]> {
        self.centroids.iter().map(ColorPoint::rgb).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Full output of a K-means run.
#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub palette: Palette,
    /// Cluster of every input point (index into the canonical centroid order).
    pub labels: Vec<usize>,
    /// Inertia after each assignment step, one history per restart.
    pub histories: Vec<Vec<f64>>,
}

/// Weighted K-means with k-means++ seeding and Lloyd iterations.
pub fn kmeans(points: &[ColorPoint], params: &KmeansParams) -> Result<Palette> {
    kmeans_fit(points, params).map(|f| f.palette)
}

pub fn kmeans_fit(points: &[ColorPoint], params: &KmeansParams) -> Result<KmeansFit> {
    if points.is_empty() {
        return Err(Error::InvalidInput("kmeans needs at least one point".into()));
    }
    if params.k == 0 {
        return Err(Error::InvalidInput("kmeans needs k >= 1".into()));
    }
    for p in points {
        let channels_ok = p.rgb().iter().all(|c| c.is_finite() && (0.0..=255.0).contains(c));
        if !channels_ok || !(p.weight.is_finite() && p.weight >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid color point {p:?}")));
        }
    }

    // merge duplicates; zero-weight points do not take part
    let mut distinct: BTreeMap<[u64; 3], f64> = BTreeMap::new();
    for p in points.iter().filter(|p| p.weight > 0.0) {
        *distinct
            .entry([p.r.to_bits(), p.g.to_bits(), p.b.to_bits()])
            .or_default() += p.weight;
    }
    if distinct.is_empty() {
        return Err(Error::InvalidInput("all kmeans weights are zero".into()));
    }
    let mut uniq: Vec<ColorPoint> = distinct
        .into_iter()
        .map(|(bits, w)| {
            ColorPoint::new(
                f64::from_bits(bits[0]),
                f64::from_bits(bits[1]),
                f64::from_bits(bits[2]),
                w,
            )
        })
        .collect();
    uniq.sort_by(ColorPoint::canonical_cmp);
    let xs: Vec<[f64; 3]> = uniq.iter().map(ColorPoint::rgb).collect();
    let ws: Vec<f64> = uniq.iter().map(|p| p.weight).collect();

    let (centers, uniq_labels, inertia, histories) = if params.k >= uniq.len() {
        let labels = (0..uniq.len()).collect();
        (xs.clone(), labels, 0.0, vec![vec![0.0]])
    } else {
        let mut best: Option<(Vec<[f64; 3]>, Vec<usize>, f64)> = None;
        let mut histories = Vec::new();
        for restart in 0..params.restarts.max(1) {
            let mut rng = seed::rng(seed::splitmix64(params.seed ^ (restart as u64).wrapping_mul(0x9e37_79b9)));
            let init = kmeans_pp(&xs, &ws, params.k, &mut rng);
            let (c, l, _, mut hist) = lloyd(&xs, &ws, init, params.max_iter, params.tol);
            let (c, l, inertia) = transfer_refine(&xs, &ws, c, l, &mut hist);
            histories.push(hist);
            if best.as_ref().is_none_or(|b| inertia < b.2) {
                best = Some((c, l, inertia));
            }
        }
        let (c, l, inertia) = best.expect("at least one restart");
        (c, l, inertia, histories)
    };

    // canonical order of centroids
    let k_eff = centers.len();
    let mut mass = vec![0.0; k_eff];
    for (l, w) in uniq_labels.iter().zip(&ws) {
        mass[*l] += w;
    }
    let mut order: Vec<usize> = (0..k_eff).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (centers[a], centers[b]);
        ca[0].total_cmp(&cb[0])
            .then(ca[1].total_cmp(&cb[1]))
            .then(ca[2].total_cmp(&cb[2]))
            .then(a.cmp(&b))
    });
    let mut remap = vec![0; k_eff];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let centroids = order
        .iter()
        .map(|&j| ColorPoint::new(centers[j][0], centers[j][1], centers[j][2], mass[j]))
        .collect();

    let index: HashMap<[u64; 3], usize> = uniq
        .iter()
        .enumerate()
        .map(|(i, p)| ([p.r.to_bits(), p.g.to_bits(), p.b.to_bits()], i))
        .collect();
    let center_list: Vec<[f64; 3]> = order.iter().map(|&j| centers[j]).collect();
    let labels = points
        .iter()
        .map(|p| match index.get(&[p.r.to_bits(), p.g.to_bits(), p.b.to_bits()]) {
            Some(&i) => remap[uniq_labels[i]],
            None => nearest(&center_list, &p.rgb()),
        })
        .collect();

    Ok(KmeansFit {
        palette: Palette {
            k: params.k,
            seed: params.seed,
            inertia,
            centroids,
        },
        labels,
        histories,
    })
}

fn weighted_pick<R: Rng>(scores: &[f64], rng: &mut R) -> usize {
    let total: f64 = scores.iter().sum();
    let mut target = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > 0.0 {
            last_positive = i;
            if target < s {
                return i;
            }
            target -= s;
        }
    }
    last_positive
}

/// k-means++ seeding with point weights: first center drawn proportionally to
/// weight, the rest proportionally to weight times squared distance.
fn kmeans_pp<R: Rng>(xs: &[[f64; 3]], ws: &[f64], k: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let mut centers = Vec::with_capacity(k);
    centers.push(xs[weighted_pick(ws, rng)]);
    let mut d2: Vec<f64> = xs.iter().map(|x| dist2(x, &centers[0])).collect();
    while centers.len() < k {
        let scores: Vec<f64> = d2.iter().zip(ws).map(|(d, w)| d * w).collect();
        let next = xs[weighted_pick(&scores, rng)];
        centers.push(next);
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min(dist2(x, &next));
        }
    }
    centers
}

fn assign(xs: &[[f64; 3]], ws: &[f64], centers: &[[f64; 3]], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for ((x, w), l) in xs.iter().zip(ws).zip(labels.iter_mut()) {
        *l = nearest(centers, x);
        inertia += w * dist2(x, &centers[*l]);
    }
    inertia
}

/// Lloyd iterations. Returns centers, labels, final inertia, and the inertia history.
fn lloyd(
    xs: &[[f64; 3]],
    ws: &[f64],
    mut centers: Vec<[f64; 3]>,
    max_iter: usize,
    tol: f64,
) -> (Vec<[f64; 3]>, Vec<usize>, f64, Vec<f64>) {
    let k = centers.len();
    let mut labels = vec![0; xs.len()];
    let mut inertia = assign(xs, ws, &centers, &mut labels);
    let mut history = vec![inertia];

    for _ in 0..max_iter {
        let mut sums = vec![[0.0f64; 3]; k];
        let mut mass = vec![0.0f64; k];
        for ((x, w), &l) in xs.iter().zip(ws).zip(&labels) {
            sums[l][0] += w * x[0];
            sums[l][1] += w * x[1];
            sums[l][2] += w * x[2];
            mass[l] += w;
        }
        let mut next = centers.clone();
        let mut empty = Vec::new();
        for j in 0..k {
            if mass[j] > 0.0 {
                next[j] = [sums[j][0] / mass[j], sums[j][1] / mass[j], sums[j][2] / mass[j]];
            } else {
                empty.push(j);
            }
        }
        if !empty.is_empty() {
            // reseed each empty cluster at the point farthest from its current centroid
            let mut d2: Vec<f64> = xs
                .iter()
                .zip(&labels)
                .map(|(x, &l)| dist2(x, &next[l]))
                .collect();
            for j in empty {
                let far = d2
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &d)| if d > d2[best] { i } else { best });
                next[j] = xs[far];
                d2[far] = 0.0;
            }
        }

        let shift = centers
            .iter()
            .zip(&next)
            .map(|(a, b)| dist2(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        let updated = assign(xs, ws, &centers, &mut labels);
        debug_assert!(
            updated <= inertia + 1e-9 * inertia.max(1.0),
            "Lloyd inertia increased: {inertia} -> {updated}"
        );
        inertia = updated;
        history.push(inertia);
        if shift < tol {
            break;
        }
    }
    (centers, labels, inertia, history)
}

fn centroids_of(xs: &[[f64; 3]], ws: &[f64], labels: &[usize], k: usize) -> (Vec<[f64; 3]>, Vec<f64>) {
    let mut sums = vec![[0.0f64; 3]; k];
    let mut mass = vec![0.0f64; k];
    for ((x, w), &l) in xs.iter().zip(ws).zip(labels) {
        for c in 0..3 {
            sums[l][c] += w * x[c];
        }
        mass[l] += w;
    }
    let centers = sums
        .iter()
        .zip(&mass)
        .map(|(s, &m)| if m > 0.0 { [s[0] / m, s[1] / m, s[2] / m] } else { [f64::NAN; 3] })
        .collect();
    (centers, mass)
}

fn partition_inertia(xs: &[[f64; 3]], ws: &[f64], labels: &[usize], centers: &[[f64; 3]]) -> f64 {
    xs.iter().zip(ws).zip(labels).map(|((x, w), &l)| w * dist2(x, &centers[l])).sum()
}

/// Single-point transfers after Lloyd has converged: move a point to another
/// cluster whenever that lowers inertia once both centroids are updated.
/// Each accepted move strictly lowers inertia; the final partition is also a
/// Lloyd fixed point.
fn transfer_refine(
    xs: &[[f64; 3]],
    ws: &[f64],
    centers: Vec<[f64; 3]>,
    mut labels: Vec<usize>,
    history: &mut Vec<f64>,
) -> (Vec<[f64; 3]>, Vec<usize>, f64) {
    let k = centers.len();
    let (mut cs, mut mass) = centroids_of(xs, ws, &labels, k);
    if mass.iter().any(|&m| m <= 0.0) {
        let inertia = partition_inertia(xs, ws, &labels, &centers);
        return (centers, labels, inertia);
    }
    let mut inertia = partition_inertia(xs, ws, &labels, &cs);
    for _ in 0..100 * xs.len().max(1) {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, (x, &w)) in xs.iter().zip(ws).enumerate() {
            let a = labels[i];
            if w <= 0.0 || mass[a] - w <= 0.0 {
                continue;
            }
            let leave = mass[a] * w / (mass[a] - w) * dist2(x, &cs[a]);
            for b in (0..k).filter(|&b| b != a) {
                let join = mass[b] * w / (mass[b] + w) * dist2(x, &cs[b]);
                let delta = join - leave;
                if best.is_none_or(|(d, _, _)| delta < d) {
                    best = Some((delta, i, b));
                }
            }
        }
        match best {
            Some((delta, i, b)) if delta < -1e-12 * inertia.max(1.0) => {
                let mut trial = labels.clone();
                trial[i] = b;
                let (tc, tm) = centroids_of(xs, ws, &trial, k);
                let t_inertia = partition_inertia(xs, ws, &trial, &tc);
                if t_inertia >= inertia {
                    break;
                }
                labels = trial;
                cs = tc;
                mass = tm;
                inertia = t_inertia;
                history.push(inertia);
            }
            _ => break,
        }
    }
    (cs, labels, inertia)
}

/// Color histogram of a cell as weighted points in canonical order.
pub fn color_histogram(cell: &GridCell) -> Vec<([u8; 3], u64)> {
    let mut hist: HashMap<[u8; 3], u64> = HashMap::new();
    for p in cell.pixels.pixels() {
        *hist.entry(p.0).or_default() += 1;
    }
    let mut out: Vec<_> = hist.into_iter().collect();
    out.sort_unstable();
    out
}

/// Simplify one cell to at most `k_local` colors.
///
/// The K-means seed is derived from `(seed, grid_id)`. Returns the local
/// palette and the centroid index of every pixel in row-major order.
pub fn simplify_grid(
    cell: &GridCell,
    k_local: usize,
    seed: u64,
    base: &KmeansParams,
) -> Result<(Palette, Vec<u16>)> {
    let hist = color_histogram(cell);
    let points: Vec<ColorPoint> = hist
        .iter()
        .map(|(rgb, n)| ColorPoint::from_rgb(*rgb, *n as f64))
        .collect();
    let params = KmeansParams {
        k: k_local,
        seed: seed::derive_seed(seed, "simplify", &cell.grid_id),
        ..base.clone()
    };
    let fit = kmeans_fit(&points, &params)?;
    let lookup: HashMap<[u8; 3], u16> = hist
        .iter()
        .zip(&fit.labels)
        .map(|((rgb, _), &l)| (*rgb, l as u16))
        .collect();
    let assignment = cell.pixels.pixels().map(|p| lookup[&p.0]).collect();
    Ok((fit.palette, assignment))
}

/// Shared palette built from every cell's local centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardPalette {
    #[serde(flatten)]
    pub palette: Palette,
    /// Number of local centroids that were aggregated.
    pub provenance: usize,
    /// Whether local centroids were weighted by their pixel mass.
    pub weighted: bool,
}

impl StandardPalette {
    pub fn k_std(&self) -> usize {
        self.palette.k
    }

    pub fn centers(&self) -> Vec<[f64; 3]> {
        self.palette.centers()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// The points fed to standardization: every local centroid, weighted by its
/// pixel mass or uniformly.
pub fn aggregate_local_centroids(local: &[Palette], weighted: bool) -> Vec<ColorPoint> {
    local
        .iter()
        .flat_map(|p| p.centroids.iter())
        .map(|c| ColorPoint {
            weight: if weighted { c.weight } else { 1.0 },
            ..*c
        })
        .collect()
}

pub fn build_standard_palette(
    local: &[Palette],
    k_std: usize,
    seed: u64,
    weighted: bool,
    base: &KmeansParams,
) -> Result<StandardPalette> {
    if local.is_empty() {
        return Err(Error::InvalidInput(
            "standardization needs at least one local palette".into(),
        ));
    }
    let points = aggregate_local_centroids(local, weighted);
    let params = KmeansParams {
        k: k_std,
        seed: seed::derive_seed(seed, "standardize", &k_std.to_string()),
        ..base.clone()
    };
    let palette = kmeans(&points, &params)?;
    Ok(StandardPalette {
        palette,
        provenance: points.len(),
        weighted,
    })
}

/// Standardized color index of every pixel in row-major order.
pub fn assign_standard(cell: &GridCell, std: &StandardPalette) -> Vec<u16> {
    let centers = std.centers();
    let mut cache: HashMap<[u8; 3], u16> = HashMap::new();
    cell.pixels
        .pixels()
        .map(|p| {
            *cache.entry(p.0).or_insert_with(|| {
                let x = [f64::from(p.0[0]), f64::from(p.0[1]), f64::from(p.0[2])];
                nearest(&centers, &x) as u16
            })
        })
        .collect()
}
