//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use mapcount::palette::ColorPoint;
use mapcount::raster::BBox;

/// Weighted within-cluster sum of squares of one partition.
pub fn partition_inertia(points: &[ColorPoint], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&ColorPoint> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
        let w: f64 = members.iter().map(|p| p.weight).sum();
        if w == 0.0 {
            continue;
        }
        let mean = [
            members.iter().map(|p| p.weight * p.r).sum::<f64>() / w,
            members.iter().map(|p| p.weight * p.g).sum::<f64>() / w,
            members.iter().map(|p| p.weight * p.b).sum::<f64>() / w,
        ];
        total += members
            .iter()
            .map(|p| p.weight * ((p.r - mean[0]).powi(2) + (p.g - mean[1]).powi(2) + (p.b - mean[2]).powi(2)))
            .sum::<f64>();
    }
    total
}

/// Minimum inertia over every partition into at most `k` blocks,
/// enumerated as restricted growth strings.
pub fn exhaustive_kmeans_optimum(points: &[ColorPoint], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    fn rec(i: usize, used: usize, k: usize, labels: &mut Vec<usize>, points: &[ColorPoint], best: &mut f64) {
        if i == labels.len() {
            *best = best.min(partition_inertia(points, labels, k));
            return;
        }
        for c in 0..(used + 1).min(k) {
            labels[i] = c;
            rec(i + 1, used.max(c + 1), k, labels, points, best);
        }
    }
    if n > 0 {
        rec(1, 1, k, &mut labels, points, &mut best);
    }
    best
}

/// Index of the nearest center by brute force; ties go to the lower index.
pub fn brute_nearest(centers: &[[f64; 3]], x: [f64; 3]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in centers.iter().enumerate() {
        let d = (0..3).map(|j| (c[j] - x[j]).powi(2)).sum::<f64>();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Overlap area of a polygon with a rectangle by point sampling on a fine lattice.
pub fn sampled_overlap(poly: &[(f64, f64)], rect: &BBox, steps: usize) -> f64 {
    let (dx, dy) = (rect.width() / steps as f64, rect.height() / steps as f64);
    let mut inside = 0usize;
    for i in 0..steps {
        for j in 0..steps {
            let x = rect.min_x + (i as f64 + 0.5) * dx;
            let y = rect.min_y + (j as f64 + 0.5) * dy;
            if point_in_polygon(poly, x, y) {
                inside += 1;
            }
        }
    }
    inside as f64 * dx * dy
}

pub fn point_in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[(i + n - 1) % n];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
    }
    inside
}

/// Solve the normal equations `XᵀX b = Xᵀy` by Gaussian elimination with partial pivoting.
pub fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * t;
        }
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let f = a[r][col] / a[col][col];
                let pivot = a[col].clone();
                for (v, q) in a[r].iter_mut().zip(&pivot).skip(col) {
                    *v -= f * q;
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

/// Plain Pearson correlation squared.
pub fn pearson_r2(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov * cov / (va * vb)
}
