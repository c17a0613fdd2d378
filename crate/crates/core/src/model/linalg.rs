//! Householder QR least squares.

/// Outcome of [`lstsq`] when a column is numerically dependent on earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Deficient {
    pub column: usize,
}

/// Solve `min ||A x - b||` for a tall matrix given as columns.
///
/// `rank_tol` is relative: a column whose residual norm after projecting out
/// the previous columns falls below `rank_tol * its original norm` is treated
/// as dependent.
pub(crate) fn lstsq(mut cols: Vec<Vec<f64>>, mut b: Vec<f64>, rank_tol: f64) -> Result<Vec<f64>, Deficient> {
    let n = cols.len();
    let m = b.len();
    debug_assert!(cols.iter().all(|c| c.len() == m));
    if n > m {
        return Err(Deficient { column: m });
    }
    let norms: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let mut diag = vec![0.0; n];

    for k in 0..n {
        let x = &cols[k][k..];
        let xnorm = norm(x);
        if xnorm <= rank_tol * norms[k] || xnorm == 0.0 {
            return Err(Deficient { column: k });
        }
        let alpha = if x[0] > 0.0 { -xnorm } else { xnorm };
        let mut v: Vec<f64> = x.to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        diag[k] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        for col in cols.iter_mut().skip(k + 1) {
            reflect(&v, vnorm2, &mut col[k..]);
        }
        reflect(&v, vnorm2, &mut b[k..]);
    }

    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= cols[j][i] * x[j];
        }
        x[i] = s / diag[i];
    }
    Ok(x)
}

fn reflect(v: &[f64], vnorm2: f64, y: &mut [f64]) {
    let dot: f64 = v.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
    let f = 2.0 * dot / vnorm2;
    for (yi, vi) in y.iter_mut().zip(v) {
        *yi -= f * vi;
    }
}

fn norm(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * x.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_square_system() {
        // [2 1; 1 3] x = [3; 5] -> x = [0.8, 1.4]
        let x = lstsq(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0], 1e-12).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn least_squares_line() {
        // y = 1 + 2t exactly
        let t = [0.0, 1.0, 2.0, 3.0];
        let x = lstsq(vec![vec![1.0; 4], t.to_vec()], t.iter().map(|v| 1.0 + 2.0 * v).collect(), 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-13 && (x[1] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn detects_dependent_column() {
        let a = vec![1.0, 2.0, 3.0];
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let err = lstsq(vec![a, b], vec![1.0, 1.0, 1.0], 1e-10).unwrap_err();
        assert_eq!(err.column, 1);
    }
}
