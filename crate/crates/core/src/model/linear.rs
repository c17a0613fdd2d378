//! Linear-quadratic regression of the log target on color counts:
//!
//! ```text
//! y_i = Σ_k α_k n_{k,i} + Σ_k β_k n_{k,i}² + γ HHI_i + c + ε_i
//! ```
//!
//! For multi-epoch rows every epoch block contributes its own α, β and γ.

use serde::{Deserialize, Serialize};

use super::linalg;
use crate::error::{Error, Result};
use crate::features::FeatureTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQuadModel {
    pub k_std: usize,
    pub n_epochs: usize,
    /// Linear count coefficients, `k_std` per epoch block.
    pub alpha: Vec<f64>,
    /// Squared count coefficients, `k_std` per epoch block.
    pub beta: Vec<f64>,
    /// HHI coefficient, one per epoch block.
    pub gamma: Vec<f64>,
    pub intercept: f64,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFitReport {
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r2_in_sample: f64,
}

/// Regressor columns of one feature row, intercept excluded.
pub fn design_row(row: &[f64], k_std: usize, n_epochs: usize) -> Vec<f64> {
    let block = k_std + 1;
    let counts = (0..n_epochs).flat_map(|e| row[e * block..e * block + k_std].iter().copied());
    let mut out: Vec<f64> = counts.clone().collect();
    out.extend(counts.map(|n| n * n));
    out.extend((0..n_epochs).map(|e| row[e * block + k_std]));
    out
}

/// Number of regressors excluding the intercept: `2·k·E + E`.
pub fn n_regressors(k_std: usize, n_epochs: usize) -> usize {
    (2 * k_std + 1) * n_epochs
}

impl LinearQuadModel {
    pub fn input_width(&self) -> usize {
        self.n_epochs * (self.k_std + 1)
    }

    pub fn coefficients(&self) -> Vec<f64> {
        let mut c = self.alpha.clone();
        c.extend(&self.beta);
        c.extend(&self.gamma);
        c
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let x = design_row(row, self.k_std, self.n_epochs);
        self.intercept + x.iter().zip(self.coefficients()).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Fit by least squares with an optional ridge penalty.
///
/// Columns are scaled to unit root-mean-square before solving; the penalty is
/// `ridge * trace(ZᵀZ) / p` on the scaled design `Z` and leaves the intercept
/// free. With `ridge == 0` a rank-deficient design is an error.
pub fn fit_linear_quadratic(
    table: &FeatureTable,
    targets: &[f64],
    ridge: f64,
) -> Result<(LinearQuadModel, LinearFitReport)> {
    let (k, e) = (table.k_std, table.epochs.len());
    if table.rows.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows but {} targets",
            table.rows.len(),
            targets.len()
        )));
    }
    if table.is_empty() {
        return Err(Error::InvalidInput("no training rows".into()));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::Config(format!("ridge must be >= 0, got {ridge}")));
    }
    let width = table.width();
    for (row, y) in table.rows.iter().zip(targets) {
        if row.len() != width {
            return Err(Error::InvalidInput(format!("row width {} != {width}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) || !y.is_finite() {
            return Err(Error::InvalidInput("NaN or infinite value in training data".into()));
        }
    }

    let m = table.len();
    let p = n_regressors(k, e);
    let design: Vec<Vec<f64>> = table.rows.iter().map(|r| design_row(r, k, e)).collect();
    let mut cols: Vec<Vec<f64>> = (0..p).map(|j| design.iter().map(|r| r[j]).collect()).collect();
    let scale: Vec<f64> = cols
        .iter()
        .map(|c| {
            let rms = (c.iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt();
            if rms > 0.0 { rms } else { 1.0 }
        })
        .collect();
    for (c, s) in cols.iter_mut().zip(&scale) {
        c.iter_mut().for_each(|v| *v /= s);
    }
    cols.push(vec![1.0; m]);

    let mut rhs = targets.to_vec();
    if ridge > 0.0 {
        let trace: f64 = cols[..p].iter().map(|c| c.iter().map(|v| v * v).sum::<f64>()).sum();
        let lambda = ridge * trace.max(m as f64) / p as f64;
        let root = lambda.sqrt();
        for (j, c) in cols.iter_mut().enumerate() {
            c.extend((0..p).map(|i| if i == j { root } else { 0.0 }));
        }
        rhs.extend(std::iter::repeat_n(0.0, p));
    }

    let z = linalg::lstsq(cols, rhs, 1e-10).map_err(|d| {
        let what = if d.column == p {
            "intercept".to_string()
        } else {
            format!("regressor {}", d.column)
        };
        Error::RankDeficient(format!("{what} is linearly dependent on earlier columns"))
    })?;

    let coef: Vec<f64> = z[..p].iter().zip(&scale).map(|(c, s)| c / s).collect();
    let model = LinearQuadModel {
        k_std: k,
        n_epochs: e,
        alpha: coef[..k * e].to_vec(),
        beta: coef[k * e..2 * k * e].to_vec(),
        gamma: coef[2 * k * e..].to_vec(),
        intercept: z[p],
        ridge,
    };
    if model.coefficients().iter().any(|c| !c.is_finite()) || !model.intercept.is_finite() {
        return Err(Error::Domain("fit produced non-finite coefficients".into()));
    }

    let fitted: Vec<f64> = table.rows.iter().map(|r| model.predict_row(r)).collect();
    let residuals: Vec<f64> = targets.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let mean = targets.iter().sum::<f64>() / m as f64;
    let sst: f64 = targets.iter().map(|y| (y - mean).powi(2)).sum();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let r2_in_sample = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };
    Ok((
        model,
        LinearFitReport {
            fitted,
            residuals,
            r2_in_sample,
        },
    ))
}
