//! Evaluation: R² of regressing predictions on ground truth, per-class recall.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// R² of the simple OLS fit `predicted = a + b * actual`.
///
/// In the one-regressor case this equals the squared Pearson correlation.
pub fn r2_pred_on_actual(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions vs {} actual values",
            predicted.len(),
            actual.len()
        )));
    }
    let n = predicted.len();
    if n < 3 {
        return Err(Error::InvalidInput("R² needs at least 3 samples".into()));
    }
    if predicted.iter().chain(actual).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in R² input".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(actual), mean(predicted));
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in actual.iter().zip(predicted) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(Error::Domain("actual values have zero variance".into()));
    }
    if syy == 0.0 {
        return Ok(0.0);
    }
    // explained / total sum of squares of the fitted line
    let slope = sxy / sxx;
    let ssr = slope * sxy;
    Ok((ssr / syy).clamp(0.0, 1.0))
}

/// Per-class recall `(uninhabited, inhabited)`; a class absent from the truth gives `None`.
pub fn class_accuracies(pred_inhabited: &[bool], true_inhabited: &[bool]) -> Result<(Option<f64>, Option<f64>)> {
    if pred_inhabited.len() != true_inhabited.len() {
        return Err(Error::InvalidInput("label vectors differ in length".into()));
    }
    let recall = |class: bool| {
        let (mut hit, mut n) = (0usize, 0usize);
        for (p, t) in pred_inhabited.iter().zip(true_inhabited) {
            if *t == class {
                n += 1;
                hit += usize::from(*p == class);
            }
        }
        (n > 0).then(|| hit as f64 / n as f64)
    };
    Ok((recall(false), recall(true)))
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> f64 {
    let n = predicted.len().max(1) as f64;
    (predicted.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target_name: String,
    pub model_kind: String,
    pub n_holdout: usize,
    /// On the modeled (log) scale.
    pub r2_pred_on_actual: f64,
    pub r2_raw: Option<f64>,
    pub rmse_log: f64,
    pub class_accuracy_uninhabited: Option<f64>,
    pub class_accuracy_inhabited: Option<f64>,
}

impl EvalReport {
    /// `predicted_log`/`actual_log` on the modeled scale, `*_raw` back-transformed.
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        target_name: &str,
        model_kind: &str,
        predicted_log: &[f64],
        actual_log: &[f64],
        predicted_raw: &[f64],
        actual_raw: &[f64],
        threshold_raw: f64,
    ) -> Result<Self> {
        let r2 = r2_pred_on_actual(predicted_log, actual_log)?;
        let r2_raw = r2_pred_on_actual(predicted_raw, actual_raw).ok();
        let pred_cls: Vec<bool> = predicted_raw.iter().map(|v| *v > threshold_raw).collect();
        let true_cls: Vec<bool> = actual_raw.iter().map(|v| *v > 0.0).collect();
        let (acc_u, acc_i) = class_accuracies(&pred_cls, &true_cls)?;
        Ok(EvalReport {
            target_name: target_name.to_string(),
            model_kind: model_kind.to_string(),
            n_holdout: predicted_log.len(),
            r2_pred_on_actual: r2,
            r2_raw,
            rmse_log: rmse(predicted_log, actual_log),
            class_accuracy_uninhabited: acc_u,
            class_accuracy_inhabited: acc_i,
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.1}%", 100.0 * x));
        writeln!(f, "[{} / {}]", self.target_name, self.model_kind)?;
        writeln!(f, "  hold-out cells        {}", self.n_holdout)?;
        writeln!(f, "  R² (log scale)        {:.4}", self.r2_pred_on_actual)?;
        writeln!(
            f,
            "  R² (raw scale)        {}",
            self.r2_raw.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
        )?;
        writeln!(f, "  RMSE (log scale)      {:.4}", self.rmse_log)?;
        writeln!(f, "  uninhabited recall    {}", pct(self.class_accuracy_uninhabited))?;
        writeln!(f, "  inhabited recall      {}", pct(self.class_accuracy_inhabited))
    }
}

pub fn write_reports(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "target_name",
        "model_kind",
        "n_holdout",
        "r2_pred_on_actual",
        "r2_raw",
        "rmse_log",
        "class_accuracy_uninhabited",
        "class_accuracy_inhabited",
    ])?;
    for r in reports {
        w.write_record([
            r.target_name.clone(),
            r.model_kind.clone(),
            r.n_holdout.to_string(),
            r.r2_pred_on_actual.to_string(),
            opt(r.r2_raw),
            r.rmse_log.to_string(),
            opt(r.class_accuracy_uninhabited),
            opt(r.class_accuracy_inhabited),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_affine_give_one() {
        let a = [1.0, 2.0, 4.0, 8.0, 3.0];
        assert_eq!(r2_pred_on_actual(&a, &a).unwrap(), 1.0);
        let p: Vec<f64> = a.iter().map(|v| 2.0 * v + 7.0).collect();
        assert!((r2_pred_on_actual(&p, &a).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn five_point_hand_value() {
        // actual 1..5, predicted (2,1,4,3,5): sxy = 8, sxx = syy = 10 -> r² = 0.64
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let p = [2.0, 1.0, 4.0, 3.0, 5.0];
        assert!((r2_pred_on_actual(&p, &a).unwrap() - 0.64).abs() < 1e-15);
    }

    #[test]
    fn r2_errors() {
        assert!(matches!(r2_pred_on_actual(&[1.0, 2.0, 3.0], &[2.0; 3]), Err(Error::Domain(_))));
        assert!(r2_pred_on_actual(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(r2_pred_on_actual(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert_eq!(r2_pred_on_actual(&[1.0; 3], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn accuracies() {
        let t = [false, true, false, true];
        assert_eq!(class_accuracies(&t, &t).unwrap(), (Some(1.0), Some(1.0)));
        assert_eq!(class_accuracies(&[true; 4], &t).unwrap(), (Some(0.0), Some(1.0)));
        assert_eq!(class_accuracies(&[true; 2], &[true; 2]).unwrap(), (None, Some(1.0)));
    }

    #[test]
    fn report_block_mentions_metrics() {
        let a = [0.0, 1.0, 2.0, 3.0];
        let raw: Vec<f64> = a.iter().map(|v: &f64| v.exp_m1()).collect();
        let r = EvalReport::compute("population", "gbt", &a, &a, &raw, &raw, 0.5).unwrap();
        let s = r.to_string();
        assert!(s.contains("R² (log scale)        1.0000"));
        assert_eq!(r.class_accuracy_uninhabited, Some(1.0));
    }
}
