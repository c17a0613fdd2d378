//! Predictors of the log target from color-count features.

mod gbt;
mod linalg;
mod linear;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;

pub use gbt::{fit_gbt, GbtModel, GbtParams, Node, Tree};
pub use linear::{design_row, fit_linear_quadratic, n_regressors, LinearFitReport, LinearQuadModel};

/// How raw targets map to the modeled scale and back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    /// `ln(raw + 1)`; zero-valued cells stay in the data.
    #[default]
    Log1p,
    /// `ln(raw)` on inhabited cells only; zero-valued cells are dropped.
    LogInhabited,
}

impl TargetTransform {
    pub fn forward(self, raw: f64) -> Option<f64> {
        match self {
            TargetTransform::Log1p => Some(raw.ln_1p()),
            TargetTransform::LogInhabited => (raw > 0.0).then(|| raw.ln()),
        }
    }

    /// Back to raw units, clamped at zero.
    pub fn inverse(self, value_log: f64) -> f64 {
        let raw = match self {
            TargetTransform::Log1p => value_log.exp_m1(),
            TargetTransform::LogInhabited => value_log.exp(),
        };
        // f64::max also maps NaN to 0
        raw.max(0.0)
    }
}

impl std::str::FromStr for TargetTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log1p" => Ok(TargetTransform::Log1p),
            "log_inhabited" => Ok(TargetTransform::LogInhabited),
            other => Err(Error::Config(format!(
                "target_transform must be log1p|log_inhabited, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    LinearQuadratic(LinearQuadModel),
    Gbt(GbtModel),
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            TrainedModel::LinearQuadratic(_) => "linear_quadratic",
            TrainedModel::Gbt(_) => "gbt",
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            TrainedModel::LinearQuadratic(m) => m.input_width(),
            TrainedModel::Gbt(m) => m.n_features,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            TrainedModel::LinearQuadratic(m) => m.predict_row(row),
            TrainedModel::Gbt(m) => m.predict_row(row),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub grid_id: String,
    pub value_log: f64,
    /// Back-transformed and clamped at zero.
    pub value_raw: f64,
}

pub fn predict(model: &TrainedModel, table: &FeatureTable) -> Result<Vec<Prediction>> {
    predict_with(model, table, TargetTransform::Log1p)
}

pub fn predict_with(
    model: &TrainedModel,
    table: &FeatureTable,
    transform: TargetTransform,
) -> Result<Vec<Prediction>> {
    let width = model.input_width();
    if table.width() != width {
        return Err(Error::InvalidInput(format!(
            "model expects {width} features, table has {}",
            table.width()
        )));
    }
    Ok(table
        .grid_ids
        .iter()
        .zip(&table.rows)
        .map(|(id, row)| {
            let value_log = model.predict_row(row);
            Prediction {
                grid_id: id.clone(),
                value_log,
                value_raw: transform.inverse(value_log),
            }
        })
        .collect())
}

/// Inhabited iff the back-transformed prediction exceeds `threshold_raw`.
pub fn classify_inhabited(predictions: &[Prediction], threshold_raw: f64) -> Vec<bool> {
    predictions.iter().map(|p| p.value_raw > threshold_raw).collect()
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["grid_id", "value_log", "value_raw"])?;
    for p in preds {
        w.write_record([p.grid_id.clone(), p.value_log.to_string(), p.value_raw.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad prediction row", path.display())))
        };
        out.push(Prediction {
            grid_id: rec[0].to_string(),
            value_log: parse(1)?,
            value_raw: parse(2)?,
        });
    }
    Ok(out)
}
