//! Map color-composition features and grid-level predictors of economic activity.
//!
//! The pipeline clips georeferenced topographic map tiles into fixed-size
//! grid cells, reduces every cell to a handful of representative colors with
//! K-means, maps all cells onto one shared palette, and counts pixels per
//! shared color. Those counts (plus a Herfindahl-Hirschman concentration
//! index) feed two regressors: a linear-quadratic model whose coefficients are
//! directly interpretable per color, and a gradient-boosted tree ensemble.
//!
//! Module map:
//!
//! * [`raster`]: tiles, world files, grid clipping
//! * [`palette`]: weighted K-means, per-cell simplification, shared palette
//! * [`features`]: color counts, HHI, epoch joins
//! * [`labels`]: uniform disaggregation, land-cover zero rule, sampling
//! * [`model`]: linear-quadratic and boosted-tree regressors
//! * [`eval`]: regression R² and per-class accuracies
//! * [`interpret`]: per-color marginal effects and heatmaps
//! * [`synth`]: synthetic corpora with a planted color/density relationship
//! * [`pipeline`]: file-based stages driven by a [`pipeline::PipelineConfig`]

pub mod error;
pub mod eval;
pub mod features;
pub mod interpret;
pub mod labels;
pub mod model;
pub mod palette;
pub mod pipeline;
pub mod raster;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use eval::EvalReport;
pub use features::{FeatureTable, FeatureVector, HhiMode};
pub use interpret::ColorEffect;
pub use labels::{GridLabel, LandCoverCell, RegionalRecord};
pub use model::{GbtModel, GbtParams, LinearQuadModel, Prediction, TrainedModel};
pub use palette::{ColorPoint, KmeansParams, Palette, StandardPalette};
pub use pipeline::{PipelineConfig, Stage};
pub use raster::{CellFlag, GeoTransform, GridCell, GridSpec, MapTile};
pub use synth::SynthSpec;
