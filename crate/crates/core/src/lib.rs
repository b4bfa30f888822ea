//! Publication-bias detection for diagnostic test accuracy meta-analysis.
//!
//! * [`model`] holds 2×2 tables, effect estimates and test results.
//! * [`measures`] turns tables into univariate accuracy measures.
//! * [`asymmetry`] implements the funnel-plot asymmetry tests.
//! * [`sampler`] simulates meta-analyses from the bivariate logit model,
//!   optionally with publication bias.
//! * [`harness`] runs test batteries over simulation grids and tabulates
//!   rejection rates.
//! * [`io`] reads and writes the CSV and JSON formats used by the CLI.

pub mod asymmetry;
pub mod error;
pub mod harness;
pub mod io;
pub mod measures;
pub mod model;
pub mod sampler;

pub use error::{
    AnalysisError, HarnessError, IoError, MeasureError, ModelError, SamplerError, TestError,
};
pub use model::{
    continuity_correct, validate_dataset, AsymmetryTestResult, CorrectedTable, CorrectionPolicy,
    EffectEstimate, MeasureId, MetaDataset, Sidedness, StudyTable,
};
