use thiserror::Error;

use crate::model::MeasureId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("table has an empty gold-standard group (n1 = {n1}, n2 = {n2})")]
    EmptyGroup { n1: u64, n2: u64 },
    #[error("study {index} has an empty gold-standard group (n1 = {n1}, n2 = {n2})")]
    EmptyGroupInStudy { index: usize, n1: u64, n2: u64 },
    #[error("{k} studies given, at least {min} required")]
    TooFewStudies { k: usize, min: usize },
    #[error("negative cell count {value}")]
    NegativeCell { value: i64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("{measure} needs strictly positive cells; apply a continuity correction first")]
    ZeroCell { measure: MeasureId },
    #[error("{measure} is undefined when an observed proportion is 0 or 1")]
    BoundaryProportion { measure: MeasureId },
    #[error("{measure} has zero standard error")]
    DegenerateSE { measure: MeasureId },
    #[error("{measure} has a zero denominator in its marginals")]
    DegenerateMarginals { measure: MeasureId },
    #[error("study {index}: {source}")]
    Study {
        index: usize,
        #[source]
        source: Box<MeasureError>,
    },
}

impl MeasureError {
    /// The per-study error, without the study index wrapper.
    pub fn kind(&self) -> &MeasureError {
        match self {
            MeasureError::Study { source, .. } => source.kind(),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TestError {
    #[error("{k} studies given, at least {min} required")]
    TooFewStudies { k: usize, min: usize },
    #[error("regression design is singular: the predictor is constant")]
    SingularDesign,
    #[error("all dispersion values are tied")]
    AllTied,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("study {index} has a non-positive or non-finite standard error")]
    InvalidStandardError { index: usize },
    #[error("invalid test configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("covariance matrix is not positive semi-definite")]
    NonPsdCovariance,
    #[error("invalid simulation condition: {0}")]
    InvalidCondition(String),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no results to summarize")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("grid file: {0}")]
    Grid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failure of a single-dataset analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Test(#[from] TestError),
}

impl AnalysisError {
    /// True when the data, not the request, is at fault (too few studies,
    /// degenerate tables and the like).
    pub fn is_statistical(&self) -> bool {
        !matches!(self, AnalysisError::Test(TestError::InvalidConfig(_)))
    }
}
