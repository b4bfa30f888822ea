//! Shared vocabulary: diagnostic 2×2 tables, effect estimates, test results
//! and the dataset container consumed by every other module.

use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Smallest number of studies any asymmetry test accepts.
pub const MIN_STUDIES: usize = 3;

/// One diagnostic study as a 2×2 table against a perfect gold standard.
///
/// Rows are gold-standard status (diseased / healthy), columns are index test
/// outcome (positive / negative):
///
/// ```text
///              test +   test -
/// diseased       x        w      n1
/// healthy        y        z      n2
///                m1       m2     N
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StudyTable {
    /// True positives.
    pub x: u64,
    /// False negatives.
    pub w: u64,
    /// False positives.
    pub y: u64,
    /// True negatives.
    pub z: u64,
}

impl StudyTable {
    /// Builds a table, rejecting an empty diseased or healthy group.
    pub fn new(x: u64, w: u64, y: u64, z: u64) -> Result<Self, ModelError> {
        let table = Self { x, w, y, z };
        table.check()?;
        Ok(table)
    }

    /// Builds a table from signed counts as read from external data.
    pub fn from_signed(x: i64, w: i64, y: i64, z: i64) -> Result<Self, ModelError> {
        let cell = |v: i64| u64::try_from(v).map_err(|_| ModelError::NegativeCell { value: v });
        Self::new(cell(x)?, cell(w)?, cell(y)?, cell(z)?)
    }

    fn check(&self) -> Result<(), ModelError> {
        if self.n1() == 0 || self.n2() == 0 {
            return Err(ModelError::EmptyGroup {
                n1: self.n1(),
                n2: self.n2(),
            });
        }
        Ok(())
    }

    pub fn n1(&self) -> u64 {
        self.x + self.w
    }

    pub fn n2(&self) -> u64 {
        self.y + self.z
    }

    pub fn m1(&self) -> u64 {
        self.x + self.y
    }

    pub fn m2(&self) -> u64 {
        self.w + self.z
    }

    pub fn total(&self) -> u64 {
        self.n1() + self.n2()
    }

    pub fn has_zero_cell(&self) -> bool {
        self.x == 0 || self.w == 0 || self.y == 0 || self.z == 0
    }

    /// Observed sensitivity x / n1.
    pub fn sensitivity(&self) -> f64 {
        self.x as f64 / self.n1() as f64
    }

    /// Observed specificity z / n2.
    pub fn specificity(&self) -> f64 {
        self.z as f64 / self.n2() as f64
    }

    /// Observed Youden index on the raw counts, used to rank studies for selection.
    pub fn observed_youden(&self) -> f64 {
        self.sensitivity() + self.specificity() - 1.0
    }
}

/// When a continuity correction is added to the cells of a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum CorrectionPolicy {
    /// Add 0.5 to all four cells if any of them is zero.
    #[default]
    HalfIfAnyZero,
    Never,
    /// Add 0.5 to every cell of every table.
    Always,
}

impl CorrectionPolicy {
    pub fn token(self) -> &'static str {
        match self {
            CorrectionPolicy::HalfIfAnyZero => "half",
            CorrectionPolicy::Never => "never",
            CorrectionPolicy::Always => "always",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        [CorrectionPolicy::HalfIfAnyZero, CorrectionPolicy::Never, CorrectionPolicy::Always]
            .into_iter()
            .find(|p| p.token() == s)
    }
}

/// A 2×2 table after the continuity-correction step, with real-valued cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedTable {
    pub x: f64,
    pub w: f64,
    pub y: f64,
    pub z: f64,
    pub correction_applied: bool,
    /// The raw counts the cells came from.
    pub source: StudyTable,
}

impl CorrectedTable {
    pub fn n1(&self) -> f64 {
        self.x + self.w
    }

    pub fn n2(&self) -> f64 {
        self.y + self.z
    }

    pub fn m1(&self) -> f64 {
        self.x + self.y
    }

    pub fn m2(&self) -> f64 {
        self.w + self.z
    }

    pub fn total(&self) -> f64 {
        self.n1() + self.n2()
    }

    pub(crate) fn has_zero_cell(&self) -> bool {
        self.x == 0.0 || self.w == 0.0 || self.y == 0.0 || self.z == 0.0
    }
}

/// Applies the continuity-correction policy to one table.
pub fn continuity_correct(table: &StudyTable, policy: CorrectionPolicy) -> CorrectedTable {
    let fire = match policy {
        CorrectionPolicy::HalfIfAnyZero => table.has_zero_cell(),
        CorrectionPolicy::Never => false,
        CorrectionPolicy::Always => true,
    };
    let add = if fire { 0.5 } else { 0.0 };
    CorrectedTable {
        x: table.x as f64 + add,
        w: table.w as f64 + add,
        y: table.y as f64 + add,
        z: table.z as f64 + add,
        correction_applied: fire,
        source: *table,
    }
}

impl CorrectedTable {
    /// Re-applies the policy to an already corrected table. A table is
    /// corrected at most once.
    pub fn recorrect(&self, policy: CorrectionPolicy) -> CorrectedTable {
        let fire = match policy {
            CorrectionPolicy::HalfIfAnyZero => self.has_zero_cell(),
            CorrectionPolicy::Never => false,
            CorrectionPolicy::Always => !self.correction_applied,
        };
        if fire {
            CorrectedTable {
                x: self.x + 0.5,
                w: self.w + 0.5,
                y: self.y + 0.5,
                z: self.z + 0.5,
                correction_applied: true,
                source: self.source,
            }
        } else {
            *self
        }
    }
}

/// Univariate measure of diagnostic accuracy. For all four, larger values
/// mean a more accurate test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeasureId {
    /// Log diagnostic odds ratio.
    LnDor,
    /// Negated log of the Lehmann ROC parameter.
    NegLnTheta,
    Youden,
    Kappa,
}

impl MeasureId {
    pub const ALL: [MeasureId; 4] = [
        MeasureId::LnDor,
        MeasureId::NegLnTheta,
        MeasureId::Youden,
        MeasureId::Kappa,
    ];

    /// Lower-case token used on the command line and in result files.
    pub fn token(self) -> &'static str {
        match self {
            MeasureId::LnDor => "lndor",
            MeasureId::NegLnTheta => "lntheta",
            MeasureId::Youden => "youden",
            MeasureId::Kappa => "kappa",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        MeasureId::ALL.into_iter().find(|m| m.token() == s)
    }

    /// Label used in test short forms such as `T(lnDOR,SE,R)`.
    pub fn short(self) -> &'static str {
        match self {
            MeasureId::LnDor => "lnDOR",
            MeasureId::NegLnTheta => "-lnTheta",
            MeasureId::Youden => "Y",
            MeasureId::Kappa => "K",
        }
    }
}

impl fmt::Display for MeasureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

/// One study's effect on a univariate scale together with the size
/// information the asymmetry tests use as precision axes or weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub measure: MeasureId,
    pub value: f64,
    pub se: f64,
    /// Effective sample size 4·n1·n2/(n1+n2) of the raw table.
    pub ess: f64,
    /// Total sample size of the raw table.
    pub n: u64,
    /// m1·m2/N on the corrected table; the mass weight of the Peters regression.
    pub mass: f64,
}

impl EffectEstimate {
    pub fn variance(&self) -> f64 {
        self.se * self.se
    }

    /// Builds an estimate from bare (value, se, N) triples, treating the study
    /// as balanced so ESS = N. Handy for tests and for effect-level input.
    pub fn from_value_se(measure: MeasureId, value: f64, se: f64, n: u64) -> Self {
        Self {
            measure,
            value,
            se,
            ess: n as f64,
            n,
            mass: n as f64 / 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Sidedness {
    #[default]
    OneSided,
    TwoSided,
}

impl Sidedness {
    pub fn token(self) -> &'static str {
        match self {
            Sidedness::OneSided => "one",
            Sidedness::TwoSided => "two",
        }
    }
}

/// Outcome of a funnel-plot asymmetry test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymmetryTestResult {
    pub test_id: String,
    pub statistic: f64,
    pub p_value: f64,
    pub sidedness: Sidedness,
    pub alpha: f64,
    pub reject: bool,
    /// Estimated number of suppressed studies (trim and fill only).
    pub k0: Option<usize>,
    /// Pooled effect the trim-and-fill iteration converged to.
    pub pooled_effect: Option<f64>,
    pub notes: Vec<String>,
}

impl AsymmetryTestResult {
    pub(crate) fn new(
        test_id: String,
        statistic: f64,
        p_value: f64,
        sidedness: Sidedness,
        alpha: f64,
    ) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            test_id,
            statistic,
            p_value,
            sidedness,
            alpha,
            reject: p_value <= alpha,
            k0: None,
            pooled_effect: None,
            notes: Vec::new(),
        }
    }
}

/// An ordered collection of studies making up one meta-analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaDataset {
    pub studies: Vec<StudyTable>,
    /// Identifier per study, parallel to `studies`.
    pub study_ids: Vec<String>,
    pub label: String,
}

impl MetaDataset {
    /// Wraps tables with ids `1..=k`.
    pub fn new(studies: Vec<StudyTable>, label: impl Into<String>) -> Self {
        let study_ids = (1..=studies.len()).map(|i| i.to_string()).collect();
        Self {
            studies,
            study_ids,
            label: label.into(),
        }
    }

    pub fn with_ids(
        studies: Vec<StudyTable>,
        study_ids: Vec<String>,
        label: impl Into<String>,
    ) -> Self {
        assert_eq!(studies.len(), study_ids.len(), "one id per study");
        Self {
            studies,
            study_ids,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    /// Stable hash of the cell counts, used to check that paired test
    /// variants really saw the same data.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.studies.hash(&mut h);
        h.finish()
    }
}

/// Checks every table and the minimum study count.
pub fn validate_dataset(dataset: MetaDataset) -> Result<MetaDataset, ModelError> {
    for (index, table) in dataset.studies.iter().enumerate() {
        if table.n1() == 0 || table.n2() == 0 {
            return Err(ModelError::EmptyGroupInStudy {
                index,
                n1: table.n1(),
                n2: table.n2(),
            });
        }
    }
    if dataset.len() < MIN_STUDIES {
        return Err(ModelError::TooFewStudies {
            k: dataset.len(),
            min: MIN_STUDIES,
        });
    }
    Ok(dataset)
}
