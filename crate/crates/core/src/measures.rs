//! Univariate measures of diagnostic accuracy and their standard errors.
//!
//! Every measure is oriented so that larger values mean higher accuracy; the
//! Lehmann parameter is therefore reported as `-ln(theta)`.

use crate::error::MeasureError;
use crate::model::{
    continuity_correct, CorrectedTable, CorrectionPolicy, EffectEstimate, MeasureId, MetaDataset,
    StudyTable,
};

/// Effective sample size 4·n1·n2/(n1+n2).
pub fn effective_sample_size(table: &StudyTable) -> f64 {
    let (n1, n2) = (table.n1() as f64, table.n2() as f64);
    4.0 * n1 * n2 / (n1 + n2)
}

fn estimate(table: &CorrectedTable, measure: MeasureId, value: f64, se: f64) -> EffectEstimate {
    EffectEstimate {
        measure,
        value,
        se,
        ess: effective_sample_size(&table.source),
        n: table.source.total(),
        mass: table.m1() * table.m2() / table.total(),
    }
}

/// Log diagnostic odds ratio ln(xz / yw) with the Woolf standard error.
pub fn ln_dor(table: &CorrectedTable) -> Result<EffectEstimate, MeasureError> {
    let measure = MeasureId::LnDor;
    if table.has_zero_cell() {
        return Err(MeasureError::ZeroCell { measure });
    }
    let (x, w, y, z) = (table.x, table.w, table.y, table.z);
    // Grouped so that swapping test columns negates the value exactly.
    let value = (x.ln() + z.ln()) - (y.ln() + w.ln());
    let se = (1.0 / x + 1.0 / y + 1.0 / w + 1.0 / z).sqrt();
    Ok(estimate(table, measure, value, se))
}

/// Negated log of the Lehmann parameter theta in Sen = (1 - Spe)^theta.
pub fn neg_ln_theta(table: &CorrectedTable) -> Result<EffectEstimate, MeasureError> {
    let measure = MeasureId::NegLnTheta;
    let (x, n1, y, n2) = (table.x, table.n1(), table.y, table.n2());
    if x == 0.0 || y == 0.0 {
        return Err(MeasureError::ZeroCell { measure });
    }
    if x >= n1 || y >= n2 {
        return Err(MeasureError::BoundaryProportion { measure });
    }
    let log_sen = x.ln() - n1.ln();
    let log_fpr = y.ln() - n2.ln();
    let value = -(log_sen / log_fpr).ln();
    let var = (1.0 / x - 1.0 / n1) / (log_sen * log_sen) + (1.0 / y - 1.0 / n2) / (log_fpr * log_fpr);
    Ok(estimate(table, measure, value, var.sqrt()))
}

/// Youden index Sen + Spe - 1 with its binomial standard error.
pub fn youden(table: &CorrectedTable) -> Result<EffectEstimate, MeasureError> {
    let measure = MeasureId::Youden;
    let (n1, n2) = (table.n1(), table.n2());
    let sen = table.x / n1;
    let fpr = table.y / n2;
    let value = sen + table.z / n2 - 1.0;
    let se = (sen * (1.0 - sen) / n1 + fpr * (1.0 - fpr) / n2).sqrt();
    if se <= 0.0 {
        return Err(MeasureError::DegenerateSE { measure });
    }
    Ok(estimate(table, measure, value, se))
}

/// Cohen's kappa with the Fleiss–Cohen–Everitt large-sample standard error.
pub fn kappa(table: &CorrectedTable) -> Result<EffectEstimate, MeasureError> {
    let measure = MeasureId::Kappa;
    let (x, w, y, z) = (table.x, table.w, table.y, table.z);
    let (n1, n2, m1, m2, n) = (table.n1(), table.n2(), table.m1(), table.m2(), table.total());

    let denom = n1 * m2 + n2 * m1;
    let chance = (n1 * m1 + n2 * m2) / (n * n);
    if denom == 0.0 || chance == 1.0 {
        return Err(MeasureError::DegenerateMarginals { measure });
    }
    let k = 2.0 * (x * z - y * w) / denom;
    let q = 1.0 - k;

    // Agreement cells (x, z) and disagreement cells (w, y).
    let a = (x * (n - (n1 + m1) * q).powi(2) + z * (n - (n2 + m2) * q).powi(2)) / n.powi(3);
    let b = q * q * (w * (n2 + m1).powi(2) + y * (n1 + m2).powi(2)) / n.powi(3);
    let c = (k - chance * q).powi(2);
    let var = a + b - c;
    if var <= 0.0 {
        return Err(MeasureError::DegenerateSE { measure });
    }
    let se = var.sqrt() / ((1.0 - chance) * n.sqrt());
    Ok(estimate(table, measure, k, se))
}

/// Computes one measure on an already corrected table.
pub fn measure_of(table: &CorrectedTable, measure: MeasureId) -> Result<EffectEstimate, MeasureError> {
    match measure {
        MeasureId::LnDor => ln_dor(table),
        MeasureId::NegLnTheta => neg_ln_theta(table),
        MeasureId::Youden => youden(table),
        MeasureId::Kappa => kappa(table),
    }
}

/// Corrects then measures every study, in order. The first failing study
/// aborts with its index attached.
pub fn compute_all(
    dataset: &MetaDataset,
    measure: MeasureId,
    policy: CorrectionPolicy,
) -> Result<Vec<EffectEstimate>, MeasureError> {
    dataset
        .studies
        .iter()
        .enumerate()
        .map(|(index, table)| {
            measure_of(&continuity_correct(table, policy), measure).map_err(|e| {
                MeasureError::Study {
                    index,
                    source: Box::new(e),
                }
            })
        })
        .collect()
}

/// Estimates prepared as test input: studies with zero standard error are
/// left out and listed, every other failure is an error.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedEstimates {
    pub estimates: Vec<EffectEstimate>,
    /// Index into the dataset of each estimate.
    pub kept: Vec<usize>,
    pub excluded: Vec<usize>,
    pub corrected: Vec<usize>,
}

pub fn prepare_estimates(
    dataset: &MetaDataset,
    measure: MeasureId,
    policy: CorrectionPolicy,
) -> Result<PreparedEstimates, MeasureError> {
    let mut out = PreparedEstimates {
        estimates: Vec::with_capacity(dataset.len()),
        kept: Vec::with_capacity(dataset.len()),
        excluded: Vec::new(),
        corrected: Vec::new(),
    };
    for (index, table) in dataset.studies.iter().enumerate() {
        let corrected = continuity_correct(table, policy);
        if corrected.correction_applied {
            out.corrected.push(index);
        }
        match measure_of(&corrected, measure) {
            Ok(e) => {
                out.estimates.push(e);
                out.kept.push(index);
            }
            Err(MeasureError::DegenerateSE { .. }) => out.excluded.push(index),
            Err(e) => {
                return Err(MeasureError::Study {
                    index,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}
