//! Tests for funnel-plot asymmetry: Egger and Macaskill regressions, Begg's
//! rank correlation and trim and fill.
//!
//! Effects are oriented so that higher values mean higher accuracy. Missing
//! studies are expected on the left of the funnel, so one-sided tests look
//! for small or imprecise studies reporting inflated effects.

mod kendall;
mod pooling;
mod regression;
mod trimfill;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use kendall::{kendall, kendall_tau, KendallTau, EXACT_MAX_N};
pub use pooling::{pool_fixed_effects, pool_random_effects, RandomEffectsPool};
pub use regression::{weighted_line_fit, RegressionFit};
pub use trimfill::{
    l_normal_upper_tail, rank_statistics, run_length_upper_tail, signed_rank_upper_tail, trim_fill, trim_fill_test,
    trim_fill_test_with, LPValue, RankStatistics,
    TrimFillAxis, TrimFillEstimator, TrimFillState, MAX_ITERATIONS,
};

use crate::error::TestError;
use crate::model::{AsymmetryTestResult, EffectEstimate, Sidedness, MIN_STUDIES};
use regression::t_upper;

/// Precision coordinate of a funnel plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrecisionAxis {
    /// Precision 1/SE.
    Se,
    N,
    Ess,
    InvN,
}

impl PrecisionAxis {
    pub fn token(self) -> &'static str {
        match self {
            PrecisionAxis::Se => "se",
            PrecisionAxis::N => "n",
            PrecisionAxis::Ess => "ess",
            PrecisionAxis::InvN => "inv-n",
        }
    }

    pub fn value(self, e: &EffectEstimate) -> f64 {
        match self {
            PrecisionAxis::Se => 1.0 / e.se,
            PrecisionAxis::N => e.n as f64,
            PrecisionAxis::Ess => e.ess,
            PrecisionAxis::InvN => 1.0 / e.n as f64,
        }
    }
}

/// (effect, axis value) per study, in study order.
pub fn funnel_points(estimates: &[EffectEstimate], axis: PrecisionAxis) -> Vec<(f64, f64)> {
    estimates.iter().map(|e| (e.value, axis.value(e))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EggerAxis {
    /// Regress on precision 1/SE (the original test).
    Se,
    /// Regress on total sample size.
    N,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum EggerWeighting {
    #[default]
    Unweighted,
    InvVarianceFixed,
    InvVarianceRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MacaskillPredictor {
    N,
    InvSqrtEss,
    InvN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MacaskillWeighting {
    InvVarianceFixed,
    Ess,
    /// m1·m2/N mass weights.
    Peters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BeggDispersion {
    Variance,
    InvN,
    InvEss,
}

/// Denominator used to standardize centered effects in Begg's test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum BeggStandardization {
    /// sqrt(Var_i - 1/Σ Var_j⁻¹), the variance of t_i - t̄.
    #[default]
    CenteredVariance,
    /// Plain SE_i.
    PlainSe,
}

/// One configured asymmetry test, independent of the measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AsymmetryTest {
    Egger {
        axis: EggerAxis,
        weighting: EggerWeighting,
    },
    Macaskill {
        predictor: MacaskillPredictor,
        weighting: MacaskillWeighting,
    },
    Begg {
        dispersion: BeggDispersion,
        standardization: BeggStandardization,
    },
    TrimFill {
        axis: TrimFillAxis,
        estimator: TrimFillEstimator,
    },
}

impl AsymmetryTest {
    pub fn family(&self) -> &'static str {
        match self {
            AsymmetryTest::Egger { .. } => "egger",
            AsymmetryTest::Macaskill { .. } => "macaskill",
            AsymmetryTest::Begg { .. } => "begg",
            AsymmetryTest::TrimFill { .. } => "trimfill",
        }
    }

    /// Axis, predictor or dispersion token.
    pub fn axis_token(&self) -> &'static str {
        match self {
            AsymmetryTest::Egger { axis, .. } => match axis {
                EggerAxis::Se => "se",
                EggerAxis::N => "n",
            },
            AsymmetryTest::Macaskill { predictor, .. } => match predictor {
                MacaskillPredictor::N => "n",
                MacaskillPredictor::InvSqrtEss => "ess",
                MacaskillPredictor::InvN => "inv-n",
            },
            AsymmetryTest::Begg { dispersion, .. } => match dispersion {
                BeggDispersion::Variance => "se",
                BeggDispersion::InvN => "inv-n",
                BeggDispersion::InvEss => "ess",
            },
            AsymmetryTest::TrimFill { axis, .. } => match axis {
                TrimFillAxis::Se => "se",
                TrimFillAxis::N => "n",
            },
        }
    }

    pub fn weighting_token(&self) -> &'static str {
        match self {
            AsymmetryTest::Egger { weighting, .. } => match weighting {
                EggerWeighting::Unweighted => "none",
                EggerWeighting::InvVarianceFixed => "ivfixed",
                EggerWeighting::InvVarianceRandom => "ivrandom",
            },
            AsymmetryTest::Macaskill { weighting, .. } => match weighting {
                MacaskillWeighting::InvVarianceFixed => "ivfixed",
                MacaskillWeighting::Ess => "ess",
                MacaskillWeighting::Peters => "peters",
            },
            AsymmetryTest::Begg {
                standardization: BeggStandardization::PlainSe,
                ..
            } => "plain-se",
            _ => "none",
        }
    }

    pub fn estimator_token(&self) -> &'static str {
        match self {
            AsymmetryTest::TrimFill { estimator, .. } => match estimator {
                TrimFillEstimator::R => "r",
                TrimFillEstimator::L => "l",
            },
            _ => "",
        }
    }

    /// Trim and fill is defined for one-sided alternatives only.
    pub fn supports(&self, sidedness: Sidedness) -> bool {
        !matches!(
            (self, sidedness),
            (AsymmetryTest::TrimFill { .. }, Sidedness::TwoSided)
        )
    }

    /// Short form such as `E(lnDOR,SE)` or `T(lnDOR,N,R)`.
    pub fn short_form(&self, measure: &str) -> String {
        match self {
            AsymmetryTest::Egger { axis, weighting } => {
                let v = match axis {
                    EggerAxis::Se => "SE",
                    EggerAxis::N => "N",
                };
                match weighting {
                    EggerWeighting::Unweighted => format!("E({measure},{v})"),
                    EggerWeighting::InvVarianceFixed => format!("E({measure},{v},1/Var)"),
                    EggerWeighting::InvVarianceRandom => format!("E({measure},{v},1/(Var+tau2))"),
                }
            }
            AsymmetryTest::Macaskill { predictor, weighting } => {
                let v = match predictor {
                    MacaskillPredictor::N => "N",
                    MacaskillPredictor::InvSqrtEss => "1/sqrt(ESS)",
                    MacaskillPredictor::InvN => "1/N",
                };
                let w = match weighting {
                    MacaskillWeighting::InvVarianceFixed => "1/Var",
                    MacaskillWeighting::Ess => "ESS",
                    MacaskillWeighting::Peters => "m1m2/N",
                };
                format!("M({measure},{v},{w})")
            }
            AsymmetryTest::Begg {
                dispersion,
                standardization,
            } => {
                let v = match dispersion {
                    BeggDispersion::Variance => "Var",
                    BeggDispersion::InvN => "1/N",
                    BeggDispersion::InvEss => "1/ESS",
                };
                match standardization {
                    BeggStandardization::CenteredVariance => format!("B({measure},{v})"),
                    BeggStandardization::PlainSe => format!("B({measure},{v},plain)"),
                }
            }
            AsymmetryTest::TrimFill { axis, estimator } => {
                let v = match axis {
                    TrimFillAxis::Se => "SE",
                    TrimFillAxis::N => "N",
                };
                let m = match estimator {
                    TrimFillEstimator::R => "R",
                    TrimFillEstimator::L => "L",
                };
                format!("T({measure},{v},{m})")
            }
        }
    }

    /// Runs the test on a set of estimates.
    pub fn run(
        &self,
        estimates: &[EffectEstimate],
        sidedness: Sidedness,
        alpha: f64,
    ) -> Result<AsymmetryTestResult, TestError> {
        let measure = estimates.first().map(|e| e.measure.short()).unwrap_or("?");
        let id = self.short_form(measure);
        match *self {
            AsymmetryTest::Egger { axis, weighting } => {
                egger_test(estimates, axis, weighting, sidedness, alpha, id)
            }
            AsymmetryTest::Macaskill { predictor, weighting } => {
                macaskill_test(estimates, predictor, weighting, sidedness, alpha, id)
            }
            AsymmetryTest::Begg {
                dispersion,
                standardization,
            } => begg_test(estimates, dispersion, standardization, sidedness, alpha, id),
            AsymmetryTest::TrimFill { axis, estimator } => {
                if sidedness == Sidedness::TwoSided {
                    return Err(TestError::InvalidConfig(
                        "trim and fill is one-sided only".into(),
                    ));
                }
                let mut r = trim_fill_test(estimates, axis, estimator, alpha)?;
                r.test_id = id;
                Ok(r)
            }
        }
    }
}

impl fmt::Display for AsymmetryTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short_form("t"))
    }
}

fn check_k(estimates: &[EffectEstimate]) -> Result<(), TestError> {
    if estimates.len() < MIN_STUDIES {
        return Err(TestError::TooFewStudies {
            k: estimates.len(),
            min: MIN_STUDIES,
        });
    }
    pooling::check_se(estimates)
}

/// p-value of a t statistic whose one-sided alternative is "greater".
fn t_p_value(stat: f64, df: usize, sidedness: Sidedness) -> f64 {
    match sidedness {
        Sidedness::OneSided => t_upper(stat, df),
        Sidedness::TwoSided => (2.0 * t_upper(stat.abs(), df)).min(1.0),
    }
}

/// Egger's regression of the standardized effect t/SE on precision (or N);
/// tests whether the intercept exceeds zero.
pub fn egger_test(
    estimates: &[EffectEstimate],
    axis: EggerAxis,
    weighting: EggerWeighting,
    sidedness: Sidedness,
    alpha: f64,
    test_id: String,
) -> Result<AsymmetryTestResult, TestError> {
    check_k(estimates)?;
    let response: Vec<f64> = estimates.iter().map(|e| e.value / e.se).collect();
    let predictor: Vec<f64> = estimates
        .iter()
        .map(|e| match axis {
            EggerAxis::Se => 1.0 / e.se,
            EggerAxis::N => e.n as f64,
        })
        .collect();
    let weights: Vec<f64> = match weighting {
        EggerWeighting::Unweighted => vec![1.0; estimates.len()],
        EggerWeighting::InvVarianceFixed => estimates.iter().map(|e| 1.0 / e.variance()).collect(),
        EggerWeighting::InvVarianceRandom => {
            let (tau2, _) = pooling::dl_tau2(estimates);
            estimates.iter().map(|e| 1.0 / (e.variance() + tau2)).collect()
        }
    };
    let fit = weighted_line_fit(&predictor, &response, &weights)?;
    let stat = fit.t_intercept();
    let p = t_p_value(stat, fit.df, sidedness);
    Ok(AsymmetryTestResult::new(test_id, stat, p, sidedness, alpha))
}

/// Macaskill's regression of the effect on a size predictor; tests the slope.
pub fn macaskill_test(
    estimates: &[EffectEstimate],
    predictor: MacaskillPredictor,
    weighting: MacaskillWeighting,
    sidedness: Sidedness,
    alpha: f64,
    test_id: String,
) -> Result<AsymmetryTestResult, TestError> {
    check_k(estimates)?;
    let response: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let x: Vec<f64> = estimates
        .iter()
        .map(|e| match predictor {
            MacaskillPredictor::N => e.n as f64,
            MacaskillPredictor::InvSqrtEss => 1.0 / e.ess.sqrt(),
            MacaskillPredictor::InvN => 1.0 / e.n as f64,
        })
        .collect();
    let weights: Vec<f64> = estimates
        .iter()
        .map(|e| match weighting {
            MacaskillWeighting::InvVarianceFixed => 1.0 / e.variance(),
            MacaskillWeighting::Ess => e.ess,
            MacaskillWeighting::Peters => e.mass,
        })
        .collect();
    let fit = weighted_line_fit(&x, &response, &weights)?;
    let stat = fit.t_slope();
    // Inflated small studies push the slope down on N and up on the
    // reciprocal predictors.
    let oriented = match predictor {
        MacaskillPredictor::N => -stat,
        MacaskillPredictor::InvSqrtEss | MacaskillPredictor::InvN => stat,
    };
    let p = t_p_value(oriented, fit.df, sidedness);
    Ok(AsymmetryTestResult::new(test_id, stat, p, sidedness, alpha))
}

/// Begg and Mazumdar's rank correlation between standardized centered
/// effects and a dispersion measure. Every dispersion grows as studies get
/// smaller, so the one-sided alternative is tau > 0 throughout.
pub fn begg_test(
    estimates: &[EffectEstimate],
    dispersion: BeggDispersion,
    standardization: BeggStandardization,
    sidedness: Sidedness,
    alpha: f64,
    test_id: String,
) -> Result<AsymmetryTestResult, TestError> {
    check_k(estimates)?;
    let standardized = begg_standardized(estimates, standardization)?;
    let disp: Vec<f64> = estimates
        .iter()
        .map(|e| match dispersion {
            BeggDispersion::Variance => e.variance(),
            BeggDispersion::InvN => 1.0 / e.n as f64,
            BeggDispersion::InvEss => 1.0 / e.ess,
        })
        .collect();
    if disp.iter().all(|d| *d == disp[0]) {
        return Err(TestError::AllTied);
    }
    let kt = kendall(&standardized, &disp)?;
    let p = match sidedness {
        Sidedness::OneSided => kt.p_greater,
        Sidedness::TwoSided => kt.p_two_sided(),
    };
    Ok(AsymmetryTestResult::new(test_id, kt.tau, p, sidedness, alpha))
}

/// (t_i - t̄) / SE*_i with t̄ the fixed-effects pooled mean.
pub fn begg_standardized(
    estimates: &[EffectEstimate],
    standardization: BeggStandardization,
) -> Result<Vec<f64>, TestError> {
    let t_bar = pool_fixed_effects(estimates)?;
    let pooled_var = 1.0 / estimates.iter().map(|e| 1.0 / e.variance()).sum::<f64>();
    Ok(estimates
        .iter()
        .map(|e| {
            let denom = match standardization {
                BeggStandardization::CenteredVariance => (e.variance() - pooled_var).sqrt(),
                BeggStandardization::PlainSe => e.se,
            };
            (e.value - t_bar) / denom
        })
        .collect())
}
