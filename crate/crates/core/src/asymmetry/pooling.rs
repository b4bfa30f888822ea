//! Fixed- and random-effects pooling of effect estimates.

use serde::Serialize;

use crate::error::TestError;
use crate::model::EffectEstimate;

/// Inverse-variance weighted mean.
pub fn pool_fixed_effects(estimates: &[EffectEstimate]) -> Result<f64, TestError> {
    check_se(estimates)?;
    if estimates.is_empty() {
        return Err(TestError::TooFewStudies { k: 0, min: 1 });
    }
    Ok(weighted_mean(
        estimates.iter().map(|e| (e.value, 1.0 / e.variance())),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RandomEffectsPool {
    pub theta_hat: f64,
    /// DerSimonian–Laird between-study variance.
    pub tau2: f64,
    /// Cochran's Q.
    pub q: f64,
}

/// DerSimonian–Laird random-effects pooling.
pub fn pool_random_effects(estimates: &[EffectEstimate]) -> Result<RandomEffectsPool, TestError> {
    check_se(estimates)?;
    let k = estimates.len();
    if k < 2 {
        return Err(TestError::TooFewStudies { k, min: 2 });
    }
    let tau2_q = dl_tau2(estimates);
    let theta_hat = weighted_mean(
        estimates
            .iter()
            .map(|e| (e.value, 1.0 / (e.variance() + tau2_q.0))),
    );
    Ok(RandomEffectsPool {
        theta_hat,
        tau2: tau2_q.0,
        q: tau2_q.1,
    })
}

/// (tau², Q) by the DerSimonian–Laird moment estimator.
pub(crate) fn dl_tau2(estimates: &[EffectEstimate]) -> (f64, f64) {
    let w: Vec<f64> = estimates.iter().map(|e| 1.0 / e.variance()).collect();
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|w| w * w).sum();
    let t_bar = weighted_mean(estimates.iter().zip(&w).map(|(e, w)| (e.value, *w)));
    let q: f64 = estimates
        .iter()
        .zip(&w)
        .map(|(e, w)| w * (e.value - t_bar).powi(2))
        .sum();
    let df = (estimates.len() - 1) as f64;
    let c = sw - sw2 / sw;
    let tau2 = if c > 0.0 { ((q - df) / c).max(0.0) } else { 0.0 };
    (tau2, q)
}

/// Weighted mean, computed about the first value so that equal inputs
/// return that value exactly.
pub(crate) fn weighted_mean(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut origin = None;
    let (mut num, mut den) = (0.0, 0.0);
    for (v, w) in pairs {
        let o = *origin.get_or_insert(v);
        num += w * (v - o);
        den += w;
    }
    origin.unwrap_or(f64::NAN) + num / den
}

pub(crate) fn check_se(estimates: &[EffectEstimate]) -> Result<(), TestError> {
    match estimates
        .iter()
        .position(|e| !(e.se.is_finite() && e.se > 0.0 && e.value.is_finite()))
    {
        Some(index) => Err(TestError::InvalidStandardError { index }),
        None => Ok(()),
    }
}
