//! Trim and fill: rank-based estimation of the number of studies missing
//! from the left of the funnel, and a one-sided test of k0 = 0.
//!
//! The iteration alternates between pooling the studies that survive
//! trimming and re-estimating k0 from the ranks of all k centered effects,
//! stopping once k0 repeats.
//!
//! Under a symmetric funnel the signs of the centered effects are
//! independent fair coin flips given their absolute ranks. That null gives
//! P(gamma+ >= g) = 2^-g for the rightmost run and the signed-rank
//! distribution for the sum of positive ranks behind L.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::pooling::{pool_random_effects, weighted_mean};
use crate::error::TestError;
use crate::model::{AsymmetryTestResult, EffectEstimate, Sidedness};

pub const MAX_ITERATIONS: usize = 50;

/// Which precision coordinate the funnel uses. With `N` the pooled effect
/// is the N-weighted mean instead of the random-effects estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrimFillAxis {
    Se,
    N,
}

/// Estimator of the number of missing studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrimFillEstimator {
    /// Rightmost run of positive ranks minus one.
    R,
    /// Linear function of the positive signed-rank sum.
    L,
}

/// How the p-value of L is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum LPValue {
    /// Exact sign-randomization distribution of the signed-rank sum.
    #[default]
    Exact,
    /// Normal approximation with E[L] = 0 and Var(L) = 16·Var(S+)/(2k-1)².
    Normal,
}

/// Rank summaries of centered effects.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankStatistics {
    /// Ranks of |t+|, 1..k, ties averaged.
    pub ranks: Vec<f64>,
    /// Length of the run of positive values among the largest |t+|.
    pub gamma_plus: usize,
    /// Sum of ranks of positive centered effects.
    pub s_plus: f64,
    /// gamma+ - 1, may be -1.
    pub r: i64,
    pub l: f64,
}

/// Computes ranks, the rightmost positive run and both k0 estimators.
///
/// A group of tied |t+| values extends the run only if every member of the
/// group is positive; a mixed group ends it.
pub fn rank_statistics(centered: &[f64]) -> RankStatistics {
    let k = centered.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centered[a].abs().total_cmp(&centered[b].abs()));

    let mut ranks = vec![0.0; k];
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && centered[order[end]].abs() == centered[order[start]].abs() {
            end += 1;
        }
        // Positions start..end share ranks start+1..=end.
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        groups.push((start, end));
        start = end;
    }

    let mut gamma_plus = 0;
    for &(s, e) in groups.iter().rev() {
        if order[s..e].iter().all(|&i| centered[i] > 0.0) {
            gamma_plus += e - s;
        } else {
            break;
        }
    }

    let s_plus: f64 = (0..k).filter(|&i| centered[i] > 0.0).map(|i| ranks[i]).sum();
    let kf = k as f64;
    RankStatistics {
        ranks,
        gamma_plus,
        s_plus,
        r: gamma_plus as i64 - 1,
        l: (4.0 * s_plus - kf * (kf + 1.0)) / (2.0 * kf - 1.0),
    }
}

/// P(S+ >= s) when each rank independently enters the sum with probability
/// one half. Ranks may be half-integers (ties).
pub fn signed_rank_upper_tail(ranks: &[f64], s: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut prob = vec![0.0f64; total + 1];
    prob[0] = 1.0;
    let mut reach = 0;
    for &d in &doubled {
        for sum in (0..=reach).rev() {
            let p = prob[sum];
            if p != 0.0 {
                prob[sum] = 0.5 * p;
                prob[sum + d] += 0.5 * p;
            }
        }
        reach += d;
    }
    let threshold = (2.0 * s - 1e-9).ceil().max(0.0) as usize;
    prob.iter().skip(threshold).sum::<f64>().min(1.0)
}

/// P(the run of positive values at the top is at least `gamma_plus` long)
/// under independent fair signs.
pub fn run_length_upper_tail(gamma_plus: usize) -> f64 {
    0.5f64.powi(gamma_plus as i32)
}

/// Normal-approximation upper tail for L.
pub fn l_normal_upper_tail(l: f64, k: usize) -> f64 {
    let kf = k as f64;
    let var_s = kf * (kf + 1.0) * (2.0 * kf + 1.0) / 24.0;
    let sd = 4.0 * var_s.sqrt() / (2.0 * kf - 1.0);
    Normal::new(0.0, 1.0).expect("standard normal").sf(l / sd)
}

/// Final state of the trim-and-fill iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrimFillState {
    pub theta_hat: f64,
    /// t_i - theta_hat for every study, in input order.
    pub centered: Vec<f64>,
    pub ranks: Vec<f64>,
    pub gamma_plus: usize,
    pub s_plus: f64,
    pub r: i64,
    pub l: f64,
    pub k0: usize,
    /// Input indices of the trimmed studies.
    pub trimmed: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

fn pooled(estimates: &[EffectEstimate], keep: &[usize], axis: TrimFillAxis) -> Result<f64, TestError> {
    if keep.len() == 1 {
        return Ok(estimates[keep[0]].value);
    }
    match axis {
        TrimFillAxis::Se => {
            let subset: Vec<EffectEstimate> = keep.iter().map(|&i| estimates[i]).collect();
            Ok(pool_random_effects(&subset)?.theta_hat)
        }
        TrimFillAxis::N => Ok(weighted_mean(
            keep.iter().map(|&i| (estimates[i].value, estimates[i].n as f64)),
        )),
    }
}

/// Runs the trim-and-fill iteration to convergence (or `MAX_ITERATIONS`).
pub fn trim_fill(
    estimates: &[EffectEstimate],
    axis: TrimFillAxis,
    estimator: TrimFillEstimator,
) -> Result<TrimFillState, TestError> {
    super::check_k(estimates)?;
    let k = estimates.len();

    // Largest effects first; these are trimmed from the right.
    let mut by_value: Vec<usize> = (0..k).collect();
    by_value.sort_by(|&a, &b| estimates[b].value.total_cmp(&estimates[a].value).then(a.cmp(&b)));

    let mut k0 = 0usize;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut keep: Vec<usize> = by_value[k0..].to_vec();
        keep.sort_unstable();
        let theta_hat = pooled(estimates, &keep, axis)?;
        let centered: Vec<f64> = estimates.iter().map(|e| e.value - theta_hat).collect();
        let stats = rank_statistics(&centered);
        let raw = match estimator {
            TrimFillEstimator::R => stats.r as f64,
            TrimFillEstimator::L => stats.l,
        };
        let next = raw.round().clamp(0.0, (k - 1) as f64) as usize;
        let converged = next == k0;
        if converged || iterations >= MAX_ITERATIONS {
            let mut trimmed = by_value[..next].to_vec();
            trimmed.sort_unstable();
            return Ok(TrimFillState {
                theta_hat,
                centered,
                ranks: stats.ranks,
                gamma_plus: stats.gamma_plus,
                s_plus: stats.s_plus,
                r: stats.r,
                l: stats.l,
                k0: next,
                trimmed,
                iterations,
                converged,
            });
        }
        k0 = next;
    }
}

/// One-sided trim-and-fill test of k0 = 0 against missing left-side studies.
pub fn trim_fill_test(
    estimates: &[EffectEstimate],
    axis: TrimFillAxis,
    estimator: TrimFillEstimator,
    alpha: f64,
) -> Result<AsymmetryTestResult, TestError> {
    trim_fill_test_with(estimates, axis, estimator, LPValue::default(), alpha)
}

pub fn trim_fill_test_with(
    estimates: &[EffectEstimate],
    axis: TrimFillAxis,
    estimator: TrimFillEstimator,
    l_p_value: LPValue,
    alpha: f64,
) -> Result<AsymmetryTestResult, TestError> {
    let state = trim_fill(estimates, axis, estimator)?;
    let (statistic, p) = match estimator {
        TrimFillEstimator::R => (state.r as f64, run_length_upper_tail(state.gamma_plus)),
        TrimFillEstimator::L => {
            let p = match l_p_value {
                LPValue::Exact => signed_rank_upper_tail(&state.ranks, state.s_plus),
                LPValue::Normal => l_normal_upper_tail(state.l, estimates.len()),
            };
            (state.l, p)
        }
    };
    let id = format!(
        "T(t,{},{})",
        match axis {
            TrimFillAxis::Se => "SE",
            TrimFillAxis::N => "N",
        },
        match estimator {
            TrimFillEstimator::R => "R",
            TrimFillEstimator::L => "L",
        }
    );
    let mut result = AsymmetryTestResult::new(id, statistic, p, Sidedness::OneSided, alpha);
    if estimator == TrimFillEstimator::R && state.r < 0 {
        result.notes.push("R = -1 clamped to k0 = 0".into());
    }
    if !state.converged {
        result
            .notes
            .push(format!("no convergence after {MAX_ITERATIONS} iterations"));
    }
    result.k0 = Some(state.k0);
    result.pooled_effect = Some(state.theta_hat);
    Ok(result)
}
