//! Monte Carlo harness: runs a battery of test variants over simulation
//! conditions and tabulates rejection rates.
//!
//! Every replicate draws one meta-analysis that all variants share, so
//! differences between variants are paired comparisons.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::asymmetry::{
    AsymmetryTest, BeggDispersion, BeggStandardization, EggerAxis, EggerWeighting,
    MacaskillPredictor, MacaskillWeighting, TrimFillAxis, TrimFillEstimator,
};
use crate::error::HarnessError;
use crate::measures::prepare_estimates;
use crate::model::{CorrectionPolicy, EffectEstimate, MeasureId, MetaDataset, Sidedness};
use crate::sampler::{generate_meta_analysis, replicate_rng, SimCondition};

/// Significance level used throughout the simulation study.
pub const DEFAULT_ALPHA: f64 = 0.1;

/// Two-sided 95% standard normal quantile.
const Z_95: f64 = 1.959963984540054;

/// A measure paired with a configured test and sidedness. Only combinations
/// the test supports can be built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct TestVariantId {
    measure: MeasureId,
    test: AsymmetryTest,
    sided: Sidedness,
}

impl TestVariantId {
    pub fn new(measure: MeasureId, test: AsymmetryTest, sided: Sidedness) -> Result<Self, HarnessError> {
        if !test.supports(sided) {
            return Err(HarnessError::InvalidConfig(format!(
                "{} does not support {}-sided testing",
                test.short_form(measure.short()),
                sided.token()
            )));
        }
        Ok(Self { measure, test, sided })
    }

    /// Builds a variant from command-line tokens. Missing axis, weighting and
    /// estimator fall back to each family's usual form.
    pub fn from_tokens(
        measure: MeasureId,
        family: &str,
        axis: Option<&str>,
        weighting: Option<&str>,
        estimator: Option<&str>,
        sided: Sidedness,
    ) -> Result<Self, HarnessError> {
        let bad = |what: &str, value: &str| {
            HarnessError::InvalidConfig(format!("{what} '{value}' is not valid for test '{family}'"))
        };
        let reject_estimator = |e: Option<&str>| match e {
            Some(v) => Err(bad("estimator", v)),
            None => Ok(()),
        };
        let test = match family {
            "egger" => {
                reject_estimator(estimator)?;
                let axis = match axis.unwrap_or("se") {
                    "se" => EggerAxis::Se,
                    "n" => EggerAxis::N,
                    v => return Err(bad("axis", v)),
                };
                let weighting = match weighting.unwrap_or("none") {
                    "none" => EggerWeighting::Unweighted,
                    "ivfixed" => EggerWeighting::InvVarianceFixed,
                    "ivrandom" => EggerWeighting::InvVarianceRandom,
                    v => return Err(bad("weighting", v)),
                };
                AsymmetryTest::Egger { axis, weighting }
            }
            "macaskill" => {
                reject_estimator(estimator)?;
                let predictor = match axis.unwrap_or("n") {
                    "n" => MacaskillPredictor::N,
                    "ess" => MacaskillPredictor::InvSqrtEss,
                    "inv-n" => MacaskillPredictor::InvN,
                    v => return Err(bad("axis", v)),
                };
                let default_weighting = match predictor {
                    MacaskillPredictor::N => "ivfixed",
                    MacaskillPredictor::InvSqrtEss => "ess",
                    MacaskillPredictor::InvN => "peters",
                };
                let weighting = match weighting.unwrap_or(default_weighting) {
                    "ivfixed" => MacaskillWeighting::InvVarianceFixed,
                    "ess" => MacaskillWeighting::Ess,
                    "peters" => MacaskillWeighting::Peters,
                    v => return Err(bad("weighting", v)),
                };
                AsymmetryTest::Macaskill { predictor, weighting }
            }
            "begg" => {
                reject_estimator(estimator)?;
                let dispersion = match axis.unwrap_or("se") {
                    "se" => BeggDispersion::Variance,
                    "n" | "inv-n" => BeggDispersion::InvN,
                    "ess" => BeggDispersion::InvEss,
                    v => return Err(bad("axis", v)),
                };
                let standardization = match weighting.unwrap_or("none") {
                    "none" => BeggStandardization::CenteredVariance,
                    "plain-se" => BeggStandardization::PlainSe,
                    v => return Err(bad("weighting", v)),
                };
                AsymmetryTest::Begg {
                    dispersion,
                    standardization,
                }
            }
            "trimfill" => {
                let axis = match axis.unwrap_or("se") {
                    "se" => TrimFillAxis::Se,
                    "n" => TrimFillAxis::N,
                    v => return Err(bad("axis", v)),
                };
                if let Some(v) = weighting.filter(|w| *w != "none") {
                    return Err(bad("weighting", v));
                }
                let estimator = match estimator.unwrap_or("r") {
                    "r" => TrimFillEstimator::R,
                    "l" => TrimFillEstimator::L,
                    v => return Err(bad("estimator", v)),
                };
                AsymmetryTest::TrimFill { axis, estimator }
            }
            other => return Err(HarnessError::InvalidConfig(format!("unknown test '{other}'"))),
        };
        Self::new(measure, test, sided)
    }

    pub fn measure(&self) -> MeasureId {
        self.measure
    }

    pub fn test(&self) -> AsymmetryTest {
        self.test
    }

    pub fn sided(&self) -> Sidedness {
        self.sided
    }

    /// Short form, e.g. `T(lnDOR,N,R)`; two-sided variants get a `[2s]` suffix.
    pub fn short_form(&self) -> String {
        let s = self.test.short_form(self.measure.short());
        match self.sided {
            Sidedness::OneSided => s,
            Sidedness::TwoSided => format!("{s}[2s]"),
        }
    }
}

impl fmt::Display for TestVariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short_form())
    }
}

/// Tests of the simulation study in their usual forms, without the measure.
pub fn standard_tests() -> Vec<AsymmetryTest> {
    use AsymmetryTest::*;
    let mut tests = vec![
        Egger {
            axis: EggerAxis::Se,
            weighting: EggerWeighting::Unweighted,
        },
        Egger {
            axis: EggerAxis::N,
            weighting: EggerWeighting::Unweighted,
        },
        Egger {
            axis: EggerAxis::Se,
            weighting: EggerWeighting::InvVarianceFixed,
        },
        Egger {
            axis: EggerAxis::Se,
            weighting: EggerWeighting::InvVarianceRandom,
        },
        Macaskill {
            predictor: MacaskillPredictor::N,
            weighting: MacaskillWeighting::InvVarianceFixed,
        },
        Macaskill {
            predictor: MacaskillPredictor::InvSqrtEss,
            weighting: MacaskillWeighting::Ess,
        },
        Macaskill {
            predictor: MacaskillPredictor::InvN,
            weighting: MacaskillWeighting::Peters,
        },
    ];
    for dispersion in [BeggDispersion::Variance, BeggDispersion::InvN, BeggDispersion::InvEss] {
        tests.push(Begg {
            dispersion,
            standardization: BeggStandardization::CenteredVariance,
        });
    }
    for axis in [TrimFillAxis::Se, TrimFillAxis::N] {
        for estimator in [TrimFillEstimator::R, TrimFillEstimator::L] {
            tests.push(TrimFill { axis, estimator });
        }
    }
    tests
}

/// Every standard test with every measure, one-sided.
pub fn default_battery() -> Vec<TestVariantId> {
    let tests = standard_tests();
    MeasureId::ALL
        .into_iter()
        .flat_map(|m| tests.iter().map(move |t| TestVariantId::new(m, *t, Sidedness::OneSided).unwrap()))
        .collect()
}

/// Rejection tally of one variant under one condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub condition: SimCondition,
    pub variant: TestVariantId,
    pub reps: u64,
    pub rejections: u64,
    /// Replicates where the test could not be computed; scored as non-rejections.
    pub degenerate: u64,
    pub seed: u64,
    /// Order-independent digest of the datasets the variant saw. Equal across
    /// variants of one condition because the datasets are shared.
    pub datasets_digest: u64,
}

impl SimResult {
    pub fn rate(&self) -> f64 {
        self.rejections as f64 / self.reps as f64
    }

    /// Binomial Monte Carlo standard error of the rate.
    pub fn mcse(&self) -> f64 {
        let p = self.rate();
        (p * (1.0 - p) / self.reps as f64).sqrt()
    }

    pub fn wilson(&self) -> (f64, f64) {
        wilson_interval(self.rejections, self.reps)
    }
}

/// Outcome of one variant on one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Reject,
    Retain,
    /// The measure or the test failed on this dataset.
    Degenerate,
}

/// The dataset of one replicate; identical for every variant.
pub fn replicate_dataset(
    condition: &SimCondition,
    master_seed: u64,
    replicate: u64,
) -> Result<MetaDataset, HarnessError> {
    let mut rng = replicate_rng(master_seed, condition.id, replicate);
    Ok(generate_meta_analysis(condition, &mut rng)?)
}

/// Evaluates every variant on one dataset. Measures are computed once each.
pub fn evaluate_dataset(
    dataset: &MetaDataset,
    variants: &[TestVariantId],
    alpha: f64,
    correction: CorrectionPolicy,
) -> Vec<Outcome> {
    let mut cache: HashMap<MeasureId, Option<Vec<EffectEstimate>>> = HashMap::new();
    variants
        .iter()
        .map(|v| {
            let estimates = cache.entry(v.measure).or_insert_with(|| {
                prepare_estimates(dataset, v.measure, correction)
                    .ok()
                    .map(|p| p.estimates)
            });
            match estimates {
                None => Outcome::Degenerate,
                Some(e) => match v.test.run(e, v.sided, alpha) {
                    Ok(r) if r.reject => Outcome::Reject,
                    Ok(_) => Outcome::Retain,
                    Err(_) => Outcome::Degenerate,
                },
            }
        })
        .collect()
}

pub fn evaluate_replicate(
    condition: &SimCondition,
    variants: &[TestVariantId],
    alpha: f64,
    master_seed: u64,
    replicate: u64,
    correction: CorrectionPolicy,
) -> Result<(u64, Vec<Outcome>), HarnessError> {
    let dataset = replicate_dataset(condition, master_seed, replicate)?;
    Ok((dataset.fingerprint(), evaluate_dataset(&dataset, variants, alpha, correction)))
}

#[derive(Debug, Clone, Default)]
struct Tally {
    rejections: Vec<u64>,
    degenerate: Vec<u64>,
    digest: u64,
}

impl Tally {
    fn zero(n: usize) -> Self {
        Self {
            rejections: vec![0; n],
            degenerate: vec![0; n],
            digest: 0,
        }
    }

    fn add(mut self, fingerprint: u64, outcomes: &[Outcome]) -> Self {
        for (i, o) in outcomes.iter().enumerate() {
            match o {
                Outcome::Reject => self.rejections[i] += 1,
                Outcome::Degenerate => self.degenerate[i] += 1,
                Outcome::Retain => {}
            }
        }
        self.digest = self.digest.wrapping_add(fingerprint);
        self
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.rejections.iter_mut().zip(other.rejections) {
            *a += b;
        }
        for (a, b) in self.degenerate.iter_mut().zip(other.degenerate) {
            *a += b;
        }
        self.digest = self.digest.wrapping_add(other.digest);
        self
    }
}

fn check_run_config(variants: &[TestVariantId], reps: u64, alpha: f64) -> Result<(), HarnessError> {
    if reps == 0 {
        return Err(HarnessError::InvalidConfig("reps must be at least 1".into()));
    }
    if variants.is_empty() {
        return Err(HarnessError::InvalidConfig("no test variants given".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HarnessError::InvalidConfig(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(())
}

/// Runs all variants on `reps` shared replicates of one condition with the
/// default continuity correction. Replicates run on the current rayon pool.
pub fn run_condition(
    condition: &SimCondition,
    variants: &[TestVariantId],
    reps: u64,
    alpha: f64,
    master_seed: u64,
) -> Result<Vec<SimResult>, HarnessError> {
    run_condition_with(condition, variants, reps, alpha, master_seed, CorrectionPolicy::default())
}

pub fn run_condition_with(
    condition: &SimCondition,
    variants: &[TestVariantId],
    reps: u64,
    alpha: f64,
    master_seed: u64,
    correction: CorrectionPolicy,
) -> Result<Vec<SimResult>, HarnessError> {
    check_run_config(variants, reps, alpha)?;
    condition.check()?;
    let n = variants.len();
    let tally = (0..reps)
        .into_par_iter()
        .try_fold(
            || Tally::zero(n),
            |t, r| {
                let (fp, outcomes) = evaluate_replicate(condition, variants, alpha, master_seed, r, correction)?;
                Ok::<_, HarnessError>(t.add(fp, &outcomes))
            },
        )
        .try_reduce(|| Tally::zero(n), |a, b| Ok(a.merge(b)))?;
    Ok(variants
        .iter()
        .enumerate()
        .map(|(i, v)| SimResult {
            condition: *condition,
            variant: *v,
            reps,
            rejections: tally.rejections[i],
            degenerate: tally.degenerate[i],
            seed: master_seed,
            datasets_digest: tally.digest,
        })
        .collect())
}

/// Runs every condition of a grid on a pool of `parallelism` threads
/// (0 picks the number of CPUs). Results are in grid order, then variant
/// order, and do not depend on the thread count.
pub fn run_grid(
    grid: &[SimCondition],
    variants: &[TestVariantId],
    reps: u64,
    alpha: f64,
    master_seed: u64,
    parallelism: usize,
) -> Result<Vec<SimResult>, HarnessError> {
    run_grid_with(grid, variants, reps, alpha, master_seed, parallelism, CorrectionPolicy::default())
}

pub fn run_grid_with(
    grid: &[SimCondition],
    variants: &[TestVariantId],
    reps: u64,
    alpha: f64,
    master_seed: u64,
    parallelism: usize,
    correction: CorrectionPolicy,
) -> Result<Vec<SimResult>, HarnessError> {
    check_run_config(variants, reps, alpha)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    pool.install(|| {
        let mut out = Vec::with_capacity(grid.len() * variants.len());
        for condition in grid {
            out.extend(run_condition_with(condition, variants, reps, alpha, master_seed, correction)?);
        }
        Ok(out)
    })
}

/// Column order of the results CSV.
pub const RESULTS_HEADER: [&str; 21] = [
    "condition_id",
    "mu_a",
    "mu_b",
    "sigma_a2",
    "sigma_ab",
    "sigma_b2",
    "k",
    "pi",
    "bias",
    "bias_strength",
    "test_family",
    "measure",
    "axis",
    "weighting",
    "estimator",
    "sided",
    "reps",
    "rejections",
    "rate",
    "degenerate",
    "seed",
];

fn result_record(r: &SimResult) -> Vec<String> {
    let c = &r.condition;
    let t = r.variant.test;
    vec![
        c.id.to_string(),
        c.params.mu[0].to_string(),
        c.params.mu[1].to_string(),
        c.params.sigma_a2.to_string(),
        c.params.sigma_ab.to_string(),
        c.params.sigma_b2.to_string(),
        c.k.to_string(),
        c.pi.to_string(),
        c.bias.token().to_string(),
        c.bias.strength().to_string(),
        t.family().to_string(),
        r.variant.measure.token().to_string(),
        t.axis_token().to_string(),
        t.weighting_token().to_string(),
        t.estimator_token().to_string(),
        r.variant.sided.token().to_string(),
        r.reps.to_string(),
        r.rejections.to_string(),
        r.rate().to_string(),
        r.degenerate.to_string(),
        r.seed.to_string(),
    ]
}

pub fn write_results_csv<W: Write>(writer: W, results: &[SimResult]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RESULTS_HEADER)?;
    for r in results {
        w.write_record(result_record(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Wilson score interval for a binomial proportion at 95% confidence.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Field a summary can be grouped by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupField {
    Condition,
    Mu,
    Sigma,
    K,
    Pi,
    Bias,
    Family,
    Measure,
    /// Full variant short form.
    Variant,
    Sided,
}

impl GroupField {
    pub fn name(self) -> &'static str {
        match self {
            GroupField::Condition => "condition",
            GroupField::Mu => "mu",
            GroupField::Sigma => "sigma",
            GroupField::K => "k",
            GroupField::Pi => "pi",
            GroupField::Bias => "bias",
            GroupField::Family => "family",
            GroupField::Measure => "measure",
            GroupField::Variant => "variant",
            GroupField::Sided => "sided",
        }
    }

    fn value(self, r: &SimResult) -> String {
        let c = &r.condition;
        match self {
            GroupField::Condition => c.id.to_string(),
            GroupField::Mu => format!("({},{})", c.params.mu[0], c.params.mu[1]),
            GroupField::Sigma => format!("({},{},{})", c.params.sigma_a2, c.params.sigma_ab, c.params.sigma_b2),
            GroupField::K => c.k.to_string(),
            GroupField::Pi => c.pi.to_string(),
            GroupField::Bias => match c.bias.token() {
                "none" => "none".to_string(),
                t => format!("{t}:{}", c.bias.strength()),
            },
            GroupField::Family => r.variant.test.family().to_string(),
            GroupField::Measure => r.variant.measure.token().to_string(),
            GroupField::Variant => r.variant.short_form(),
            GroupField::Sided => r.variant.sided.token().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    /// (field name, value) pairs in the requested order.
    pub key: Vec<(String, String)>,
    /// Unweighted mean of the per-result rates.
    pub mean_rate: f64,
    pub results: usize,
    pub reps: u64,
    pub rejections: u64,
    /// Wilson 95% interval of the pooled rate rejections/reps.
    pub wilson: (f64, f64),
}

impl SummaryRow {
    pub fn key_string(&self) -> String {
        self.key
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Groups results by the given fields, keeping groups in order of first
/// appearance. An empty `group_by` pools everything into one row.
pub fn summarize(results: &[SimResult], group_by: &[GroupField]) -> Result<Vec<SummaryRow>, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let mut index: HashMap<Vec<String>, usize> = HashMap::new();
    let mut groups: Vec<(Vec<String>, Vec<&SimResult>)> = Vec::new();
    for r in results {
        let key: Vec<String> = group_by.iter().map(|g| g.value(r)).collect();
        let i = *index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[i].1.push(r);
    }
    Ok(groups
        .into_iter()
        .map(|(key, members)| {
            let reps: u64 = members.iter().map(|r| r.reps).sum();
            let rejections: u64 = members.iter().map(|r| r.rejections).sum();
            SummaryRow {
                key: group_by
                    .iter()
                    .zip(key)
                    .map(|(g, v)| (g.name().to_string(), v))
                    .collect(),
                mean_rate: members.iter().map(|r| r.rate()).sum::<f64>() / members.len() as f64,
                results: members.len(),
                reps,
                rejections,
                wilson: wilson_interval(rejections, reps),
            }
        })
        .collect())
}
