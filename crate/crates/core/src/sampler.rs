//! Synthetic diagnostic meta-analyses.
//!
//! True logit sensitivities and logit false-positive rates are drawn from a
//! bivariate normal, turned into 2×2 tables with binomial sampling error, and
//! publication bias is optionally injected by dropping the least accurate
//! studies (selection) or by shifting a third of the studies towards higher
//! accuracy (mixture).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::SamplerError;
use crate::model::{MetaDataset, StudyTable};

/// Mean and between-study covariance of (logit Sen, logit (1 - Spe)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateParams {
    pub mu: [f64; 2],
    pub sigma_a2: f64,
    pub sigma_ab: f64,
    pub sigma_b2: f64,
}

impl BivariateParams {
    pub fn new(mu: [f64; 2], sigma_a2: f64, sigma_ab: f64, sigma_b2: f64) -> Result<Self, SamplerError> {
        let p = Self {
            mu,
            sigma_a2,
            sigma_ab,
            sigma_b2,
        };
        p.check()?;
        Ok(p)
    }

    /// Fixed effects: zero covariance.
    pub fn fixed(mu: [f64; 2]) -> Self {
        Self {
            mu,
            sigma_a2: 0.0,
            sigma_ab: 0.0,
            sigma_b2: 0.0,
        }
    }

    pub fn check(&self) -> Result<(), SamplerError> {
        let finite = self.mu.iter().all(|v| v.is_finite())
            && [self.sigma_a2, self.sigma_ab, self.sigma_b2].iter().all(|v| v.is_finite());
        if !finite {
            return Err(SamplerError::InvalidCondition("non-finite parameter".into()));
        }
        let det = self.sigma_a2 * self.sigma_b2 - self.sigma_ab * self.sigma_ab;
        let scale = self.sigma_a2.abs().max(self.sigma_b2.abs()).max(1.0);
        if self.sigma_a2 < 0.0 || self.sigma_b2 < 0.0 || det < -1e-12 * scale * scale {
            return Err(SamplerError::NonPsdCovariance);
        }
        Ok(())
    }

    pub fn is_fixed(&self) -> bool {
        self.sigma_a2 == 0.0 && self.sigma_ab == 0.0 && self.sigma_b2 == 0.0
    }

    /// Symmetric square root of the covariance matrix, as rows.
    pub fn sqrt_sigma(&self) -> [[f64; 2]; 2] {
        let (a, b, c) = (self.sigma_a2, self.sigma_ab, self.sigma_b2);
        let s = (a * c - b * b).max(0.0).sqrt();
        let t = (a + c + 2.0 * s).sqrt();
        if t == 0.0 {
            return [[0.0; 2]; 2];
        }
        [[(a + s) / t, b / t], [b / t, (c + s) / t]]
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// How publication bias is introduced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "lowercase")]
pub enum BiasSpec {
    None,
    /// Simulate k + l studies and drop the l = round(fraction·k) with the
    /// lowest Youden index.
    Selection {
        fraction: f64,
        #[serde(default)]
        basis: SelectionBasis,
    },
    /// round(share·k) studies come from the mean shifted by `eta`.
    Mixture {
        eta: [f64; 2],
        #[serde(default = "default_mixture_share")]
        share: f64,
    },
}

fn default_mixture_share() -> f64 {
    1.0 / 3.0
}

/// Which Youden index ranks studies for selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionBasis {
    /// From the realized 2×2 table.
    #[default]
    Observed,
    /// From the true sensitivity and specificity.
    True,
}

impl BiasSpec {
    pub fn selection(fraction: f64) -> Self {
        BiasSpec::Selection {
            fraction,
            basis: SelectionBasis::Observed,
        }
    }

    pub fn mixture(eta: [f64; 2]) -> Self {
        BiasSpec::Mixture {
            eta,
            share: default_mixture_share(),
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            BiasSpec::None => "none",
            BiasSpec::Selection { .. } => "selection",
            BiasSpec::Mixture { .. } => "mixture",
        }
    }

    /// Selection fraction, or the sensitivity shift of a mixture.
    pub fn strength(&self) -> f64 {
        match self {
            BiasSpec::None => 0.0,
            BiasSpec::Selection { fraction, .. } => *fraction,
            BiasSpec::Mixture { eta, .. } => eta[0],
        }
    }

    fn check(&self) -> Result<(), SamplerError> {
        match *self {
            BiasSpec::None => Ok(()),
            BiasSpec::Selection { fraction, .. } => {
                if (0.0..1.0).contains(&fraction) {
                    Ok(())
                } else {
                    Err(SamplerError::InvalidCondition(format!(
                        "selection fraction {fraction} outside [0, 1)"
                    )))
                }
            }
            BiasSpec::Mixture { eta, share } => {
                if eta[0] < 0.0 || eta[1] > 0.0 {
                    Err(SamplerError::InvalidCondition(
                        "mixture shift must raise sensitivity and lower the false-positive rate".into(),
                    ))
                } else if !(0.0..=1.0).contains(&share) {
                    Err(SamplerError::InvalidCondition(format!("mixture share {share} outside [0, 1]")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// One cell of a simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimCondition {
    /// Position in its grid; also keys the random streams of the condition.
    pub id: usize,
    pub params: BivariateParams,
    pub k: usize,
    /// Prevalence: n1 = round(pi·N).
    pub pi: f64,
    pub n_min: u64,
    pub n_max: u64,
    pub bias: BiasSpec,
}

impl SimCondition {
    pub fn new(
        id: usize,
        params: BivariateParams,
        k: usize,
        pi: f64,
        n_range: (u64, u64),
        bias: BiasSpec,
    ) -> Result<Self, SamplerError> {
        let c = Self {
            id,
            params,
            k,
            pi,
            n_min: n_range.0,
            n_max: n_range.1,
            bias,
        };
        c.check()?;
        Ok(c)
    }

    pub fn check(&self) -> Result<(), SamplerError> {
        self.params.check()?;
        self.bias.check()?;
        if self.k < 3 {
            return Err(SamplerError::InvalidCondition(format!("k = {} < 3", self.k)));
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(SamplerError::InvalidCondition(format!("prevalence {} outside (0, 1)", self.pi)));
        }
        if self.n_min < 2 || self.n_min > self.n_max {
            return Err(SamplerError::InvalidCondition(format!(
                "sample-size range [{}, {}] invalid (need 2 <= n_min <= n_max)",
                self.n_min, self.n_max
            )));
        }
        Ok(())
    }

    /// Number of extra studies simulated and then dropped under selection.
    pub fn selection_count(&self) -> usize {
        match self.bias {
            BiasSpec::Selection { fraction, .. } => round_half_up(fraction * self.k as f64) as usize,
            _ => 0,
        }
    }

    /// Number of studies drawn from the shifted component under mixture.
    pub fn mixture_count(&self) -> usize {
        match self.bias {
            BiasSpec::Mixture { share, .. } => round_half_up(share * self.k as f64) as usize,
            _ => 0,
        }
    }
}

pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Random stream of one replicate of one condition. ChaCha is counter based:
/// the master seed keys the generator and (condition, replicate) selects an
/// independent stream, so results never depend on execution order.
pub fn replicate_rng(master_seed: u64, condition_id: usize, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((condition_id as u64) << 40) ^ replicate);
    rng
}

/// Draws `count` (theta_A, theta_B) pairs.
pub fn sample_logit_pairs<R: Rng + ?Sized>(
    params: &BivariateParams,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>, SamplerError> {
    params.check()?;
    Ok(draw_pairs(params, params.mu, count, rng))
}

fn draw_pairs<R: Rng + ?Sized>(
    params: &BivariateParams,
    mean: [f64; 2],
    count: usize,
    rng: &mut R,
) -> Vec<(f64, f64)> {
    if params.is_fixed() {
        return vec![(mean[0], mean[1]); count];
    }
    let root = params.sqrt_sigma();
    (0..count)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            (
                mean[0] + root[0][0] * z1 + root[0][1] * z2,
                mean[1] + root[1][0] * z1 + root[1][1] * z2,
            )
        })
        .collect()
}

/// Realizes a 2×2 table from true logits with binomial sampling error.
pub fn realize_study<R: Rng + ?Sized>(theta_a: f64, theta_b: f64, n1: u64, n2: u64, rng: &mut R) -> StudyTable {
    let x = Binomial::new(n1, logistic(theta_a)).expect("probability in [0, 1]").sample(rng);
    let y = Binomial::new(n2, logistic(theta_b)).expect("probability in [0, 1]").sample(rng);
    StudyTable {
        x,
        w: n1 - x,
        y,
        z: n2 - y,
    }
}

/// Diseased/healthy split of a study of size `n` at prevalence `pi`, keeping
/// both groups non-empty.
pub fn split_by_prevalence(n: u64, pi: f64) -> (u64, u64) {
    let n1 = (round_half_up(pi * n as f64) as u64).clamp(1, n - 1);
    (n1, n - n1)
}

/// Draws `count` study sizes, each split into (n1, n2).
pub fn sample_sizes<R: Rng + ?Sized>(condition: &SimCondition, count: usize, rng: &mut R) -> Vec<(u64, u64)> {
    (0..count)
        .map(|_| split_by_prevalence(rng.gen_range(condition.n_min..=condition.n_max), condition.pi))
        .collect()
}

/// A generated meta-analysis with the bookkeeping tests need to check the
/// bias mechanisms.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMeta {
    pub dataset: MetaDataset,
    /// True (theta_A, theta_B) of each returned study.
    pub true_logits: Vec<(f64, f64)>,
    /// Whether each returned study came from the shifted mixture component.
    pub shifted: Vec<bool>,
    /// Studies removed by selection.
    pub dropped: Vec<StudyTable>,
}

pub fn generate_meta_analysis<R: Rng + ?Sized>(
    condition: &SimCondition,
    rng: &mut R,
) -> Result<MetaDataset, SamplerError> {
    Ok(generate_tagged(condition, rng)?.dataset)
}

fn draw_study<R: Rng + ?Sized>(
    condition: &SimCondition,
    mean: [f64; 2],
    rng: &mut R,
) -> (StudyTable, (f64, f64)) {
    let (n1, n2) = split_by_prevalence(rng.gen_range(condition.n_min..=condition.n_max), condition.pi);
    let (a, b) = draw_pairs(&condition.params, mean, 1, rng)[0];
    (realize_study(a, b, n1, n2, rng), (a, b))
}

pub fn generate_tagged<R: Rng + ?Sized>(
    condition: &SimCondition,
    rng: &mut R,
) -> Result<GeneratedMeta, SamplerError> {
    condition.check()?;
    let k = condition.k;
    let label = format!("condition {}", condition.id);
    let mu = condition.params.mu;

    match condition.bias {
        BiasSpec::None => {
            let (tables, logits): (Vec<_>, Vec<_>) = (0..k).map(|_| draw_study(condition, mu, rng)).unzip();
            Ok(GeneratedMeta {
                dataset: MetaDataset::new(tables, label),
                true_logits: logits,
                shifted: vec![false; k],
                dropped: Vec::new(),
            })
        }
        BiasSpec::Selection { basis, .. } => {
            let l = condition.selection_count();
            let drawn: Vec<(StudyTable, (f64, f64))> =
                (0..k + l).map(|_| draw_study(condition, mu, rng)).collect();
            let youden = |i: usize| match basis {
                SelectionBasis::Observed => drawn[i].0.observed_youden(),
                SelectionBasis::True => logistic(drawn[i].1 .0) - logistic(drawn[i].1 .1),
            };
            // Lowest Youden first; among ties the smaller study goes first.
            let mut order: Vec<usize> = (0..k + l).collect();
            order.sort_by(|&a, &b| {
                youden(a)
                    .total_cmp(&youden(b))
                    .then(drawn[a].0.total().cmp(&drawn[b].0.total()))
                    .then(a.cmp(&b))
            });
            let mut drop = vec![false; k + l];
            for &i in &order[..l] {
                drop[i] = true;
            }
            let mut tables = Vec::with_capacity(k);
            let mut logits = Vec::with_capacity(k);
            let mut dropped = Vec::with_capacity(l);
            for (i, (table, logit)) in drawn.into_iter().enumerate() {
                if drop[i] {
                    dropped.push(table);
                } else {
                    tables.push(table);
                    logits.push(logit);
                }
            }
            Ok(GeneratedMeta {
                dataset: MetaDataset::new(tables, label),
                true_logits: logits,
                shifted: vec![false; k],
                dropped,
            })
        }
        BiasSpec::Mixture { eta, .. } => {
            let m = condition.mixture_count();
            let mut shifted: Vec<bool> = (0..k).map(|i| i < m).collect();
            shifted.shuffle(rng);
            let shifted_mean = [mu[0] + eta[0], mu[1] + eta[1]];
            let (tables, logits): (Vec<_>, Vec<_>) = shifted
                .iter()
                .map(|&s| draw_study(condition, if s { shifted_mean } else { mu }, rng))
                .unzip();
            Ok(GeneratedMeta {
                dataset: MetaDataset::new(tables, label),
                true_logits: logits,
                shifted,
                dropped: Vec::new(),
            })
        }
    }
}

/// Grid axes; the grid is their Cartesian product in the order
/// mu × sigma × k × pi × bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub mu: Vec<[f64; 2]>,
    /// (sigma_A², sigma_AB, sigma_B²) per entry.
    pub sigma: Vec<[f64; 3]>,
    pub k: Vec<usize>,
    pub pi: Vec<f64>,
    pub bias: Vec<BiasSpec>,
    #[serde(default = "default_n_range")]
    pub n_range: [u64; 2],
}

fn default_n_range() -> [u64; 2] {
    [50, 1000]
}

impl GridSpec {
    /// The 4 × 3 × 2 × 2 × 5 design with study sizes uniform on [50, 1000].
    pub fn standard() -> Self {
        Self {
            mu: vec![[0.0, 0.0], [1.0, -1.0], [2.0, -2.0], [2.0, -1.0]],
            sigma: vec![[0.0, 0.0, 0.0], [0.5, 0.3, 0.5], [1.0, 0.5, 1.0]],
            k: vec![10, 30],
            pi: vec![0.5, 0.2],
            bias: vec![
                BiasSpec::None,
                BiasSpec::selection(0.2),
                BiasSpec::selection(0.4),
                BiasSpec::mixture([0.75, -0.75]),
                BiasSpec::mixture([1.25, -1.25]),
            ],
            n_range: default_n_range(),
        }
    }

    pub fn expand(&self) -> Result<Vec<SimCondition>, SamplerError> {
        let mut out = Vec::new();
        for mu in &self.mu {
            for s in &self.sigma {
                let params = BivariateParams::new(*mu, s[0], s[1], s[2])?;
                for &k in &self.k {
                    for &pi in &self.pi {
                        for bias in &self.bias {
                            let id = out.len();
                            out.push(SimCondition::new(
                                id,
                                params,
                                k,
                                pi,
                                (self.n_range[0], self.n_range[1]),
                                *bias,
                            )?);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// The full 240-condition grid.
pub fn default_grid() -> Vec<SimCondition> {
    GridSpec::standard()
        .expand()
        .expect("default grid is valid")
}
