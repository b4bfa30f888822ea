//! Kendall's rank correlation with tie correction.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::TestError;

/// Largest sample for which the exact null distribution is used (no ties).
pub const EXACT_MAX_N: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KendallTau {
    /// Tau-b.
    pub tau: f64,
    /// Concordant minus discordant pairs.
    pub s: i64,
    /// Null variance of `s`, tie corrected.
    pub var_s: f64,
    /// P(S >= s) under independence.
    pub p_greater: f64,
    /// P(S <= s) under independence.
    pub p_less: f64,
    /// Whether the p-values come from exact enumeration.
    pub exact: bool,
}

impl KendallTau {
    pub fn p_two_sided(&self) -> f64 {
        (2.0 * self.p_greater.min(self.p_less)).min(1.0)
    }
}

/// Kendall's tau-b of `xs` against `ys` with its upper-tail p-value.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), TestError> {
    let r = kendall(xs, ys)?;
    Ok((r.tau, r.p_greater))
}

/// Full Kendall computation. Exact p-values for n <= 7 without ties,
/// otherwise the normal approximation with a continuity correction of one.
pub fn kendall(xs: &[f64], ys: &[f64]) -> Result<KendallTau, TestError> {
    if xs.len() != ys.len() {
        return Err(TestError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    let n = xs.len();
    if n < 3 {
        return Err(TestError::TooFewStudies { k: n, min: 3 });
    }

    let mut s = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            s += sign(xs[j] - xs[i]) * sign(ys[j] - ys[i]);
        }
    }

    let tx = tie_groups(xs);
    let ty = tie_groups(ys);
    let nf = n as f64;
    let n0 = nf * (nf - 1.0) / 2.0;
    let pairs = |t: &[f64]| t.iter().map(|t| t * (t - 1.0) / 2.0).sum::<f64>();
    let (n1, n2) = (pairs(&tx), pairs(&ty));

    if n1 == n0 || n2 == n0 {
        // One variable is constant: no ordering information at all.
        return Ok(KendallTau {
            tau: 0.0,
            s: 0,
            var_s: 0.0,
            p_greater: 0.5,
            p_less: 0.5,
            exact: false,
        });
    }
    let tau = s as f64 / ((n0 - n1) * (n0 - n2)).sqrt();

    let v = |t: &[f64]| t.iter().map(|t| t * (t - 1.0) * (2.0 * t + 5.0)).sum::<f64>();
    let v1 = |t: &[f64]| t.iter().map(|t| t * (t - 1.0)).sum::<f64>();
    let v2 = |t: &[f64]| t.iter().map(|t| t * (t - 1.0) * (t - 2.0)).sum::<f64>();
    let mut var_s = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - v(&tx) - v(&ty)) / 18.0
        + v1(&tx) * v1(&ty) / (2.0 * nf * (nf - 1.0));
    if n > 2 {
        var_s += v2(&tx) * v2(&ty) / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    }

    let ties = tx.iter().chain(&ty).any(|&t| t > 1.0);
    let (p_greater, p_less, exact) = if n <= EXACT_MAX_N && !ties {
        let (g, l) = exact_tails(n, s);
        (g, l, true)
    } else {
        let sd = var_s.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let g = normal.sf((s as f64 - 1.0) / sd);
        let l = normal.cdf((s as f64 + 1.0) / sd);
        (g.min(1.0), l.min(1.0), false)
    };

    Ok(KendallTau {
        tau,
        s,
        var_s,
        p_greater,
        p_less,
        exact,
    })
}

fn sign(d: f64) -> i64 {
    if d > 0.0 {
        1
    } else if d < 0.0 {
        -1
    } else {
        0
    }
}

/// Sizes of groups of equal values, as floats.
fn tie_groups(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut groups = Vec::new();
    let mut run = 1usize;
    for i in 1..sorted.len() {
        if sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            groups.push(run as f64);
            run = 1;
        }
    }
    groups.push(run as f64);
    groups
}

/// Number of permutations of n items with each inversion count
/// (Mahonian numbers).
fn inversion_counts(n: usize) -> Vec<f64> {
    let max = n * (n - 1) / 2;
    let mut counts = vec![0.0; max + 1];
    counts[0] = 1.0;
    for m in 2..=n {
        let mut next = vec![0.0; max + 1];
        for (inv, &c) in counts.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for add in 0..m {
                if inv + add <= max {
                    next[inv + add] += c;
                }
            }
        }
        counts = next;
    }
    counts
}

/// Exact P(S >= s) and P(S <= s) for untied samples of size n.
fn exact_tails(n: usize, s: i64) -> (f64, f64) {
    let counts = inversion_counts(n);
    let total: f64 = counts.iter().sum();
    let n0 = (n * (n - 1) / 2) as i64;
    // S = n0 - 2·inversions
    let (mut ge, mut le) = (0.0, 0.0);
    for (inv, &c) in counts.iter().enumerate() {
        let si = n0 - 2 * inv as i64;
        if si >= s {
            ge += c;
        }
        if si <= s {
            le += c;
        }
    }
    (ge / total, le / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Visits every permutation of 0..n (Heap's algorithm).
    fn permutations(n: usize, mut visit: impl FnMut(&[usize])) {
        let mut a: Vec<usize> = (0..n).collect();
        let mut c = vec![0usize; n];
        visit(&a);
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    a.swap(0, i);
                } else {
                    a.swap(c[i], i);
                }
                visit(&a);
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
    }

    /// Exhaustive permutation p-value P(S_perm >= S_obs).
    fn brute_p_greater(xs: &[f64], ys: &[f64]) -> f64 {
        let score = |ys: &[f64]| {
            let mut s = 0i64;
            for i in 0..xs.len() {
                for j in (i + 1)..xs.len() {
                    s += sign(xs[j] - xs[i]) * sign(ys[j] - ys[i]);
                }
            }
            s
        };
        let observed = score(ys);
        let (mut hits, mut total) = (0u64, 0u64);
        permutations(ys.len(), |p| {
            let permuted: Vec<f64> = p.iter().map(|&i| ys[i]).collect();
            total += 1;
            if score(&permuted) >= observed {
                hits += 1;
            }
        });
        hits as f64 / total as f64
    }

    #[test]
    fn identity_and_reversal() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&a, &a).unwrap().0, 1.0);
        assert_eq!(kendall_tau(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap().0, -1.0);
    }

    #[test]
    fn one_discordant_pair_of_three() {
        let (tau, _) = kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert_relative_eq!(tau, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn one_discordant_pair_of_six() {
        let r = kendall(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 4.0, 3.0]).unwrap();
        assert_eq!(r.s, 4);
        assert_relative_eq!(r.tau, 4.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(
            kendall(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(TestError::LengthMismatch { left: 3, right: 2 })
        );
    }

    #[test]
    fn constant_variable_gives_no_evidence() {
        let r = kendall(&[0.3; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!((r.tau, r.p_greater), (0.0, 0.5));
    }

    #[test]
    fn exact_tails_match_permutations() {
        let cases: [&[f64]; 4] = [
            &[2.0, 1.0, 3.0],
            &[1.0, 3.0, 2.0, 4.0],
            &[5.0, 1.0, 4.0, 2.0, 3.0],
            &[1.0, 2.0, 4.0, 3.0, 6.0, 5.0, 7.0],
        ];
        for ys in cases {
            let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
            let r = kendall(&xs, ys).unwrap();
            assert!(r.exact);
            assert_relative_eq!(r.p_greater, brute_p_greater(&xs, ys), epsilon = 1e-12);
        }
    }

    #[test]
    fn perfect_concordance_tail() {
        for n in 3..=7usize {
            let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let r = kendall(&xs, &xs).unwrap();
            let factorial: f64 = (1..=n).map(|i| i as f64).product();
            assert_relative_eq!(r.p_greater, 1.0 / factorial, epsilon = 1e-15);
        }
        // Beyond the exact range: S = 45, var = 10·9·25/18 = 125.
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let r = kendall(&xs, &xs).unwrap();
        assert_eq!(r.tau, 1.0);
        assert!(!r.exact);
        let expected = Normal::new(0.0, 1.0).unwrap().sf(44.0 / 125f64.sqrt());
        assert_relative_eq!(r.p_greater, expected, epsilon = 1e-15);
    }

    #[test]
    fn normal_approximation_close_to_exact_for_small_n() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        for n in 3..=7usize {
            let nf = n as f64;
            let sd = (nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0).sqrt();
            let n0 = (n * (n - 1) / 2) as i64;
            for s in (-n0..=n0).step_by(2) {
                let (exact, _) = exact_tails(n, s);
                let approx = normal.sf((s as f64 - 1.0) / sd);
                assert!((exact - approx).abs() < 0.05, "n={n} s={s}: {exact} vs {approx}");
            }
        }
    }

    #[test]
    fn tie_corrected_variance() {
        // Against the tie-corrected formula evaluated by hand:
        // xs ties {2,2}, ys ties {3}; n = 5.
        let xs = [1.0, 1.0, 2.0, 3.0, 3.0];
        let ys = [1.0, 2.0, 2.0, 2.0, 3.0];
        let r = kendall(&xs, &ys).unwrap();
        assert!(!r.exact);
        // (5·4·15 - 2·(2·1·9) - 3·2·11)/18 + (2·2)·(6)/(2·5·4) + 0·6/(9·5·4·3)
        let expected = (300.0 - 36.0 - 66.0) / 18.0 + 4.0 * 6.0 / 40.0;
        assert_relative_eq!(r.var_s, expected, epsilon = 1e-12);
    }
}
