//! Weighted least squares for a straight line.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::pooling::weighted_mean;
use crate::error::TestError;

/// Intercept and slope of `y = b0 + b1·x` with their standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionFit {
    pub b0: f64,
    pub b1: f64,
    pub se_b0: f64,
    pub se_b1: f64,
    /// Residual degrees of freedom, k - 2.
    pub df: usize,
}

impl RegressionFit {
    pub fn t_intercept(&self) -> f64 {
        ratio(self.b0, self.se_b0)
    }

    pub fn t_slope(&self) -> f64 {
        ratio(self.b1, self.se_b1)
    }
}

// A perfect fit leaves a zero standard error; a zero estimate is then "no
// evidence", anything else is infinitely significant.
fn ratio(estimate: f64, se: f64) -> f64 {
    if se > 0.0 {
        estimate / se
    } else if estimate == 0.0 {
        0.0
    } else {
        estimate.signum() * f64::INFINITY
    }
}

/// Fits `y = b0 + b1·x` by weighted least squares. Weights are relative:
/// the residual variance is estimated from the weighted residual sum of
/// squares with k - 2 degrees of freedom, as in ordinary `lm` with weights.
pub fn weighted_line_fit(x: &[f64], y: &[f64], weights: &[f64]) -> Result<RegressionFit, TestError> {
    if x.len() != y.len() || x.len() != weights.len() {
        return Err(TestError::LengthMismatch {
            left: x.len(),
            right: y.len().min(weights.len()),
        });
    }
    let k = x.len();
    if k < 3 {
        return Err(TestError::TooFewStudies { k, min: 3 });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(TestError::InvalidConfig("weights must be finite and non-negative".into()));
    }

    let sw: f64 = weights.iter().sum();
    let x_bar = weighted_mean(x.iter().copied().zip(weights.iter().copied()));
    let y_bar = weighted_mean(y.iter().copied().zip(weights.iter().copied()));

    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut sx2 = 0.0;
    for i in 0..k {
        let dx = x[i] - x_bar;
        sxx += weights[i] * dx * dx;
        sxy += weights[i] * dx * (y[i] - y_bar);
        sx2 += weights[i] * x[i] * x[i];
    }
    if !(sxx > 1e-13 * sx2) {
        return Err(TestError::SingularDesign);
    }

    let b1 = sxy / sxx;
    let b0 = y_bar - b1 * x_bar;
    let rss: f64 = (0..k)
        .map(|i| {
            let r = y[i] - b0 - b1 * x[i];
            weights[i] * r * r
        })
        .sum();
    let df = k - 2;
    let s2 = rss / df as f64;

    Ok(RegressionFit {
        b0,
        b1,
        se_b0: (s2 * (1.0 / sw + x_bar * x_bar / sxx)).sqrt(),
        se_b1: (s2 / sxx).sqrt(),
        df,
    })
}

/// Upper tail P(T > t) of Student's t with `df` degrees of freedom.
pub(crate) fn t_upper(t: f64, df: usize) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    if t == f64::INFINITY {
        return 0.0;
    }
    if t == f64::NEG_INFINITY {
        return 1.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    dist.sf(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Solves the raw 2×2 normal equations X'WX b = X'Wy by Cramer's rule and
    /// takes the standard errors from the explicit inverse.
    fn normal_equations(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64, f64) {
        let (mut a, mut b, mut c, mut d, mut e) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..x.len() {
            a += w[i];
            b += w[i] * x[i];
            c += w[i] * x[i] * x[i];
            d += w[i] * y[i];
            e += w[i] * x[i] * y[i];
        }
        let det = a * c - b * b;
        let b0 = (c * d - b * e) / det;
        let b1 = (a * e - b * d) / det;
        let rss: f64 = (0..x.len()).map(|i| w[i] * (y[i] - b0 - b1 * x[i]).powi(2)).sum();
        let s2 = rss / (x.len() - 2) as f64;
        (b0, b1, (s2 * c / det).sqrt(), (s2 * a / det).sqrt())
    }

    #[test]
    fn exact_line() {
        let fit = weighted_line_fit(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0], &[1.0; 3]).unwrap();
        assert_eq!((fit.b0, fit.b1, fit.se_b0), (0.0, 1.0, 0.0));
        assert_eq!(fit.t_intercept(), 0.0);
        assert_eq!(fit.df, 1);
    }

    #[test]
    fn hand_example() {
        // y = 1 + 2x with residuals (0.5, -1, 0.5) orthogonal to [1, x].
        let x = [0.0, 1.0, 2.0];
        let y = [1.5, 2.0, 5.5];
        let fit = weighted_line_fit(&x, &y, &[1.0; 3]).unwrap();
        assert_relative_eq!(fit.b0, 1.0, epsilon = 1e-14);
        assert_relative_eq!(fit.b1, 2.0, epsilon = 1e-14);
        // RSS = 1.5, s² = 1.5, Sxx = 2, var(b1) = 0.75, var(b0) = 1.5·(1/3 + 1/2)
        assert_relative_eq!(fit.se_b1, 0.75f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(fit.se_b0, 1.25f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn constant_predictor_is_singular() {
        assert_eq!(
            weighted_line_fit(&[2.0; 4], &[1.0, 2.0, 3.0, 4.0], &[1.0; 4]),
            Err(TestError::SingularDesign)
        );
    }

    #[test]
    fn t_tail() {
        assert_relative_eq!(t_upper(0.0, 5), 0.5, epsilon = 1e-12);
        // qt(0.95, 10) = 1.812461
        assert_relative_eq!(t_upper(1.812461, 10), 0.05, epsilon = 1e-6);
    }

    proptest! {
        #[test]
        fn agrees_with_normal_equations(
            pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, 0.05f64..20.0), 3..40)
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let w: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1.0);
            let fit = weighted_line_fit(&x, &y, &w).unwrap();
            let (b0, b1, se0, se1) = normal_equations(&x, &y, &w);
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * b.abs().max(1e-3);
            prop_assert!(close(fit.b0, b0), "{} {}", fit.b0, b0);
            prop_assert!(close(fit.b1, b1), "{} {}", fit.b1, b1);
            prop_assert!(close(fit.se_b0, se0), "{} {}", fit.se_b0, se0);
            prop_assert!(close(fit.se_b1, se1), "{} {}", fit.se_b1, se1);
        }
    }
}
