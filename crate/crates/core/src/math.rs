//! Scalar helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};

/// Lower clip applied to every probability that enters a log-likelihood.
pub const PROB_CLIP: f64 = 1e-6;

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// Quasibinomial loss of a single prediction; `q` is clipped first.
#[inline]
pub fn nll(y: f64, q: f64) -> f64 {
    let q = clip_prob(q);
    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_logit_roundtrip() {
        for &x in &[-30.0, -3.2, 0.0, 0.7, 25.0] {
            let p = expit(x);
            assert!((logit(p) - x).abs() < 1e-6 * (1.0 + x.abs()));
        }
        assert_eq!(expit(0.0), 0.5);
        assert!(expit(-800.0) >= 0.0 && expit(800.0) <= 1.0);
    }

    #[test]
    fn nll_is_finite_at_the_boundary() {
        assert!(nll(1.0, 0.0).is_finite());
        assert!(nll(0.0, 1.0).is_finite());
        assert!((nll(1.0, 0.5) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn normal_quantile_matches_table() {
        assert!((std_normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((std_normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-11);
    }
}
