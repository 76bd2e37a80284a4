//! Exact finite-support check of the EIC as the pathwise-derivative representer.
//!
//! For a distribution on atoms `(w, a, y)` and a bounded mean-zero score `S`,
//! the path `p_ε = (1 + εS) p` stays inside the model for small `ε`. Ψ is
//! computed exactly on `p_ε`, and the central difference of `ε ↦ Ψ(p_ε)` at 0
//! must equal `E_p[D*(p) S]`.

use rand::Rng;

use crate::error::{Error, Result};

/// Joint probabilities over `strata × {0,1} × {0,1}`, indexed `(k, a, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

#[inline]
fn idx(k: usize, a: usize, y: usize) -> usize {
    4 * k + 2 * a + y
}

impl DiscreteDistribution {
    /// Builds `p(k,a,y) = p_W(k) g(a|k) Q̄(a,k)^y (1 − Q̄(a,k))^(1−y)`.
    pub fn from_factors(p_w: &[f64], g1: &[f64], qbar1: &[f64], qbar0: &[f64]) -> Result<Self> {
        let k = p_w.len();
        if k == 0 || g1.len() != k || qbar1.len() != k || qbar0.len() != k {
            return Err(Error::DimensionMismatch("factor vectors differ in length".into()));
        }
        let total: f64 = p_w.iter().sum();
        if (total - 1.0).abs() > 1e-12 || p_w.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidArgument("p_W must be positive and sum to 1".into()));
        }
        let open = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x < 1.0);
        if !open(g1) || !open(qbar1) || !open(qbar0) {
            return Err(Error::InvalidArgument(
                "g(1|w) and Q̄(a,w) must lie strictly inside (0, 1)".into(),
            ));
        }
        let mut probs = vec![0.0; 4 * k];
        for s in 0..k {
            for a in 0..2 {
                let g = if a == 1 { g1[s] } else { 1.0 - g1[s] };
                let q = if a == 1 { qbar1[s] } else { qbar0[s] };
                probs[idx(s, a, 1)] = p_w[s] * g * q;
                probs[idx(s, a, 0)] = p_w[s] * g * (1.0 - q);
            }
        }
        Self::from_probs(probs)
    }

    /// Wraps a joint probability vector laid out as `(k, a, y)`.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.len() % 4 != 0 {
            return Err(Error::DimensionMismatch(
                "joint probabilities must come in blocks of four per stratum".into(),
            ));
        }
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidArgument("every atom needs positive probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(DiscreteDistribution { probs })
    }

    /// Random distribution with `k` strata, propensities in `[0.1, 0.9]` and
    /// outcome means in `[0.05, 0.95]`.
    pub fn random<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p_w: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let g1: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..0.9)).collect();
        let q1: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..0.95)).collect();
        let q0: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..0.95)).collect();
        let mut d = Self::from_factors(&p_w, &g1, &q1, &q0).expect("valid random factors");
        // renormalize away rounding in p_W
        let s: f64 = d.probs.iter().sum();
        d.probs.iter_mut().for_each(|p| *p /= s);
        d
    }

    pub fn strata(&self) -> usize {
        self.probs.len() / 4
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn p_w(&self, k: usize) -> f64 {
        self.probs[4 * k..4 * k + 4].iter().sum()
    }

    pub fn g(&self, a: usize, k: usize) -> f64 {
        (self.probs[idx(k, a, 0)] + self.probs[idx(k, a, 1)]) / self.p_w(k)
    }

    pub fn qbar(&self, a: usize, k: usize) -> f64 {
        let p1 = self.probs[idx(k, a, 1)];
        p1 / (p1 + self.probs[idx(k, a, 0)])
    }

    pub fn blip(&self, k: usize) -> f64 {
        self.qbar(1, k) - self.qbar(0, k)
    }

    /// Exact `(ATE, VTE)`.
    pub fn psi(&self) -> (f64, f64) {
        let k = self.strata();
        let psi1: f64 = (0..k).map(|s| self.p_w(s) * self.blip(s)).sum();
        let psi2: f64 = (0..k).map(|s| self.p_w(s) * (self.blip(s) - psi1).powi(2)).sum();
        (psi1, psi2)
    }

    /// `(D*₁, D*₂)` at every atom, in `probs` order.
    pub fn eic(&self, mutation: EicMutation) -> Vec<(f64, f64)> {
        let (psi1, psi2) = self.psi();
        let mut out = Vec::with_capacity(self.probs.len());
        for k in 0..self.strata() {
            let c = self.blip(k) - psi1;
            for a in 0..2 {
                let h1 = if a == 1 { 1.0 / self.g(1, k) } else { -1.0 / self.g(0, k) };
                for y in 0..2 {
                    let r = y as f64 - self.qbar(a, k);
                    let d1 = h1 * r + c;
                    let mut d2 = 2.0 * c * h1 * r + c * c - psi2;
                    if mutation == EicMutation::FlipD2 {
                        d2 = -d2;
                    }
                    out.push((d1, d2));
                }
            }
        }
        out
    }

    /// `E_p[f]` for a function given at every atom.
    pub fn expect(&self, f: &[f64]) -> f64 {
        self.probs.iter().zip(f).map(|(p, v)| p * v).sum()
    }

    /// `(1 + εS) p`, erroring if any atom leaves `(0, 1)`.
    pub fn perturb(&self, score: &[f64], eps: f64) -> Result<Self> {
        let probs: Vec<f64> = self
            .probs
            .iter()
            .zip(score)
            .map(|(p, s)| (1.0 + eps * s) * p)
            .collect();
        if probs.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidScore(format!(
                "perturbed density leaves the simplex at eps = {eps}"
            )));
        }
        Ok(DiscreteDistribution { probs })
    }
}

/// Deliberately wrong EIC variants, used to show that the oracle detects them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EicMutation {
    #[default]
    None,
    FlipD2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    /// Central-difference derivative of `(Ψ₁, Ψ₂)` along the path.
    pub numeric: (f64, f64),
    /// `(E[D*₁ S], E[D*₂ S])`.
    pub inner: (f64, f64),
}

impl OracleResult {
    pub fn max_abs_diff(&self) -> f64 {
        (self.numeric.0 - self.inner.0)
            .abs()
            .max((self.numeric.1 - self.inner.1).abs())
    }
}

/// Random bounded score with mean zero under `p`.
pub fn random_score<R: Rng + ?Sized>(p: &DiscreteDistribution, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..p.probs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m = p.expect(&raw);
    raw.into_iter().map(|s| s - m).collect()
}

pub fn pathwise_derivative_oracle(p: &DiscreteDistribution, score: &[f64], eps: f64) -> Result<OracleResult> {
    pathwise_derivative_oracle_with(p, score, eps, EicMutation::None)
}

pub fn pathwise_derivative_oracle_with(
    p: &DiscreteDistribution,
    score: &[f64],
    eps: f64,
    mutation: EicMutation,
) -> Result<OracleResult> {
    if score.len() != p.probs.len() {
        return Err(Error::DimensionMismatch(format!(
            "score has {} entries for {} atoms",
            score.len(),
            p.probs.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let m = p.expect(score);
    if m.abs() > 1e-12 {
        return Err(Error::InvalidScore(format!("score has mean {m} under p")));
    }
    let plus = p.perturb(score, eps)?.psi();
    let minus = p.perturb(score, -eps)?.psi();
    let numeric = ((plus.0 - minus.0) / (2.0 * eps), (plus.1 - minus.1) / (2.0 * eps));
    let d = p.eic(mutation);
    let inner = (
        p.expect(&d.iter().zip(score).map(|(d, s)| d.0 * s).collect::<Vec<_>>()),
        p.expect(&d.iter().zip(score).map(|(d, s)| d.1 * s).collect::<Vec<_>>()),
    );
    Ok(OracleResult { numeric, inner })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_score_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = DiscreteDistribution::random(3, &mut rng);
        let r = pathwise_derivative_oracle(&p, &vec![0.0; 12], 1e-5).unwrap();
        assert_eq!(r.numeric, (0.0, 0.0));
        assert_eq!(r.inner, (0.0, 0.0));
    }

    #[test]
    fn single_stratum_vte_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = DiscreteDistribution::random(1, &mut rng);
        let s = random_score(&p, &mut rng);
        let r = pathwise_derivative_oracle(&p, &s, 1e-5).unwrap();
        assert!(r.numeric.1.abs() < 1e-12);
        assert!(r.inner.1.abs() < 1e-15);
        assert!((r.numeric.0 - r.inner.0).abs() < 1e-6);
    }

    #[test]
    fn riesz_representer_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let k = rng.random_range(1..=4);
            let p = DiscreteDistribution::random(k, &mut rng);
            for _ in 0..20 {
                let s = random_score(&p, &mut rng);
                let r = pathwise_derivative_oracle(&p, &s, 1e-5).unwrap();
                assert!(r.max_abs_diff() <= 1e-6, "{r:?}");
            }
        }
    }

    #[test]
    fn flipped_d2_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = DiscreteDistribution::random(3, &mut rng);
        let s = random_score(&p, &mut rng);
        let r = pathwise_derivative_oracle_with(&p, &s, 1e-5, EicMutation::FlipD2).unwrap();
        assert!(r.max_abs_diff() > 1e-6);
    }

    #[test]
    fn invalid_scores_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = DiscreteDistribution::random(2, &mut rng);
        let not_centered = vec![1.0; 8];
        assert!(matches!(
            pathwise_derivative_oracle(&p, &not_centered, 1e-5),
            Err(Error::InvalidScore(_))
        ));
        let s = random_score(&p, &mut rng);
        assert!(matches!(
            pathwise_derivative_oracle(&p, &s, 1e6),
            Err(Error::InvalidScore(_))
        ));
    }

    #[test]
    fn factor_accessors_round_trip() {
        let p = DiscreteDistribution::from_factors(&[0.25, 0.75], &[0.3, 0.6], &[0.8, 0.4], &[0.5, 0.1]).unwrap();
        assert!((p.p_w(1) - 0.75).abs() < 1e-15);
        assert!((p.g(1, 0) - 0.3).abs() < 1e-15);
        assert!((p.qbar(0, 1) - 0.1).abs() < 1e-15);
        let (psi1, psi2) = p.psi();
        assert!((psi1 - (0.25 * 0.3 + 0.75 * 0.3)).abs() < 1e-15);
        assert!(psi2.abs() < 1e-15);
    }
}
