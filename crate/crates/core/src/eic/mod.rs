//! Efficient influence curve of Ψ = (ATE, VTE).
//!
//! With blip `b(W) = Q̄(1,W) − Q̄(0,W)` and `H₁ = (2A − 1)/g(A|W)`,
//!
//! ```text
//! D*₁ = H₁ (Y − Q̄(A,W)) + b(W) − Ψ₁
//! D*₂ = 2 (b(W) − Ψ₁) H₁ (Y − Q̄(A,W)) + (b(W) − Ψ₁)² − Ψ₂
//! ```
//!
//! Empirical versions plug in the sample mean and variance of the fitted blips.

mod oracle;
mod remainder;

pub use oracle::{
    pathwise_derivative_oracle, pathwise_derivative_oracle_with, random_score, DiscreteDistribution,
    EicMutation, OracleResult,
};
pub use remainder::{remainder_r2, ArmValues, Remainder};

use crate::error::{Error, Result};
use crate::math::{mean, sample_sd};

/// `(h1, h2)` at the observed treatment.
pub fn clever_covariates(qbar1: &[f64], qbar0: &[f64], g1: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let b: Vec<f64> = qbar1.iter().zip(qbar0).map(|(q1, q0)| q1 - q0).collect();
    let b_bar = mean(&b);
    let h1: Vec<f64> = a
        .iter()
        .zip(g1)
        .map(|(&ai, &g)| arm_h1(ai, g))
        .collect();
    let h2 = h1.iter().zip(&b).map(|(h, bi)| 2.0 * (bi - b_bar) * h).collect();
    (h1, h2)
}

/// `(2a − 1)/g(a|w)` given `g1 = g(1|w)`.
#[inline]
pub fn arm_h1(a: f64, g1: f64) -> f64 {
    if a >= 0.5 {
        1.0 / g1
    } else {
        -1.0 / (1.0 - g1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EicEvaluation {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub mean1: f64,
    pub mean2: f64,
    pub sd1: f64,
    pub sd2: f64,
    /// Plug-in ATE: sample mean of the blips.
    pub psi1_hat: f64,
    /// Plug-in VTE: sample variance (1/n) of the blips.
    pub psi2_hat: f64,
}

impl EicEvaluation {
    pub fn n(&self) -> usize {
        self.d1.len()
    }

    /// Euclidean norm of `(mean1, mean2)`.
    pub fn norm(&self) -> f64 {
        self.mean1.hypot(self.mean2)
    }

    /// `|mean_j| ≤ sd_j / n` for both components.
    pub fn solved(&self) -> bool {
        let n = self.n() as f64;
        self.mean1.abs() <= self.sd1 / n && self.mean2.abs() <= self.sd2 / n
    }
}

/// Evaluates `D*` at every subject.
pub fn evaluate_eic(
    a: &[f64],
    y: &[f64],
    qbar1: &[f64],
    qbar0: &[f64],
    qbar_a: &[f64],
    g1: &[f64],
) -> Result<EicEvaluation> {
    let n = a.len();
    if [y.len(), qbar1.len(), qbar0.len(), qbar_a.len(), g1.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(Error::DimensionMismatch("EIC inputs differ in length".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("EIC of an empty sample".into()));
    }
    for i in 0..n {
        let expected = a[i] * qbar1[i] + (1.0 - a[i]) * qbar0[i];
        if (qbar_a[i] - expected).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "qbar_a[{i}] = {} but a·qbar1 + (1 − a)·qbar0 = {expected}",
                qbar_a[i]
            )));
        }
    }
    let b: Vec<f64> = qbar1.iter().zip(qbar0).map(|(q1, q0)| q1 - q0).collect();
    let psi1 = mean(&b);
    let centered: Vec<f64> = b.iter().map(|bi| bi - psi1).collect();
    let psi2 = centered.iter().map(|c| c * c).sum::<f64>() / n as f64;
    let mut d1 = Vec::with_capacity(n);
    let mut d2 = Vec::with_capacity(n);
    for i in 0..n {
        let h1 = arm_h1(a[i], g1[i]);
        let resid = y[i] - qbar_a[i];
        let c = centered[i];
        d1.push(h1 * resid + c);
        d2.push(2.0 * c * h1 * resid + c * c - psi2);
    }
    Ok(EicEvaluation {
        mean1: mean(&d1),
        mean2: mean(&d2),
        sd1: sample_sd(&d1),
        sd2: sample_sd(&d2),
        d1,
        d2,
        psi1_hat: psi1,
        psi2_hat: psi2,
    })
}
