//! One-step targeting of the outcome regression.
//!
//! Each step moves both counterfactual predictions on the logit scale by a
//! small `dε` along the clever covariates `(H₁, H₂)` weighted by the unit
//! vector `u = PₙD*/‖PₙD*‖₂`. Along the path `logit Q̄ − ε⟨H, u⟩` the empirical
//! loss has slope `‖PₙD*‖₂` at zero, so the step is taken at `ε = −dε`, which
//! lowers the loss at that rate. The loop stops once `|PₙD*ⱼ| ≤ σ̂ⱼ/n` for both
//! components, when the loss would rise (keeping the previous iterate), or
//! after `max_iter` steps.

use serde::{Deserialize, Serialize};

use crate::eic::{arm_h1, evaluate_eic, EicEvaluation};
use crate::error::{Error, Result};
use crate::math::{expit, logit, mean, nll};
use crate::nuisance::NuisancePredictions;

pub const DEFAULT_D_EPS: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    ToleranceMet,
    LossIncreased,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct TargetedFit {
    pub qbar1_star: Vec<f64>,
    pub qbar0_star: Vec<f64>,
    pub qbar_a_star: Vec<f64>,
    /// Accepted steps.
    pub iterations: usize,
    /// Empirical loss of every accepted iterate, starting with the initial fit.
    pub loss_trace: Vec<f64>,
    pub eic_norm_trace: Vec<f64>,
    pub stopped_reason: StopReason,
    /// EIC at the returned fit.
    pub eic: EicEvaluation,
}

impl TargetedFit {
    pub fn ate(&self) -> f64 {
        self.eic.psi1_hat
    }

    pub fn vte(&self) -> f64 {
        self.eic.psi2_hat
    }
}

fn check_lengths(qbar1: &[f64], qbar0: &[f64], g1: &[f64], a: &[f64], y: &[f64]) -> Result<()> {
    let n = a.len();
    if [qbar1.len(), qbar0.len(), g1.len(), y.len()].iter().any(|&l| l != n) {
        return Err(Error::DimensionMismatch("targeting inputs differ in length".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("targeting needs at least two subjects".into()));
    }
    Ok(())
}

fn observed(a: &[f64], q1: &[f64], q0: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(q1.iter().zip(q0))
        .map(|(&ai, (&x, &z))| if ai >= 0.5 { x } else { z })
        .collect()
}

fn empirical_loss(y: &[f64], qa: &[f64]) -> f64 {
    y.iter().zip(qa).map(|(&yi, &q)| nll(yi, q)).sum::<f64>() / y.len() as f64
}

/// `⟨(h1(a'), h2(a')), u⟩` for both arms of every subject.
fn directions(qbar1: &[f64], qbar0: &[f64], g1: &[f64], u: (f64, f64)) -> (Vec<f64>, Vec<f64>) {
    let b: Vec<f64> = qbar1.iter().zip(qbar0).map(|(x, z)| x - z).collect();
    let b_bar = mean(&b);
    let mut dir1 = Vec::with_capacity(b.len());
    let mut dir0 = Vec::with_capacity(b.len());
    for i in 0..b.len() {
        let weight = u.0 + 2.0 * (b[i] - b_bar) * u.1;
        dir1.push(arm_h1(1.0, g1[i]) * weight);
        dir0.push(arm_h1(0.0, g1[i]) * weight);
    }
    (dir1, dir0)
}

fn unit(eic: &EicEvaluation) -> Result<(f64, f64)> {
    let norm = eic.norm();
    if !(norm > 0.0) {
        return Err(Error::InvalidArgument(
            "empirical EIC mean is zero; nothing to target".into(),
        ));
    }
    Ok((eic.mean1 / norm, eic.mean2 / norm))
}

/// One targeting update of `(Q̄(1,·), Q̄(0,·))`.
pub fn targeting_step(
    qbar1: &[f64],
    qbar0: &[f64],
    g1: &[f64],
    a: &[f64],
    y: &[f64],
    d_eps: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(qbar1, qbar0, g1, a, y)?;
    if !(d_eps > 0.0) {
        return Err(Error::InvalidArgument(format!("d_eps must be positive, got {d_eps}")));
    }
    let qa = observed(a, qbar1, qbar0);
    let eic = evaluate_eic(a, y, qbar1, qbar0, &qa, g1)?;
    let u = unit(&eic)?;
    let (dir1, dir0) = directions(qbar1, qbar0, g1, u);
    let next1 = qbar1.iter().zip(&dir1).map(|(&q, d)| expit(logit(q) + d_eps * d)).collect();
    let next0 = qbar0.iter().zip(&dir0).map(|(&q, d)| expit(logit(q) + d_eps * d)).collect();
    Ok((next1, next0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetingOptions {
    pub d_eps: f64,
    pub max_iter: usize,
}

impl Default for TargetingOptions {
    fn default() -> Self {
        TargetingOptions {
            d_eps: DEFAULT_D_EPS,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Iterates [`targeting_step`] from the initial predictions until a stop rule fires.
pub fn run_targeting(
    a: &[f64],
    y: &[f64],
    nuisance: &NuisancePredictions,
    opts: &TargetingOptions,
) -> Result<TargetedFit> {
    let g1 = &nuisance.g1;
    check_lengths(&nuisance.qbar1, &nuisance.qbar0, g1, a, y)?;
    if !(opts.d_eps > 0.0) {
        return Err(Error::InvalidArgument(format!("d_eps must be positive, got {}", opts.d_eps)));
    }
    let n = a.len();
    let mut logit1: Vec<f64> = nuisance.qbar1.iter().map(|&q| logit(q)).collect();
    let mut logit0: Vec<f64> = nuisance.qbar0.iter().map(|&q| logit(q)).collect();
    let mut q1 = nuisance.qbar1.clone();
    let mut q0 = nuisance.qbar0.clone();
    let mut qa = observed(a, &q1, &q0);
    let mut eic = evaluate_eic(a, y, &q1, &q0, &qa, g1)?;
    let mut loss = empirical_loss(y, &qa);
    let mut loss_trace = vec![loss];
    let mut eic_norm_trace = vec![eic.norm()];
    let mut iterations = 0;

    let stopped_reason = loop {
        if eic.solved() {
            break StopReason::ToleranceMet;
        }
        if iterations >= opts.max_iter {
            break StopReason::MaxIter;
        }
        let u = unit(&eic)?;
        let (dir1, dir0) = directions(&q1, &q0, g1, u);
        let cand_l1: Vec<f64> = logit1.iter().zip(&dir1).map(|(l, d)| l + opts.d_eps * d).collect();
        let cand_l0: Vec<f64> = logit0.iter().zip(&dir0).map(|(l, d)| l + opts.d_eps * d).collect();
        let cand_q1: Vec<f64> = cand_l1.iter().map(|&l| expit(l)).collect();
        let cand_q0: Vec<f64> = cand_l0.iter().map(|&l| expit(l)).collect();
        let cand_qa = observed(a, &cand_q1, &cand_q0);
        let cand_loss = empirical_loss(y, &cand_qa);
        if cand_loss > loss {
            break StopReason::LossIncreased;
        }
        logit1 = cand_l1;
        logit0 = cand_l0;
        q1 = cand_q1;
        q0 = cand_q0;
        qa = cand_qa;
        loss = cand_loss;
        eic = evaluate_eic(a, y, &q1, &q0, &qa, g1)?;
        iterations += 1;
        loss_trace.push(loss);
        eic_norm_trace.push(eic.norm());
    };
    debug_assert_eq!(q1.len(), n);
    Ok(TargetedFit {
        qbar1_star: q1,
        qbar0_star: q0,
        qbar_a_star: qa,
        iterations,
        loss_trace,
        eic_norm_trace,
        stopped_reason,
        eic,
    })
}

/// Central-difference slope of the empirical loss along `logit Q̄ − ε⟨H, u⟩`
/// at `ε = 0`, returned with `‖PₙD*‖₂`. The two agree for the canonical
/// least favorable submodel.
pub fn clfm_derivative_check(
    qbar1: &[f64],
    qbar0: &[f64],
    g1: &[f64],
    a: &[f64],
    y: &[f64],
    h: f64,
) -> Result<(f64, f64)> {
    check_lengths(qbar1, qbar0, g1, a, y)?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("difference step must be positive, got {h}")));
    }
    let qa = observed(a, qbar1, qbar0);
    let eic = evaluate_eic(a, y, qbar1, qbar0, &qa, g1)?;
    let norm = eic.norm();
    let u = if norm > 0.0 { (eic.mean1 / norm, eic.mean2 / norm) } else { (0.0, 0.0) };
    let (dir1, dir0) = directions(qbar1, qbar0, g1, u);
    let loss_at = |eps: f64| {
        let total: f64 = (0..a.len())
            .map(|i| {
                let (q, d) = if a[i] >= 0.5 { (qbar1[i], dir1[i]) } else { (qbar0[i], dir0[i]) };
                nll(y[i], expit(logit(q) - eps * d))
            })
            .sum();
        total / a.len() as f64
    };
    let slope = (loss_at(h) - loss_at(-h)) / (2.0 * h);
    Ok((slope, norm))
}
