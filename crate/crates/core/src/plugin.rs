//! Logistic-regression plug-in estimator of (ATE, VTE) with delta-method inference.
//!
//! The outcome model is `expit(βᵀX(A,W))`. The blip is
//! `b_β(W) = expit(βᵀX(1,W)) − expit(βᵀX(0,W))` and the estimates are its sample
//! mean and variance. The influence curve chains the MLE influence curve
//! `IC_β = M⁻¹ X (Y − expit(βᵀX))` through
//!
//! ```text
//! f_β(W)  = μ₁(1 − μ₁) X(1,W) − μ₀(1 − μ₀) X(0,W)
//! IC_Ψ₁   = Pₙ[f_β] · IC_β + b_β(W) − Ψ₁
//! IC_Ψ₂   = Pₙ[2 (b_β − Ψ₁) f_β] · IC_β + (b_β(W) − Ψ₁)² − Ψ₂
//! ```

use nalgebra::{DMatrix, DVector};

use crate::data::ObservedDataset;
use crate::error::{Error, Result};
use crate::inference::{build_report, EstimateReport, InferenceOptions};
use crate::learners::{fit_logistic_mle, Basis, LogisticOptions};
use crate::math::expit;
use crate::nuisance::outcome_features;

const MAX_CONDITION: f64 = 1e12;

/// How `X(a, W)` is built from the treatment and covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PluginDesign {
    pub basis: Basis,
    /// When false the treatment is left out of the design entirely.
    pub treatment: bool,
}

impl Default for PluginDesign {
    fn default() -> Self {
        PluginDesign {
            basis: Basis::MainInteractions,
            treatment: true,
        }
    }
}

impl PluginDesign {
    pub fn build(&self, w: &DMatrix<f64>, a: &[f64]) -> DMatrix<f64> {
        if self.treatment {
            self.basis.expand(&outcome_features(w, a))
        } else {
            self.basis.expand(w)
        }
    }

    fn at_arm(&self, w: &DMatrix<f64>, arm: f64) -> DMatrix<f64> {
        self.build(w, &vec![arm; w.nrows()])
    }
}

#[derive(Debug, Clone)]
pub struct PluginFit {
    pub beta: DVector<f64>,
    pub design: PluginDesign,
    /// `n × d` per-subject influence curve of β.
    pub ic_beta: DMatrix<f64>,
    /// `n × 2` influence curves of (Ψ₁, Ψ₂).
    pub ic_psi: DMatrix<f64>,
    pub psi1: f64,
    pub psi2: f64,
    pub blip: Vec<f64>,
}

/// `x (y − expit(βᵀx))`.
pub fn score_beta(beta: &DVector<f64>, x_row: &[f64], y: f64) -> Result<DVector<f64>> {
    if x_row.len() != beta.len() {
        return Err(Error::DimensionMismatch(format!(
            "row has {} entries for {} coefficients",
            x_row.len(),
            beta.len()
        )));
    }
    let eta: f64 = x_row.iter().zip(beta.iter()).map(|(x, b)| x * b).sum();
    let r = y - expit(eta);
    Ok(DVector::from_iterator(x_row.len(), x_row.iter().map(|x| x * r)))
}

/// Per-subject `M⁻¹ S_β(Oᵢ)` with `M = Pₙ[μ(1 − μ) x xᵀ]`.
pub fn ic_beta(beta: &DVector<f64>, x: &DMatrix<f64>, y: &[f64]) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    if beta.len() != d || y.len() != n {
        return Err(Error::DimensionMismatch("design, coefficients and outcome disagree".into()));
    }
    let eta = x * beta;
    let mut weighted = x.clone();
    let mut scores = DMatrix::zeros(n, d);
    for i in 0..n {
        let mu = expit(eta[i]);
        let h = mu * (1.0 - mu) / n as f64;
        for j in 0..d {
            weighted[(i, j)] *= h;
            scores[(i, j)] = x[(i, j)] * (y[i] - mu);
        }
    }
    let info = x.tr_mul(&weighted);
    let eig = info.clone().symmetric_eigenvalues();
    let max = eig.amax();
    let min = eig.min();
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(Error::Singular(format!(
            "information matrix condition number {:.3e} exceeds {MAX_CONDITION:e}",
            if min > 0.0 { max / min } else { f64::INFINITY }
        )));
    }
    let chol = info
        .cholesky()
        .ok_or_else(|| Error::Singular("information matrix is not positive definite".into()))?;
    // rows of scores · M⁻¹ (M symmetric)
    Ok(chol.solve(&scores.transpose()).transpose())
}

/// Fits the logistic model and returns the plug-in estimates with their influence curves.
pub fn plugin_fit(data: &ObservedDataset, design: PluginDesign) -> Result<PluginFit> {
    let x = design.build(data.w(), data.a());
    let fit = fit_logistic_mle(&x, data.y(), &LogisticOptions::default())?;
    let beta = fit.beta;
    let icb = ic_beta(&beta, &x, data.y())?;

    let n = data.n();
    let x1 = design.at_arm(data.w(), 1.0);
    let x0 = design.at_arm(data.w(), 0.0);
    let eta1 = &x1 * &beta;
    let eta0 = &x0 * &beta;
    let d = beta.len();
    let mut blip = Vec::with_capacity(n);
    let mut f = DMatrix::zeros(n, d);
    for i in 0..n {
        let mu1 = expit(eta1[i]);
        let mu0 = expit(eta0[i]);
        blip.push(mu1 - mu0);
        for j in 0..d {
            f[(i, j)] = mu1 * (1.0 - mu1) * x1[(i, j)] - mu0 * (1.0 - mu0) * x0[(i, j)];
        }
    }
    let psi1 = blip.iter().sum::<f64>() / n as f64;
    let psi2 = blip.iter().map(|b| (b - psi1).powi(2)).sum::<f64>() / n as f64;

    let mut grad1 = DVector::zeros(d);
    let mut grad2 = DVector::zeros(d);
    for i in 0..n {
        for j in 0..d {
            grad1[j] += f[(i, j)] / n as f64;
            grad2[j] += 2.0 * (blip[i] - psi1) * f[(i, j)] / n as f64;
        }
    }
    let lin1 = &icb * &grad1;
    let lin2 = &icb * &grad2;
    let mut ic_psi = DMatrix::zeros(n, 2);
    for i in 0..n {
        let c = blip[i] - psi1;
        ic_psi[(i, 0)] = lin1[i] + c;
        ic_psi[(i, 1)] = lin2[i] + c * c - psi2;
    }
    Ok(PluginFit {
        beta,
        design,
        ic_beta: icb,
        ic_psi,
        psi1,
        psi2,
        blip,
    })
}

/// Plug-in estimate plus the report in original outcome units.
pub fn plugin_estimate(
    data: &ObservedDataset,
    design: PluginDesign,
    opts: &InferenceOptions,
) -> Result<(PluginFit, EstimateReport)> {
    let fit = plugin_fit(data, design)?;
    let ic1: Vec<f64> = fit.ic_psi.column(0).iter().copied().collect();
    let ic2: Vec<f64> = fit.ic_psi.column(1).iter().copied().collect();
    let report = build_report("lr-plugin", &ic1, &ic2, fit.psi1, fit.psi2, data.scale(), opts)?;
    Ok((fit, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::OutcomeScale;
    use crate::math::logit;

    #[test]
    fn score_examples() {
        let s = score_beta(&DVector::zeros(3), &[1.0, 1.0, 1.0], 1.0).unwrap();
        assert_eq!(s.as_slice(), &[0.5, 0.5, 0.5]);
        let beta = DVector::from_vec(vec![0.4, -0.2]);
        let x = [1.0, 2.0];
        let s = score_beta(&beta, &x, expit(0.0)).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-15));
        let s = score_beta(&DVector::from_vec(vec![logit(0.3)]), &[1.0], 0.0).unwrap();
        assert!((s[0] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn intercept_only_closed_form() {
        let y = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let ybar = 0.3;
        let x = DMatrix::from_element(10, 1, 1.0);
        let icb = ic_beta(&DVector::from_vec(vec![logit(ybar)]), &x, &y).unwrap();
        for i in 0..10 {
            assert!((icb[(i, 0)] - (y[i] - ybar) / (ybar * (1.0 - ybar))).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_information_is_rejected() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let err = ic_beta(&DVector::zeros(2), &x, &[0.0, 1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }

    #[test]
    fn no_treatment_terms_gives_zero_blip() {
        let n = 200;
        let w = DMatrix::from_fn(n, 2, |i, j| ((i * (j + 3)) as f64 * 0.1).sin());
        let a: Vec<f64> = (0..n).map(|i| f64::from(i % 2 == 0)).collect();
        let y: Vec<f64> = (0..n).map(|i| f64::from((i * 13) % 7 < 3)).collect();
        let data = ObservedDataset::new(w, a, y, OutcomeScale::identity()).unwrap();
        let design = PluginDesign { basis: Basis::Main, treatment: false };
        let fit = plugin_fit(&data, design).unwrap();
        assert_eq!((fit.psi1, fit.psi2), (0.0, 0.0));
        assert!(fit.ic_psi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ic_psi_columns_are_centered() {
        let n = 300;
        let w = DMatrix::from_fn(n, 2, |i, j| ((i * (j + 2)) as f64 * 0.37).cos());
        let a: Vec<f64> = (0..n).map(|i| f64::from((i * 7) % 3 == 0)).collect();
        let y: Vec<f64> = (0..n).map(|i| f64::from((i * 11) % 5 < 2)).collect();
        let data = ObservedDataset::new(w, a, y, OutcomeScale::identity()).unwrap();
        let fit = plugin_fit(&data, PluginDesign::default()).unwrap();
        for c in 0..2 {
            let m = fit.ic_psi.column(c).sum() / n as f64;
            assert!(m.abs() <= 1e-10, "column {c} mean {m}");
        }
    }
}
