//! End-to-end TMLE and CV-TMLE: initial fits, targeting, report.

use serde::{Deserialize, Serialize};

use crate::data::ObservedDataset;
use crate::error::Result;
use crate::inference::{build_report, EstimateReport, InferenceOptions};
use crate::nuisance::{fit_nuisance, FoldPlan, NuisanceConfig, NuisanceMode, NuisancePredictions};
use crate::targeting::{run_targeting, TargetedFit, TargetingOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Tmle,
    CvTmle,
    LrPlugin,
}

impl EstimatorKind {
    pub fn tag(&self) -> &'static str {
        match self {
            EstimatorKind::Tmle => "tmle",
            EstimatorKind::CvTmle => "cv-tmle",
            EstimatorKind::LrPlugin => "lr-plugin",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TmleOutput {
    pub nuisance: NuisancePredictions,
    pub targeted: TargetedFit,
    pub report: EstimateReport,
}

/// Targets given initial predictions and reports.
pub fn tmle_from_initial(
    data: &ObservedDataset,
    nuisance: NuisancePredictions,
    targeting: &TargetingOptions,
    inference: &InferenceOptions,
    label: &str,
) -> Result<TmleOutput> {
    let targeted = run_targeting(data.a(), data.y(), &nuisance, targeting)?;
    let e = &targeted.eic;
    let report = build_report(label, &e.d1, &e.d2, e.psi1_hat, e.psi2_hat, data.scale(), inference)?;
    Ok(TmleOutput {
        nuisance,
        targeted,
        report,
    })
}

/// Fits the nuisance functions (full-sample for TMLE, cross-fitted for CV-TMLE)
/// and runs [`tmle_from_initial`].
pub fn tmle_estimate(
    data: &ObservedDataset,
    kind: EstimatorKind,
    nuisance: &NuisanceConfig,
    fold_plan: Option<&FoldPlan>,
    targeting: &TargetingOptions,
    inference: &InferenceOptions,
) -> Result<TmleOutput> {
    let mode = match kind {
        EstimatorKind::CvTmle => NuisanceMode::CrossFitted,
        _ => NuisanceMode::FullSample,
    };
    let cfg = NuisanceConfig {
        mode,
        ..nuisance.clone()
    };
    let initial = fit_nuisance(data, &cfg, fold_plan)?;
    tmle_from_initial(data, initial, targeting, inference, kind.tag())
}
