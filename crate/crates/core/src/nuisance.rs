//! Initial estimates of the outcome regression and the propensity score.
//!
//! In full-sample mode every learner is fit once on all subjects and predicts
//! those same subjects (TMLE). In cross-fitted mode subject `i` is predicted by
//! a fit trained without its validation fold (CV-TMLE). Either way the result
//! is a [`NuisancePredictions`] and targeting does not care which produced it.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::data::ObservedDataset;
use crate::error::{Error, Result};
pub use crate::folds::{make_folds, FoldPlan};
use crate::learners::{fit_ensemble, EnsembleOptions, LearnerSpec, Selector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuisanceMode {
    FullSample,
    CrossFitted,
}

/// Known `P(A = 1 | W)` evaluated on one covariate row.
pub type KnownPropensity = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum PropensitySource {
    Constant(f64),
    Known(KnownPropensity),
    Learned(Vec<LearnerSpec>),
}

impl fmt::Debug for PropensitySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropensitySource::Constant(p) => write!(f, "Constant({p})"),
            PropensitySource::Known(_) => write!(f, "Known(<fn>)"),
            PropensitySource::Learned(lib) => f.debug_tuple("Learned").field(lib).finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NuisanceConfig {
    pub q_library: Vec<LearnerSpec>,
    pub propensity: PropensitySource,
    pub mode: NuisanceMode,
    /// Number of cross-fitting folds (ignored in full-sample mode).
    pub folds: usize,
    /// Folds used inside each ensemble fit to choose weights.
    pub ensemble_folds: usize,
    pub selector: Selector,
    pub g_trunc: f64,
    pub seed: u64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            q_library: vec![LearnerSpec::LogisticMainInteractions],
            propensity: PropensitySource::Learned(vec![LearnerSpec::LogisticMain]),
            mode: NuisanceMode::CrossFitted,
            folds: 10,
            ensemble_folds: 10,
            selector: Selector::Convex,
            g_trunc: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NuisancePredictions {
    pub qbar1: Vec<f64>,
    pub qbar0: Vec<f64>,
    /// `P(A = 1 | W)`, truncated to `[g_trunc, 1 − g_trunc]`.
    pub g1: Vec<f64>,
    pub mode: NuisanceMode,
    pub fold_plan: Option<FoldPlan>,
    pub g_known: bool,
}

impl NuisancePredictions {
    /// Wraps externally produced predictions, checking ranges and lengths.
    pub fn from_parts(
        qbar1: Vec<f64>,
        qbar0: Vec<f64>,
        g1: Vec<f64>,
        g_known: bool,
    ) -> Result<Self> {
        let n = qbar1.len();
        if qbar0.len() != n || g1.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "qbar1 has {n} entries, qbar0 {}, g1 {}",
                qbar0.len(),
                g1.len()
            )));
        }
        check_open_unit("qbar1", &qbar1)?;
        check_open_unit("qbar0", &qbar0)?;
        check_open_unit("g1", &g1)?;
        Ok(NuisancePredictions {
            qbar1,
            qbar0,
            g1,
            mode: NuisanceMode::FullSample,
            fold_plan: None,
            g_known,
        })
    }

    pub fn n(&self) -> usize {
        self.qbar1.len()
    }

    /// Predictions at the observed treatment.
    pub fn qbar_a(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.qbar1.iter().zip(&self.qbar0))
            .map(|(&ai, (&q1, &q0))| ai * q1 + (1.0 - ai) * q0)
            .collect()
    }
}

fn check_open_unit(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|&x| !(x > 0.0 && x < 1.0)) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "{name}[{i}] = {} is not strictly inside (0, 1)",
            v[i]
        ))),
        None => Ok(()),
    }
}

fn truncate(g: f64, g_trunc: f64) -> f64 {
    g.clamp(g_trunc, 1.0 - g_trunc)
}

/// Feature matrix `[a, w]` for the outcome regression.
pub fn outcome_features(w: &DMatrix<f64>, a: &[f64]) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(w.nrows(), w.ncols() + 1);
    for i in 0..w.nrows() {
        x[(i, 0)] = a[i];
        for j in 0..w.ncols() {
            x[(i, j + 1)] = w[(i, j)];
        }
    }
    x
}

fn with_treatment(w: &DMatrix<f64>, arm: f64) -> DMatrix<f64> {
    outcome_features(w, &vec![arm; w.nrows()])
}

struct FoldFit {
    qbar1: Vec<f64>,
    qbar0: Vec<f64>,
    g1: Option<Vec<f64>>,
}

fn fit_and_predict(
    train: &ObservedDataset,
    predict_w: &DMatrix<f64>,
    cfg: &NuisanceConfig,
    seed: u64,
) -> Result<FoldFit> {
    let opts = EnsembleOptions {
        folds: cfg.ensemble_folds.min(train.n()),
        seed,
        selector: cfg.selector,
    };
    let xq = outcome_features(train.w(), train.a());
    let q_fit = fit_ensemble(&xq, train.y(), &cfg.q_library, &opts)?;
    let qbar1 = q_fit.predict(&with_treatment(predict_w, 1.0))?;
    let qbar0 = q_fit.predict(&with_treatment(predict_w, 0.0))?;
    let g1 = match &cfg.propensity {
        PropensitySource::Learned(lib) => {
            let g_fit = fit_ensemble(train.w(), train.a(), lib, &opts)?;
            Some(g_fit.predict(predict_w)?)
        }
        _ => None,
    };
    Ok(FoldFit { qbar1, qbar0, g1 })
}

/// Fits (or evaluates) the nuisance functions for every subject.
///
/// In cross-fitted mode `fold_plan` is used when given, otherwise one is drawn
/// from `cfg.folds` and `cfg.seed`.
pub fn fit_nuisance(
    data: &ObservedDataset,
    cfg: &NuisanceConfig,
    fold_plan: Option<&FoldPlan>,
) -> Result<NuisancePredictions> {
    if !(cfg.g_trunc >= 0.0 && cfg.g_trunc < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "g_trunc must be in [0, 0.5), got {}",
            cfg.g_trunc
        )));
    }
    let n = data.n();
    let (qbar1, qbar0, learned_g, plan) = match cfg.mode {
        NuisanceMode::FullSample => {
            let fit = fit_and_predict(data, data.w(), cfg, cfg.seed)?;
            (fit.qbar1, fit.qbar0, fit.g1, None)
        }
        NuisanceMode::CrossFitted => {
            let plan = match fold_plan {
                Some(p) if p.n() == n => p.clone(),
                Some(p) => {
                    return Err(Error::DimensionMismatch(format!(
                        "fold plan covers {} subjects, dataset has {n}",
                        p.n()
                    )))
                }
                None => make_folds(n, cfg.folds, cfg.seed)?,
            };
            let mut qbar1 = vec![0.0; n];
            let mut qbar0 = vec![0.0; n];
            let mut g1 = matches!(cfg.propensity, PropensitySource::Learned(_)).then(|| vec![0.0; n]);
            for fold in 0..plan.v {
                let valid = plan.validation(fold);
                let train = data.subset(&plan.training(fold));
                let w_valid = data.w().select_rows(valid.iter());
                let fit = fit_and_predict(&train, &w_valid, cfg, cfg.seed.wrapping_add(fold as u64 + 1))?;
                for (k, &i) in valid.iter().enumerate() {
                    qbar1[i] = fit.qbar1[k];
                    qbar0[i] = fit.qbar0[k];
                }
                if let (Some(dst), Some(src)) = (g1.as_mut(), fit.g1) {
                    for (k, &i) in valid.iter().enumerate() {
                        dst[i] = src[k];
                    }
                }
            }
            (qbar1, qbar0, g1, Some(plan))
        }
    };
    let (g1, g_known) = match &cfg.propensity {
        PropensitySource::Constant(p) => {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(Error::InvalidArgument(format!("known propensity {p} outside (0, 1)")));
            }
            (vec![truncate(*p, cfg.g_trunc); n], true)
        }
        PropensitySource::Known(f) => {
            let g = (0..n).map(|i| truncate(f(&data.w_row(i)), cfg.g_trunc)).collect();
            (g, true)
        }
        PropensitySource::Learned(_) => {
            let g = learned_g
                .unwrap_or_default()
                .into_iter()
                .map(|g| truncate(g, cfg.g_trunc))
                .collect();
            (g, false)
        }
    };
    Ok(NuisancePredictions {
        qbar1,
        qbar0,
        g1,
        mode: cfg.mode,
        fold_plan: plan,
        g_known,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::OutcomeScale;

    fn toy(n: usize) -> ObservedDataset {
        let w = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.37).sin());
        let a: Vec<f64> = (0..n).map(|i| f64::from(i % 3 == 0)).collect();
        let y: Vec<f64> = (0..n).map(|i| f64::from((i * 7) % 5 < 2)).collect();
        ObservedDataset::new(w, a, y, OutcomeScale::identity()).unwrap()
    }

    fn mean_cfg(mode: NuisanceMode) -> NuisanceConfig {
        NuisanceConfig {
            q_library: vec![LearnerSpec::Mean],
            propensity: PropensitySource::Constant(0.5),
            mode,
            folds: 4,
            ..Default::default()
        }
    }

    #[test]
    fn constant_known_propensity() {
        let d = toy(20);
        let nu = fit_nuisance(&d, &mean_cfg(NuisanceMode::FullSample), None).unwrap();
        assert!(nu.g1.iter().all(|&g| g == 0.5));
        assert!(nu.g_known);
    }

    #[test]
    fn mean_learner_full_vs_cross_fitted() {
        let d = toy(20);
        let ybar = d.y().iter().sum::<f64>() / 20.0;
        let full = fit_nuisance(&d, &mean_cfg(NuisanceMode::FullSample), None).unwrap();
        assert!(full.qbar1.iter().all(|&q| (q - ybar).abs() < 1e-15));
        assert_eq!(full.qbar1, full.qbar0);

        let cv = fit_nuisance(&d, &mean_cfg(NuisanceMode::CrossFitted), None).unwrap();
        let plan = cv.fold_plan.as_ref().unwrap();
        for f in 0..plan.v {
            let train = plan.training(f);
            let m = train.iter().map(|&i| d.y()[i]).sum::<f64>() / train.len() as f64;
            for i in plan.validation(f) {
                assert!((cv.qbar1[i] - m).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn learned_propensity_is_truncated() {
        // treatment almost determined by w: raw fits reach the truncation bounds
        let n = 60;
        let w = DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64);
        let a: Vec<f64> = (0..n).map(|i| f64::from(i >= 30 || i == 3)).collect();
        let y = vec![0.0, 1.0].repeat(30);
        let d = ObservedDataset::new(w, a, y, OutcomeScale::identity()).unwrap();
        let cfg = NuisanceConfig {
            q_library: vec![LearnerSpec::Mean],
            propensity: PropensitySource::Learned(vec![LearnerSpec::LogisticL2 { lambda: 1e-4 }]),
            mode: NuisanceMode::FullSample,
            g_trunc: 0.05,
            ..Default::default()
        };
        let nu = fit_nuisance(&d, &cfg, None).unwrap();
        assert!(nu.g1.iter().all(|&g| (0.05..=0.95).contains(&g)));
        assert!(nu.g1.iter().any(|&g| g == 0.05));
        assert!(!nu.g_known);
    }

    #[test]
    fn known_function_is_truncated() {
        let d = toy(10);
        let cfg = NuisanceConfig {
            propensity: PropensitySource::Known(Arc::new(|_w: &[f64]| 0.003)),
            g_trunc: 0.01,
            ..mean_cfg(NuisanceMode::FullSample)
        };
        let nu = fit_nuisance(&d, &cfg, None).unwrap();
        assert!(nu.g1.iter().all(|&g| g == 0.01));
    }

    #[test]
    fn from_parts_validates() {
        assert!(NuisancePredictions::from_parts(vec![0.5], vec![1.0], vec![0.5], true).is_err());
        assert!(NuisancePredictions::from_parts(vec![0.5], vec![0.5], vec![0.5, 0.5], true).is_err());
        let nu = NuisancePredictions::from_parts(vec![0.7, 0.6], vec![0.2, 0.3], vec![0.5, 0.5], true).unwrap();
        assert_eq!(nu.qbar_a(&[1.0, 0.0]), vec![0.7, 0.3]);
    }
}
