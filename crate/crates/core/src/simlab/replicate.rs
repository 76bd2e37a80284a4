//! Replicate harness: draw, estimate, aggregate.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{draw_dataset, perturb_controlled_noise, DgpSpec, TrueParams};
use crate::data::ObservedDataset;
use crate::error::{Error, Result};
use crate::estimator::{tmle_estimate, tmle_from_initial, EstimatorKind};
use crate::inference::{EstimateReport, InferenceOptions};
use crate::learners::{LearnerSpec, Selector};
use crate::nuisance::{NuisanceConfig, NuisanceMode, NuisancePredictions, PropensitySource};
use crate::plugin::{plugin_estimate, PluginDesign};
use crate::targeting::{TargetingOptions, DEFAULT_D_EPS, DEFAULT_MAX_ITER};

/// What an estimator sees about the replicate it runs on.
#[derive(Debug, Clone, Copy)]
pub struct ReplicateContext<'a> {
    pub spec: &'a DgpSpec,
    pub truth: &'a TrueParams,
    pub n: usize,
    pub replicate: usize,
    pub alpha: f64,
    /// Seed for fold plans and anything else the estimator needs.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateEstimate {
    pub ate: f64,
    pub vte: f64,
    pub ate_ci: (f64, f64),
    pub vte_ci: (f64, f64),
}

impl ReplicateEstimate {
    pub fn from_report(report: &EstimateReport) -> Result<Self> {
        let pick = |name: &str| -> Result<(f64, (f64, f64))> {
            let row = report
                .row(name)
                .ok_or_else(|| Error::InvalidArgument(format!("report has no {name} row")))?;
            match (row.lower, row.upper) {
                (Some(lo), Some(hi)) => Ok((row.est, (lo, hi))),
                _ => Err(Error::InvalidArgument(format!("{name} row has no interval"))),
            }
        };
        let (ate, ate_ci) = pick("ATE")?;
        let (vte, vte_ci) = pick("VTE")?;
        Ok(ReplicateEstimate {
            ate,
            vte,
            ate_ci,
            vte_ci,
        })
    }
}

pub trait ReplicateEstimator: Send + Sync {
    fn label(&self) -> String;

    fn estimate(
        &self,
        data: &ObservedDataset,
        ctx: &ReplicateContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<ReplicateEstimate>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorType {
    Tmle,
    CvTmle,
    LrPlugin,
    /// TMLE started from the truth plus controlled noise, with known g₀.
    ControlledNoiseTmle,
}

impl EstimatorType {
    pub fn tag(&self) -> &'static str {
        match self {
            EstimatorType::Tmle => "tmle",
            EstimatorType::CvTmle => "cv-tmle",
            EstimatorType::LrPlugin => "lr-plugin",
            EstimatorType::ControlledNoiseTmle => "controlled-noise-tmle",
        }
    }
}

fn default_q_library() -> Vec<LearnerSpec> {
    vec![LearnerSpec::LogisticMainInteractions]
}
fn default_folds() -> usize {
    10
}
fn default_g_trunc() -> f64 {
    0.01
}
fn default_d_eps() -> f64 {
    DEFAULT_D_EPS
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

/// One estimator entry of a campaign config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorType,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "default_q_library")]
    pub q_library: Vec<LearnerSpec>,
    /// `None` uses the design's true propensity.
    #[serde(default)]
    pub g_library: Option<Vec<LearnerSpec>>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_folds")]
    pub ensemble_folds: usize,
    #[serde(default = "default_g_trunc")]
    pub g_trunc: f64,
    #[serde(default = "default_d_eps")]
    pub d_eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Draws for simultaneous bands in each replicate; 0 skips them.
    #[serde(default)]
    pub quantile_draws: usize,
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorType) -> Self {
        EstimatorConfig {
            kind,
            label: None,
            q_library: default_q_library(),
            g_library: None,
            folds: default_folds(),
            ensemble_folds: default_folds(),
            g_trunc: default_g_trunc(),
            d_eps: default_d_eps(),
            max_iter: default_max_iter(),
            quantile_draws: 0,
        }
    }

    pub fn validate(&self, spec: &DgpSpec) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("estimator {}: {msg}", self.label())));
        if self.kind == EstimatorType::ControlledNoiseTmle && !matches!(spec, DgpSpec::ControlledNoise { .. }) {
            return bad("controlled-noise-tmle needs a controlled-noise spec".into());
        }
        if self.q_library.is_empty() {
            return bad("q_library is empty".into());
        }
        if matches!(&self.g_library, Some(lib) if lib.is_empty()) {
            return bad("g_library is empty".into());
        }
        for l in self.q_library.iter().chain(self.g_library.iter().flatten()) {
            l.validate()?;
        }
        if self.folds < 2 || self.ensemble_folds < 2 {
            return bad("folds and ensemble_folds must be >= 2".into());
        }
        if !(self.g_trunc >= 0.0 && self.g_trunc < 0.5) {
            return bad(format!("g_trunc must be in [0, 0.5), got {}", self.g_trunc));
        }
        if !(self.d_eps > 0.0) || self.max_iter == 0 {
            return bad("d_eps must be > 0 and max_iter >= 1".into());
        }
        Ok(())
    }

    fn inference(&self, ctx: &ReplicateContext<'_>) -> InferenceOptions {
        InferenceOptions {
            alpha: ctx.alpha,
            include_sqrt: false,
            quantile_draws: self.quantile_draws,
            seed: ctx.seed,
        }
    }

    fn targeting(&self) -> TargetingOptions {
        TargetingOptions {
            d_eps: self.d_eps,
            max_iter: self.max_iter,
        }
    }
}

impl ReplicateEstimator for EstimatorConfig {
    fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind.tag().to_string())
    }

    fn estimate(
        &self,
        data: &ObservedDataset,
        ctx: &ReplicateContext<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<ReplicateEstimate> {
        let inference = self.inference(ctx);
        let report = match self.kind {
            EstimatorType::LrPlugin => plugin_estimate(data, PluginDesign::default(), &inference)?.1,
            EstimatorType::Tmle | EstimatorType::CvTmle => {
                let propensity = match &self.g_library {
                    Some(lib) => PropensitySource::Learned(lib.clone()),
                    None => PropensitySource::Known(ctx.spec.known_propensity()),
                };
                let cfg = NuisanceConfig {
                    q_library: self.q_library.clone(),
                    propensity,
                    mode: NuisanceMode::FullSample,
                    folds: self.folds,
                    ensemble_folds: self.ensemble_folds,
                    selector: Selector::Convex,
                    g_trunc: self.g_trunc,
                    seed: ctx.seed,
                };
                let kind = if self.kind == EstimatorType::Tmle {
                    EstimatorKind::Tmle
                } else {
                    EstimatorKind::CvTmle
                };
                tmle_estimate(data, kind, &cfg, None, &self.targeting(), &inference)?.report
            }
            EstimatorType::ControlledNoiseTmle => {
                let DgpSpec::ControlledNoise { rate } = *ctx.spec else {
                    return Err(Error::Config("controlled-noise-tmle needs a controlled-noise spec".into()));
                };
                let (q1, q0) = perturb_controlled_noise(ctx.spec, data.w(), ctx.n, rate, rng)?;
                let g1: Vec<f64> = (0..data.n()).map(|i| ctx.spec.g0(&data.w_row(i))).collect();
                let initial = NuisancePredictions::from_parts(q1, q0, g1, true)?;
                tmle_from_initial(data, initial, &self.targeting(), &inference, self.kind.tag())?.report
            }
        };
        ReplicateEstimate::from_report(&report)
    }
}

/// Outcome of one estimator on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub n: usize,
    pub estimator: String,
    pub outcome: std::result::Result<ReplicateEstimate, String>,
}

/// Performance summary of one target parameter over the successful replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TargetMetrics {
    /// Population variance of the estimates.
    pub var: f64,
    pub bias: f64,
    pub mse: f64,
    /// Fraction of intervals that contain the truth.
    pub coverage: f64,
    pub skewness: f64,
}

impl TargetMetrics {
    /// Moments of `est` around its own mean and around `truth`.
    pub fn compute(est: &[f64], cis: &[(f64, f64)], truth: f64) -> Self {
        let m = est.len() as f64;
        if est.is_empty() {
            return TargetMetrics {
                var: f64::NAN,
                bias: f64::NAN,
                mse: f64::NAN,
                coverage: f64::NAN,
                skewness: f64::NAN,
            };
        }
        let mean = est.iter().sum::<f64>() / m;
        let var = est.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
        let m3 = est.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / m;
        let mse = est.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / m;
        let covered = cis.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count();
        TargetMetrics {
            var,
            bias: mean - truth,
            mse,
            coverage: covered as f64 / cis.len() as f64,
            skewness: if var > 0.0 { m3 / var.powf(1.5) } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateMetrics {
    pub estimator: String,
    pub n: usize,
    pub reps_ok: usize,
    pub failures: usize,
    pub ate: TargetMetrics,
    pub vte: TargetMetrics,
}

impl ReplicateMetrics {
    pub fn aggregate(estimator: &str, n: usize, records: &[ReplicateRecord], truth: &TrueParams) -> Self {
        let ok: Vec<&ReplicateEstimate> = records
            .iter()
            .filter(|r| r.estimator == estimator && r.n == n)
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect();
        let failures = records
            .iter()
            .filter(|r| r.estimator == estimator && r.n == n && r.outcome.is_err())
            .count();
        let ate: Vec<f64> = ok.iter().map(|e| e.ate).collect();
        let vte: Vec<f64> = ok.iter().map(|e| e.vte).collect();
        let ate_ci: Vec<(f64, f64)> = ok.iter().map(|e| e.ate_ci).collect();
        let vte_ci: Vec<(f64, f64)> = ok.iter().map(|e| e.vte_ci).collect();
        ReplicateMetrics {
            estimator: estimator.to_string(),
            n,
            reps_ok: ok.len(),
            failures,
            ate: TargetMetrics::compute(&ate, &ate_ci, truth.ate0),
            vte: TargetMetrics::compute(&vte, &vte_ci, truth.vte0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplicateOutput {
    pub metrics: Vec<ReplicateMetrics>,
    pub records: Vec<ReplicateRecord>,
}

/// Runs every estimator on `reps` fresh datasets of size `n`.
///
/// Replicate `r` draws from ChaCha8 stream `(n << 32) | r` of the master seed,
/// so results do not depend on `parallelism` (0 means the rayon default).
#[allow(clippy::too_many_arguments)]
pub fn run_replicates(
    spec: &DgpSpec,
    estimators: &[&dyn ReplicateEstimator],
    truth: &TrueParams,
    n: usize,
    reps: usize,
    alpha: f64,
    parallelism: usize,
    seed: u64,
) -> Result<ReplicateOutput> {
    spec.validate()?;
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("n must be >= 2, got {n}")));
    }
    let labels: Vec<String> = estimators.iter().map(|e| e.label()).collect();
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(Error::Config(format!("duplicate estimator label `{l}`")));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;

    let run_one = |r: usize| -> Vec<ReplicateRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((n as u64) << 32) | r as u64);
        let data = draw_dataset(spec, n, &mut rng);
        let est_seed: u64 = rng.random();
        estimators
            .iter()
            .zip(&labels)
            .enumerate()
            .map(|(j, (est, label))| {
                let outcome = data.as_ref().map_err(|e| e.to_string()).and_then(|d| {
                    let ctx = ReplicateContext {
                        spec,
                        truth,
                        n,
                        replicate: r,
                        alpha,
                        seed: est_seed,
                    };
                    let mut est_rng = ChaCha8Rng::seed_from_u64(est_seed);
                    est_rng.set_stream(j as u64 + 1);
                    est.estimate(d, &ctx, &mut est_rng).map_err(|e| e.to_string())
                });
                if let Err(msg) = &outcome {
                    warn!("replicate {r} (n={n}) {label}: {msg}");
                }
                ReplicateRecord {
                    replicate: r,
                    n,
                    estimator: label.clone(),
                    outcome,
                }
            })
            .collect()
    };
    let per_rep: Vec<Vec<ReplicateRecord>> = pool.install(|| (0..reps).into_par_iter().map(run_one).collect());
    let records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();
    let metrics = labels
        .iter()
        .map(|l| ReplicateMetrics::aggregate(l, n, &records, truth))
        .collect();
    Ok(ReplicateOutput { metrics, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Oracle;

    impl ReplicateEstimator for Oracle {
        fn label(&self) -> String {
            "oracle".into()
        }

        fn estimate(
            &self,
            _data: &ObservedDataset,
            ctx: &ReplicateContext<'_>,
            _rng: &mut ChaCha8Rng,
        ) -> Result<ReplicateEstimate> {
            let t = ctx.truth;
            Ok(ReplicateEstimate {
                ate: t.ate0,
                vte: t.vte0,
                ate_ci: (t.ate0 - 1.0, t.ate0 + 1.0),
                vte_ci: (t.vte0 - 1.0, t.vte0 + 1.0),
            })
        }
    }

    struct FailsOnOdd;

    impl ReplicateEstimator for FailsOnOdd {
        fn label(&self) -> String {
            "flaky".into()
        }

        fn estimate(
            &self,
            data: &ObservedDataset,
            ctx: &ReplicateContext<'_>,
            _rng: &mut ChaCha8Rng,
        ) -> Result<ReplicateEstimate> {
            if ctx.replicate % 2 == 1 {
                return Err(Error::NonConvergence("odd".into()));
            }
            let m = data.y().iter().sum::<f64>() / data.n() as f64;
            Ok(ReplicateEstimate {
                ate: m,
                vte: m,
                ate_ci: (m, m),
                vte_ci: (m, m),
            })
        }
    }

    fn truth() -> TrueParams {
        TrueParams {
            ate0: 0.1,
            vte0: 0.05,
            mc_draws: 1,
            mc_se_ate: 0.0,
            mc_se_vte: 0.0,
        }
    }

    #[test]
    fn oracle_estimator_is_unbiased_and_covers() {
        let t = truth();
        let out = run_replicates(&DgpSpec::Case1, &[&Oracle], &t, 50, 20, 0.05, 1, 9).unwrap();
        let m = &out.metrics[0];
        assert_eq!((m.reps_ok, m.failures), (20, 0));
        assert!(m.vte.bias.abs() < 1e-15);
        assert_eq!(m.vte.coverage, 1.0);
        assert_eq!(m.ate.coverage, 1.0);
    }

    #[test]
    fn failures_are_counted_and_excluded() {
        let out = run_replicates(&DgpSpec::Case2, &[&FailsOnOdd, &Oracle], &truth(), 40, 7, 0.05, 2, 1).unwrap();
        assert_eq!(out.records.len(), 14);
        let flaky = &out.metrics[0];
        assert_eq!((flaky.reps_ok, flaky.failures), (4, 3));
        assert_eq!(out.metrics[1].reps_ok, 7);
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let est = EstimatorConfig::new(EstimatorType::LrPlugin);
        let t = truth();
        let a = run_replicates(&DgpSpec::Case1, &[&est], &t, 200, 6, 0.05, 1, 4).unwrap();
        let b = run_replicates(&DgpSpec::Case1, &[&est], &t, 200, 6, 0.05, 3, 4).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        assert!(run_replicates(&DgpSpec::Case1, &[&Oracle, &Oracle], &truth(), 10, 1, 0.05, 1, 0).is_err());
    }

    #[test]
    fn estimator_config_rejects_mismatched_spec() {
        let est = EstimatorConfig::new(EstimatorType::ControlledNoiseTmle);
        assert!(est.validate(&DgpSpec::Case1).is_err());
        assert!(est.validate(&DgpSpec::ControlledNoise { rate: -0.3 }).is_ok());
    }

    proptest! {
        #[test]
        fn mse_decomposes(est in proptest::collection::vec(-1.0f64..1.0, 1..60), truth in -1.0f64..1.0) {
            let cis: Vec<(f64, f64)> = est.iter().map(|e| (e - 0.1, e + 0.1)).collect();
            let m = TargetMetrics::compute(&est, &cis, truth);
            prop_assert!((m.mse - (m.var + m.bias * m.bias)).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&m.coverage));
        }
    }
}
