//! JSON campaign configs and their CSV outputs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dgp::{true_params, DgpSpec, TrueParams, MIN_TRUTH_DRAWS};
use super::replicate::{run_replicates, EstimatorConfig, ReplicateEstimator, ReplicateMetrics, ReplicateRecord};
use crate::error::{Error, Result};

fn default_alpha() -> f64 {
    0.05
}
fn default_truth_draws() -> usize {
    MIN_TRUTH_DRAWS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub spec: DgpSpec,
    pub estimators: Vec<EstimatorConfig>,
    pub reps: usize,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub parallelism: usize,
    #[serde(default = "default_truth_draws")]
    pub truth_draws: usize,
}

impl CampaignConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CampaignConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate().map_err(|e| Error::Config(format!("spec: {e}")))?;
        if self.estimators.is_empty() {
            return Err(Error::Config("estimators: at least one estimator is required".into()));
        }
        for e in &self.estimators {
            e.validate(&self.spec)?;
        }
        if self.reps == 0 {
            return Err(Error::Config("reps: must be >= 1".into()));
        }
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < 20) {
            return Err(Error::Config("n_grid: needs at least one sample size, each >= 20".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha: must be in (0, 1), got {}", self.alpha)));
        }
        if self.truth_draws < MIN_TRUTH_DRAWS {
            return Err(Error::Config(format!("truth_draws: must be >= {MIN_TRUTH_DRAWS}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CampaignOutput {
    pub truth: TrueParams,
    pub metrics: Vec<ReplicateMetrics>,
    pub records: Vec<ReplicateRecord>,
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignOutput> {
    cfg.validate()?;
    let truth = true_params(&cfg.spec, cfg.truth_draws, cfg.seed ^ 0x7275_7468)?;
    let estimators: Vec<&dyn ReplicateEstimator> =
        cfg.estimators.iter().map(|e| e as &dyn ReplicateEstimator).collect();
    let mut metrics = Vec::new();
    let mut records = Vec::new();
    for &n in &cfg.n_grid {
        let out = run_replicates(&cfg.spec, &estimators, &truth, n, cfg.reps, cfg.alpha, cfg.parallelism, cfg.seed)?;
        metrics.extend(out.metrics);
        records.extend(out.records);
    }
    Ok(CampaignOutput {
        truth,
        metrics,
        records,
    })
}

/// VTE rows: `estimator,n,var,bias,mse,coverage,skewness,reps_ok`.
pub fn write_metrics_csv<W: Write>(metrics: &[ReplicateMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["estimator", "n", "var", "bias", "mse", "coverage", "skewness", "reps_ok"])?;
    for m in metrics {
        let v = &m.vte;
        w.write_record([
            m.estimator.clone(),
            m.n.to_string(),
            v.var.to_string(),
            v.bias.to_string(),
            v.mse.to_string(),
            v.coverage.to_string(),
            v.skewness.to_string(),
            m.reps_ok.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Successful records: `replicate,n,estimator,est_ate,est_vte,ci_lo,ci_hi,covered`,
/// with the VTE interval.
pub fn write_raw_csv<W: Write>(records: &[ReplicateRecord], truth: &TrueParams, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replicate", "n", "estimator", "est_ate", "est_vte", "ci_lo", "ci_hi", "covered"])?;
    for r in records {
        let Ok(e) = &r.outcome else { continue };
        let (lo, hi) = e.vte_ci;
        w.write_record([
            r.replicate.to_string(),
            r.n.to_string(),
            r.estimator.clone(),
            e.ate.to_string(),
            e.vte.to_string(),
            lo.to_string(),
            hi.to_string(),
            u8::from(lo <= truth.vte0 && truth.vte0 <= hi).to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Fixed-width summary of the VTE metrics.
pub fn metrics_table(truth: &TrueParams, metrics: &[ReplicateMetrics]) -> String {
    let mut s = format!(
        "truth: ATE {:.5} (mc se {:.1e}), VTE {:.5} (mc se {:.1e})\n",
        truth.ate0, truth.mc_se_ate, truth.vte0, truth.mc_se_vte
    );
    s.push_str(&format!(
        "{:<24} {:>6} {:>11} {:>11} {:>11} {:>9} {:>9} {:>8}\n",
        "estimator", "n", "var", "bias", "mse", "coverage", "skewness", "reps_ok"
    ));
    for m in metrics {
        let v = &m.vte;
        s.push_str(&format!(
            "{:<24} {:>6} {:>11.3e} {:>11.5} {:>11.3e} {:>9.3} {:>9.3} {:>8}\n",
            m.estimator, m.n, v.var, v.bias, v.mse, v.coverage, v.skewness, m.reps_ok
        ));
    }
    s
}
