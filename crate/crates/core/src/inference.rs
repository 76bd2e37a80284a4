//! Standard errors, marginal and simultaneous intervals, and the estimate report.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::OutcomeScale;
use crate::error::{Error, Result};
use crate::math::{mean, sample_sd, std_normal_quantile};

pub const DEFAULT_QUANTILE_DRAWS: usize = 5_000_000;
const CHUNK: usize = 1 << 16;
const EIGEN_FLOOR: f64 = 1e-10;

/// `(1 − α)` quantile of `max_j |Z_j|` for `Z ~ N(0, corr)`, by Monte Carlo.
///
/// Draws are generated in fixed-size chunks, chunk `c` from ChaCha8 stream `c`
/// of `seed`, so the result does not depend on the thread count.
pub fn simultaneous_quantile(corr: &DMatrix<f64>, alpha: f64, draws: usize, seed: u64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if draws == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    let d = corr.nrows();
    if d == 0 || corr.ncols() != d {
        return Err(Error::DimensionMismatch("correlation matrix must be square".into()));
    }
    for i in 0..d {
        if (corr[(i, i)] - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!("corr[{i},{i}] = {} is not 1", corr[(i, i)])));
        }
        for j in 0..i {
            if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-12 {
                return Err(Error::InvalidArgument("correlation matrix is not symmetric".into()));
            }
        }
    }
    let eig = corr.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -EIGEN_FLOOR {
        return Err(Error::NotPsd(min));
    }
    // factor L = V·diag(√λ) so that L·z has covariance `corr`
    let mut factor = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    let chunks = draws.div_ceil(CHUNK);
    let mut maxima: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(draws - c * CHUNK);
            let mut z = vec![0.0; d];
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                for zj in z.iter_mut() {
                    *zj = StandardNormal.sample(&mut rng);
                }
                let mut m = 0.0f64;
                for i in 0..d {
                    let mut x = 0.0;
                    for j in 0..d {
                        x += factor[(i, j)] * z[j];
                    }
                    m = m.max(x.abs());
                }
                out.push(m);
            }
            out.into_iter()
        })
        .collect();
    let k = (((1.0 - alpha) * draws as f64).ceil() as usize).clamp(1, draws) - 1;
    let (_, q, _) = maxima.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*q)
}

/// Lower bound of a variance-type row with its zero-clamped annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedBound {
    pub raw: f64,
    pub clamped: f64,
}

pub fn lower_bound_policy(ci_lower: f64) -> AnnotatedBound {
    AnnotatedBound {
        raw: ci_lower,
        clamped: ci_lower.max(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub est: f64,
    /// `None` when undefined (√VTE at a zero variance estimate).
    pub se: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// `max(0, lower)` for the VTE and √VTE rows.
    pub lower_clamped: Option<f64>,
    pub sim_lower: Option<f64>,
    pub sim_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub n: usize,
    pub alpha: f64,
    pub rows: Vec<ReportRow>,
    /// Simultaneous quantile `q_{n,α}`; `None` when no draws were requested.
    pub q_simultaneous: Option<f64>,
    pub z_marginal: f64,
    pub seed: u64,
    pub scale: OutcomeScale,
}

impl EstimateReport {
    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table with columns est, se, lower, upper.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.5}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} (n = {}, alpha = {}{})",
            self.estimator,
            self.n,
            self.alpha,
            self.q_simultaneous
                .map_or_else(String::new, |q| format!(", simultaneous q = {q:.4}"))
        );
        let _ = writeln!(
            s,
            "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "", "est", "se", "lower", "upper", "sim.lower", "sim.upper"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
                r.name,
                format!("{:.5}", r.est),
                fmt(r.se),
                fmt(r.lower),
                fmt(r.upper),
                fmt(r.sim_lower),
                fmt(r.sim_upper)
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct InferenceOptions {
    pub alpha: f64,
    pub include_sqrt: bool,
    /// Monte-Carlo draws for the simultaneous quantile; 0 skips simultaneous bands.
    pub quantile_draws: usize,
    pub seed: u64,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            alpha: 0.05,
            include_sqrt: false,
            quantile_draws: DEFAULT_QUANTILE_DRAWS,
            seed: 0,
        }
    }
}

fn correlation(cols: &[&[f64]]) -> DMatrix<f64> {
    let d = cols.len();
    let n = cols[0].len();
    let means: Vec<f64> = cols.iter().map(|c| mean(c)).collect();
    let sds: Vec<f64> = cols.iter().map(|c| sample_sd(c)).collect();
    DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            return 1.0;
        }
        if !(sds[i] > 0.0 && sds[j] > 0.0) {
            return 0.0;
        }
        let cov: f64 = (0..n)
            .map(|k| (cols[i][k] - means[i]) * (cols[j][k] - means[j]))
            .sum::<f64>()
            / (n - 1) as f64;
        (cov / (sds[i] * sds[j])).clamp(-1.0, 1.0)
    })
}

/// Assembles the report from influence-curve values on the `[0, 1]` outcome scale.
///
/// `ic1`, `ic2` are the per-subject influence curves of ATE and VTE; the
/// √VTE row uses `ic2 / (2√psi2)`. Back-scaling to the original outcome units
/// is applied last.
pub fn build_report(
    estimator: &str,
    ic1: &[f64],
    ic2: &[f64],
    psi1: f64,
    psi2: f64,
    scale: OutcomeScale,
    opts: &InferenceOptions,
) -> Result<EstimateReport> {
    let n = ic1.len();
    if ic2.len() != n || n < 2 {
        return Err(Error::DimensionMismatch("influence curves must share length ≥ 2".into()));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {}", opts.alpha)));
    }
    let root_n = (n as f64).sqrt();
    let z = std_normal_quantile(1.0 - opts.alpha / 2.0);
    let psi2 = psi2.max(0.0);
    let psi3 = psi2.sqrt();
    let ic3: Option<Vec<f64>> =
        (opts.include_sqrt && psi3 > 0.0).then(|| ic2.iter().map(|d| d / (2.0 * psi3)).collect());

    let q = if opts.quantile_draws > 0 {
        let mut cols: Vec<&[f64]> = vec![ic1, ic2];
        if let Some(c) = &ic3 {
            cols.push(c);
        }
        let corr = correlation(&cols);
        let q = simultaneous_quantile(&corr, opts.alpha, opts.quantile_draws, opts.seed)?;
        // the simultaneous band never undercuts the marginal one
        Some(q.max(z))
    } else {
        None
    };

    let width = scale.width();
    let mut rows = Vec::new();
    let mut push = |name: &str, est: f64, se: Option<f64>, factor: f64, clamp: bool| {
        let lower = se.map(|s| (est - z * s) * factor);
        let upper = se.map(|s| (est + z * s) * factor);
        rows.push(ReportRow {
            name: name.to_string(),
            est: est * factor,
            se: se.map(|s| s * factor),
            lower,
            upper,
            lower_clamped: if clamp { lower.map(|l| lower_bound_policy(l).clamped) } else { None },
            sim_lower: q.zip(se).map(|(q, s)| (est - q * s) * factor),
            sim_upper: q.zip(se).map(|(q, s)| (est + q * s) * factor),
        });
    };
    let se1 = sample_sd(ic1) / root_n;
    let se2 = sample_sd(ic2) / root_n;
    push("ATE", psi1, Some(se1), width, false);
    push("VTE", psi2, Some(se2), width * width, true);
    if opts.include_sqrt {
        let se3 = (psi3 > 0.0).then(|| se2 / (2.0 * psi3));
        push("sqrt(VTE)", psi3, se3, width, true);
    }
    Ok(EstimateReport {
        estimator: estimator.to_string(),
        n,
        alpha: opts.alpha,
        rows,
        q_simultaneous: q,
        z_marginal: z,
        seed: opts.seed,
        scale,
    })
}
